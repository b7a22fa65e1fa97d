"""Regularized two-player preference games with skew-symmetric bilinear models."""
from .drivers import (Algorithm, RunConfig, RunRecord, T0Mode, choose_T0, online_to_batch,
                      regret_suite, run, run_etc, run_greedy_sampling)
from .env import LinkSpec, PreferenceWorld, make_world, preference_table
from .estimators import DuelBatch, MleOptions, PairTable, constrained_mle, lambda_schedule, nuclear_mle
from .game import GameHandle, best_response, dual_gap, max_response, solve_sne, true_game
from .regularizers import RegKind, RegularizerSpec, make_regularizer, regularized_argmin
from .skewlin import ModelSpec, SkewMatrix, random_low_rank_skew, svt

__version__ = "0.1.0"

__all__ = [
    "Algorithm", "DuelBatch", "GameHandle", "LinkSpec", "MleOptions", "ModelSpec", "PairTable",
    "PreferenceWorld", "RegKind", "RegularizerSpec", "RunConfig", "RunRecord", "SkewMatrix",
    "T0Mode", "best_response", "choose_T0", "constrained_mle", "dual_gap", "lambda_schedule",
    "make_regularizer", "make_world", "max_response", "nuclear_mle", "online_to_batch",
    "preference_table", "random_low_rank_skew", "regret_suite", "regularized_argmin", "run",
    "run_etc", "run_greedy_sampling", "solve_sne", "svt", "true_game",
]
