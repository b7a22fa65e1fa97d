"""Experiment configuration: YAML file -> validated model -> RunConfig."""
from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .drivers import Algorithm, RunConfig, T0Mode
from .env import LinkKind, PreferenceWorld, make_world
from .estimators import MleOptions
from .regularizers import RegKind, make_regularizer

ENV_OUTPUT_DIR = "GBPM_OUTPUT_DIR"
ENV_WORKERS = "GBPM_WORKERS"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is a dotted path when known."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid", use_enum_values=False, validate_assignment=True)


class WorldBlock(_Block):
    dim: int = Field(4, ge=2)
    rank_bound: int = Field(2, ge=2)
    nuc_bound: float = Field(1.0, gt=0)
    link: LinkKind = LinkKind.LOGISTIC
    n_ctx: int = Field(1, ge=1)
    n_act: int = Field(6, ge=2)
    feature_mode: Literal["simplex-corners", "random-unit-sphere", "hypercube-scaled"] = "simplex-corners"
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _rank_fits(self):
        if self.rank_bound % 2:
            raise ValueError("rank_bound must be even (skew matrices have even rank)")
        if self.rank_bound > self.dim:
            raise ValueError("rank_bound cannot exceed dim")
        return self


class RegularizerBlock(_Block):
    kind: RegKind = RegKind.REVERSE_KL
    eta: float = Field(2.0, gt=0)
    q: float | None = None
    reference: Literal["uniform", "dirichlet"] = "uniform"

    @field_validator("eta", mode="before")
    @classmethod
    def _parse_inf(cls, v):
        if isinstance(v, str) and v.strip().lower() in ("inf", "infinity", "+inf"):
            return math.inf
        return v

    @model_validator(mode="after")
    def _q_matches_kind(self):
        if self.kind is RegKind.TSALLIS:
            if self.q is None or self.q <= 0 or self.q == 1:
                raise ValueError("tsallis needs q > 0, q != 1")
        return self


class AlgorithmBlock(_Block):
    name: Algorithm = Algorithm.GS
    horizon: int = Field(2000, ge=1)
    seed: int = Field(0, ge=0)
    t0_mode: T0Mode = T0Mode.ETA_AWARE
    t0_manual: int | None = Field(None, ge=1)
    t0_constant: float = Field(1.0, gt=0)
    delta: float = Field(0.1, gt=0, lt=1)
    norm_bound: float | None = Field(None, gt=0)
    sne_tol: float = Field(1e-7, gt=0)
    sne_max_iter: int = Field(200_000, ge=1)
    mle_max_iter: int = Field(20_000, ge=1)
    mle_grad_tol: float = Field(1e-9, gt=0)
    refit_stride: int = Field(1, ge=1)
    lambda_scale: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _manual_t0(self):
        if self.t0_mode is T0Mode.MANUAL:
            if self.t0_manual is None:
                raise ValueError("t0_mode=manual needs t0_manual")
            if self.t0_manual > self.horizon:
                raise ValueError("t0_manual exceeds horizon")
        return self


class OutputBlock(_Block):
    directory: str = "runs"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]
    gap_stride: int = Field(1, ge=1)


class SweepBlock(_Block):
    eta: list[float] | None = None
    horizon: list[int] | None = None
    dim: list[int] | None = None
    kind: list[RegKind] | None = None
    seeds: int = Field(1, ge=1)

    @field_validator("eta", mode="before")
    @classmethod
    def _parse_inf(cls, v):
        if v is None:
            return v
        return [math.inf if isinstance(x, str) and x.strip().lower() in ("inf", "infinity") else x
                for x in v]


class ExperimentConfig(_Block):
    world: WorldBlock = WorldBlock()
    regularizer: RegularizerBlock = RegularizerBlock()
    algorithm: AlgorithmBlock = AlgorithmBlock()
    output: OutputBlock = OutputBlock()
    sweep: SweepBlock = SweepBlock()

    def canonical(self) -> dict:
        """Plain-JSON view; infinities are written as the string "inf"."""
        return _jsonable(self.model_dump(mode="json"))


def _jsonable(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON of every field except the output block."""
    data = cfg.canonical()
    data.pop("output", None)
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- loading

def _set_path(data: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        nxt = node.setdefault(k, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot set {dotted}: {k} is not a block", dotted)
        node = nxt
    node[keys[-1]] = value


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``block.field=value`` strings; values are parsed as YAML scalars."""
    data = json.loads(json.dumps(data)) if data else {}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override must look like block.field=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse override value {raw!r}: {exc}", key) from exc
        _set_path(data, key.strip(), value)
    return data


def _format_validation(exc: ValidationError) -> ConfigError:
    err = exc.errors()[0]
    path = ".".join(str(p) for p in err["loc"])
    return ConfigError(f"{path}: {err['msg']}", path or None)


def parse_config(data: dict | None, overrides=(), env: dict | None = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    data = apply_overrides(data or {}, overrides)
    if env.get(ENV_OUTPUT_DIR):
        _set_path(data, "output.directory", env[ENV_OUTPUT_DIR])
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise _format_validation(exc) from None


def load_config(path, overrides=(), env: dict | None = None) -> ExperimentConfig:
    """Read a YAML file (``None`` means all defaults) and validate it."""
    data = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data, overrides, env)


def worker_count(cli_value: int | None = None, env: dict | None = None) -> int:
    env = os.environ if env is None else env
    if cli_value is not None:
        n = cli_value
    else:
        raw = env.get(ENV_WORKERS, "1")
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer, got {raw!r}", ENV_WORKERS) from None
    if n < 1:
        raise ConfigError("worker count must be >= 1", "workers")
    return n


# ---------------------------------------------------------------- building

def build_world(cfg: ExperimentConfig) -> PreferenceWorld:
    w = cfg.world
    rng = np.random.default_rng(w.seed)
    return make_world(rng, dim=w.dim, rank_bound=w.rank_bound, nuc_bound=w.nuc_bound,
                      link=w.link.value, n_ctx=w.n_ctx, n_act=w.n_act, feature_mode=w.feature_mode)


def _reference(cfg: ExperimentConfig, world: PreferenceWorld):
    if cfg.regularizer.reference == "uniform":
        return None
    # separate stream so the reference does not shift the world draw
    rng = np.random.default_rng([cfg.world.seed, 1])
    return rng.dirichlet(np.ones(world.n_act), size=world.n_ctx)


def build_run_config(cfg: ExperimentConfig, world: PreferenceWorld | None = None) -> RunConfig:
    world = build_world(cfg) if world is None else world
    r, a = cfg.regularizer, cfg.algorithm
    reg = make_regularizer(r.kind, world, r.eta, q=r.q, reference=_reference(cfg, world))
    mle = MleOptions(max_iter=a.mle_max_iter, grad_tol=a.mle_grad_tol)
    norm = a.norm_bound if a.norm_bound is not None else cfg.world.nuc_bound
    return RunConfig(world=world, reg=reg, horizon=a.horizon, algorithm=a.name, seed=a.seed,
                     t0_mode=a.t0_mode, t0_manual=a.t0_manual, t0_constant=a.t0_constant,
                     delta=a.delta, norm_bound=norm, rank_bound=cfg.world.rank_bound,
                     sne_tol=a.sne_tol, sne_max_iter=a.sne_max_iter, mle=mle,
                     refit_stride=a.refit_stride, lambda_scale=a.lambda_scale)
