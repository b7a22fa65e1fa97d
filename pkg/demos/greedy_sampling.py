"""Greedy sampling: refit, re-solve, play. Prints how the dual gap decays.

Run: python3 demos/greedy_sampling.py [horizon]
"""
import sys

import numpy as np

from gbpm import RunConfig, make_regularizer, make_world, run_greedy_sampling
from gbpm.drivers import online_to_batch, regret_suite

T = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
world = make_world(np.random.default_rng(1000), dim=4, rank_bound=2, nuc_bound=1.0, n_act=6)
cfg = RunConfig(world, make_regularizer("reverse-kl", world, 2.0), T, "gs", seed=0, sne_tol=1e-10)
rec = run_greedy_sampling(cfg)

print(" round   dual gap    cumulative MBR   ||Theta_hat - Theta*||_F")
for t in np.unique(np.geomspace(1, T, 12).astype(int)):
    i = t - 1
    print(f"{t:6d}  {rec.gap_max[i]:.3e}   {rec.cum_mbr[i]:.5f}         {rec.round_frob_err[i]:.4f}")

reg = regret_suite(rec)
print("\nregrets:", {k: round(v, 5) for k, v in reg.items()})
o2b = online_to_batch(rec)
print(f"averaged policy: equilibrium gap {o2b['gap']:.2e} <= 2 MBR / T = {o2b['bound']:.2e}")
print(f"MBR(T) / MBR(T/2) = {rec.cum_mbr[-1] / rec.cum_mbr[T // 2 - 1]:.3f}")
