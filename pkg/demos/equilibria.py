"""Solve the regularized symmetric game for every regularizer and inspect the result.

Run: python3 demos/equilibria.py
"""
import math

import numpy as np

from gbpm import make_world, make_regularizer, solve_sne, true_game
from gbpm.game import dual_gap, payoff_regularized
from gbpm.theory import max_density_ratio

rng = np.random.default_rng(3)
world = make_world(rng, dim=4, rank_bound=2, nuc_bound=3.0, n_act=5,
                   feature_mode="random-unit-sphere")
print("preference table P(a beats b):")
print(np.round(world.pref_table[0], 3))

for kind in ("reverse-kl", "chi-squared", "mixed-kl-chi", "neg-entropy", "tsallis"):
    for eta in (0.5, 4.0, math.inf):
        reg = make_regularizer(kind, world, eta, q=0.5 if kind == "tsallis" else None)
        game = true_game(world, reg)
        sol = solve_sne(game, tol=1e-10)
        pi = sol.policy
        print(f"{kind:13s} eta={eta:<4} pi={np.round(pi[0], 3)} "
              f"value={payoff_regularized(game, pi, pi):.12f} gap={dual_gap(pi, game):.1e} "
              f"max pi/ref={max_density_ratio(pi, reg.reference):.3f}")

# Weak regularization moves the equilibrium toward the unregularized one;
# strong regularization keeps it near the reference.
