"""Executable checks of the inequalities behind the regret analysis.

Every expectation is an exact finite sum over contexts and actions, so a
violation is never Monte-Carlo noise. Randomized sweeps take explicit seeds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from math import comb, floor, log

import numpy as np

from .env import LinkKind, LinkSpec, PreferenceWorld, link_deriv, make_world, min_eig_design
from .game import GameHandle, solve_sne, true_game
from .regularizers import RegKind, RegularizerSpec, make_regularizer
from .skewlin import ModelSpec, SkewMatrix, nuclear_norm, random_low_rank_skew, skew_project


@dataclass
class CheckReport:
    """Outcome of one check.

    ``worst_margin`` is the largest ``lhs - rhs`` seen; a violation is a
    margin above the instance's tolerance.
    """

    name: str
    instances: int = 0
    violations: int = 0
    worst_margin: float = -np.inf
    tolerance: float = 0.0
    passed: bool = True
    details: dict = field(default_factory=dict)

    def add(self, lhs: float, rhs: float, tol: float | None = None) -> bool:
        tol = self.tolerance if tol is None else tol
        margin = float(lhs - rhs)
        self.instances += 1
        self.worst_margin = max(self.worst_margin, margin)
        bad = margin > tol
        if bad:
            self.violations += 1
            self.passed = False
        return not bad

    def to_dict(self) -> dict:
        d = asdict(self)
        if not np.isfinite(d["worst_margin"]):
            d["worst_margin"] = None
        return d

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"{flag} {self.name}: {self.violations}/{self.instances} violations, "
                f"worst margin {self.worst_margin:.3g} (tol {self.tolerance:.1g})")


def _err_norms(world: PreferenceWorld, E) -> np.ndarray:
    """||E phi||_2 for every context and action."""
    return np.linalg.norm(np.einsum("de,xae->xad", np.asarray(E), world.features), axis=2)


# ---------------------------------------------------------------- quadratic gap bound

def gap_bound_sides(truth: GameHandle, theta_hat, pi_hat) -> dict:
    """True dual gap of ``pi_hat`` and both error-based upper bounds.

    quad = (L^2 eta beta + L) E_{phi ~ pi_hat} ||E phi||^2
    lin  = (L/2) E_{phi ~ pi_hat} [||E phi|| + ||E phi||^2]
    with E = theta_star - theta_hat and L the link constant.
    """
    from .game import dual_gap

    w = truth.world
    E = truth.theta.entries - np.asarray(theta_hat)
    n = _err_norms(w, E)
    wts = w.context_dist[:, None] * pi_hat
    e1 = float(np.sum(wts * n))
    e2 = float(np.sum(wts * n * n))
    L = w.link.l_mu
    reg = truth.reg
    quad = np.inf if reg.unregularized else (L * L * reg.eta * reg.beta + L) * e2
    return {"gap": dual_gap(pi_hat, truth), "quad": quad, "lin": 0.5 * L * (e1 + e2)}


def check_gap_bound(record, tol: float = 1e-8) -> CheckReport:
    """Both quadratic-gap inequalities on every greedy policy of a run."""
    rep = CheckReport("gap-bound-run", tolerance=tol)
    truth = record.true_handle()
    worst_ratio = 0.0
    for i in np.flatnonzero(record.greedy):
        s = gap_bound_sides(truth, record.thetas[i], record.policies[i])
        budget = tol + 2.0 * record.solver_residuals[i]
        rep.add(s["gap"], s["quad"], budget)
        rep.add(s["gap"], s["lin"], budget)
        if s["gap"] > budget:
            worst_ratio = max(worst_ratio, s["gap"] / min(s["quad"], s["lin"]))
    rep.details["max_gap_to_bound_ratio"] = worst_ratio
    rep.details["max_solver_residual"] = float(np.max(record.solver_residuals[record.greedy],
                                                      initial=0.0))
    return rep


def random_instance(rng: np.random.Generator, kinds=None, etas=(0.5, 2.0, 8.0)):
    """Random world, regularizer and estimated parameter for sweep checks."""
    kinds = kinds or [RegKind.REVERSE_KL, RegKind.CHI_SQUARED, RegKind.MIXED,
                      RegKind.NEG_ENTROPY, RegKind.TSALLIS]
    d = int(rng.choice([2, 3, 4, 6]))
    link = "linear" if rng.random() < 0.25 else "logistic"
    S = float(rng.uniform(0.1, 0.5)) if link == "linear" else float(rng.uniform(0.5, 4.0))
    world = make_world(rng, dim=d, rank_bound=2 * int(rng.integers(1, d // 2 + 1)),
                       nuc_bound=S, link=link, n_ctx=int(rng.integers(1, 4)),
                       n_act=int(rng.integers(2, 9)),
                       feature_mode=str(rng.choice(["random-unit-sphere", "hypercube-scaled",
                                                    "simplex-corners"])))
    kind = kinds[int(rng.integers(len(kinds)))]
    ref = rng.dirichlet(np.ones(world.n_act), size=world.n_ctx) * 0.9 + 0.1 / world.n_act
    reg = make_regularizer(kind, world, float(rng.choice(etas)),
                           q=float(rng.choice([0.5, 1.5])) if kind is RegKind.TSALLIS else None,
                           reference=ref)
    scale = 10 ** rng.uniform(-3, 0.5) * S
    noise = skew_project(rng.standard_normal((d, d))).entries
    theta_hat = world.theta_star.entries + scale * noise / np.linalg.norm(noise)
    return world, reg, SkewMatrix(theta_hat)


def check_gap_bound_random(n: int = 200, seed: int = 0, tol: float = 1e-8,
                       sne_tol: float = 1e-11) -> CheckReport:
    """Quadratic-gap inequalities on random (theta_star, theta_hat) pairs."""
    rng = np.random.default_rng(seed)
    rep = CheckReport("gap-bound-random", tolerance=tol)
    for _ in range(n):
        world, reg, theta_hat = random_instance(rng)
        sol = solve_sne(GameHandle(world, theta_hat, reg), tol=sne_tol)
        s = gap_bound_sides(true_game(world, reg), theta_hat, sol.policy)
        budget = tol + 2.0 * sol.dual_gap_estimate
        rep.add(s["gap"], s["quad"], budget)
        rep.add(s["gap"], s["lin"], budget)
    return rep


# ---------------------------------------------------------------- anti-symmetric cancellation

def cancellation_terms(world: PreferenceWorld, theta, E, pi_hat, pi_tilde=None) -> dict:
    """Exact sums behind the anti-symmetric cancellation.

    same  : E_{phi, phi' ~ pi_hat}[mu'(phi^T theta phi') phi^T E phi']  (always 0)
    cross : the same expectation with phi' ~ pi_tilde
    bound : (L/2) * ||pi_hat - pi_tilde||_1 * E_{phi ~ pi_hat} ||E phi||
    The l1 distance sums over all contexts and actions.
    """
    F = world.features
    theta = np.asarray(theta, dtype=float)
    E = np.asarray(E, dtype=float)
    W = link_deriv(world.link, np.einsum("xad,de,xbe->xab", F, theta, F))
    G = np.einsum("xad,de,xbe->xab", F, E, F) * W
    d0 = world.context_dist
    same = float(d0 @ np.einsum("xa,xab,xb->x", pi_hat, G, pi_hat))
    out = {"same": same}
    if pi_tilde is not None:
        cross = float(d0 @ np.einsum("xa,xab,xb->x", pi_hat, G, pi_tilde))
        e1 = float(np.sum(d0[:, None] * pi_hat * _err_norms(world, E)))
        l1 = float(np.abs(pi_hat - pi_tilde).sum())
        out.update(cross=cross, l1=l1, err=e1, bound=0.5 * world.link.l_mu * l1 * e1)
    return out


def check_cancellation(policy, theta, err_matrix, world: PreferenceWorld, other=None,
                  z_tol: float = 1e-10, tol: float = 1e-9) -> CheckReport:
    rep = CheckReport("cancellation", tolerance=tol)
    t = cancellation_terms(world, theta, err_matrix, policy, other)
    rep.add(abs(t["same"]), 0.0, z_tol)
    if other is not None:
        rep.add(abs(t["cross"]), t["bound"], tol)
    rep.details = t
    return rep


def check_cancellation_random(n: int = 500, seed: int = 1, tol: float = 1e-9) -> CheckReport:
    rng = np.random.default_rng(seed)
    rep = CheckReport("cancellation-random", tolerance=tol)
    max_z = 0.0
    for _ in range(n):
        world, _, _ = random_instance(rng)
        d = world.dim
        theta = world.theta_star.entries
        E = skew_project(rng.standard_normal((d, d))).entries * rng.uniform(0.01, 2.0)
        alpha = rng.uniform(0.2, 3.0)
        p = rng.dirichlet(alpha * np.ones(world.n_act), size=world.n_ctx)
        q = rng.dirichlet(alpha * np.ones(world.n_act), size=world.n_ctx)
        t = cancellation_terms(world, theta, E, p, q)
        max_z = max(max_z, abs(t["same"]))
        rep.add(abs(t["same"]), 0.0, 1e-10)
        rep.add(abs(t["cross"]), t["bound"], tol)
    rep.details["max_abs_same_policy_term"] = max_z
    return rep


# ---------------------------------------------------------------- coverage

def _is_psd(M, tol=1e-10) -> bool:
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
        return False
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0]) >= -tol * max(1.0, np.abs(M).max())


def coverage_sides(M, phi, world: PreferenceWorld, literal_vec: bool = False) -> tuple[float, float]:
    """Both sides of the coverage inequality.

    lhs = sum_j (phi (x) e_j)^T M (phi (x) e_j)
    rhs = C_min^-1 E_{x ~ d0, phi' ~ rho}[w^T M w] with w = phi (x) phi'.
    ``phi (x) phi'`` equals vec(phi' phi^T) in column-major order. Setting
    ``literal_vec`` uses vec(phi phi'^T) = phi' (x) phi instead, which puts the
    exploration design on the wrong Kronecker factor.
    """
    M = np.asarray(M, dtype=float)
    phi = np.asarray(phi, dtype=float)
    d = phi.size
    lhs = float(np.trace(M @ np.kron(np.outer(phi, phi), np.eye(d))))
    design = np.einsum("x,xa,xad,xae->de", world.context_dist, world.explore_policy,
                       world.features, world.features)
    pp = np.outer(phi, phi)
    K = np.kron(design, pp) if literal_vec else np.kron(pp, design)
    c_min = min_eig_design(world)
    rhs = float(np.trace(M @ K)) / c_min if c_min > 0 else np.inf
    return lhs, rhs


def check_coverage_kron(M, phi, world: PreferenceWorld, tol: float = 1e-9) -> CheckReport:
    if not _is_psd(M):
        raise ValueError("M must be symmetric positive semi-definite")
    rep = CheckReport("coverage", tolerance=tol)
    lhs, rhs = coverage_sides(M, phi, world)
    rep.add(lhs, rhs, tol * max(1.0, abs(rhs)))
    rep.details = {"lhs": lhs, "rhs": rhs}
    return rep


def random_psd(rng, n: int) -> np.ndarray:
    A = rng.standard_normal((n, int(rng.integers(1, n + 1))))
    return A @ A.T


def check_coverage_random(n: int = 200, seed: int = 2, tol: float = 1e-9,
                          literal_vec: bool = False) -> CheckReport:
    rng = np.random.default_rng(seed)
    rep = CheckReport("coverage-random" + ("-literal" if literal_vec else ""), tolerance=tol)
    done = 0
    while done < n:
        d = int(rng.integers(2, 6))
        world = make_world(rng, dim=d, n_ctx=int(rng.integers(1, 3)),
                           n_act=int(rng.integers(d, 3 * d + 1)),
                           feature_mode=str(rng.choice(["random-unit-sphere", "hypercube-scaled"])))
        if min_eig_design(world) < 1e-6:
            continue
        phi = rng.standard_normal(d)
        phi *= rng.uniform(0, 1) / np.linalg.norm(phi)
        lhs, rhs = coverage_sides(random_psd(rng, d * d), phi, world, literal_vec)
        rep.add(lhs, rhs, tol * max(1.0, abs(rhs)))
        done += 1
    return rep


def kron_order_margin(A, B, C) -> float:
    """Smallest eigenvalue of A (x) B - A (x) C."""
    D = np.kron(A, B) - np.kron(A, C)
    return float(np.linalg.eigvalsh(0.5 * (D + D.T))[0])


def check_kron_order_random(n: int = 200, seed: int = 3, tol: float = 1e-10) -> CheckReport:
    """A (x) B >= A (x) C whenever A >= 0 and B >= C."""
    rng = np.random.default_rng(seed)
    rep = CheckReport("kron-order-random", tolerance=tol)
    for _ in range(n):
        m, k = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        A = random_psd(rng, m)
        C = rng.standard_normal((k, k))
        C = C + C.T
        B = C + random_psd(rng, k)
        scale = max(1.0, np.abs(np.kron(A, B)).max())
        rep.add(-kron_order_margin(A, B, C), 0.0, tol * scale)
    return rep


# ---------------------------------------------------------------- density ratios

def density_ratio_bound(kind, eta: float) -> float:
    kind = RegKind(kind)
    if kind is RegKind.REVERSE_KL:
        return float(np.exp(eta))
    if kind is RegKind.CHI_SQUARED:
        return float(eta)
    if kind is RegKind.MIXED:
        return 1.0 + float(eta)
    raise ValueError(f"no density-ratio bound for {kind.value}")


def max_density_ratio(pi, reference) -> float:
    ref = np.asarray(reference)
    pi = np.asarray(pi)
    pos = ref > 0
    return float(np.max(pi[pos] / ref[pos]))


def check_density_ratio(sne_policy, reg: RegularizerSpec, slack: float = 1e-4,
                        handle: GameHandle | None = None, cert_tol: float = 1e-6) -> CheckReport:
    """max_a pi(a|x) / ref(a|x) against the regularizer's bound, with multiplicative slack."""
    h = density_ratio_bound(reg.kind, reg.eta)
    rep = CheckReport(f"density-ratio-{reg.kind.value}", tolerance=slack)
    if handle is not None:
        from .game import dual_gap

        gap = dual_gap(sne_policy, handle)
        if gap > cert_tol:
            raise ValueError(f"policy is not a certified equilibrium (gap {gap:.3g})")
    ratio = max_density_ratio(sne_policy, reg.reference)
    rep.add(ratio / h, 1.0, slack)
    rep.details = {"ratio": ratio, "bound": h, "eta": reg.eta}
    return rep


def check_density_ratio_random(kind, etas, n: int = 100, seed: int = 4, slack: float = 1e-4,
                               sne_tol: float = 1e-10) -> CheckReport:
    """Density ratios of solved equilibria on random 8-action worlds with random references."""
    kind = RegKind(kind)
    rng = np.random.default_rng(seed)
    rep = CheckReport(f"density-ratio-random-{kind.value}", tolerance=slack)
    by_eta: dict = {}
    for i in range(n):
        eta = float(etas[i % len(etas)])
        d = int(rng.choice([2, 4, 6]))
        world = make_world(rng, dim=d, rank_bound=2, nuc_bound=float(rng.uniform(0.5, 8.0)),
                           n_ctx=int(rng.integers(1, 3)), n_act=8,
                           feature_mode="random-unit-sphere")
        ref = rng.dirichlet(np.ones(8), size=world.n_ctx) * 0.9 + 0.1 / 8
        reg = make_regularizer(kind, world, eta, reference=ref)
        sol = solve_sne(true_game(world, reg), tol=sne_tol)
        ratio = max_density_ratio(sol.policy, ref)
        h = density_ratio_bound(kind, eta)
        ok = rep.add(ratio / h, 1.0, slack)
        e = by_eta.setdefault(eta, {"instances": 0, "violations": 0, "max_ratio": 0.0, "bound": h})
        e["instances"] += 1
        e["violations"] += int(not ok)
        e["max_ratio"] = max(e["max_ratio"], ratio)
    rep.details["by_eta"] = {str(k): v for k, v in sorted(by_eta.items())}
    return rep


# ---------------------------------------------------------------- diagnostics

def confidence_radius(t: float, delta: float, S: float, d: int, kappa: float | None = None) -> float:
    """S^5 + S log(1/delta) + S d^2 log(S t / d), up to constants.

    ``kappa`` is accepted for interface symmetry; the displayed form does not use it.
    """
    if min(t, S, d) <= 0 or not 0 < delta < 1:
        raise ValueError("need positive t, S, d and delta in (0, 1)")
    return S ** 5 + S * log(1.0 / delta) + S * d * d * log(S * t / d)


@dataclass(frozen=True)
class PotentialResult:
    total: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.total <= self.bound + 1e-12


def elliptical_potential_sum(vectors, lambda_reg: float) -> PotentialResult:
    """sum_t min(1, ||x_t||^2 in the inverse of V_t = lambda I + sum_{s<t} x_s x_s^T)."""
    X = np.asarray(vectors, dtype=float)
    if X.size == 0:
        return PotentialResult(0.0, 0.0)
    T, d = X.shape
    Vinv = np.eye(d) / lambda_reg
    total = 0.0
    for x in X:
        Vx = Vinv @ x
        q = float(x @ Vx)
        total += min(1.0, q)
        Vinv -= np.outer(Vx, Vx) / (1.0 + q)
    Xmax = float(np.max(np.linalg.norm(X, axis=1)))
    return PotentialResult(total, 2 * d * log(1 + Xmax ** 2 * T / (d * lambda_reg)))


def eluder_upper_bound(d: int, lam: float, T: float, kappa: float, l_mu: float, S: float) -> float:
    """(2 d^2 L^2 / kappa^2) log(1 + 4 kappa^2 S^2 T / (d^2 lambda))."""
    return 2 * d * d * l_mu ** 2 / kappa ** 2 * log(1 + 4 * kappa ** 2 * S ** 2 * T / (d * d * lam))


def eluder_witness(d: int, S: float, eps: float, alpha: float | None = None,
                   in_class: bool = False):
    """Coordinate-spike witness sequence for the eluder lower bound.

    For each pair i < j and t = 0..k: x = 2^(t-k) e_i, y = 2^(t-k) e_j and
    Theta_t = alpha 4^(k-t) (e_i e_j^T - e_j e_i^T), so x^T Theta_t y = alpha
    while earlier points of the same pair see alpha 4^(s-t). Here
    k = floor(log4(S / alpha)); ``in_class`` uses S / (2 alpha) so every
    Theta_t also has nuclear norm <= S.
    """
    if not 0 < eps < S:
        raise ValueError("need 0 < eps < S")
    alpha = 1.5 * eps if alpha is None else alpha
    k = floor(log((S / (2 * alpha)) if in_class else (S / alpha), 4) + 1e-12)
    if k < 0:
        raise ValueError("scale too large for the budget")
    seq = []
    for i in range(d):
        for j in range(i + 1, d):
            spike = np.zeros((d, d))
            spike[i, j], spike[j, i] = 1.0, -1.0
            for t in range(k + 1):
                s = 2.0 ** (t - k)
                seq.append((s * np.eye(d)[i], s * np.eye(d)[j], alpha * 4.0 ** (k - t) * spike))
    return seq, k, alpha


def eluder_witness_check(d: int, S: float, eps: float, alpha: float | None = None,
                         in_class: bool = False) -> CheckReport:
    """Verify both eluder conditions for the witness under the linear link with P* = 1/2."""
    seq, k, alpha = eluder_witness(d, S, eps, alpha, in_class)
    rep = CheckReport("eluder-witness", tolerance=0.0)
    worst_linear = 0.0
    for t, (x, y, Th) in enumerate(seq):
        dev = abs(float(x @ Th @ y))  # |P_t(z_t) - P*(z_t)| under the linear link
        past = np.array([xs @ Th @ ys for xs, ys, _ in seq[:t]])
        sq = float(np.sum(past ** 2))
        ok = dev > eps and sq < eps * eps
        rep.instances += 1
        rep.worst_margin = max(rep.worst_margin, eps - dev, sq - eps * eps)
        if not ok:
            rep.violations += 1
            rep.passed = False
        worst_linear = max(worst_linear, float(np.sum(np.abs(past))))
    nucs = [nuclear_norm(Th) for _, _, Th in seq]
    max_bilinear = max(abs(float(x @ Th @ y)) for x, y, Th in seq)
    rep.details = {
        "length": len(seq), "expected_length": comb(d, 2) * (k + 1), "k": k, "alpha": alpha,
        "max_nuclear_norm": max(nucs), "all_in_class": bool(max(nucs) <= S + 1e-12),
        "max_linear_past_sum": worst_linear, "linear_sum_below_eps2": worst_linear < eps * eps,
        "probabilities_valid": bool(max_bilinear <= 0.5), "link": "linear",
    }
    if len(seq) != comb(d, 2) * (k + 1):
        rep.passed = False
    return rep


# ---------------------------------------------------------------- suite

def verify_all(seed: int = 0, quick: bool = True) -> list[CheckReport]:
    """The release-gate suite used by the ``verify`` command."""
    from .drivers import RunConfig, online_to_batch, run_greedy_sampling

    n = 50 if quick else 200
    reports = [
        check_gap_bound_random(n, seed),
        check_cancellation_random(500 if not quick else 200, seed + 1),
        check_coverage_random(n, seed + 2),
        check_kron_order_random(n, seed + 3),
        check_density_ratio_random("reverse-kl", (0.5, 1.0, 2.0, 3.0), n // 2, seed + 4),
        check_density_ratio_random("chi-squared", (2.0, 4.0, 8.0), n // 2, seed + 5),
        check_density_ratio_random("mixed-kl-chi", (0.5, 1.0, 2.0, 4.0), n // 2, seed + 6),
        eluder_witness_check(4, 1.0, 0.01),
    ]
    rng = np.random.default_rng(seed + 7)
    world = make_world(rng, dim=4, rank_bound=2, nuc_bound=1.0, n_act=6)
    cfg = RunConfig(world, make_regularizer("reverse-kl", world, 2.0), 500 if quick else 2000,
                    "gs", seed=seed, sne_tol=1e-10)
    rec = run_greedy_sampling(cfg)
    reports.append(check_gap_bound(rec))
    o2b = online_to_batch(rec)
    r = CheckReport("online-to-batch", tolerance=1e-8)
    r.add(o2b["gap"], o2b["bound"])
    reports.append(r)
    ep = elliptical_potential_sum(rng.standard_normal((200, 4)) / 2.0, 1.0)
    r = CheckReport("elliptical-potential", tolerance=0.0)
    r.add(ep.total, ep.bound)
    r.details = {"sum": ep.total, "bound": ep.bound, "note": "diagnostic, up to constants"}
    reports.append(r)
    return reports
