"""Independent brute-force references shared by unit and acceptance tests."""

import numpy as np
from scipy.optimize import minimize
from scipy.stats import beta as beta_dist

from dpbound.kernels import eval_kernel


def compositions(n, steps):
    """All nonnegative integer vectors of length n summing to steps, as rows."""
    rows = np.zeros((1, 0), dtype=np.int64)
    left = np.array([steps])
    for i in range(n - 1):
        reps = left + 1
        idx = np.repeat(np.arange(len(rows)), reps)
        take = np.concatenate([np.arange(r) for r in reps])
        rows = np.column_stack([rows[idx], take])
        left = left[idx] - take
    return np.column_stack([rows, left])


def lattice_steps(n, budget=400_000):
    from math import comb

    s = 1
    while comb(s + 1 + n - 1, n - 1) <= budget:
        s += 1
    return s


def failure_feasible(alpha, grid, K, m, c, b_y, tau, tail, lip_step, tol=1e-9):
    """Row mask of weight vectors satisfying every constraint of the failure program."""
    mmd2 = np.einsum("ij,jk,ik->i", alpha, K, alpha) - 2 * alpha @ m + c
    ok = mmd2 <= b_y * b_y + tol
    d = np.diff(alpha, axis=1)
    if tail is not None:
        cols = grid[1:] >= tail
        ok &= np.all(d[:, cols] <= tol, axis=1)
    if np.isfinite(lip_step):
        ok &= np.all(np.abs(d) <= lip_step + tol, axis=1)
    return ok


def brute_failure_bound(grid, K, m, c, b_y, tau, tail=None, lip_step=np.inf, polish=5):
    """Max of sum(alpha[grid > tau]) over a simplex lattice, then polished locally."""
    n = len(grid)
    steps = lattice_steps(n)
    A = compositions(n, steps) / steps
    above = grid > tau
    ok = failure_feasible(A, grid, K, m, c, b_y, tau, tail, lip_step)
    if not ok.any():
        return None, None
    vals = A[ok][:, above].sum(1)
    lattice_best = float(vals.max())
    best = lattice_best
    starts = A[ok][np.argsort(-vals)[:polish]]
    cons = [{"type": "eq", "fun": lambda a: a.sum() - 1.0},
            {"type": "ineq", "fun": lambda a: b_y * b_y - (a @ K @ a - 2 * a @ m + c)}]
    if tail is not None:
        cols = np.flatnonzero(grid[1:] >= tail)
        cons.append({"type": "ineq", "fun": lambda a: -np.diff(a)[cols]})
    if np.isfinite(lip_step):
        cons.append({"type": "ineq", "fun": lambda a: lip_step - np.abs(np.diff(a))})
    for a0 in starts:
        r = minimize(lambda a: -a[above].sum(), a0, bounds=[(0, 1)] * n, constraints=cons,
                     method="SLSQP", options={"maxiter": 300, "ftol": 1e-12})
        a = np.clip(r.x, 0, None)
        a /= a.sum()
        if failure_feasible(a[None], grid, K, m, c, b_y, tau, tail, lip_step, tol=1e-7)[0]:
            best = max(best, float(a[above].sum()))
    return lattice_best, best


def beta_upper(k, n, conf):
    if k == n:
        return 1.0
    return float(beta_dist.ppf(conf, k + 1, n - k))


def double_sum_biased_sq(k, P, Q):
    t = 0.0
    for S, T, s in ((P, P, 1), (Q, Q, 1), (P, Q, -2)):
        for a, wa in zip(S.points, S.weights):
            for b, wb in zip(T.points, T.weights):
                t += s * wa * wb * eval_kernel(k, a, b)
    return t


def double_sum_unbiased_sq(k, P, Q):
    def within(S):
        num = sum(S.weights[i] * S.weights[j] * eval_kernel(k, S.points[i], S.points[j])
                  for i in range(S.n) for j in range(S.n) if i != j)
        return num / (1.0 - sum(w * w for w in S.weights))

    cross = sum(wa * wb * eval_kernel(k, a, b) for a, wa in zip(P.points, P.weights)
                for b, wb in zip(Q.points, Q.weights))
    return within(P) + within(Q) - 2 * cross


def random_failure_instance(seed):
    """Small grid, random q_y inside it, bound above the grid's reachable minimum."""
    from dpbound.empirical import WeightedSamples, kernel_mean, self_energy
    from dpbound.failure import FailureProgramConfig, min_grid_discrepancy
    from dpbound.kernels import KernelSpec, gram

    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 9))
    grid = np.linspace(0.0, 1.0, n)
    h = grid[1] - grid[0]
    kern = KernelSpec.se(float(rng.uniform(1.0, 3.0)) * h)
    q = WeightedSamples.uniform(rng.beta(2, 4, size=(int(rng.integers(5, 30)), 1)))
    tau = float(rng.uniform(grid[1], grid[-2]))
    G = grid[:, None]
    K, m, c = gram(kern, G), kernel_mean(kern, G, q), self_energy(kern, q)
    mono = bool(rng.integers(2))
    lip = float(rng.uniform(0.5, 4.0)) / (h * h) if rng.integers(2) else np.inf
    D = np.diff(np.eye(n), axis=0)
    G, bound = np.zeros((0, n)), np.zeros(0)
    if mono:
        Dm = D[grid[1:] >= tau - 1.5 * h]
        G, bound = np.vstack([G, Dm]), np.r_[bound, np.zeros(len(Dm))]
    if np.isfinite(lip):
        G, bound = np.vstack([G, D, -D]), np.r_[bound, np.full(2 * (n - 1), lip * h * h)]
    b_y = min_grid_discrepancy(K, m, c, G, bound) + float(rng.uniform(0.02, 0.3))
    cfg = FailureProgramConfig(0.0, 1.0, tau, kern, lipschitz=lip, monotonic=mono)
    return grid, q, b_y, cfg, (K, m, c)
