"""Upper bound on P(TPI > tau) over all grid distributions within MMD B^y of q_y."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .empirical import WeightedSamples, kernel_mean, self_energy
from .kernels import KernelSpec, gram

SPACING_FRACTION = 5.0  # grid spacing <= lengthscale / 5
TAIL_OFFSET = 1.5  # monotone tail starts 1.5 grid spacings below tau
SOC_SLACKS = (0.0, 1e-10, 1e-8, 1e-6)  # absolute slack on B^2, tried in order


class FailureProgramError(RuntimeError):
    def __init__(self, message: str, min_achievable: Optional[float] = None):
        super().__init__(message)
        self.min_achievable = min_achievable


@dataclass(frozen=True)
class FailureProgramConfig:
    grid_min: float
    grid_max: float
    tau: float
    kernel: KernelSpec
    lipschitz: float = math.inf
    monotonic: bool = True
    tail_threshold: Optional[float] = None  # defaults to tau - 1.5 * spacing
    lipschitz_units: str = "density"  # or "weight" for |a_{v+1} - a_v| <= L * spacing

    def __post_init__(self) -> None:
        if not self.grid_min < self.grid_max:
            raise ValueError("grid_min must be below grid_max")
        if self.lipschitz < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        if self.lipschitz_units not in ("density", "weight"):
            raise ValueError("lipschitz_units must be 'density' or 'weight'")

    @property
    def lengthscale(self) -> float:
        if not self.kernel.is_shared:
            raise ValueError("TPI kernel must have a single lengthscale")
        return self.kernel.lengthscales[0]

    def with_range(self, lo: float, hi: float) -> "FailureProgramConfig":
        return replace(self, grid_min=lo, grid_max=hi)


@dataclass
class FailureBoundResult:
    f_max: float
    alpha_star: np.ndarray
    grid: np.ndarray
    binding: dict = field(default_factory=dict)
    status: str = ""

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.grid, self.alpha_star]), delimiter=",",
                   header="grid,alpha", comments="")


def build_grid(q_y: WeightedSamples, grid_min: float, grid_max: float, kernel: KernelSpec) -> np.ndarray:
    if not grid_min < grid_max:
        raise ValueError("grid_min must be below grid_max")
    if q_y.dim != 1:
        raise ValueError("only scalar TPI is supported")
    pts = q_y.points[:, 0]
    outliers = pts[(pts < grid_min) | (pts > grid_max)]
    if outliers.size:
        raise ValueError(
            f"{outliers.size} q_y points outside [{grid_min}, {grid_max}]: {np.sort(outliers)[:10].tolist()}"
        )
    ell = kernel.lengthscales[0]
    n = int(math.ceil((grid_max - grid_min) / (ell / SPACING_FRACTION) - 1e-12)) + 1
    return np.linspace(grid_min, grid_max, max(n, 2))


def estimate_lipschitz(q_y: WeightedSamples, bins: int = 100) -> float:
    """Largest jump between adjacent bins of a density-normalized histogram, per unit width."""
    x = q_y.points[:, 0]
    if np.ptp(x) == 0:
        raise ValueError("all samples identical: density is degenerate")
    h, edges = np.histogram(x, bins=bins, weights=q_y.weights, density=True)
    width = edges[1] - edges[0]
    return float(np.abs(np.diff(h)).max() / width) if bins > 1 else 0.0


def _factor(K: np.ndarray) -> np.ndarray:
    """R with R^T R = K (eigenvalues clipped at zero, negligible modes dropped)."""
    lam, Q = np.linalg.eigh(0.5 * (K + K.T))
    keep = lam > 1e-13 * max(lam[-1], 1e-300)
    return np.sqrt(lam[keep])[:, None] * Q[:, keep].T


def min_grid_discrepancy(K: np.ndarray, m: np.ndarray, c: float, G=None, h=None) -> float:
    """Smallest MMD to q over grid weights, optionally subject to G a <= h."""
    from scipy.optimize import minimize

    V = m.shape[0]
    cons = [{"type": "eq", "fun": lambda a: a.sum() - 1.0, "jac": lambda a: np.ones(V)}]
    if G is not None and G.shape[0]:
        Gd = G.toarray() if sp.issparse(G) else np.asarray(G)
        cons.append({"type": "ineq", "fun": lambda a: h - Gd @ a, "jac": lambda a: -Gd})
    res = minimize(
        lambda a: a @ K @ a - 2 * a @ m + c,
        np.full(V, 1.0 / V),
        jac=lambda a: 2.0 * (K @ a - m),
        bounds=[(0.0, 1.0)] * V,
        constraints=cons,
        method="SLSQP",
        options={"maxiter": 1000, "ftol": 1e-15},
    )
    return math.sqrt(max(float(res.fun), 0.0))


def failure_bound(grid, q_y: WeightedSamples, b_y: float, cfg: FailureProgramConfig) -> FailureBoundResult:
    import clarabel

    grid = np.asarray(grid, dtype=float).ravel()
    if b_y < 0 or not np.isfinite(b_y):
        raise ValueError("B^y must be a finite nonnegative number")
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing with at least two points")
    n = grid.size
    above = grid > cfg.tau
    if not above.any():
        return FailureBoundResult(0.0, np.eye(n)[0], grid, {}, "trivial")

    G = grid[:, None]
    K = gram(cfg.kernel, G)
    m = kernel_mean(cfg.kernel, G, q_y)
    c = self_energy(cfg.kernel, q_y)
    R = _factor(K)
    h = float(np.mean(np.diff(grid)))

    rows, b, cones = [], [], []
    # sum alpha = 1
    rows.append(sp.csr_matrix(np.ones((1, n))))
    b.append(np.ones(1))
    cones.append(clarabel.ZeroConeT(1))
    # alpha >= 0, monotone tail, Lipschitz
    lin = [-sp.identity(n, format="csr")]
    lin_b = [np.zeros(n)]
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [0, 1], shape=(n - 1, n), format="csr")  # a_{v+1} - a_v
    n_mono = 0
    tail = cfg.tail_threshold if cfg.tail_threshold is not None else cfg.tau - TAIL_OFFSET * h
    lip_step = cfg.lipschitz * (h * h if cfg.lipschitz_units == "density" else h)
    if cfg.monotonic:
        idx = np.flatnonzero(grid[1:] >= tail)
        if idx.size:
            lin.append(D[idx])
            lin_b.append(np.zeros(idx.size))
            n_mono = idx.size
    n_lip = 0
    if np.isfinite(cfg.lipschitz):
        lin += [D, -D]
        lin_b += [np.full(n - 1, lip_step), np.full(n - 1, lip_step)]
        n_lip = 2 * (n - 1)
    Alin = sp.vstack(lin).tocsr()
    rows.append(Alin)
    b.append(np.concatenate(lin_b))
    cones.append(clarabel.NonnegativeConeT(Alin.shape[0]))
    soc = np.vstack([-2 * m, -2 * m, -2 * R])
    rows.append(sp.csr_matrix(soc))
    cones.append(clarabel.SecondOrderConeT(soc.shape[0]))
    A = sp.vstack(rows).tocsc()
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.tol_feas = 1e-9
    settings.max_iter = 400

    # A ball of radius ~0 has no interior; a small slack on B^2 only enlarges the feasible set.
    for slack in SOC_SLACKS:
        # ||R a||^2 <= B^2 + slack - c + 2 m^T a, as a second-order cone in (s + 1, s - 1, 2 R a)
        s0 = b_y * b_y + slack - c
        bb = np.concatenate(b + [np.concatenate([[s0 + 1.0, s0 - 1.0], np.zeros(R.shape[0])])])
        res = clarabel.DefaultSolver(sp.csc_matrix((n, n)), -above.astype(float), A, bb, cones, settings).solve()
        status = str(res.status)
        if status in ("Solved", "AlmostSolved") or status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            break
    if status not in ("Solved", "AlmostSolved"):
        reach = min_grid_discrepancy(K, m, c, Alin[n:], np.concatenate(lin_b)[n:])
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible") or reach >= b_y * (1 - 1e-6):
            raise FailureProgramError(
                f"failure program infeasible: B^y = {b_y:.6g} but the grid reaches at best {reach:.6g}",
                min_achievable=reach,
            )
        raise FailureProgramError(f"failure program solver status {status}")
    alpha = np.clip(np.asarray(res.x), 0.0, None)
    alpha /= alpha.sum()
    mmd2 = float(alpha @ K @ alpha - 2 * alpha @ m + c)
    da = np.diff(alpha)
    binding = {
        "mmd": bool(mmd2 >= b_y * b_y + slack - 1e-6),
        "monotone": int(np.sum(np.abs(da[grid[1:] >= tail]) <= 1e-6)) if n_mono else 0,
        "lipschitz": int(np.sum(np.abs(np.abs(da) - lip_step) <= 1e-6)) if n_lip else 0,
        "zero_weights": int(np.sum(alpha <= 1e-6)),
        "slack": slack,
    }
    f_max = float(np.clip(alpha[above].sum(), 0.0, 1.0))
    return FailureBoundResult(f_max, alpha, grid, binding, status)
