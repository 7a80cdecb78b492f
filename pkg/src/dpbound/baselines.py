"""Comparison methods (MCCP, SurrModel) and the exact GP regression they rely on."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.stats import beta as beta_dist

from .graph import ComponentGraph, simulate
from .kernels import KernelFamily, KernelSpec, as_points, gram, scaled_sqdist


# ---------------------------------------------------------------- Clopper-Pearson

def clopper_pearson_upper(k: int, n: int, confidence: float = 0.95) -> float:
    """One-sided upper confidence limit for a binomial proportion."""
    if not (isinstance(k, (int, np.integer)) and isinstance(n, (int, np.integer))):
        raise TypeError("k and n must be integers")
    if n < 1 or k < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    if k == n:
        return 1.0
    if k == 0:
        return float(-math.expm1(math.log1p(-confidence) / n))
    return float(beta_dist.ppf(confidence, k + 1, n - k))


@dataclass
class BaselineResult:
    f_max: float
    details: dict = field(default_factory=dict)


def mccp(model: ComponentGraph, q_inputs, tau: float, confidence: float = 0.95, seed: int = 0) -> BaselineResult:
    """Clopper-Pearson bound from thresholded model simulations."""
    q_inputs = np.asarray(q_inputs, dtype=float)
    if q_inputs.shape[0] < 1:
        raise ValueError("need at least one simulation input")
    tpi = simulate(model, q_inputs, seed).tpi
    k = int(np.sum(tpi > tau))
    n = int(tpi.size)
    return BaselineResult(clopper_pearson_upper(k, n, confidence), {"k": k, "n": n, "confidence": confidence})


# ---------------------------------------------------------------- exact GP

@dataclass
class GPModel:
    X: np.ndarray
    y: np.ndarray
    kernel: KernelSpec
    signal_var: float
    noise_var: float
    chol: np.ndarray = field(repr=False, default=None)
    weights: np.ndarray = field(repr=False, default=None)
    nll: float = float("nan")

    def __post_init__(self) -> None:
        if self.chol is None:
            K = self.signal_var * gram(self.kernel, self.X)
            K[np.diag_indices_from(K)] += self.noise_var + self.kernel.jitter * self.signal_var
            self.chol = np.linalg.cholesky(K)
            self.weights = sla.cho_solve((self.chol, True), self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
            "nll": self.nll,
            "n": int(self.X.shape[0]),
        }


def _kernel_and_grads(family: KernelFamily, X: np.ndarray, ell: np.ndarray):
    """Unit-variance Gram matrix and its derivatives w.r.t. log lengthscales."""
    Xs = X / ell
    diff2 = (Xs[:, None, :] - Xs[None, :, :]) ** 2  # (n, n, d)
    r2 = diff2.sum(-1)
    if family is KernelFamily.SQUARED_EXPONENTIAL:
        K = np.exp(-0.5 * r2)
        dK_dr2 = -0.5 * K
    else:
        K = (1.0 + r2) ** -0.5
        dK_dr2 = -0.5 * (1.0 + r2) ** -1.5
    # d r2 / d log ell_d = -2 diff2_d
    grads = [-2.0 * dK_dr2 * diff2[:, :, j] for j in range(X.shape[1])]
    return K, grads


def _neg_log_marginal(theta, X, y, family, jitter):
    d = X.shape[1]
    ell = np.exp(theta[:d])
    sf2 = math.exp(2 * theta[d])
    sn2 = math.exp(2 * theta[d + 1])
    K0, dK = _kernel_and_grads(family, X, ell)
    K = sf2 * K0
    K[np.diag_indices_from(K)] += sn2 + jitter * sf2
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        return 1e25, np.zeros_like(theta)
    a = sla.cho_solve((L, True), y)
    n = y.size
    nll = 0.5 * y @ a + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi)
    W = sla.cho_solve((L, True), np.eye(n)) - np.outer(a, a)
    g = np.empty_like(theta)
    for j in range(d):
        g[j] = 0.5 * np.sum(W * (sf2 * dK[j]))
    g[d] = 0.5 * np.sum(W * (2 * sf2 * K0))
    g[d + 1] = 0.5 * np.trace(W) * 2 * sn2
    return float(nll), g


def gp_fit(
    X,
    y,
    family: Union[str, KernelFamily] = "se",
    seed: int = 0,
    restarts: int = 10,
    max_iter: int = 2000,
) -> GPModel:
    """Exact zero-mean GP; hyperparameters by multi-restart L-BFGS-B on the marginal likelihood."""
    X = as_points(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 2 or X.shape[0] != y.size:
        raise ValueError("need at least two training pairs with matching lengths")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")
    fam = KernelFamily.parse(family)
    n, d = X.shape
    spread = np.ptp(X, axis=0)
    spread = np.where(spread > 0, spread, 1.0)
    ymag = max(float(np.sqrt(np.mean(y**2))), 1e-8)
    ystd = max(float(np.std(y)), 1e-3 * ymag)
    bounds = (
        [(math.log(1e-3 * s), math.log(1e3 * s)) for s in spread]
        + [(math.log(1e-3 * ymag), math.log(1e2 * ymag))]
        + [(math.log(1e-6 * ystd), math.log(2.0 * ystd))]
    )
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    rng = np.random.default_rng(seed)
    jitter = KernelSpec(fam, 1.0).jitter
    best = None
    for r in range(max(restarts, 1)):
        if r == 0:
            theta0 = np.concatenate([np.log(0.3 * spread), [math.log(ymag)], [math.log(1e-2 * ystd)]])
        else:
            theta0 = np.concatenate([
                np.log(spread) + rng.uniform(math.log(0.05), math.log(3.0), d),
                [math.log(ymag) + rng.uniform(-1.0, 1.0)],
                [math.log(ystd) + rng.uniform(math.log(1e-5), math.log(0.3))],
            ])
        theta0 = np.clip(theta0, lo, hi)
        try:
            res = minimize(_neg_log_marginal, theta0, args=(X, y, fam, jitter), jac=True,
                           method="L-BFGS-B", bounds=bounds, options={"maxiter": max_iter})
        except (ValueError, FloatingPointError):
            continue
        if np.isfinite(res.fun) and res.fun < 1e24 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise RuntimeError("GP marginal likelihood was non-finite for every restart")
    th = best.x
    kernel = KernelSpec(fam, np.exp(th[:d]))
    return GPModel(X, y, kernel, float(math.exp(2 * th[d])), float(math.exp(2 * th[d + 1])), nll=float(best.fun))


def gp_predict(m: GPModel, Xstar) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and latent-function variance at the rows of Xstar."""
    Xs = as_points(Xstar)
    if Xs.shape[1] != m.dim:
        raise ValueError(f"expected {m.dim} input columns, got {Xs.shape[1]}")
    Ks = m.signal_var * gram(m.kernel, m.X, Xs)
    mean = Ks.T @ m.weights
    v = sla.solve_triangular(m.chol, Ks, lower=True)
    var = np.maximum(m.signal_var - np.sum(v * v, axis=0), 0.0)
    return mean, var


def gp_sample(m: GPModel, Xstar, seed: int) -> np.ndarray:
    """Independent draws from the pointwise posterior marginals."""
    mean, var = gp_predict(m, Xstar)
    return mean + np.sqrt(var) * np.random.default_rng(seed).standard_normal(mean.shape)


class GPComponentMap:
    """Component map backed by one GP per output dimension (mean or posterior draws)."""

    def __init__(self, models: list[GPModel], stochastic: bool = False):
        self.models = models
        self.stochastic = stochastic

    def __call__(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        cols = []
        for gp in self.models:
            mean, var = gp_predict(gp, X)
            if self.stochastic:
                mean = mean + np.sqrt(var) * rng.standard_normal(mean.shape)
            cols.append(mean)
        return np.column_stack(cols)


def fit_component_gps(X, Y, family="se", seed: int = 0, restarts: int = 10) -> list[GPModel]:
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    return [gp_fit(X, Y[:, j], family, seed=seed + 7919 * j, restarts=restarts) for j in range(Y.shape[1])]


# ---------------------------------------------------------------- SurrModel

def surr_model_bound(
    model: ComponentGraph,
    validation_data: Mapping[int, tuple[np.ndarray, np.ndarray]],
    q_inputs,
    tau: float,
    repetitions: int = 1,
    quantile: float = 0.95,
    signed: bool = True,
    seed: int = 0,
    restarts: int = 10,
    stochastic_surrogate: bool = False,
    surrogates: Optional[Mapping[int, list[GPModel]]] = None,
) -> BaselineResult:
    """Shift the threshold by a high quantile of surrogate-minus-model residuals."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if surrogates is None:
        surrogates = {}
        for comp in model.components:
            X, Y = validation_data[comp.index]
            surrogates[comp.index] = fit_component_gps(X, Y, seed=seed + 101 * comp.index, restarts=restarts)
    surr = model.with_maps({c: GPComponentMap(g, stochastic_surrogate) for c, g in surrogates.items()},
                           name=f"{model.name}-surrogate")
    q_inputs = np.asarray(q_inputs, dtype=float)
    y_m = np.column_stack([simulate(model, q_inputs, seed + 1000 * i).tpi for i in range(repetitions)])
    y_s = np.column_stack([simulate(surr, q_inputs, seed + 1000 * i + 1).tpi for i in range(repetitions)])
    resid = y_s.mean(axis=1) - y_m.mean(axis=1)
    if not signed:
        resid = np.abs(resid)
    delta = float(np.quantile(resid, quantile))
    f_max = float(np.mean(y_m > tau - delta))
    return BaselineResult(f_max, {"delta": delta, "quantile": quantile, "repetitions": repetitions})
