"""Weighted Dirac mixtures, signal-route marginals and MMD estimators."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .kernels import KernelSpec, as_points, gram

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class WeightedSamples:
    """Finite distribution sum_n w_n delta_{x_n} over R^d."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = as_points(self.points)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] < 1:
            raise ValueError("a weighted sample set needs at least one point")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "WeightedSamples":
        pts = as_points(points)
        n = pts.shape[0]
        return cls(pts, np.full(n, 1.0 / n))

    @classmethod
    def normalized(cls, points, weights) -> "WeightedSamples":
        """Clip negative roundoff and rescale weights to sum to one."""
        w = np.clip(np.asarray(weights, dtype=float), 0.0, None)
        if w.sum() <= 0:
            raise ValueError("weights have no positive mass")
        return cls(points, w / w.sum())

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n, rtol=0, atol=1e-12))

    def columns(self, idx: Sequence[int]) -> "WeightedSamples":
        idx = list(idx)
        if not idx:
            raise ValueError("empty column selection")
        bad = [i for i in idx if not 0 <= i < self.dim]
        if bad:
            raise IndexError(f"column indices {bad} out of range for dimension {self.dim}")
        return WeightedSamples(self.points[:, idx], self.weights)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j}" for j in range(self.dim)] + ["weight"])
            for row, w in zip(self.points, self.weights):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])

    @classmethod
    def from_csv(cls, path) -> "WeightedSamples":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :-1], data[:, -1])


@dataclass(frozen=True)
class SignalRoute:
    """Sub-tuple of the output of ``source`` fed into the input of ``target``.

    Source 0 is the global input; target C+1 is the scalar performance indicator.
    """

    source: int
    target: int
    column_indices: tuple[int, ...]

    def __init__(self, source: int, target: int, column_indices: Sequence[int]) -> None:
        cols = tuple(int(i) for i in column_indices)
        if source >= target:
            raise ValueError(f"non-causal route {source}->{target}")
        if source < 0:
            raise ValueError("route source must be nonnegative")
        if not cols:
            raise ValueError("route must select at least one column")
        if len(set(cols)) != len(cols) or min(cols) < 0:
            raise ValueError(f"invalid column indices {cols}")
        object.__setattr__(self, "source", int(source))
        object.__setattr__(self, "target", int(target))
        object.__setattr__(self, "column_indices", cols)

    @property
    def width(self) -> int:
        return len(self.column_indices)

    @property
    def key(self) -> tuple[int, int]:
        return (self.source, self.target)

    def __str__(self) -> str:
        return f"{self.source}->{self.target}"


def marginal(
    ws: WeightedSamples, route: SignalRoute, layout: Optional[Mapping[int, int]] = None
) -> WeightedSamples:
    """Project ``ws`` onto the columns a route selects.

    ``layout`` maps a source index to the column offset of that source's signal
    inside ``ws.points``; without it the route's indices address ``ws`` directly.
    """
    offset = 0
    if layout is not None:
        if route.source not in layout:
            raise KeyError(f"layout has no entry for source {route.source}")
        offset = layout[route.source]
    return ws.columns([offset + i for i in route.column_indices])


def _check_dims(P: WeightedSamples, Q: WeightedSamples) -> None:
    if P.dim != Q.dim:
        raise ValueError(f"dimension mismatch: {P.dim} vs {Q.dim}")


def mmd_biased_sq(k: KernelSpec, P: WeightedSamples, Q: WeightedSamples) -> float:
    """Squared V-statistic MMD, clamped at zero."""
    _check_dims(P, Q)
    wp, wq = P.weights, Q.weights
    pp = wp @ gram(k, P.points) @ wp
    qq = wq @ gram(k, Q.points) @ wq
    pq = wp @ gram(k, P.points, Q.points) @ wq
    m2 = pp - 2.0 * pq + qq
    # Roundoff can push the squared norm slightly below zero.
    return float(max(m2, 0.0))


def mmd_biased(k: KernelSpec, P: WeightedSamples, Q: WeightedSamples) -> float:
    return float(np.sqrt(mmd_biased_sq(k, P, Q)))


def _offdiag_mean(K: np.ndarray, w: np.ndarray) -> float:
    """sum_{i != j} w_i w_j K_ij / (1 - sum_i w_i^2); for uniform weights the usual 1/(n(n-1)) average."""
    denom = 1.0 - float(w @ w)
    if denom <= 0:
        raise ValueError("unbiased MMD needs at least two points with positive weight")
    return float((w @ K @ w - np.sum(w * w * np.diag(K))) / denom)


def mmd_unbiased_sq(k: KernelSpec, P: WeightedSamples, Q: WeightedSamples) -> float:
    """Squared U-statistic MMD (may be negative); weighted sets use self-normalized off-diagonal sums."""
    _check_dims(P, Q)
    if P.n < 2 or Q.n < 2:
        raise ValueError("unbiased MMD needs at least two points per set")
    pp = _offdiag_mean(gram(k, P.points), P.weights)
    qq = _offdiag_mean(gram(k, Q.points), Q.weights)
    pq = float(P.weights @ gram(k, P.points, Q.points) @ Q.weights)
    return pp + qq - 2.0 * pq


def mmd_unbiased(k: KernelSpec, P: WeightedSamples, Q: WeightedSamples) -> float:
    """U-statistic MMD estimate, returned as sign(m^2) * sqrt(|m^2|)."""
    m2 = mmd_unbiased_sq(k, P, Q)
    return float(np.sign(m2) * np.sqrt(abs(m2)))


def kernel_mean(k: KernelSpec, X, Q: WeightedSamples) -> np.ndarray:
    """Embedding of Q evaluated at the rows of X: (K^{XQ} w_Q)."""
    return gram(k, X, Q.points) @ Q.weights


def self_energy(k: KernelSpec, Q: WeightedSamples) -> float:
    """w_Q^T K^{QQ} w_Q."""
    return float(Q.weights @ gram(k, Q.points) @ Q.weights)
