"""Lengthscale selection by minimizing F_max: seeded log-uniform search followed by coordinate refinement."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_RANGE = (1e-8, 5e3)
# TPI lengthscale bounds as fractions of the grid width.
TPI_RANGE_FRACTION = (2e-3, 1.0)


@dataclass
class TraceEntry:
    index: int
    lengthscales: list[float]
    f_max: Optional[float]
    status: str


@dataclass
class TuningResult:
    best: Optional[np.ndarray]
    best_f_max: float
    trace: list[TraceEntry] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "lengthscales", "f_max", "status"])
            for e in self.trace:
                w.writerow([e.index, " ".join(f"{v:.6g}" for v in e.lengthscales),
                            "" if e.f_max is None else f"{e.f_max:.10g}", e.status])


def search_lengthscales(
    pipeline: Callable[[np.ndarray], float],
    space: Optional[Sequence[tuple[float, float]]] = None,
    budget: int = 40,
    seed: int = 0,
    dim: Optional[int] = None,
    initial: Sequence[Sequence[float]] = (),
    on_eval: Optional[Callable[[TraceEntry], None]] = None,
) -> TuningResult:
    """Minimize pipeline(lengthscales) over a log-box; half the budget is random, half is local refinement.

    ``initial`` candidates are evaluated first and count toward the budget.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    if space is None:
        if dim is None:
            raise ValueError("give either a search space or its dimension")
        space = [DEFAULT_RANGE] * dim
    lo = np.log(np.array([s[0] for s in space], dtype=float))
    hi = np.log(np.array([s[1] for s in space], dtype=float))
    if np.any(~np.isfinite(lo)) or np.any(lo > hi):
        raise ValueError("each range must satisfy 0 < low <= high")
    d = lo.size
    rng = np.random.default_rng(seed)
    result = TuningResult(None, math.inf)

    def evaluate(logx: np.ndarray) -> float:
        x = np.exp(np.clip(logx, lo, hi))
        try:
            f = float(pipeline(x))
            status = "ok" if 0.0 <= f <= 1.0 else "failed: F_max outside [0, 1]"
        except Exception as exc:  # a failing candidate is skipped
            f, status = None, f"failed: {type(exc).__name__}: {exc}"
        entry = TraceEntry(len(result.trace), x.tolist(), f if status == "ok" else None, status)
        result.trace.append(entry)
        if on_eval:
            on_eval(entry)
        if status == "ok" and f < result.best_f_max:
            result.best, result.best_f_max = x, f
        return f if status == "ok" else math.inf

    for cand in list(initial)[:budget]:
        cand = np.asarray(cand, dtype=float).ravel()
        if cand.size != d:
            raise ValueError(f"initial candidate has {cand.size} entries, expected {d}")
        evaluate(np.log(cand))
    n_random = max(budget - budget // 2 - len(result.trace), 0)
    for _ in range(n_random):
        evaluate(rng.uniform(lo, hi))
    if result.best is None:
        while len(result.trace) < budget and result.best is None:
            evaluate(rng.uniform(lo, hi))

    step = (hi - lo) / 4.0
    j = 0
    while len(result.trace) < budget and result.best is not None and np.any(step > 1e-6):
        if step[j] > 1e-6:
            base = np.log(result.best)
            improved = False
            for sign in (1.0, -1.0):
                if len(result.trace) >= budget:
                    break
                prev = result.best_f_max
                trial = base.copy()
                trial[j] += sign * step[j]
                if evaluate(trial) < prev:
                    improved = True
                    break
            if not improved:
                step[j] *= 0.5
        j = (j + 1) % d
    return result


def tpi_range(grid_min: float, grid_max: float) -> tuple[float, float]:
    w = grid_max - grid_min
    return (TPI_RANGE_FRACTION[0] * w, TPI_RANGE_FRACTION[1] * w)


def benchmark_space(spec) -> list[tuple[float, float]]:
    """Global range for every input channel; the TPI channel is scaled to the grid width."""
    space = []
    tpi = spec.system.tpi_route.key
    for ch in spec.channels:
        rng_ = tpi_range(spec.grid_min, spec.grid_max) if ch.route == tpi else DEFAULT_RANGE
        space += [rng_] * len(ch.lengthscales)
    return space


def benchmark_pipeline(name: str, seed: int = 2349, V: int = 100, n_M: int = 500) -> Callable[[np.ndarray], float]:
    """F_max as a function of the flat lengthscale vector, for the perfect-input, perfect-model setting."""
    from . import benchmarks as bm
    from .harness import _spec, dpbound

    spec = _spec(bm.resolve_name(name), "calibrated")
    x_val, val = bm.make_validation_data(spec, V, seed)
    q_x = spec.sample("perfect", n_M, bm.stream(seed, bm.STREAM_SIM_INPUT))

    def run(ls: np.ndarray) -> float:
        return dpbound(spec.system, spec.system, x_val, val, q_x, spec.kernels(ls), spec.failure_config(ls), seed).f_max

    return run
