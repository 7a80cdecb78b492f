"""Experiment orchestration: validation runs, ground truth, aggregation and the Gaussian illustration."""

from __future__ import annotations

import functools
import json
import logging
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import benchmarks as bm
from .baselines import mccp, surr_model_bound
from .empirical import WeightedSamples, mmd_biased
from .failure import FailureBoundResult, FailureProgramConfig, build_grid, failure_bound
from .graph import Component, ComponentGraph, simulate
from .empirical import SignalRoute
from .kernels import KernelSpec
from .propagation import PropagationResult, estimate_input_bounds, run_propagation

log = logging.getLogger(__name__)

INPUT_MODES = ("perfect", "biased")
MODEL_MODES = ("perfect", "misfit")
METHODS = ("dpbound", "mccp", "surrmodel")
TIGHT_RATIO = 0.99


@dataclass
class RunConfig:
    benchmark: str
    input_mode: str = "perfect"
    model_mode: str = "perfect"
    method: str = "dpbound"
    trials: int = 5
    seed: int = 2349
    V: int = 100
    n_M: int = 500
    confidence: float = 0.95
    lengthscales: Optional[list[float]] = None
    tau: Union[str, float] = "calibrated"
    ground_truth_samples: int = 10**6
    gp_restarts: int = 10
    surr_quantile: float = 0.95
    surr_signed: bool = True

    def __post_init__(self) -> None:
        self.benchmark = bm.resolve_name(self.benchmark)
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"input mode must be one of {INPUT_MODES}")
        if self.model_mode not in MODEL_MODES:
            raise ValueError(f"model mode must be one of {MODEL_MODES}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.V < 2 or self.n_M < 1:
            raise ValueError("need V >= 2 and n_M >= 1")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")

    def trial_seed(self, trial: int) -> int:
        return self.seed + trial

    @property
    def label(self) -> str:
        return f"{self.input_mode}-input/{self.model_mode}-model"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ValidationReport:
    config: RunConfig
    records: list[dict] = field(default_factory=list)

    @property
    def ok_records(self) -> list[dict]:
        return [r for r in self.records if r["status"] == "ok"]

    def summary(self) -> dict:
        return summarize(self.records)

    def to_json(self) -> list[dict]:
        return [dict(r, config=self.config.to_dict()) for r in self.records]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))

    @classmethod
    def from_json(cls, data: list[dict]) -> "ValidationReport":
        if not data:
            raise ValueError("empty report")
        cfg = RunConfig.from_dict(data[0]["config"])
        return cls(cfg, [{k: v for k, v in r.items() if k != "config"} for r in data])

    @classmethod
    def load(cls, path) -> "ValidationReport":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- caches

@functools.lru_cache(maxsize=None)
def ground_truth(name: str, tau: float, n: int = 10**6, seed: int = 2349) -> float:
    """Monte-Carlo failure probability of the true system under the perfect input (dedicated stream)."""
    spec = bm.make_benchmark(name, tau=tau)
    x = spec.perfect_sampler(n, bm.stream(seed, bm.STREAM_GROUND_TRUTH))
    return float(np.mean(simulate(spec.system, x, seed).tpi > tau))


@functools.lru_cache(maxsize=64)
def _misfit(name: str, seed: int, restarts: int) -> ComponentGraph:
    return bm.make_misfit_models(bm.make_benchmark(name, tau="reference"), seed, restarts=restarts)


@functools.lru_cache(maxsize=64)
def _spec(name: str, tau) -> bm.BenchmarkSpec:
    return bm.make_benchmark(name, tau=tau)


# ---------------------------------------------------------------- DPBound pipeline

@dataclass
class DPBoundOutcome:
    f_max: float
    b_y: float
    input_bounds: dict
    propagation: PropagationResult
    failure: FailureBoundResult

    def details(self) -> dict:
        return {
            "B_y": self.b_y,
            "bounds": {f"{a}->{b}": v for (a, b), v in self.propagation.bounds.items()},
            "failure_status": self.failure.status,
            "grid_points": int(self.failure.grid.size),
        }


def fitted_grid(q_y: WeightedSamples, cfg: FailureProgramConfig) -> np.ndarray:
    """Declared grid range, widened by whole spacings when simulated TPI values fall outside it."""
    spacing = cfg.lengthscale / 5.0
    lo, hi = cfg.grid_min, cfg.grid_max
    pts = q_y.points[:, 0]
    if pts.min() < lo:
        lo -= spacing * math.ceil((lo - pts.min()) / spacing + 1)
    if pts.max() > hi:
        hi += spacing * math.ceil((pts.max() - hi) / spacing + 1)
    return build_grid(q_y, lo, hi, cfg.kernel)


def dpbound(
    graph: ComponentGraph,
    model: ComponentGraph,
    x_val: np.ndarray,
    val_data: dict,
    q_x: np.ndarray,
    kernels: dict,
    fcfg: FailureProgramConfig,
    sim_seed: int = 0,
    on_solve: Optional[Callable] = None,
) -> DPBoundOutcome:
    """Full bound: input discrepancies, propagation through the graph, then the failure program."""
    q_table = simulate(model, q_x, sim_seed)
    p_in, q_in = {}, {}
    for comp in graph.components:
        for r in comp.incoming_routes:
            if r.source == 0:
                cols = list(r.column_indices)
                p_in[r.key] = WeightedSamples.uniform(x_val[:, cols])
                q_in[r.key] = WeightedSamples.uniform(q_x[:, cols])
    b_in = estimate_input_bounds(p_in, q_in, kernels)
    prop = run_propagation(graph, val_data, q_table, b_in, kernels, on_solve=on_solve)
    q_y = WeightedSamples.uniform(q_table.tpi.reshape(-1, 1))
    grid = fitted_grid(q_y, fcfg)
    fb = failure_bound(grid, q_y, prop.b_y, fcfg)
    return DPBoundOutcome(fb.f_max, prop.b_y, b_in, prop, fb)


# ---------------------------------------------------------------- trials

def run_trial(cfg: RunConfig, trial: int) -> dict:
    seed = cfg.trial_seed(trial)
    rec = {
        "benchmark": cfg.benchmark, "input": cfg.input_mode, "model": cfg.model_mode, "method": cfg.method,
        "confidence": cfg.confidence if cfg.method == "mccp" else None,
        "trial": trial, "seed": seed, "f_max": None, "ground_truth_pfail": None, "valid": None,
        "status": "ok", "error": None, "wall_time": 0.0, "sdp_diagnostics": [], "details": {},
    }
    t0 = time.perf_counter()
    try:
        spec = _spec(cfg.benchmark, cfg.tau)
        rec["tau"] = spec.tau
        rec["ground_truth_pfail"] = ground_truth(cfg.benchmark, spec.tau, cfg.ground_truth_samples, cfg.seed)
        model = spec.system if cfg.model_mode == "perfect" else _misfit(cfg.benchmark, seed, cfg.gp_restarts)
        q_x = spec.sample(cfg.input_mode, cfg.n_M, bm.stream(seed, bm.STREAM_SIM_INPUT))
        sim_seed = int(np.random.SeedSequence([seed, bm.STREAM_SIMULATION]).generate_state(1)[0])
        if cfg.method == "mccp":
            res = mccp(model, q_x, spec.tau, cfg.confidence, seed=sim_seed)
            rec["f_max"], rec["details"] = res.f_max, res.details
        else:
            x_val, val_data = bm.make_validation_data(spec, cfg.V, seed)
            if cfg.method == "surrmodel":
                res = surr_model_bound(model, val_data, q_x, spec.tau, quantile=cfg.surr_quantile,
                                       signed=cfg.surr_signed, seed=sim_seed, restarts=cfg.gp_restarts)
                rec["f_max"], rec["details"] = res.f_max, res.details
            else:
                kernels = spec.kernels(cfg.lengthscales)
                out = dpbound(spec.system, model, x_val, val_data, q_x, kernels,
                              spec.failure_config(cfg.lengthscales), sim_seed)
                rec["f_max"] = out.f_max
                rec["details"] = out.details()
                rec["sdp_diagnostics"] = out.propagation.records()
        rec["valid"] = bool(rec["f_max"] >= rec["ground_truth_pfail"])
    except Exception as exc:  # per-trial failures are recorded, not raised
        rec["status"] = "error"
        rec["error"] = f"{type(exc).__name__}: {exc}"
        log.debug("trial failed\n%s", traceback.format_exc())
    rec["wall_time"] = time.perf_counter() - t0
    return rec


def run_validation(cfg: RunConfig, workers: int = 1, on_record: Optional[Callable[[dict], None]] = None) -> ValidationReport:
    report = ValidationReport(cfg)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            recs = list(pool.map(run_trial, [cfg] * cfg.trials, range(cfg.trials)))
        for r in recs:
            report.records.append(r)
            if on_record:
                on_record(r)
    else:
        for t in range(cfg.trials):
            r = run_trial(cfg, t)
            report.records.append(r)
            if on_record:
                on_record(r)
    return report


def sweep_configs(benchmarks: Sequence[str] = bm.BENCHMARK_NAMES, methods: Sequence[str] = ("dpbound",),
                  **overrides) -> list[RunConfig]:
    return [RunConfig(b, i, m, meth, **overrides)
            for b in benchmarks for i in INPUT_MODES for m in MODEL_MODES for meth in methods]


# ---------------------------------------------------------------- aggregation

def summarize(records: Iterable[dict]) -> dict:
    recs = list(records)
    ok = [r for r in recs if r["status"] == "ok"]
    vals = np.array([r["f_max"] for r in ok], dtype=float)
    invalid = sum(1 for r in ok if not r["valid"])
    return {
        "n": len(recs),
        "n_failed": len(recs) - len(ok),
        "mean_f_max": float(vals.mean()) if vals.size else float("nan"),
        "std_f_max": float(vals.std()) if vals.size else float("nan"),
        "invalidness": invalid / len(ok) if ok else float("nan"),
        "mean_ground_truth": float(np.mean([r["ground_truth_pfail"] for r in ok])) if ok else float("nan"),
    }


def _method_label(r: dict) -> str:
    if r["method"] == "mccp" and r.get("confidence") is not None:
        return f"mccp@{r['confidence']:g}"
    return r["method"]


def tightness(records: Iterable[dict], threshold: float = TIGHT_RATIO) -> dict:
    gam = [d["gamma_hat"] for r in records for d in r.get("sdp_diagnostics", [])]
    n = len(gam)
    return {"n_solves": n, "fraction_tight": (sum(g >= threshold for g in gam) / n) if n else float("nan")}


def aggregate(records: Iterable[dict]) -> dict:
    """Per-cell statistics plus quadrant roll-ups over all benchmarks."""
    recs = sorted(records, key=lambda r: (r["benchmark"], r["input"], r["model"], _method_label(r), r["trial"]))
    if not recs:
        raise ValueError("nothing to aggregate")
    cells, quads = {}, {}
    for r in recs:
        cells.setdefault((r["benchmark"], r["input"], r["model"], _method_label(r)), []).append(r)
        quads.setdefault((r["input"], r["model"], _method_label(r)), []).append(r)
    return {
        "cells": [dict(benchmark=b, input=i, model=m, method=meth, **summarize(rs))
                  for (b, i, m, meth), rs in cells.items()],
        "quadrants": [dict(input=i, model=m, method=meth, **summarize(rs)) for (i, m, meth), rs in sorted(quads.items())],
        "tightness": tightness(recs),
    }


def format_table(agg: dict) -> str:
    lines = [f"{'benchmark':<24} {'input':<8} {'model':<8} {'method':<11} {'F_max mean':>11} {'std':>9} "
             f"{'GT':>8} {'invalid':>8} {'n':>3}"]
    for c in agg["cells"]:
        lines.append(f"{c['benchmark']:<24} {c['input']:<8} {c['model']:<8} {c['method']:<11} "
                     f"{c['mean_f_max']:>11.5f} {c['std_f_max']:>9.5f} {c['mean_ground_truth']:>8.5f} "
                     f"{c['invalidness']:>8.0%} {c['n'] - c['n_failed']:>3}")
    lines.append("")
    lines.append(f"{'quadrant':<26} {'method':<11} {'invalid':>8} {'runs':>5} {'failed':>6}")
    for q in agg["quadrants"]:
        lines.append(f"{q['input'] + ' input / ' + q['model'] + ' model':<26} {q['method']:<11} "
                     f"{q['invalidness']:>8.1%} {q['n'] - q['n_failed']:>5} {q['n_failed']:>6}")
    t = agg["tightness"]
    if t["n_solves"]:
        lines.append("")
        lines.append(f"SDP solves: {t['n_solves']}, fraction with gamma_hat >= {TIGHT_RATIO}: {t['fraction_tight']:.1%}")
    return "\n".join(lines)


# ---------------------------------------------------------------- Gaussian illustration

GAUSSIAN_CASES = ("misfit_perfect_input", "perfect_biased_input", "perfect_perfect")


def _linear(w: float, b: float):
    return lambda X, rng: w * X + b


def gaussian_illustration(config: str = "misfit_perfect_input", seed: int = 0, n: int = 60, tau: float = 1.0,
                          bias_shift: float = -0.75, model_offset: float = -0.5) -> dict:
    """One linear component with Gaussian inputs; reports both discrepancy bounds, F_max and the weights."""
    if config not in GAUSSIAN_CASES:
        raise ValueError(f"config must be one of {GAUSSIAN_CASES}")
    rng = np.random.default_rng(seed)
    w_s, b_s = 1.0, 0.0
    b_m = b_s + model_offset if config == "misfit_perfect_input" else b_s
    q_x = rng.normal(bias_shift if config == "perfect_biased_input" else 0.0, 1.0, (n, 1))
    # with a perfect input the validation inputs are the simulation inputs themselves
    x_val = q_x.copy() if config != "perfect_biased_input" else rng.normal(0.0, 1.0, (n, 1))
    route = SignalRoute(0, 1, [0])
    system = ComponentGraph(1, [Component(1, 1, 1, _linear(w_s, b_s), [route], "S")], "linear")
    model = system.with_maps({1: _linear(w_s, b_m)}, name="linear-model")
    val = {1: (x_val, w_s * x_val + b_s)}
    kernels = {(0, 1): KernelSpec.se(1.0), (1, 2): KernelSpec.se(1.0)}
    fcfg = FailureProgramConfig(-8.0, 8.0, tau, kernels[(1, 2)], lipschitz=math.inf)
    out = dpbound(system, model, x_val, val, q_x, kernels, fcfg, seed)
    y_m = simulate(model, q_x, seed).tpi
    res = out.propagation.results[(1, 2)]
    return {
        "config": config,
        "B_0_1": out.input_bounds[(0, 1)],
        "B_1_2": out.b_y,
        "f_max": out.f_max,
        "naive_tail": float(np.mean(y_m > tau)),
        "true_tail": float(0.5 * math.erfc((tau - b_s) / (w_s * math.sqrt(2.0)))),
        "alpha": res.alpha_hat.tolist(),
        "x_val": x_val[:, 0].tolist(),
        "q_x": q_x[:, 0].tolist(),
        "sdp": res.record(),
        "mmd_outputs": mmd_biased(kernels[(1, 2)], WeightedSamples.uniform(w_s * x_val + b_s),
                                  WeightedSamples.uniform(y_m.reshape(-1, 1))),
    }
