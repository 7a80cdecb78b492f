"""The eight reliability benchmark systems, their input samplers, thresholds and misfit models."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .baselines import GPComponentMap, fit_component_gps
from .empirical import SignalRoute
from .failure import FailureProgramConfig
from .graph import Component, ComponentGraph, simulate
from .kernels import KernelFamily, KernelSpec

RouteKey = tuple[int, int]
Sampler = Callable[[int, np.random.Generator], np.ndarray]

BENCHMARK_NAMES = (
    "ControlledSolvers",
    "ChainedSolvers",
    "BoreholeSingle",
    "BoreholeCompositional",
    "BraninSingle",
    "BraninCompositional",
    "FourBranchSingle",
    "FourBranchCompositional",
)

# Independent random streams derived from one integer seed.
STREAM_VALIDATION = 1
STREAM_SIM_INPUT = 2
STREAM_MISFIT = 3
STREAM_SIMULATION = 4
STREAM_SURROGATE = 5
STREAM_CALIBRATION = 11
STREAM_GROUND_TRUTH = 12


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(which)])


@dataclass(frozen=True)
class Channel:
    """Kernel assignment for one signal route; lengthscales are shared (length 1) or per column."""

    route: RouteKey
    family: KernelFamily
    lengthscales: tuple[float, ...]

    def kernel(self) -> KernelSpec:
        return KernelSpec(self.family, self.lengthscales)


@dataclass
class BenchmarkSpec:
    name: str
    system: ComponentGraph
    perfect_sampler: Sampler
    biased_sampler: Sampler
    channels: list[Channel]
    grid_min: float
    grid_max: float
    tau: float
    reference_tau: float
    lipschitz: float
    constants: dict = field(default_factory=dict)

    def kernels(self, lengthscales: Optional[Sequence[float]] = None) -> dict[RouteKey, KernelSpec]:
        """Route kernels; an optional flat lengthscale vector overrides the defaults in channel order."""
        if lengthscales is None:
            return {ch.route: ch.kernel() for ch in self.channels}
        flat = np.asarray(lengthscales, dtype=float).ravel()
        if flat.size != self.n_lengthscales:
            raise ValueError(f"{self.name} expects {self.n_lengthscales} lengthscales, got {flat.size}")
        out, i = {}, 0
        for ch in self.channels:
            n = len(ch.lengthscales)
            out[ch.route] = KernelSpec(ch.family, flat[i:i + n])
            i += n
        return out

    @property
    def n_lengthscales(self) -> int:
        return sum(len(ch.lengthscales) for ch in self.channels)

    def default_lengthscales(self) -> np.ndarray:
        return np.concatenate([np.asarray(ch.lengthscales, dtype=float) for ch in self.channels])

    def failure_config(self, lengthscales: Optional[Sequence[float]] = None, tau: Optional[float] = None,
                       lipschitz: Optional[float] = None) -> FailureProgramConfig:
        tpi = self.kernels(lengthscales)[self.system.tpi_route.key]
        return FailureProgramConfig(
            grid_min=self.grid_min,
            grid_max=self.grid_max,
            tau=self.tau if tau is None else float(tau),
            kernel=tpi,
            lipschitz=self.lipschitz if lipschitz is None else float(lipschitz),
        )

    def sample(self, mode: str, n: int, rng: np.random.Generator) -> np.ndarray:
        if mode == "perfect":
            return self.perfect_sampler(n, rng)
        if mode == "biased":
            return self.biased_sampler(n, rng)
        raise ValueError(f"unknown input mode {mode!r}")

    def describe(self) -> dict:
        return {
            "name": self.name,
            "input_dim": self.system.input_dim,
            "components": [
                {"index": c.index, "name": c.name, "input_dim": c.input_dim, "output_dim": c.output_dim,
                 "routes": [str(r) for r in c.ordered_routes()]}
                for c in self.system.components
            ],
            "channels": [
                {"route": f"{a}->{b}", "family": ch.family.value, "lengthscales": list(ch.lengthscales)}
                for ch in self.channels for a, b in [ch.route]
            ],
            "grid": [self.grid_min, self.grid_max],
            "tau": self.tau,
            "reference_tau": self.reference_tau,
            "lipschitz": self.lipschitz,
            "constants": self.constants,
        }


# ---------------------------------------------------------------- helpers

def _mixture(rng: np.random.Generator, n: int, weight: float, a: Callable, b: Callable) -> np.ndarray:
    pick = rng.random(n) < weight
    return np.where(pick, a(n), b(n))


def _col(f: Callable[[np.ndarray], np.ndarray]):
    """Wrap a row-wise vectorized scalar function as a component map returning (n, 1)."""
    def fmap(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.asarray(f(X), dtype=float).reshape(-1, 1)
    fmap.__name__ = getattr(f, "__name__", "fmap")
    return fmap


def _route(src: int, dst: int, cols: Union[int, Sequence[int]]) -> SignalRoute:
    cols = list(range(cols)) if isinstance(cols, int) else list(cols)
    return SignalRoute(src, dst, cols)


def _ch(src: int, dst: int, family: str, *ls: float) -> Channel:
    return Channel((src, dst), KernelFamily.parse(family), tuple(float(v) for v in ls))


# ---------------------------------------------------------------- Controlled solvers

SOBOL_A = np.array([12.0, 2.0, 3.0, 4.0, 45.0])
# Raw input slot -> original variable index (the three intermediate indices are excluded).
CONTROLLED_INDEX = [1, 2, 3, 4, 5, 7, 8, 10, 11, 12, 13, 14, 16, 17, 18, 19]


def sobol_g(X: np.ndarray) -> np.ndarray:
    return np.prod((np.abs(4.0 * X - 2.0) + SOBOL_A) / (1.0 + SOBOL_A), axis=1)


def ishigami_like(X: np.ndarray) -> np.ndarray:
    """Columns (x7, x8, x6) in graph order; x6 is the upstream output."""
    x7, x8, x6 = X[:, 0], X[:, 1], X[:, 2]
    return np.sin(x6) + 0.7 * np.sin(x7) ** 2 + 0.1 * x8**4 * np.sin(x6)


def controlled_f3(X: np.ndarray) -> np.ndarray:
    x10, x11, x12, x13, x14, x9 = (X[:, i] for i in range(6))
    return x10**2 * np.arctan(1.0 - x14) + x11 * x12 * x13**3 + 3.0 * x9


def controlled_f4(X: np.ndarray) -> np.ndarray:
    x16, x17, x18, x19, x15 = (X[:, i] for i in range(5))
    return np.sin(x19) * x18 + x15 * x16 + x17


def _controlled() -> dict:
    comps = [
        Component(1, 5, 1, _col(sobol_g), [_route(0, 1, [0, 1, 2, 3, 4])], "sobol"),
        Component(2, 3, 1, _col(ishigami_like), [_route(0, 2, [5, 6]), _route(1, 2, 1)], "ishigami"),
        Component(3, 6, 1, _col(controlled_f3), [_route(0, 3, [7, 8, 9, 10, 11]), _route(2, 3, 1)], "poly-trig-1"),
        Component(4, 5, 1, _col(controlled_f4), [_route(0, 4, [12, 13, 14, 15]), _route(3, 4, 1)], "poly-trig-2"),
    ]
    slot18 = CONTROLLED_INDEX.index(18)

    def perfect(n, rng):
        return rng.uniform(0.0, 1.0, (n, 16))

    def biased(n, rng):
        x = rng.uniform(0.0, 1.0, (n, 16))
        x[:, slot18] = rng.uniform(0.0, 0.8, n)
        return x

    channels = [
        _ch(0, 1, "se", 1e-6), _ch(0, 2, "se", 50.0), _ch(1, 2, "se", 1e-6), _ch(0, 3, "se", 50.0),
        _ch(2, 3, "se", 1e-6), _ch(0, 4, "se", 1e-6), _ch(3, 4, "se", 1e-6), _ch(4, 5, "se", 6.397),
    ]
    return dict(graph=ComponentGraph(16, comps, "ControlledSolvers"), perfect=perfect, biased=biased,
                channels=channels, grid=(-5.0, 60.0), tau=14.51, lipschitz=0.28,
                constants={"sobol_a": SOBOL_A.tolist(), "input_index": CONTROLLED_INDEX, "biased_slot": slot18,
                           "biased_range": [0.0, 0.8]})


# ---------------------------------------------------------------- Chained solvers

def chained_f1(x: np.ndarray) -> np.ndarray:
    return np.exp(np.sqrt(x)) * np.sin(x) + 6.0 * np.exp(-((x - 2.0) ** 2)) + 2.5 * np.exp(-3.0 * (x - 1.0) ** 2)


def chained_f2(x: np.ndarray) -> np.ndarray:
    return np.sin(x) + 0.3 * x * np.sin(3.4 * x + 0.5)


def _chained() -> dict:
    comps = [
        Component(1, 1, 1, _col(lambda X: chained_f1(X[:, 0])), [_route(0, 1, 1)], "f1"),
        Component(2, 1, 1, _col(lambda X: chained_f2(X[:, 0])), [_route(1, 2, 1)], "f2"),
    ]

    def perfect(n, rng):
        return rng.uniform(0.0, 6.0, (n, 1))

    def biased(n, rng):
        return _mixture(rng, n, 0.9, lambda m: rng.uniform(0.0, 6.0, m), lambda m: rng.uniform(4.0, 6.0, m)).reshape(-1, 1)

    channels = [_ch(0, 1, "se", 1e-8), _ch(1, 2, "se", 1e-8), _ch(2, 3, "imq", 1.218)]
    return dict(graph=ComponentGraph(1, comps, "ChainedSolvers"), perfect=perfect, biased=biased,
                channels=channels, grid=(-8.0, 5.0), tau=1.459, lipschitz=99.0,
                constants={"mixture_weight": 0.9, "bias_range": [4.0, 6.0]})


# ---------------------------------------------------------------- Borehole

BOREHOLE_INPUTS = ("r_w", "r", "T_u", "H_u", "T_l", "H_l", "L", "K_w")
BOREHOLE_DISTRIBUTIONS = {
    "r_w": ("normal", 0.10, 0.0161812),
    "r": ("lognormal", 7.71, 1.0056),
    "T_u": ("uniform", 63070.0, 115600.0),
    "H_u": ("uniform", 990.0, 1110.0),
    "T_l": ("uniform", 63.1, 116.0),
    "H_l": ("uniform", 700.0, 820.0),
    "L": ("uniform", 1120.0, 1680.0),
    "K_w": ("uniform", 9855.0, 12045.0),
}
BOREHOLE_BIASED_HU = (990.0, 1010.0)


def borehole(X: np.ndarray) -> np.ndarray:
    rw, r, Tu, Hu, Tl, Hl, L, Kw = (X[:, i] for i in range(8))
    lnr = np.log(r / rw)
    return 2.0 * np.pi * Tu * (Hu - Hl) / (lnr * (1.0 + 2.0 * L * Tu / (lnr * rw**2 * Kw) + Tu / Tl))


def _borehole_sampler(hu_range):
    def sample(n, rng):
        cols = []
        for name in BOREHOLE_INPUTS:
            kind, a, b = BOREHOLE_DISTRIBUTIONS[name]
            if name == "H_u":
                a, b = hu_range
            if kind == "normal":
                cols.append(rng.normal(a, b, n))
            elif kind == "lognormal":
                cols.append(rng.lognormal(a, b, n))
            else:
                cols.append(rng.uniform(a, b, n))
        return np.column_stack(cols)
    return sample


def _borehole(compositional: bool) -> dict:
    if not compositional:
        comps = [Component(1, 8, 1, _col(borehole), [_route(0, 1, 8)], "borehole")]
        channels = [_ch(0, 1, "se", 10.599, 6.587, 24.609, 32.369, 46.431, 23.046, 12.943, 2.734),
                    _ch(1, 2, "se", 23.578)]
        name = "BoreholeSingle"
    else:
        def f1(X):  # (T_u, H_u, H_l)
            return 2.0 * np.pi * X[:, 0] * (X[:, 1] - X[:, 2])

        def f2(X):  # (r_w, r, T_u, L, K_w)
            rw, r, Tu, L, Kw = (X[:, i] for i in range(5))
            return 2.0 * L * Tu / (np.log(r / rw) * rw**2 * Kw)

        def f3(X):  # (T_u, T_l)
            return X[:, 0] / X[:, 1]

        def f4(X):  # (r_w, r, y2, y3)
            return np.log(X[:, 1] / X[:, 0]) * (1.0 + X[:, 2] + X[:, 3])

        def f5(X):  # (y1, y4)
            return X[:, 0] / X[:, 1]

        comps = [
            Component(1, 3, 1, _col(f1), [_route(0, 1, [2, 3, 5])], "head"),
            Component(2, 5, 1, _col(f2), [_route(0, 2, [0, 1, 2, 6, 7])], "conductance"),
            Component(3, 2, 1, _col(f3), [_route(0, 3, [2, 4])], "transmissivity-ratio"),
            Component(4, 4, 1, _col(f4), [_route(0, 4, [0, 1]), _route(2, 4, 1), _route(3, 4, 1)], "denominator"),
            Component(5, 2, 1, _col(f5), [_route(1, 5, 1), _route(4, 5, 1)], "flow"),
        ]
        channels = [
            _ch(0, 1, "se", 5e3), _ch(0, 2, "se", 0.1), _ch(0, 3, "se", 3.198e3), _ch(0, 4, "se", 5e3),
            _ch(2, 4, "se", 0.1), _ch(3, 4, "se", 5e3), _ch(1, 5, "se", 5e3), _ch(4, 5, "se", 0.1),
            _ch(5, 6, "imq", 2.634),
        ]
        name = "BoreholeCompositional"
    return dict(graph=ComponentGraph(8, comps, name), perfect=_borehole_sampler(BOREHOLE_DISTRIBUTIONS["H_u"][1:]),
                biased=_borehole_sampler(BOREHOLE_BIASED_HU), channels=channels, grid=(-35.0, 600.0), tau=157.1,
                lipschitz=0.0006,
                constants={"inputs": list(BOREHOLE_INPUTS),
                           "distributions": {k: list(v) for k, v in BOREHOLE_DISTRIBUTIONS.items()},
                           "biased_H_u": list(BOREHOLE_BIASED_HU)})


# ---------------------------------------------------------------- Branin

BRANIN = dict(f_max=312.0, a=1.0, b=5.1 / (4.0 * np.pi**2), c=5.0 / np.pi, r=6.0, s=10.0, t=1.0 / (8.0 * np.pi))


def branin_sq(X: np.ndarray) -> np.ndarray:
    p = BRANIN
    return (X[:, 1] - p["b"] * X[:, 0] ** 2 + p["c"] * X[:, 0] - p["r"]) ** 2


def branin_cos(X: np.ndarray) -> np.ndarray:
    return (1.0 - BRANIN["t"]) * np.cos(X[:, 0])


def branin_combine(X: np.ndarray) -> np.ndarray:
    p = BRANIN
    return p["f_max"] - p["a"] * X[:, 0] + p["s"] * X[:, 1] + p["s"]


def branin(X: np.ndarray) -> np.ndarray:
    p = BRANIN
    return p["f_max"] - p["a"] * branin_sq(X) + p["s"] * branin_cos(X) + p["s"]


def _branin(compositional: bool) -> dict:
    if not compositional:
        comps = [Component(1, 2, 1, _col(branin), [_route(0, 1, 2)], "branin")]
        channels = [_ch(0, 1, "se", 0.003), _ch(1, 2, "se", 21.161)]
        name = "BraninSingle"
    else:
        comps = [
            Component(1, 2, 1, _col(branin_sq), [_route(0, 1, 2)], "quadratic"),
            Component(2, 2, 1, _col(branin_cos), [_route(0, 2, 2)], "cosine"),
            Component(3, 2, 1, _col(branin_combine), [_route(1, 3, 1), _route(2, 3, 1)], "combine"),
        ]
        channels = [_ch(0, 1, "imq", 1e-8), _ch(0, 2, "imq", 1e-8), _ch(1, 3, "imq", 500.0),
                    _ch(2, 3, "imq", 1e-8), _ch(3, 4, "imq", 26.064)]
        name = "BraninCompositional"

    def perfect(n, rng):
        return np.column_stack([rng.uniform(-5.0, 10.0, n), rng.uniform(0.0, 15.0, n)])

    def biased(n, rng):
        x1 = _mixture(rng, n, 0.1, lambda m: rng.uniform(-5.0, 10.0, m), lambda m: rng.uniform(8.0, 10.0, m))
        x2 = _mixture(rng, n, 0.1, lambda m: rng.uniform(0.0, 15.0, m), lambda m: rng.uniform(12.0, 15.0, m))
        return np.column_stack([x1, x2])

    return dict(graph=ComponentGraph(2, comps, name), perfect=perfect, biased=biased, channels=channels,
                grid=(-35.0, 700.0), tau=330.82, lipschitz=0.005,
                constants={"branin": BRANIN, "mixture_weight": 0.1, "bias_ranges": [[8.0, 10.0], [12.0, 15.0]]})


# ---------------------------------------------------------------- Four branch

FOUR_BRANCH_P = 6.0


def four_branch_parts(X: np.ndarray) -> np.ndarray:
    x1, x2 = X[:, 0], X[:, 1]
    d, s = x1 - x2, (x1 + x2) / np.sqrt(2.0)
    h = FOUR_BRANCH_P / np.sqrt(2.0)
    return np.column_stack([3.0 + 0.1 * d**2 - s, 3.0 + 0.1 * d**2 + s, d + h, d - h])


def four_branch(X: np.ndarray) -> np.ndarray:
    return np.min(four_branch_parts(X), axis=1) + 10.0


def _four_branch(compositional: bool) -> dict:
    if not compositional:
        comps = [Component(1, 2, 1, _col(four_branch), [_route(0, 1, 2)], "four-branch")]
        channels = [_ch(0, 1, "se", 0.201, 0.198), _ch(1, 2, "se", 10.0)]
        name = "FourBranchSingle"
    else:
        comps = [Component(c, 2, 1, _col(lambda X, j=c - 1: four_branch_parts(X)[:, j]), [_route(0, c, 2)],
                           f"branch-{c}") for c in range(1, 5)]
        comps.append(Component(5, 4, 1, _col(lambda X: np.min(X, axis=1) + 10.0),
                               [_route(c, 5, 1) for c in range(1, 5)], "minimum"))
        channels = [_ch(0, c, "se", 2.018, 1.983) for c in range(1, 5)]
        channels += [_ch(1, 5, "se", 2.472), _ch(2, 5, "se", 2.374), _ch(3, 5, "se", 2.077),
                     _ch(4, 5, "se", 2.077), _ch(5, 6, "se", 10.0)]
        name = "FourBranchCompositional"

    def perfect(n, rng):
        return rng.standard_normal((n, 2))

    def biased(n, rng):
        cols = [_mixture(rng, n, 0.8, lambda m: rng.normal(0.0, 1.0, m), lambda m: rng.normal(0.0, 0.9, m))
                for _ in range(2)]
        return np.column_stack(cols)

    return dict(graph=ComponentGraph(2, comps, name), perfect=perfect, biased=biased, channels=channels,
                # 100-bin histogram estimate on 10^6 perfect-input TPI draws is 0.13-0.14; the reference
                # 0.005 makes the failure program infeasible for typical B^y
                grid=(0.0, 30.0), tau=9.693, lipschitz=0.15,
                constants={"p": FOUR_BRANCH_P, "mixture_weight": 0.8, "biased_std": 0.9})


_BUILDERS = {
    "ControlledSolvers": _controlled,
    "ChainedSolvers": _chained,
    "BoreholeSingle": lambda: _borehole(False),
    "BoreholeCompositional": lambda: _borehole(True),
    "BraninSingle": lambda: _branin(False),
    "BraninCompositional": lambda: _branin(True),
    "FourBranchSingle": lambda: _four_branch(False),
    "FourBranchCompositional": lambda: _four_branch(True),
}


def resolve_name(name: str) -> str:
    key = name.replace("_", "").replace("-", "").lower()
    for n in BENCHMARK_NAMES:
        if n.lower() == key:
            return n
    raise KeyError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARK_NAMES)}")


# ---------------------------------------------------------------- calibration

def calibrate_threshold(system: ComponentGraph, sampler: Sampler, target: float = 0.01, n: int = 10**6,
                        seed: int = 0) -> float:
    """Empirical (1 - target)-quantile of the TPI under the given input sampler."""
    if n < 10**4:
        raise ValueError("calibration needs at least 10^4 samples")
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    x = sampler(n, stream(seed, STREAM_CALIBRATION))
    y = simulate(system, x, seed).tpi
    if np.ptp(y) == 0.0:
        raise ValueError("degenerate TPI distribution: all outputs equal")
    return float(np.quantile(y, 1.0 - target))


@functools.lru_cache(maxsize=None)
def _calibrated_tau(name: str, seed: int, target: float, n: int) -> float:
    parts = _BUILDERS[name]()
    return calibrate_threshold(parts["graph"], parts["perfect"], target, n, seed)


def make_benchmark(name: str, seed: int = 0, tau: Union[str, float] = "calibrated",
                   calibration_samples: int = 10**6) -> BenchmarkSpec:
    """Build a benchmark; tau is 'calibrated' (1% exceedance under perfect input), 'reference', or a number."""
    name = resolve_name(name)
    parts = _BUILDERS[name]()
    if tau == "calibrated":
        t = _calibrated_tau(name, int(seed), 0.01, int(calibration_samples))
    elif tau == "reference":
        t = parts["tau"]
    else:
        t = float(tau)
    lo, hi = parts["grid"]
    if not lo <= t <= hi:
        raise ValueError(f"threshold {t} outside the grid range [{lo}, {hi}]")
    return BenchmarkSpec(name=name, system=parts["graph"], perfect_sampler=parts["perfect"],
                         biased_sampler=parts["biased"], channels=parts["channels"], grid_min=lo, grid_max=hi,
                         tau=t, reference_tau=parts["tau"], lipschitz=parts["lipschitz"],
                         constants=parts["constants"])


def biased_input_sampler(name: str, seed: int = 0) -> Callable[[int], np.ndarray]:
    parts = _BUILDERS[resolve_name(name)]()
    rng = stream(seed, STREAM_SIM_INPUT)
    return lambda n: parts["biased"](n, rng)


def perfect_input_sampler(name: str, seed: int = 0) -> Callable[[int], np.ndarray]:
    parts = _BUILDERS[resolve_name(name)]()
    rng = stream(seed, STREAM_SIM_INPUT)
    return lambda n: parts["perfect"](n, rng)


# ---------------------------------------------------------------- data and models

ValidationData = dict[int, tuple[np.ndarray, np.ndarray]]


def component_data(system: ComponentGraph, x: np.ndarray, seed: int = 0) -> ValidationData:
    """Per-component (inputs, outputs) from pushing global inputs through the system."""
    t = simulate(system, x, seed)
    return {c.index: (t.inputs[c.index], t.outputs[c.index]) for c in system.components}


def make_validation_data(spec: BenchmarkSpec, V: int = 100, seed: int = 0) -> tuple[np.ndarray, ValidationData]:
    """V perfect-input draws pushed through the true system; returns the global draws and per-component pairs."""
    if V < 2:
        raise ValueError("need at least two validation samples")
    x = spec.perfect_sampler(V, stream(seed, STREAM_VALIDATION))
    return x, component_data(spec.system, x, seed)


def make_misfit_models(spec: BenchmarkSpec, seed: int = 0, n_train: int = 100, restarts: int = 10) -> ComponentGraph:
    """Replace every component by the posterior mean of a GP fitted on fresh operating-distribution data."""
    x = spec.perfect_sampler(n_train, stream(seed, STREAM_MISFIT))
    data = component_data(spec.system, x, seed)
    maps = {}
    for c, (X, Y) in data.items():
        maps[c] = GPComponentMap(fit_component_gps(X, Y, seed=seed * 31 + c, restarts=restarts))
    return spec.system.with_maps(maps, name=f"{spec.name}-misfit")
