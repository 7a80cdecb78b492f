"""Composite-system DAG and the simulation runner that produces all signals."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .empirical import SignalRoute, WeightedSamples

# Vectorized component map: (n, input_dim) inputs plus a seeded generator -> (n, output_dim).
ComponentMap = Callable[[np.ndarray, np.random.Generator], np.ndarray]


class SimulationError(RuntimeError):
    def __init__(self, component: int, sample: Optional[int], message: str) -> None:
        where = f"component {component}" + ("" if sample is None else f", sample {sample}")
        super().__init__(f"{where}: {message}")
        self.component = component
        self.sample = sample


@dataclass
class Component:
    index: int
    input_dim: int
    output_dim: int
    map: ComponentMap
    incoming_routes: list[SignalRoute]
    name: str = ""

    def ordered_routes(self) -> list[SignalRoute]:
        """Incoming routes in concatenation order: by source, then declaration order."""
        order = sorted(range(len(self.incoming_routes)), key=lambda i: (self.incoming_routes[i].source, i))
        return [self.incoming_routes[i] for i in order]

    def input_slices(self) -> dict[tuple[int, int], slice]:
        """Column slice of each incoming route inside the concatenated input x^c."""
        out: dict[tuple[int, int], slice] = {}
        start = 0
        for r in self.ordered_routes():
            out[r.key] = slice(start, start + r.width)
            start += r.width
        return out


@dataclass
class ComponentGraph:
    input_dim: int
    components: list[Component]
    name: str = ""

    @property
    def C(self) -> int:
        return len(self.components)

    @property
    def tpi_route(self) -> SignalRoute:
        return SignalRoute(self.C, self.C + 1, [0])

    def component(self, c: int) -> Component:
        return self.components[c - 1]

    def source_dim(self, c: int) -> int:
        return self.input_dim if c == 0 else self.component(c).output_dim

    def routes(self) -> list[SignalRoute]:
        """All routes including the final performance-indicator route."""
        rs = [r for comp in self.components for r in comp.ordered_routes()]
        return rs + [self.tpi_route]

    def outgoing(self, c: int) -> list[SignalRoute]:
        return [r for r in self.routes() if r.source == c]

    def with_maps(self, maps: dict[int, ComponentMap], name: Optional[str] = None) -> "ComponentGraph":
        """Same topology with some component maps replaced (e.g. surrogate models)."""
        comps = [
            Component(k.index, k.input_dim, k.output_dim, maps.get(k.index, k.map), list(k.incoming_routes), k.name)
            for k in self.components
        ]
        return ComponentGraph(self.input_dim, comps, name or self.name)


def validate_graph(g: ComponentGraph) -> list[str]:
    """Return every structural problem found; an empty list means the graph is usable."""
    errors: list[str] = []
    if g.C < 1:
        return ["graph has no components"]
    for pos, comp in enumerate(g.components, start=1):
        if comp.index != pos:
            errors.append(f"component at position {pos} has index {comp.index}: not in topological order")
        if not comp.incoming_routes:
            errors.append(f"component {comp.index} has no incoming routes")
        width = 0
        for r in comp.incoming_routes:
            if r.target != comp.index:
                errors.append(f"route {r} listed at component {comp.index}")
            if r.source >= r.target or r.source >= comp.index:
                errors.append(f"non-causal route {r}")
                continue
            src_dim = g.input_dim if r.source == 0 else g.components[r.source - 1].output_dim
            if max(r.column_indices) >= src_dim:
                errors.append(f"route {r} selects columns {r.column_indices} but source has dimension {src_dim}")
            width += r.width
        if width != comp.input_dim:
            errors.append(f"component {comp.index}: routed width {width} != input_dim {comp.input_dim}")
    if g.components[-1].output_dim != 1:
        errors.append("TPI must be scalar: last component has output_dim "
                      f"{g.components[-1].output_dim}")
    return errors


@dataclass
class SignalTable:
    """All signals of one simulation: global inputs and per-component inputs/outputs."""

    x: np.ndarray
    inputs: dict[int, np.ndarray] = field(default_factory=dict)
    outputs: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def signal(self, source: int) -> np.ndarray:
        return self.x if source == 0 else self.outputs[source]

    @property
    def tpi(self) -> np.ndarray:
        return self.outputs[max(self.outputs)][:, 0]


def assemble_input(comp: Component, signals: Callable[[int], np.ndarray]) -> np.ndarray:
    parts = [signals(r.source)[:, list(r.column_indices)] for r in comp.ordered_routes()]
    return np.concatenate(parts, axis=1)


def run_component(comp: Component, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    try:
        with np.errstate(all="ignore"):
            Y = np.asarray(comp.map(X, rng), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with location
        raise SimulationError(comp.index, None, f"map raised {exc!r}") from exc
    Y = Y.reshape(X.shape[0], -1)
    if Y.shape[1] != comp.output_dim:
        raise SimulationError(comp.index, None, f"map returned {Y.shape[1]} columns, expected {comp.output_dim}")
    bad = np.flatnonzero(~np.all(np.isfinite(Y), axis=1))
    if bad.size:
        raise SimulationError(comp.index, int(bad[0]), f"non-finite output at input {X[bad[0]].tolist()}")
    return Y


def simulate(g: ComponentGraph, inputs, seed: int = 0) -> SignalTable:
    """Evaluate every component in order on all input rows."""
    errors = validate_graph(g)
    if errors:
        raise ValueError("invalid graph: " + "; ".join(errors))
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != g.input_dim:
        raise ValueError(f"inputs have {x.shape[1]} columns, graph expects {g.input_dim}")
    table = SignalTable(x=x)
    for comp in g.components:
        X = assemble_input(comp, table.signal)
        rng = np.random.default_rng([int(seed), comp.index])
        table.inputs[comp.index] = X
        table.outputs[comp.index] = run_component(comp, X, rng)
    return table


def collect_marginal(t: SignalTable, route: SignalRoute) -> WeightedSamples:
    if route.source != 0 and route.source not in t.outputs:
        raise KeyError(f"unknown route {route}")
    sig = t.signal(route.source)
    if max(route.column_indices) >= sig.shape[1]:
        raise KeyError(f"route {route} selects columns beyond the source signal")
    return WeightedSamples.uniform(sig[:, list(route.column_indices)])


def chain(maps: Sequence[ComponentMap], dims: Sequence[int], name: str = "") -> ComponentGraph:
    """Linear chain x -> S^1 -> ... -> S^C; ``dims`` lists d, then every output dimension."""
    comps = []
    for c, fmap in enumerate(maps, start=1):
        route = SignalRoute(c - 1, c, range(dims[c - 1]))
        comps.append(Component(c, dims[c - 1], dims[c], fmap, [route]))
    return ComponentGraph(dims[0], comps, name)
