"""Worst-case discrepancy propagation through a component graph.

For a component c with validation pairs (x_v, y_v), v = 1..V, the weights alpha
of p_alpha = sum_v alpha_v delta_{x_v} range over the simplex subject to
MMD(p_alpha|route, q|route) <= B_route for every incoming route. The largest
output discrepancy MMD(p_alpha|c->c'', q|c->c'')^2 is a nonconvex quadratic
maximization; it is bounded above by its lifted relaxation in A ~ alpha alpha^T
(see ``_sdp``), whose optimum gives B^{c->c''}.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import _sdp
from .empirical import SignalRoute, WeightedSamples, kernel_mean, mmd_biased, self_energy
from .graph import Component, ComponentGraph, SignalTable, collect_marginal
from .kernels import KernelSpec, gram

RouteKey = tuple[int, int]
BOUND_INFLATION = 1e-9


class PropagationError(RuntimeError):
    """A propagation step could not produce a bound; carries the diagnostics."""

    def __init__(self, message: str, route: Optional[RouteKey] = None, details: Optional[dict] = None):
        super().__init__(message)
        self.route = route
        self.details = details or {}


class InfeasibleBoundError(PropagationError):
    pass


@dataclass(frozen=True)
class QuadraticTerm:
    """alpha -> alpha^T K alpha - 2 alpha^T m + c, i.e. MMD(p_alpha, q)^2 on one route."""

    route: RouteKey
    K: np.ndarray
    m: np.ndarray
    c: float

    def __call__(self, alpha: np.ndarray) -> float:
        return float(alpha @ self.K @ alpha - 2.0 * alpha @ self.m + self.c)

    def lifted(self) -> np.ndarray:
        """Matrix C with <C, A> + c equal to the term whenever 1^T A 1 = 1."""
        one = np.ones_like(self.m)
        return self.K - np.outer(self.m, one) - np.outer(one, self.m)


@dataclass(frozen=True)
class ConicProblem:
    component: int
    target: int
    objective: QuadraticTerm
    constraints: tuple[QuadraticTerm, ...]
    bounds: tuple[float, ...]  # inflated input bounds B, one per constraint

    @property
    def V(self) -> int:
        return self.objective.m.shape[0]

    @property
    def psd_order(self) -> int:
        return self.V + 1

    @property
    def n_matrix_vars(self) -> int:
        return self.V * (self.V + 1) // 2

    @property
    def n_equalities(self) -> int:
        return 1

    @property
    def n_inequalities(self) -> int:
        return len(self.constraints)

    @property
    def n_nonneg(self) -> int:
        return self.n_matrix_vars

    def rhs(self) -> np.ndarray:
        return np.array([b * b - t.c for b, t in zip(self.bounds, self.constraints)])

    def constraint_excess(self, alpha: np.ndarray) -> np.ndarray:
        """q_i(alpha) - B_i^2 per route; nonpositive means feasible."""
        return np.array([t(alpha) - b * b for t, b in zip(self.constraints, self.bounds)])


@dataclass
class SdpDiagnostics:
    opt_relax: float
    opt_orig: float
    gap_upper: float
    approx_ratio_lower: float
    solver_status: str
    stage: str = ""
    iterations: int = 0
    wall_time_ms: float = 0.0


@dataclass
class BoundResult:
    component: int
    target: int
    value: float
    diagnostics: SdpDiagnostics
    alpha_hat: np.ndarray

    def record(self) -> dict:
        d = self.diagnostics
        return {
            "c": self.component,
            "c_target": self.target,
            "B": self.value,
            "opt_relax": d.opt_relax,
            "opt_orig": d.opt_orig,
            "gamma_hat": d.approx_ratio_lower,
            "status": d.solver_status,
            "stage": d.stage,
            "wall_time_ms": d.wall_time_ms,
        }


def estimate_input_bounds(
    p_samples: Mapping[RouteKey, WeightedSamples],
    q_samples: Mapping[RouteKey, WeightedSamples],
    kernels: Mapping[RouteKey, KernelSpec],
    concentration_delta: Optional[float] = None,
) -> dict[RouteKey, float]:
    """B^{0->c} = MMD(p|0->c, q|0->c), optionally plus sqrt(ln(1/delta) / n_min)."""
    out = {}
    for key, P in p_samples.items():
        Q = q_samples[key]
        if P.n < 1 or Q.n < 1:
            raise ValueError(f"route {key} has an empty sample set")
        b = mmd_biased(kernels[key], P, Q)
        if concentration_delta is not None:
            if not 0.0 < concentration_delta < 1.0:
                raise ValueError("concentration delta must lie in (0, 1)")
            b += math.sqrt(math.log(1.0 / concentration_delta) / min(P.n, Q.n))
        out[key] = b
    return out


def _term(route: RouteKey, k: KernelSpec, X: np.ndarray, Q: WeightedSamples) -> QuadraticTerm:
    if X.shape[1] != Q.dim:
        raise ValueError(f"route {route}: validation data has {X.shape[1]} columns, model marginal {Q.dim}")
    return QuadraticTerm(route, gram(k, X), kernel_mean(k, X, Q), self_energy(k, Q))


def build_sdp(
    component: Component,
    out_route: SignalRoute,
    x_val: np.ndarray,
    y_val: np.ndarray,
    model_marginals: Mapping[RouteKey, WeightedSamples],
    input_bounds: Mapping[RouteKey, float],
    kernels: Mapping[RouteKey, KernelSpec],
    inflation: float = BOUND_INFLATION,
) -> ConicProblem:
    if out_route.source != component.index:
        raise ValueError(f"route {out_route} does not leave component {component.index}")
    x_val = np.asarray(x_val, dtype=float).reshape(len(x_val), -1)
    y_val = np.asarray(y_val, dtype=float).reshape(len(y_val), -1)
    if x_val.shape[0] != y_val.shape[0]:
        raise ValueError("validation inputs and outputs differ in length")
    if x_val.shape[1] != component.input_dim:
        raise ValueError(f"validation inputs have {x_val.shape[1]} columns, component expects {component.input_dim}")
    cons, bounds = [], []
    for key, sl in component.input_slices().items():
        if key not in input_bounds:
            raise KeyError(f"no bound available for route {key}")
        cons.append(_term(key, kernels[key], x_val[:, sl], model_marginals[key]))
        bounds.append(float(input_bounds[key]) * (1.0 + inflation))
    obj = _term(out_route.key, kernels[out_route.key], y_val[:, list(out_route.column_indices)],
                model_marginals[out_route.key])
    return ConicProblem(component.index, out_route.target, obj, tuple(cons), tuple(bounds))


def min_discrepancy(term: QuadraticTerm) -> float:
    """Smallest MMD(p_alpha, q) reachable over the simplex (convex QP)."""
    from scipy.optimize import minimize

    V = term.m.shape[0]
    res = minimize(
        lambda a: term(a),
        np.full(V, 1.0 / V),
        jac=lambda a: 2.0 * (term.K @ a - term.m),
        bounds=[(0.0, 1.0)] * V,
        constraints=[{"type": "eq", "fun": lambda a: a.sum() - 1.0, "jac": lambda a: np.ones(V)}],
        method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-14},
    )
    return math.sqrt(max(float(res.fun), 0.0))


def _infeasible(problem: ConicProblem) -> InfeasibleBoundError:
    details = {}
    worst = None
    for t, b in zip(problem.constraints, problem.bounds):
        reach = min_discrepancy(t)
        details[str(t.route)] = {"bound": b, "min_achievable": reach}
        if reach > b and (worst is None or reach - b > details[str(worst)]["min_achievable"] - details[str(worst)]["bound"]):
            worst = t.route
    route = worst if worst is not None else (problem.constraints[0].route if problem.constraints else None)
    return InfeasibleBoundError(
        f"bound program for {problem.component}->{problem.target} is infeasible "
        f"(violating route {route}): {details}",
        route=route,
        details=details,
    )


def solve_bound(problem: ConicProblem) -> BoundResult:
    """Solve the relaxation and report sqrt of its certified optimum as the bound."""
    t0 = time.perf_counter()
    C0 = problem.objective.lifted()
    cons = [t.lifted() for t in problem.constraints]
    try:
        uniform = np.full(problem.V, 1.0 / problem.V)
        sol = _sdp.solve_dnn(C0, problem.objective.c, cons, problem.rhs(), anchors=[uniform])
    except _sdp.SdpInfeasible:
        raise _infeasible(problem) from None
    except _sdp.SdpNumericalError as exc:
        raise PropagationError(
            f"solver failure for {problem.component}->{problem.target}: {exc}",
            route=(problem.component, problem.target),
        ) from exc
    opt_relax = float(sol.upper)
    alpha = np.clip(sol.A.sum(axis=1), 0.0, None)
    alpha = alpha / alpha.sum() if alpha.sum() > 0 else np.full(problem.V, 1.0 / problem.V)
    opt_orig = problem.objective(alpha)
    gamma = 1.0 if opt_relax <= 0 else float(np.clip(opt_orig / opt_relax, 0.0, 1.0))
    diag = SdpDiagnostics(
        opt_relax=opt_relax,
        opt_orig=opt_orig,
        gap_upper=opt_relax - opt_orig,
        approx_ratio_lower=gamma,
        solver_status=sol.status,
        stage=sol.stage,
        iterations=int(sol.iterations),
        wall_time_ms=1e3 * (time.perf_counter() - t0),
    )
    return BoundResult(problem.component, problem.target, math.sqrt(max(opt_relax, 0.0)), diag, alpha)


@dataclass
class PropagationResult:
    b_y: float
    bounds: dict[RouteKey, float]
    results: dict[RouteKey, BoundResult] = field(default_factory=dict)

    @property
    def n_solves(self) -> int:
        return len(self.results)

    def records(self) -> list[dict]:
        return [r.record() for r in self.results.values()]


def run_propagation(
    g: ComponentGraph,
    validation_data: Mapping[int, tuple[np.ndarray, np.ndarray]],
    q_table: SignalTable,
    input_bounds: Mapping[RouteKey, float],
    kernels: Mapping[RouteKey, KernelSpec],
    on_solve: Optional[Callable[[BoundResult], None]] = None,
) -> PropagationResult:
    """Propagate bounds component by component and return B^y = B^{C->C+1}."""
    bounds: dict[RouteKey, float] = {k: float(v) for k, v in input_bounds.items() if k[0] == 0}
    for comp in g.components:
        for r in comp.incoming_routes:
            if r.source == 0 and r.key not in bounds:
                raise KeyError(f"missing input bound for route {r}")
    marginals = {r.key: collect_marginal(q_table, r) for r in g.routes()}
    results: dict[RouteKey, BoundResult] = {}
    for comp in g.components:
        x_val, y_val = validation_data[comp.index]
        for out in g.outgoing(comp.index):
            problem = build_sdp(comp, out, x_val, y_val, marginals, bounds, kernels)
            res = solve_bound(problem)
            results[out.key] = res
            bounds[out.key] = res.value
            if on_solve is not None:
                on_solve(res)
    return PropagationResult(bounds[g.tpi_route.key], bounds, results)
