"""Solver for the doubly-nonnegative relaxation used in bound propagation.

The relaxation over a symmetric V x V matrix A reads

    maximize   <C0, A> + c0
    subject to <C_i, A> <= r_i          (one per incoming route)
               <J, A> = 1,  A >= 0 entrywise,  A PSD.

Given <J, A> = 1, the bordered block [[A, A1], [(A1)^T, 1]] is PSD exactly when
A is, so the order-V cone is used internally.

Every returned upper bound is certified from dual multipliers (y >= 0, z, N >= 0):
for any feasible A, <C0, A> <= sum_i y_i r_i + z + max(0, -lambda_min(S)) with
S = sum_i y_i C_i + z J - C0 - N, because Tr A <= <J, A> = 1 when A >= 0.
An inexact solver therefore never produces an invalid bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

GAP_TOL = 1e-7
FEAS_TOL = 1e-8
# Certified gaps above GAP_TOL but below this are reported as inaccurate, not failed.
INACCURATE_TOL = 1e-4


class SdpInfeasible(RuntimeError):
    pass


class SdpNumericalError(RuntimeError):
    pass


@dataclass
class DnnSolution:
    upper: float  # certified upper bound on the relaxation optimum (constant included)
    lower: float  # objective of a (tolerance-)feasible relaxation point, -inf if none
    A: np.ndarray
    status: str
    stage: str
    iterations: int = 0
    seconds: float = 0.0
    duals: dict = field(default_factory=dict)

    @property
    def rel_gap(self) -> float:
        if not np.isfinite(self.lower):
            return np.inf
        return (self.upper - self.lower) / max(abs(self.upper), 1e-300)


def lambda_min(S: np.ndarray) -> float:
    return float(sla.eigh(S, eigvals_only=True, subset_by_index=[0, 0], check_finite=False)[0])


def certified_upper(C0, c0, cons, rhs, y, z, N=None) -> float:
    y = np.maximum(np.asarray(y, dtype=float), 0.0)
    S = -C0 + z
    for yi, Ci in zip(y, cons):
        S = S + yi * Ci
    if N is not None:
        S = S - np.maximum(N, 0.0)
    S = 0.5 * (S + S.T)
    return float(c0 + y @ rhs + z + max(0.0, -lambda_min(S)))


def residuals(A, cons, rhs) -> np.ndarray:
    return np.array([float(np.vdot(Ci, A)) for Ci in cons]) - rhs


def dnn_violation(A, cons, rhs, scale: float) -> float:
    """Largest scaled violation of the relaxation constraints at A."""
    parts = [abs(A.sum() - 1.0)]
    if cons:
        parts.append(max(0.0, residuals(A, cons, rhs).max()) / scale)
    parts.append(max(0.0, -A.min()) / max(A.max(), 1e-300))
    parts.append(max(0.0, -lambda_min(0.5 * (A + A.T))) / max(np.trace(A), 1e-300))
    return float(max(parts))


def _scale(C0, cons) -> float:
    return float(max([np.abs(C0).max()] + [np.abs(Ci).max() for Ci in cons] + [1e-12]))


def _dual_slack(C0, cons, y, z):
    S = z * np.ones_like(C0) - C0
    for yi, Ci in zip(np.maximum(y, 0.0), cons):
        S = S + yi * Ci
    return 0.5 * (S + S.T)


def _small_primal(C0, cons, rhs, W):
    """Best A = W X W^T with X PSD, i.e. the relaxation restricted to range(W)."""
    k = W.shape[1]
    one = W.T @ np.ones(W.shape[0])
    if k == 1:
        if abs(one[0]) < 1e-300:
            return None
        return np.outer(W[:, 0], W[:, 0]) / one[0] ** 2
    from cvxopt import matrix, solvers

    # max <W'C0W, X>  s.t.  <W'C_iW, X> <= r_i, <jj', X> = 1, Tr X <= 1, X PSD (primal of sdp()).
    Fs = [W.T @ Ci @ W for Ci in cons] + [np.outer(one, one), np.eye(k)]
    c = matrix(np.concatenate([rhs, [1.0, 1.0]]))
    m = len(cons)
    Gl = np.zeros((m + 1, m + 2))
    Gl[:m, :m] = -np.eye(m)
    Gl[m, m + 1] = -1.0
    Gs = [matrix(np.column_stack([-F.ravel(order="F") for F in Fs]))]
    sol = solvers.sdp(c, matrix(Gl), matrix(np.zeros(m + 1)), Gs, [matrix(-(W.T @ C0 @ W))],
                      options={"show_progress": False, "maxiters": 100})
    if sol["zs"] is None:
        return None
    X = np.array(sol["zs"][0])
    return W @ (0.5 * (X + X.T)) @ W.T


def _recover_primal(C0, cons, rhs, S, scale):
    """Primal candidates supported on the (near) null space of the dual slack S."""
    lam, Q = np.linalg.eigh(S)
    top = max(abs(lam[-1]), 1e-300)
    out = []
    kmax = min(8, S.shape[0] - 1)
    for k in range(1, kmax + 1):
        lo = max(lam[k - 1], 1e-14 * top)
        if lam[k] < 1e3 * lo:
            continue
        try:
            A = _small_primal(C0, cons, rhs, Q[:, :k])
        except (ValueError, ArithmeticError):
            A = None
        if A is not None and np.all(np.isfinite(A)):
            out.append(A)
    return out


def _lower(C0, c0, cons, rhs, A, scale):
    if dnn_violation(A, cons, rhs, scale) <= FEAS_TOL:
        return float(np.vdot(C0, A) + c0)
    return -np.inf


def _solve_without_entrywise(C0, c0, cons, rhs, trace_cap=True):
    """Relaxation without A >= 0 (but with Tr A <= 1), via a small-dual interior-point solve."""
    from cvxopt import matrix, solvers

    V = C0.shape[0]
    m = len(cons)
    # Dual variables x = (y_1..y_m, z, t); S = sum y_i C_i + z J + t I - C0 must be PSD.
    c = matrix(np.concatenate([rhs, [1.0, 1.0]]))
    Gl = np.zeros((m + 1, m + 2))
    Gl[:m, :m] = -np.eye(m)
    Gl[m, m + 1] = -1.0
    cols = [-Ci.ravel(order="F") for Ci in cons]
    cols += [-np.ones(V * V), -np.eye(V).ravel(order="F")]
    Gs = [matrix(np.column_stack(cols))]
    hs = [matrix(-C0)]
    opts = {"show_progress": False, "maxiters": 100}
    t0 = time.perf_counter()
    sol = solvers.sdp(c, matrix(Gl), matrix(np.zeros(m + 1)), Gs, hs, options=opts)
    secs = time.perf_counter() - t0
    x = np.array(sol["x"]).ravel() if sol["x"] is not None else None
    A = np.array(sol["zs"][0]) if sol["zs"] is not None else None
    return sol["status"], x, A, sol.get("iterations", 0), secs


def _solve_full(C0, c0, cons, rhs, max_iter=200):
    """Full doubly-nonnegative relaxation with Clarabel on svec(A)."""
    import clarabel

    V = C0.shape[0]
    iu = np.triu_indices(V)
    # Clarabel's triangle cone uses column-major upper triangle: order by (col, row).
    order = np.lexsort((iu[0], iu[1]))
    rows, colsi = iu[0][order], iu[1][order]
    n = rows.size
    w = np.where(rows == colsi, 1.0, np.sqrt(2.0))

    def svec(M):
        return M[rows, colsi] * w

    def smat(v):
        M = np.zeros((V, V))
        M[rows, colsi] = v / w
        M[colsi, rows] = v / w
        return M

    m = len(cons)
    blocks = [sp.csr_matrix(svec(np.ones((V, V)))[None, :])]
    if m:
        blocks.append(sp.csr_matrix(np.vstack([svec(Ci) for Ci in cons])))
    blocks += [-sp.identity(n, format="csr"), -sp.identity(n, format="csr")]
    Amat = sp.vstack(blocks).tocsc()
    b = np.concatenate([[1.0], rhs, np.zeros(n), np.zeros(n)])
    cones = [clarabel.ZeroConeT(1)]
    if m:
        cones.append(clarabel.NonnegativeConeT(m))
    cones += [clarabel.NonnegativeConeT(n), clarabel.PSDTriangleConeT(V)]
    P = sp.csc_matrix((n, n))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_rel = GAP_TOL
    settings.tol_gap_abs = 1e-10
    settings.tol_feas = FEAS_TOL
    settings.max_iter = max_iter
    t0 = time.perf_counter()
    solver = clarabel.DefaultSolver(P, -svec(C0), Amat, b, cones, settings)
    res = solver.solve()
    secs = time.perf_counter() - t0
    zd = np.asarray(res.z)
    y = zd[1 : 1 + m]
    N = smat(zd[1 + m : 1 + m + n])
    return str(res.status), smat(np.asarray(res.x)), zd[0], y, N, res.iterations, secs


def solve_dnn(C0, c0: float, cons: Sequence[np.ndarray], rhs, allow_full: bool = True,
              anchors: Sequence[np.ndarray] = ()) -> DnnSolution:
    """Anchors are known feasible weight vectors; their rank-one lifts always compete for the lower bound."""
    C0 = 0.5 * (C0 + C0.T)
    cons = [0.5 * (Ci + Ci.T) for Ci in cons]
    rhs = np.asarray(rhs, dtype=float)
    V = C0.shape[0]
    scale = _scale(C0, cons)
    t_start = time.perf_counter()

    if V == 1:
        A = np.ones((1, 1))
        viol = residuals(A, cons, rhs) if cons else np.zeros(0)
        if viol.size and viol.max() > FEAS_TOL * scale:
            raise SdpInfeasible(int(np.argmax(viol)), float(viol.max()))
        val = float(C0[0, 0] + c0)
        return DnnSolution(val, val, A, "optimal", "trivial")

    best: Optional[DnnSolution] = None
    lifts = [np.outer(a, a) for a in anchors]

    status, x, A0, iters, secs = _solve_without_entrywise(C0, c0, cons, rhs)
    if status == "primal infeasible" or (status == "unknown" and x is None):
        raise SdpInfeasible(-1, np.nan)
    m = len(cons)
    if x is not None:
        y, z = np.maximum(x[:m], 0.0), x[m]
        S = _dual_slack(C0, cons, y, z)
        shift = max(0.0, -lambda_min(S))
        upper = float(c0 + y @ rhs + z + shift)
        cands = [] if A0 is None else [0.5 * (A0 + A0.T)]
        cands += _recover_primal(C0, cons, rhs, S + shift * np.eye(V), scale)
        cands += lifts
        lows = [(_lower(C0, c0, cons, rhs, A, scale), i) for i, A in enumerate(cands)]
        lower, i_best = max(lows) if lows else (-np.inf, -1)
        if i_best >= 0:
            best = DnnSolution(upper, lower, cands[i_best], "", "reduced", iters, secs,
                               {"y": y, "z": z})
            if best.rel_gap <= GAP_TOL or best.upper - best.lower <= FEAS_TOL * scale:
                best.status = "optimal"
                best.seconds = time.perf_counter() - t_start
                return best
        best_upper = upper
    else:
        best_upper = np.inf

    if allow_full:
        status2, A2, z2, y2, N2, iters2, secs2 = _solve_full(C0, c0, cons, rhs)
        infeasible2 = status2 in ("PrimalInfeasible", "AlmostPrimalInfeasible")
        if infeasible2 and (best is None or not np.isfinite(best.lower)):
            raise SdpInfeasible(-1, np.nan)
        if np.all(np.isfinite(A2)):
            A2 = 0.5 * (A2 + A2.T)
            upper2 = certified_upper(C0, c0, cons, rhs, y2, z2, N2)
            lower2 = -np.inf
            if dnn_violation(A2, cons, rhs, scale) <= FEAS_TOL * 10:
                lower2 = float(np.vdot(C0, A2) + c0)
            cand = DnnSolution(min(upper2, best_upper), lower2, A2, "", "full", iters2, secs2,
                               {"y": y2, "z": z2})
            if best is None or cand.rel_gap <= best.rel_gap or not np.isfinite(best.lower):
                best = cand
            else:
                best.upper = min(best.upper, upper2)

    if best is None:
        raise SdpNumericalError("no usable solver output")
    for L in lifts:
        low = _lower(C0, c0, cons, rhs, L, scale)
        if low > best.lower:
            best.lower, best.A = low, L
    best.seconds = time.perf_counter() - t_start
    if best.rel_gap <= GAP_TOL or best.upper - best.lower <= FEAS_TOL * scale:
        best.status = "optimal"
    elif best.rel_gap <= INACCURATE_TOL:
        best.status = "optimal_inaccurate"
    else:
        raise SdpNumericalError(
            f"certified gap {best.rel_gap:.3g} above tolerance (upper {best.upper:.6g}, lower {best.lower:.6g})"
        )
    return best
