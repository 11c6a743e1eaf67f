"""Newton continuation over the wall boundary condition.

The wall-normal velocity (and for MHD the wall-normal field) starts at its
free-stream value and is lowered linearly to zero over ``num_increments``
increments; each increment is converged with Newton's method.  Euler steps are
plain sparse LU solves.  MHD steps are equality-constrained least-squares
problems that keep the discrete div B and all boundary pins exactly satisfied.
"""

from __future__ import annotations

import csv
import glob
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import physics as ph

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a solve cannot proceed; carries the trace so far."""

    def __init__(self, message, trace=None, states=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
        self.states = states


class SingularSystemError(SolverError):
    pass


class RankDeficiencyWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ContinuationSchedule:
    num_increments: int = 20
    max_newton_iters: int = 30
    tol: float = 1e-9
    damping: float = 1.0
    spacing: str = "linear"
    growth: float = 1.2
    max_halvings: int = 10

    def __post_init__(self):
        if int(self.num_increments) < 1:
            raise ValueError("num_increments must be >= 1")
        if self.max_newton_iters < 0:
            raise ValueError("max_newton_iters must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.spacing not in ("linear", "geometric"):
            raise ValueError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "geometric" and not self.growth > 0:
            raise ValueError("growth must be positive")

    def fractions(self) -> np.ndarray:
        """Wall fractions after each increment, strictly decreasing to 0."""
        n = int(self.num_increments)
        if self.spacing == "linear" or self.growth == 1.0:
            return (n - np.arange(1, n + 1)) / n
        # increments grow by `growth`: small steps first, where the shock forms
        steps = self.growth ** np.arange(n)
        done = np.cumsum(steps) / steps.sum()
        out = 1.0 - done
        out[-1] = 0.0
        return out


@dataclass
class TraceRecord:
    increment: int
    fraction: float
    iteration: int
    residual_l2: float
    residual_linf: float
    divb_max: float = float("nan")
    halvings: int = 0
    step_norm: float = 0.0

    @property
    def damped(self) -> bool:
        return self.halvings > 0


TRACE_FIELDS = ["increment", "fraction", "iteration", "residual_l2", "residual_linf",
                "divb_max", "halvings", "step_norm"]


def write_trace(trace, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for r in trace:
            w.writerow([r.increment, repr(r.fraction), r.iteration, repr(r.residual_l2),
                        repr(r.residual_linf), repr(r.divb_max), r.halvings, repr(r.step_norm)])


@dataclass
class SolveResult:
    states: np.ndarray
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.trace[-1].residual_l2 if self.trace else float("nan")

    @property
    def damped(self) -> bool:
        return any(r.damped for r in self.trace)


# ------------------------------------------------------------------ linear algebra
_PARDISO = None


def _pardiso_module():
    """pypardiso if importable (optional accelerator for KKT solves), else None."""
    global _PARDISO
    if _PARDISO is None:
        _PARDISO = False
        if os.environ.get("CONICAL_KKT_BACKEND", "auto") != "superlu":
            if "PYPARDISO_MKL_RT" not in os.environ:
                for root in (sys.prefix, "/usr/local", "/usr"):
                    hits = sorted(glob.glob(os.path.join(root, "lib", "libmkl_rt.so*")))
                    if hits:
                        os.environ["PYPARDISO_MKL_RT"] = hits[0]
                        break
            try:
                import pypardiso
                _PARDISO = pypardiso
            except ImportError:
                pass
    return _PARDISO or None


def kkt_backend() -> str:
    return "pardiso" if _pardiso_module() is not None else "superlu"


def _solve_symmetric(K, rhs):
    """Direct solve of a (symmetric, indefinite) saddle-point system."""
    pardiso = _pardiso_module()
    if pardiso is not None:
        solver = pardiso.PyPardisoSolver()
        x = solver.solve(sp.csr_matrix(K), rhs)
        solver.free_memory(everything=True)
    else:
        x = _factor(K).solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("singular KKT system")
    return x


def _factor(matrix):
    try:
        return spla.splu(sp.csc_matrix(matrix))
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularSystemError(f"sparse factorization failed: {exc}") from exc


def newton_step(jac, F) -> np.ndarray:
    """Solve jac * dU = -F."""
    dU = _factor(jac).solve(-np.asarray(F, dtype=float))
    if not np.all(np.isfinite(dU)):
        raise SingularSystemError("non-finite Newton step")
    return dU


def independent_rows(C, Z=None, rtol=1e-10):
    """Indices of a maximal independent row subset of C (pivoted QR on C^T).

    Warns when rows are dropped; raises if the dropped rows make the
    constraint inconsistent.
    """
    Cd = C.toarray() if sp.issparse(C) else np.asarray(C, dtype=float)
    m = Cd.shape[0]
    if m == 0:
        return np.arange(0)
    _, R, piv = sla.qr(Cd.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > rtol * max(d[0], 1e-300))) if d.size else 0
    keep = np.sort(piv[:rank])
    if rank < m:
        warnings.warn(f"constraint matrix has rank {rank} < {m} rows; "
                      f"dropping {m - rank} dependent rows", RankDeficiencyWarning, stacklevel=3)
        if Z is not None:
            Z = np.asarray(Z, dtype=float)
            coef, *_ = np.linalg.lstsq(Cd[keep].T, Cd.T, rcond=None)
            mismatch = np.abs(coef.T @ Z[keep] - Z)
            if np.max(mismatch) > 1e-8 * max(1.0, np.max(np.abs(Z))):
                raise SolverError("inconsistent constraints: dependent rows disagree with targets")
    return keep


# dense pivoted QR of C^T is used to find dependent rows only below this size
DENSE_RANK_CHECK_LIMIT = 4_000_000


def solve_kkt(jac, U, F, C, Z, deflate=True):
    """Equality-constrained least-squares update.

    Minimizes ``0.5 * ||jac @ x - (jac @ U - F)||^2`` subject to ``C @ x = Z``
    by solving the symmetric saddle-point system

        [2 jac^T jac   C^T] [x  ]   [2 jac^T (jac U - F)]
        [C             0  ] [lam] = [Z                  ]

    Returns ``x``.  Dependent constraint rows are dropped with a warning.
    """
    Jm = sp.csr_matrix(jac)
    U = np.asarray(U, dtype=float)
    F = np.asarray(F, dtype=float)
    n = Jm.shape[1]
    C = sp.csr_matrix(C) if C is not None else sp.csr_matrix((0, n))
    Z = np.zeros(0) if Z is None else np.asarray(Z, dtype=float)
    if C.shape[1] != n or C.shape[0] != Z.size:
        raise ValueError("constraint shapes do not match the Jacobian")
    target = Jm @ U - F
    if C.shape[0] == 0:
        return U + newton_step(Jm, F)
    if deflate and C.shape[0] * n <= DENSE_RANK_CHECK_LIMIT:
        keep = independent_rows(C, Z)
        C, Z = C[keep], Z[keep]
    K = sp.bmat([[2.0 * (Jm.T @ Jm), C.T], [C, None]], format="csc")
    rhs = np.concatenate([2.0 * (Jm.T @ target), Z])
    return _solve_symmetric(K, rhs)[:n]


# ------------------------------------------------------------------ Newton drivers
def newton_scalar(f, df, u0, tol=1e-14, max_iter=50):
    """Plain Newton on a scalar equation; returns the list of iterates."""
    u = float(u0)
    its = [u]
    for _ in range(max_iter):
        fu = f(u)
        if abs(fu) < tol:
            break
        u = u - fu / df(u)
        its.append(u)
    return its


def _positive(states):
    return bool(np.all(states[:, ph.RHO] > 0) and np.all(states[:, ph.E] > 0))


def _damped_update(U, dU, schedule, states_shape):
    """Halve the step until rho, e > 0; returns (U_new or None, halvings, |step|)."""
    scale = schedule.damping
    halvings = 0
    trial = U + scale * dU
    while not (np.all(np.isfinite(trial)) and _positive(trial.reshape(states_shape))):
        if halvings >= schedule.max_halvings:
            return None, halvings, float(np.linalg.norm(scale * dU))
        halvings += 1
        scale *= 0.5
        trial = U + scale * dU
    return trial, halvings, float(np.linalg.norm(scale * dU))


class _MHDConstraint:
    """div B rows plus boundary pin rows, with a cached flow/field split."""

    def __init__(self, disc):
        self.disc = disc
        C_div = disc.divb_matrix()
        pins = np.flatnonzero(disc.pinned_mask().ravel())
        n = disc.n_cells * disc.nu
        S = sp.csr_matrix((np.ones(pins.size), (np.arange(pins.size), pins)), shape=(pins.size, n))
        self.C_div = C_div
        self.pins = pins
        self.C = sp.vstack([C_div, S], format="csr")
        nu = disc.nu
        idx = np.arange(n).reshape(-1, nu)
        self.flow = idx[:, :ph.N_EULER].ravel()
        self.field = idx[:, ph.N_EULER:].ravel()

    def targets(self, fraction):
        T = self.disc.targets(fraction).ravel()
        return np.concatenate([np.zeros(self.C_div.shape[0]), T[self.pins]])

    def divb_max(self, U):
        v = self.C_div @ U
        return float(np.max(np.abs(v))) if v.size else 0.0


def _mhd_step(jac, F, U, cons: _MHDConstraint, fraction):
    """Constrained Newton update U_next - U."""
    jac = sp.csr_matrix(jac)
    flow, fld = cons.flow, cons.field
    Z = cons.targets(fraction)
    if jac[flow][:, fld].nnz + jac[fld][:, flow].nnz == 0:
        # flow and field decouple exactly (B = 0): the blocks are solved
        # separately and the constraint holds without correction
        dU = np.empty_like(F)
        dU[flow] = newton_step(jac[flow][:, flow], F[flow])
        dU[fld] = newton_step(jac[fld][:, fld], F[fld])
        if np.max(np.abs(Z - cons.C @ (U + dU))) <= 1e-12:
            return dU
    return solve_kkt(jac, U, F, cons.C, Z, deflate=False) - U


def _run(U0, schedule: ContinuationSchedule, disc, mhd: bool, callback=None) -> SolveResult:
    shape = np.shape(U0)
    U = np.array(U0, dtype=float).ravel()
    cons = _MHDConstraint(disc) if mhd else None
    trace: list[TraceRecord] = []
    fractions = schedule.fractions()
    norm = math.inf
    for inc, frac in enumerate(fractions, start=1):
        halvings = 0
        step_norm = 0.0
        for it in range(schedule.max_newton_iters + 1):
            R = disc.residual(U.reshape(shape), frac).ravel()
            if not np.all(np.isfinite(R)):
                raise SolverError("non-finite residual", trace, U.reshape(shape))
            norm = float(np.linalg.norm(R))
            rec = TraceRecord(inc, float(frac), it, norm, float(np.max(np.abs(R))),
                              cons.divb_max(U) if mhd else float("nan"), halvings, step_norm)
            trace.append(rec)
            if callback is not None:
                callback(rec)
            log.debug("inc %d frac %.4f it %d |R| %.3e", inc, frac, it, norm)
            if norm < schedule.tol or it == schedule.max_newton_iters:
                break
            jac = disc.jacobian(U.reshape(shape))
            if mhd:
                dU = _mhd_step(jac, R, U, cons, frac)
            else:
                dU = newton_step(jac, R)
            U_new, halvings, step_norm = _damped_update(U, dU, schedule, shape)
            if U_new is None:
                trace.append(TraceRecord(inc, float(frac), it + 1, math.nan, math.nan,
                                         math.nan, halvings, step_norm))
                raise SolverError(f"positivity lost after {halvings} step halvings "
                                  f"(increment {inc}, iteration {it + 1})", trace, U.reshape(shape))
            U = U_new
    return SolveResult(U.reshape(shape), norm < schedule.tol, trace)


def newton_solve_euler(U0, schedule: ContinuationSchedule, disc, callback=None) -> SolveResult:
    """Continuation + Newton for the conical Euler system."""
    if disc.mhd:
        raise ValueError("discretization was built for the MHD system")
    return _run(U0, schedule, disc, mhd=False, callback=callback)


def newton_solve_mhd(U0, schedule: ContinuationSchedule, disc, callback=None) -> SolveResult:
    """Continuation + constrained Newton for the conical ideal-MHD system."""
    if not disc.mhd:
        raise ValueError("discretization was built for the Euler system")
    return _run(U0, schedule, disc, mhd=True, callback=callback)
