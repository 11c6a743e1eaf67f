"""Semi-discrete central scheme (Kurganov-Tadmor type) on curved meshes.

Cell states are stored in each cell's own tensor basis.  Slopes are minmod
limited one-sided covariant derivatives; interface values and fluxes that
come from a neighbour are parallel transported into the receiving cell's
basis before they are combined.  On a mesh with identity Jacobians every
transport is the identity and the update reduces to the usual Cartesian
scheme.

The conical steady solver does not use this module; it is a time-dependent
companion for the same tensor machinery.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor_ops import CovariantOperator, Stencil, StructuredGrid

CFL = 0.45

BACKWARD = Stencil((-1, 0), (-1.0, 1.0))
FORWARD = Stencil((0, 1), (-1.0, 1.0))


class CFLWarning(UserWarning):
    pass


def minmod(x, y):
    """0.5 * (sign(x) + sign(y)) * min(|x|, |y|), elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * (np.sign(x) + np.sign(y)) * np.minimum(np.abs(x), np.abs(y))


@dataclass(frozen=True)
class TensorLayout:
    """Which state components are scalars and which form basis vectors.

    ``vectors`` lists start indices of contiguous d-component vector blocks;
    every other component is a scalar.
    """
    n_components: int
    vectors: tuple = ()
    dim: int = 2

    def transform(self, u: np.ndarray, M: np.ndarray) -> np.ndarray:
        """Apply per-cell matrices M (n, d, d) to each vector block of u (n, m)."""
        out = np.array(u, dtype=float, copy=True)
        d = self.dim
        for s in self.vectors:
            out[:, s:s + d] = np.einsum("nij,nj->ni", M, u[:, s:s + d])
        return out


class CentralScheme:
    """Right-hand side of the manifold central scheme on a structured grid.

    Parameters
    ----------
    grid : StructuredGrid
        Cell connectivity; a 1D problem is a grid of height 1.
    J : (N, d, d) array
        Per-cell Jacobians (columns are the basis vectors in Cartesian space).
    layout : TensorLayout
    flux_fn : callable ``(u, direction, cells) -> (n, m)``
        Flux along one mesh direction, evaluated in the basis of ``cells``.
    wave_speed_fn : callable ``(u, direction, cells) -> (n,)``
        Spectral radius of the flux Jacobian.
    dx : per-direction spacing (default 1).
    """

    def __init__(self, grid: StructuredGrid, J, layout: TensorLayout,
                 flux_fn: Callable, wave_speed_fn: Callable, dx: Sequence[float] = (1.0, 1.0),
                 directions: Sequence[int] | None = None):
        self.grid = grid
        self.J = np.asarray(J, dtype=float)
        self.J_inv = np.linalg.inv(self.J)
        self.layout = layout
        self.flux_fn = flux_fn
        self.wave_speed_fn = wave_speed_fn
        self.dx = tuple(float(h) for h in dx)
        if directions is None:
            directions = (0,) if grid.height == 1 else (0, 1)
        self.directions = tuple(directions)
        cells = np.arange(grid.n_cells)
        self._nbr = {}
        self._ops = {}
        for s in self.directions:
            left = grid.shift(cells, s, -1)
            right = grid.shift(cells, s, 1)
            self._nbr[s] = (left, right)
            # cells without a neighbour get a zero one-sided derivative
            self._ops[s] = (
                CovariantOperator(grid, self.J, s, [(cells[left >= 0], BACKWARD)], J_inv=self.J_inv),
                CovariantOperator(grid, self.J, s, [(cells[right >= 0], FORWARD)], J_inv=self.J_inv),
            )

    # -------------------------------------------------------------- pieces
    def _cd(self, op: CovariantOperator, u):
        lay = self.layout
        out = op.matrix @ u
        d = lay.dim
        for s in lay.vectors:
            out[:, s:s + d] = op.apply(u[:, s:s + d])
        return out

    def slopes(self, u, direction: int):
        """Componentwise minmod of the backward and forward covariant derivatives."""
        back, fwd = self._ops[direction]
        h = self.dx[direction]
        return minmod(self._cd(back, u) / h, self._cd(fwd, u) / h)

    def reconstruct(self, u, slope, direction: int):
        """(u at the cell's + face, u at the cell's - face) in the cell's basis."""
        half = 0.5 * self.dx[direction] * slope
        return u + half, u - half

    def transport(self, w, to_cells, from_cells):
        """Parallel transport of per-cell components from ``from_cells`` to ``to_cells``."""
        M = np.einsum("nij,njk->nik", self.J_inv[to_cells], self.J[from_cells])
        return self.layout.transform(w, M)

    def rhs_direction(self, u, direction: int):
        u = np.asarray(u, dtype=float)
        n = u.shape[0]
        cells = np.arange(n)
        left, right = self._nbr[direction]
        slope = self.slopes(u, direction)
        u_hi, u_lo = self.reconstruct(u, slope, direction)   # u^-_{i+1/2}, u^+_{i-1/2}
        f_hi = self.flux_fn(u_hi, direction, cells)
        f_lo = self.flux_fn(u_lo, direction, cells)
        a_hi = self.wave_speed_fn(u_hi, direction, cells)
        a_lo = self.wave_speed_fn(u_lo, direction, cells)

        # neighbour-side values at the shared faces, brought into cell i's basis;
        # missing neighbours reuse the cell's own face value (transmissive)
        r = np.where(right >= 0, right, cells)
        l = np.where(left >= 0, left, cells)
        nb_hi = np.where((right >= 0)[:, None], u_lo[r], u_hi)
        nb_lo = np.where((left >= 0)[:, None], u_hi[l], u_lo)
        fnb_hi = np.where((right >= 0)[:, None], f_lo[r], f_hi)
        fnb_lo = np.where((left >= 0)[:, None], f_hi[l], f_lo)
        src_hi = np.where(right >= 0, r, cells)
        src_lo = np.where(left >= 0, l, cells)
        # the spectral radius is invariant under the similarity transform
        # induced by transport, so it is evaluated in the neighbour's basis
        a_nb_hi = np.where(right >= 0, a_lo[r], a_hi)
        a_nb_lo = np.where(left >= 0, a_hi[l], a_lo)
        pu_hi = self.transport(nb_hi, cells, src_hi)
        pu_lo = self.transport(nb_lo, cells, src_lo)
        pf_hi = self.transport(fnb_hi, cells, src_hi)
        pf_lo = self.transport(fnb_lo, cells, src_lo)
        lam_hi = np.maximum(a_hi, a_nb_hi)[:, None]
        lam_lo = np.maximum(a_lo, a_nb_lo)[:, None]
        h2 = 2.0 * self.dx[direction]
        return (-(pf_hi + f_hi) / h2 + lam_hi / h2 * (pu_hi - u_hi)
                + (f_lo + pf_lo) / h2 - lam_lo / h2 * (u_lo - pu_lo))

    def rhs(self, u):
        out = np.zeros_like(np.asarray(u, dtype=float))
        for s in self.directions:
            out += self.rhs_direction(u, s)
        return out

    def max_wave_speed(self, u) -> float:
        cells = np.arange(len(u))
        return max(float(np.max(self.wave_speed_fn(u, s, cells)) / self.dx[s]) for s in self.directions)

    def stable_dt(self, u, cfl: float = CFL) -> float:
        a = self.max_wave_speed(u)
        return np.inf if a == 0 else cfl / a


def rhs_1d(scheme: CentralScheme, u):
    return scheme.rhs_direction(u, 0)


def rhs_2d(scheme: CentralScheme, u):
    return scheme.rhs_direction(u, 0) + scheme.rhs_direction(u, 1)


def step_ssp2(scheme: CentralScheme, u, dt: float, cfl: float = CFL):
    """One two-stage strong-stability-preserving Runge-Kutta (Heun) step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    limit = scheme.stable_dt(u, cfl)
    if dt > limit * (1 + 1e-12):
        warnings.warn(f"dt = {dt:.3g} exceeds the CFL limit {limit:.3g}", CFLWarning, stacklevel=2)
    u = np.asarray(u, dtype=float)
    u1 = u + dt * scheme.rhs(u)
    return 0.5 * u + 0.5 * (u1 + dt * scheme.rhs(u1))


def cartesian_rhs_1d(u, flux_fn, wave_speed_fn, dx: float = 1.0):
    """Reference Cartesian scheme on a periodic 1D mesh (no basis changes)."""
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    cells = np.arange(n)
    back = (u - np.roll(u, 1, axis=0)) / dx
    fwd = (np.roll(u, -1, axis=0) - u) / dx
    slope = minmod(back, fwd)
    half = 0.5 * dx * slope
    u_hi, u_lo = u + half, u - half
    f_hi = flux_fn(u_hi, 0, cells)
    f_lo = flux_fn(u_lo, 0, cells)
    a_hi = wave_speed_fn(u_hi, 0, cells)
    a_lo = wave_speed_fn(u_lo, 0, cells)
    r = np.roll(cells, -1)
    l = np.roll(cells, 1)
    lam_hi = np.maximum(a_hi, a_lo[r])[:, None]
    lam_lo = np.maximum(a_lo, a_hi[l])[:, None]
    h2 = 2.0 * dx
    return (-(f_lo[r] + f_hi) / h2 + lam_hi / h2 * (u_lo[r] - u_hi)
            + (f_lo + f_hi[l]) / h2 - lam_lo / h2 * (u_lo - u_hi[l]))


# ------------------------------------------------------------------ demo problems
def ring_frames(n: int, radius: float = 1.0) -> np.ndarray:
    """Jacobians of a polar ring of n cells (tangent column scaled by the arc step)."""
    theta = 2 * np.pi * (np.arange(n) + 0.5) / n
    step = 2 * np.pi / n
    J = np.empty((n, 2, 2))
    J[:, 0, 0] = -radius * step * np.sin(theta)
    J[:, 1, 0] = radius * step * np.cos(theta)
    J[:, 0, 1] = np.cos(theta)
    J[:, 1, 1] = np.sin(theta)
    return J


def annulus_frames(width: int, height: int, r_in: float = 1.0, r_out: float = 2.0) -> np.ndarray:
    """Jacobians of a polar annulus mesh, rows ordered from the inner radius."""
    step_t = 2 * np.pi / width
    step_r = (r_out - r_in) / height
    col = np.arange(width * height) % width
    row = np.arange(width * height) // width
    theta = (col + 0.5) * step_t
    r = r_in + (row + 0.5) * step_r
    J = np.empty((width * height, 2, 2))
    J[:, 0, 0] = -r * step_t * np.sin(theta)
    J[:, 1, 0] = r * step_t * np.cos(theta)
    J[:, 0, 1] = step_r * np.cos(theta)
    J[:, 1, 1] = step_r * np.sin(theta)
    return J


def advection_flux(speed: float):
    def flux(u, direction, cells):
        return speed * u if direction == 0 else np.zeros_like(u)

    def wave(u, direction, cells):
        return np.full(len(u), abs(speed) if direction == 0 else 0.0)
    return flux, wave


def burgers_flux():
    """Scalar Burgers f = u^2 / 2 in every direction."""
    def flux(u, direction, cells):
        return 0.5 * u * u

    def wave(u, direction, cells):
        return np.abs(u[:, 0])
    return flux, wave


def carried_vector_flux():
    """Scalar density rho carrying a vector m: f = (rho^2 / 2, rho m) along xi^1.

    The flux has no explicit spatial dependence, so transport commutes with it.
    """
    def flux(u, direction, cells):
        out = np.zeros_like(u)
        if direction == 0:
            out[:, 0] = 0.5 * u[:, 0] ** 2
            out[:, 1:] = u[:, :1] * u[:, 1:]
        return out

    def wave(u, direction, cells):
        return np.abs(u[:, 0]) if direction == 0 else np.zeros(len(u))
    return flux, wave


def gaussian_ring_problem(n: int, speed: float = 1.0, radius: float = 1.0, width: float = 0.4):
    """Vector advection around a ring of two offset Gaussian Cartesian components.

    Returns ``(scheme, u0_local, cart0)`` where ``cart0`` is the initial
    Cartesian components on the same cells (the flat-mesh reference data).
    """
    J = ring_frames(n, radius)
    grid = StructuredGrid(n, 1, periodic=(True, False))
    layout = TensorLayout(2, vectors=(0,), dim=2)
    flux, wave = advection_flux(speed)
    scheme = CentralScheme(grid, J, layout, flux, wave, dx=(1.0, 1.0), directions=(0,))
    theta = 2 * np.pi * (np.arange(n) + 0.5) / n
    cart = np.stack([np.exp(-((theta - np.pi) / width) ** 2),
                     0.5 * np.exp(-((theta - 0.8 * np.pi) / width) ** 2)], axis=1)
    u0 = np.einsum("nij,nj->ni", scheme.J_inv, cart)
    return scheme, u0, cart


def total_variation(u) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sum(np.abs(np.roll(u, -1, axis=0) - u)))


def run(scheme: CentralScheme, u0, t_end: float, cfl: float = CFL, snapshot: Callable | None = None):
    """March with SSP-RK2 at the CFL-limited step until t_end."""
    u = np.array(u0, dtype=float)
    t = 0.0
    k = 0
    while t < t_end - 1e-14:
        dt = min(scheme.stable_dt(u, cfl), t_end - t)
        u = step_ssp2(scheme, u, dt, cfl)
        t += dt
        k += 1
        if snapshot is not None:
            snapshot(k, t, u)
    return u
