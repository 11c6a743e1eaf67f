"""Steady conical residual, Jacobian and div-B constraint on a W x H mesh.

Rows of the global system are ordered cell-major: unknown ``q`` of cell ``c``
sits at ``c * nu + q`` with ``nu`` = 5 (Euler) or 8 (MHD).  The top row of
cells carries free-stream Dirichlet values pinned by identity equations; the
bottom row is the body, where the xi^2 velocity (and for MHD the xi^2 field)
equation is replaced by the continuation pin.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction as Fr
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import physics as ph
from .mesh import CellFrames, QuadMesh
from .tensor_ops import CovariantOperator, Stencil, StructuredGrid

INTERIOR = Stencil((-2, -1, 1, 2), (Fr(1, 12), Fr(-2, 3), Fr(2, 3), Fr(-1, 12)))
NEAR_TOP = Stencil((-2, -1, 0, 1), (Fr(1, 6), Fr(-1), Fr(1, 2), Fr(1, 3)))
NEAR_BOTTOM = Stencil((-1, 0, 1, 2), (Fr(-1, 3), Fr(-1, 2), Fr(1), Fr(-1, 6)))
BOTTOM = Stencil((0, 1, 2), (Fr(-3, 2), Fr(2), Fr(-1, 2)))
AVERAGE = Stencil((-1, 0, 1), (Fr(-1), Fr(2), Fr(-1)))
BOTTOM_AVERAGE = Stencil((0, 1), (Fr(1), Fr(-1)))


class PositivityError(ValueError):
    def __init__(self, cells):
        self.cells = np.asarray(cells)
        super().__init__(f"non-positive density or energy in cells {self.cells[:10].tolist()}"
                         + (" ..." if self.cells.size > 10 else ""))


def _scaled(stencil: Stencil, factor: float) -> Stencil:
    return Stencil(stencil.offsets, tuple(c * factor for c in stencil.coefficients))


@dataclass
class StencilBank:
    d1: CovariantOperator
    d2: CovariantOperator
    visc1: CovariantOperator
    visc2: CovariantOperator
    stencils: dict

    @property
    def derivatives(self):
        return (self.d1, self.d2)


def build_stencil_bank(mesh: QuadMesh, frames: CellFrames, c_visc: float = 0.5) -> StencilBank:
    W, H = mesh.width, mesh.height
    if H < 4:
        raise ValueError("need at least 4 rows")
    grid = StructuredGrid(W, H, periodic=(True, False))
    rows = np.arange(mesh.n_cells) // W
    active = np.flatnonzero(rows < H - 1)
    interior2 = np.flatnonzero((rows >= 2) & (rows <= H - 3))
    J, Ji = frames.J, frames.J_inv
    d1 = CovariantOperator(grid, J, 0, [(active, INTERIOR)], J_inv=Ji)
    d2 = CovariantOperator(grid, J, 1, [
        (np.flatnonzero(rows == 0), BOTTOM),
        (np.flatnonzero(rows == 1), NEAR_BOTTOM),
        (interior2, INTERIOR),
        (np.flatnonzero(rows == H - 2), NEAR_TOP),
    ], J_inv=Ji)
    avg = _scaled(AVERAGE, c_visc)
    visc1 = CovariantOperator(grid, J, 0, [(active, avg)], J_inv=Ji)
    visc2 = CovariantOperator(grid, J, 1, [
        (np.flatnonzero(rows == 0), _scaled(BOTTOM_AVERAGE, c_visc)),
        (np.flatnonzero((rows >= 1) & (rows <= H - 2)), avg),
    ], J_inv=Ji)
    stencils = {"interior": INTERIOR, "near_top": NEAR_TOP, "near_bottom": NEAR_BOTTOM,
                "bottom": BOTTOM, "visc": AVERAGE, "bottom_visc": BOTTOM_AVERAGE}
    return StencilBank(d1, d2, visc1, visc2, stencils)


@dataclass
class ResidualSystem:
    residual: np.ndarray           # (N, nu)
    jacobian: sp.csr_matrix | None
    divB: sp.csr_matrix | None
    c_visc: float

    @property
    def l2(self) -> float:
        return float(np.linalg.norm(self.residual))

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.residual)))


class ConicalDiscretization:
    """Residual/Jacobian assembler for one mesh, gas and free stream."""

    def __init__(self, mesh: QuadMesh, frames: CellFrames, gas: ph.GasModel,
                 freestream: ph.FreeStream, c_visc: float = 0.5, system: str = "euler"):
        if system not in ("euler", "mhd"):
            raise ValueError(f"unknown system {system!r}")
        self.mesh = mesh
        self.frames = frames
        self.gas = gas
        self.freestream = freestream
        self.c_visc = c_visc
        self.system = system
        self.mhd = system == "mhd"
        self.nu = ph.N_MHD if self.mhd else ph.N_EULER
        self.bank = build_stencil_bank(mesh, frames, c_visc)
        W, H = mesh.width, mesh.height
        N = mesh.n_cells
        self.n_cells = N
        rows = np.arange(N) // W
        self.top = np.flatnonzero(rows == H - 1)
        self.wall = np.flatnonzero(rows == 0)
        self.constrained_cells = np.flatnonzero(rows < H - 1)
        self.U_inf = self.freestream_state()
        self._prepare_entries()

    # ------------------------------------------------------------------ setup
    def freestream_state(self) -> np.ndarray:
        """Free-stream Cartesian tensors expressed in every cell's local basis."""
        fs = self.freestream
        N = self.n_cells
        U = np.zeros((N, self.nu))
        U[:, ph.RHO] = 1.0
        vel = ph.freestream_velocity(fs.aoa, fs.roll)
        U[:, ph.VEL] = self.frames.J_inv @ vel
        U[:, ph.E] = ph.freestream_energy(self.gas, fs.mach)
        if self.mhd:
            U[:, ph.MAG] = self.frames.J_inv @ np.asarray(fs.b_cartesian, dtype=float)
        return U

    def pinned_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_cells, self.nu), dtype=bool)
        mask[self.top, :] = True
        mask[self.wall, ph.V2] = True
        if self.mhd:
            mask[self.wall, ph.B2] = True
        return mask

    def _prepare_entries(self):
        J, Ji = self.frames.J, self.frames.J_inv
        self._deriv = []
        for s, op in enumerate(self.bank.derivatives):
            c, k, phi = op.coo()
            Q = np.einsum("mij,mjk->mik", Ji[c], J[k])
            self._deriv.append((s, c, k, phi, Q))
        visc = (self.bank.visc1.matrix + self.bank.visc2.matrix).tocoo()
        Qv = np.einsum("mij,mjk->mik", Ji[visc.row], J[visc.col])
        self._visc = (visc.row, visc.col, visc.data, Qv)
        self._visc_matrix = visc.tocsr()

    # --------------------------------------------------------------- residual
    def targets(self, fraction: float) -> np.ndarray:
        """Values the pinned unknowns are driven to at a continuation fraction."""
        T = self.U_inf.copy()
        T[self.wall, ph.V2] *= fraction
        if self.mhd:
            T[self.wall, ph.B2] *= fraction
        return T

    def fluxes(self, U):
        G, Gi = self.frames.G, self.frames.G_inv
        if self.mhd:
            return ph.mhd_fluxes(U, G, Gi, self.gas)
        return ph.euler_fluxes(U, G, Gi, self.gas)

    def contracted_rank1(self, f: np.ndarray) -> np.ndarray:
        """sum_beta CD_beta f^beta for a vector flux (N, 3)."""
        J, Ji = self.frames.J, self.frames.J_inv
        cart = np.einsum("nij,nj->ni", J, f)
        out = np.zeros(f.shape[0])
        for s, op in enumerate(self.bank.derivatives):
            y = op.matrix @ cart
            out += np.einsum("nl,nl->n", Ji[:, s, :], y)
        return out

    def contracted_rank2(self, T: np.ndarray) -> np.ndarray:
        """sum_beta CD_beta T^{k beta} for a tensor flux (N, 3, 3) -> (N, 3)."""
        J, Ji = self.frames.J, self.frames.J_inv
        cart = np.einsum("nia,nab,njb->nij", J, T, J)
        out = np.zeros(T.shape[:2])
        for s, op in enumerate(self.bank.derivatives):
            y = (op.matrix @ cart.reshape(-1, 9)).reshape(-1, 3, 3)
            out += np.einsum("nka,nab,nb->nk", Ji, y, Ji[:, s, :])
        return out

    def viscous(self, U: np.ndarray) -> np.ndarray:
        J, Ji = self.frames.J, self.frames.J_inv
        V = self._visc_matrix
        out = np.zeros_like(U)
        out[:, ph.RHO] = V @ U[:, ph.RHO]
        out[:, ph.E] = V @ U[:, ph.E]
        out[:, ph.VEL] = np.einsum("nij,nj->ni", Ji, V @ np.einsum("nij,nj->ni", J, U[:, ph.VEL]))
        if self.mhd:
            out[:, ph.MAG] = np.einsum("nij,nj->ni", Ji, V @ np.einsum("nij,nj->ni", J, U[:, ph.MAG]))
        return out

    def div_b(self, U: np.ndarray) -> np.ndarray:
        return self.contracted_rank1(U[:, ph.MAG])

    def interior_residual(self, U: np.ndarray) -> np.ndarray:
        """Discrete equations in every cell, before boundary pins are applied."""
        R = np.zeros_like(U)
        if self.mhd:
            f_rho, f_mom, f_e, f_mag, powell = self.fluxes(U)
        else:
            f_rho, f_mom, f_e = self.fluxes(U)
        R[:, ph.RHO] = self.contracted_rank1(f_rho)
        R[:, ph.VEL] = self.contracted_rank2(f_mom)
        R[:, ph.E] = self.contracted_rank1(f_e)
        if self.mhd:
            R[:, ph.MAG] = self.contracted_rank2(f_mag)
            R += powell * self.div_b(U)[:, None]
        R += self.viscous(U)
        return R

    def residual(self, U: np.ndarray, fraction: float = 0.0) -> np.ndarray:
        R = self.interior_residual(U)
        mask = self.pinned_mask()
        R[mask] = (U - self.targets(fraction))[mask]
        return R

    def check_positive(self, U: np.ndarray):
        bad = np.flatnonzero((U[:, ph.RHO] <= 0) | (U[:, ph.E] <= 0))
        if bad.size:
            raise PositivityError(bad)

    def assemble(self, U: np.ndarray, fraction: float = 0.0, jacobian: bool = True) -> ResidualSystem:
        R = self.residual(U, fraction)
        Jm = self.jacobian(U) if jacobian else None
        C = self.divb_matrix() if self.mhd else None
        return ResidualSystem(R, Jm, C, self.c_visc)

    # --------------------------------------------------------------- jacobian
    def jacobian(self, U: np.ndarray) -> sp.csr_matrix:
        nu = self.nu
        G, Gi = self.frames.G, self.frames.G_inv
        if self.mhd:
            d_rho, d_mom, d_e, d_mag, d_pow = ph.mhd_flux_jacobians(U, G, Gi, self.gas)
        else:
            d_rho, d_mom, d_e = ph.euler_flux_jacobians(U, G, Gi, self.gas)
        rows, cols, vals = [], [], []
        eq = np.arange(nu)

        def add_blocks(c, k, blocks):
            # blocks: (M, nu, nu) placed at rows c*nu.., cols k*nu..
            r = (c[:, None, None] * nu + eq[None, :, None])
            q = (k[:, None, None] * nu + eq[None, None, :])
            rows.append(np.broadcast_to(r, blocks.shape).ravel())
            cols.append(np.broadcast_to(q, blocks.shape).ravel())
            vals.append(blocks.ravel())

        divb_parts = []
        for s, c, k, phi, Q in self._deriv:
            Qs = Q[:, s, :]
            B = np.zeros((c.size, nu, nu))
            B[:, ph.RHO, :] = np.einsum("ml,mlu->mu", Qs, d_rho[k])
            B[:, ph.VEL, :] = np.einsum("mia,mabu,mb->miu", Q, d_mom[k], Qs)
            B[:, ph.E, :] = np.einsum("ml,mlu->mu", Qs, d_e[k])
            if self.mhd:
                B[:, ph.MAG, :] = np.einsum("mia,mabu,mb->miu", Q, d_mag[k], Qs)
                divb_parts.append((c, k, phi[:, None] * Qs))
            add_blocks(c, k, phi[:, None, None] * B)

        vr, vc, vphi, Qv = self._visc
        B = np.zeros((vr.size, nu, nu))
        B[:, ph.RHO, ph.RHO] = 1.0
        B[:, ph.E, ph.E] = 1.0
        B[:, ph.VEL, ph.VEL] = Qv
        if self.mhd:
            B[:, ph.MAG, ph.MAG] = Qv
        add_blocks(vr, vc, vphi[:, None, None] * B)

        if self.mhd:
            # d/dU [powell_c * divB_c] = powell_c (x) d divB_c + divB_c d powell_c
            _, _, _, _, powell = self.fluxes(U)
            dvb = self.div_b(U)
            for c, k, coef in divb_parts:
                B = np.zeros((c.size, nu, nu))
                B[:, :, ph.MAG] = powell[c][:, :, None] * coef[:, None, :]
                add_blocks(c, k, B)
            cells = np.arange(self.n_cells)
            add_blocks(cells, cells, dvb[:, None, None] * d_pow)

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        pinned = np.flatnonzero(self.pinned_mask().ravel())
        keep = ~np.isin(rows, pinned)
        rows = np.concatenate([rows[keep], pinned])
        cols = np.concatenate([cols[keep], pinned])
        vals = np.concatenate([vals[keep], np.ones(pinned.size)])
        n = self.n_cells * nu
        out = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        out.eliminate_zeros()
        return out

    def divb_matrix(self) -> sp.csr_matrix:
        """Linear map U -> CD_beta B^beta on every non-Dirichlet cell."""
        nu = self.nu
        cells = self.constrained_cells
        row_of = -np.ones(self.n_cells, dtype=int)
        row_of[cells] = np.arange(cells.size)
        rows, cols, vals = [], [], []
        for s, c, k, phi, Q in self._deriv:
            keep = row_of[c] >= 0
            coef = phi[keep, None] * Q[keep, s, :]
            rows.append(np.repeat(row_of[c[keep]], 3))
            cols.append((k[keep, None] * nu + np.arange(ph.B1, ph.B1 + 3)[None, :]).ravel())
            vals.append(coef.ravel())
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(cells.size, self.n_cells * nu))


def apply_wall_bc(disc: ConicalDiscretization, U: np.ndarray, fraction: float) -> np.ndarray:
    """Set the wall-normal velocity (and field) to ``fraction`` of free stream."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    out = U.copy()
    out[disc.wall, ph.V2] = fraction * disc.U_inf[disc.wall, ph.V2]
    if disc.mhd:
        out[disc.wall, ph.B2] = fraction * disc.U_inf[disc.wall, ph.B2]
    return out


def assemble_euler_residual(disc: ConicalDiscretization, U, fraction=0.0) -> ResidualSystem:
    return disc.assemble(U, fraction, jacobian=False)


def assemble_mhd_residual(disc: ConicalDiscretization, U, fraction=0.0) -> ResidualSystem:
    if not disc.mhd:
        raise ValueError("discretization was built for the Euler system")
    return disc.assemble(U, fraction, jacobian=False)


def assemble_jacobian(disc: ConicalDiscretization, U) -> sp.csr_matrix:
    return disc.jacobian(U)


def write_triplets(matrix, path) -> None:
    """Dump a sparse matrix as 'row col value' lines (0-based)."""
    m = sp.coo_matrix(matrix)
    with open(Path(path), "w") as fh:
        fh.write(f"# {m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for r, c, v in zip(m.row, m.col, m.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def read_triplets(path) -> sp.csr_matrix:
    lines = Path(path).read_text().splitlines()
    n, m, _ = (int(t) for t in lines[0].lstrip("# ").split())
    data = np.loadtxt(lines[1:], ndmin=2) if len(lines) > 1 else np.zeros((0, 3))
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(n, m))
