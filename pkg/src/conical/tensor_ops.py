"""Discrete covariant derivatives and parallel transport from sum-to-zero stencils.

Any stencil whose coefficients sum to zero can be rewritten as a weighted sum
of differences.  Each difference picks up a Jacobian correction term so that,
in cell ``c``, the operator acting on mesh-basis components satisfies

    J_c @ CD_s(u) == D_s(J @ u)

exactly, i.e. the curved-mesh derivative is the plain stencil applied to the
Cartesian components, pulled back into the local basis.  Fields are stored as
arrays with the cell index first, e.g. ``(N, d)`` for vectors and
``(N, d, d)`` for rank-2 tensors; Jacobians are ``(N, d, d)``.
"""

from __future__ import annotations

import functools
import string
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class StencilError(ValueError):
    pass


@dataclass(frozen=True)
class Stencil:
    """Coefficients over signed offsets along one mesh direction."""
    offsets: tuple
    coefficients: tuple

    def __post_init__(self):
        if len(self.offsets) != len(self.coefficients):
            raise StencilError("offsets and coefficients differ in length")
        if len(set(self.offsets)) != len(self.offsets):
            raise StencilError("repeated offset in stencil")

    @classmethod
    def from_pairs(cls, entries):
        offs, coefs = zip(*entries)
        return cls(tuple(int(o) for o in offs), tuple(coefs))

    def coefficient_sum(self):
        return sum(self.coefficients)

    def as_dict(self):
        return dict(zip(self.offsets, self.coefficients))


@dataclass(frozen=True)
class DifferencePairs:
    """Weighted differences ``weight * (u[plus] - u[minus])``."""
    pairs: tuple  # of (weight, plus_offset, minus_offset)

    def expand(self) -> dict:
        out: dict = {}
        for w, kp, km in self.pairs:
            out[kp] = out.get(kp, 0) + w
            out[km] = out.get(km, 0) - w
        return {k: v for k, v in out.items() if v != 0}


def decompose_to_differences(stencil: Stencil, tol: float = 1e-14) -> DifferencePairs:
    """Rewrite a sum-to-zero stencil as weighted differences of pairs.

    Entries of equal magnitude and opposite sign at mirrored offsets are
    paired first, as ``(c_k, +k, -k)`` with k > 0.  Whatever is left is
    anchored at the first remaining entry a:
    ``sum_i phi_i u_i = sum_{i != a} phi_i (u_i - u_a)``.
    """
    total = stencil.coefficient_sum()
    if abs(float(total)) > tol:
        raise StencilError(f"stencil coefficients sum to {float(total):.3e}, not zero")
    coef = stencil.as_dict()
    pairs = []
    for k in sorted(stencil.offsets):
        if k <= 0 or k not in coef or -k not in coef:
            continue
        c = coef[k]
        if c != 0 and coef[-k] == -c:
            pairs.append((c, k, -k))
            del coef[k], coef[-k]
    rest = [k for k in stencil.offsets if k in coef]
    if rest:
        anchor = rest[0]
        for k in rest[1:]:
            if coef[k] != 0:
                pairs.append((coef[k], k, anchor))
    return DifferencePairs(tuple(pairs))


def _transform_slots(w: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Apply the per-cell matrix M (N, d, d) to every tensor slot of w (N, d, ..., d)."""
    rank = w.ndim - 1
    if rank == 0:
        return w
    letters = string.ascii_letters
    src = letters[:rank]
    dst = letters[rank:2 * rank]
    spec = ",".join(f"z{dst[i]}{src[i]}" for i in range(rank))
    return np.einsum(f"{spec},z{src}->z{dst}", *([M] * rank), w, optimize=True)


def _slot_product(M_left: np.ndarray, M_right: np.ndarray, w: np.ndarray) -> np.ndarray:
    """prod_l ML[i_l, j_l] * prod_l MR[j_l, m_l] * w[m_1..m_n] for single-cell inputs."""
    M = M_left @ M_right
    return np.einsum(_slot_spec(w.ndim), *([M] * w.ndim), w)


@functools.lru_cache(maxsize=None)
def _slot_spec(rank: int) -> str:
    """einsum spec applying one matrix to each of ``rank`` slots, e.g. 'ia,jb,ab->ij'."""
    out = string.ascii_lowercase[:rank]
    src = string.ascii_lowercase[rank:2 * rank]
    return ",".join(o + a for o, a in zip(out, src)) + f",{src}->{out}"


class StructuredGrid:
    """Logical (rows x cols) cell layout; xi^1 runs along a row.

    ``periodic`` gives periodicity per direction (xi^1, xi^2).
    """

    def __init__(self, width: int, height: int, periodic=(True, False)):
        self.width = width
        self.height = height
        self.periodic = tuple(periodic)

    @property
    def n_cells(self):
        return self.width * self.height

    def shift(self, cells, direction: int, offset: int):
        """Index of the cell ``offset`` steps from ``cells`` along ``direction``.

        Returns -1 where the step leaves a non-periodic direction.
        """
        cells = np.asarray(cells)
        row, col = np.divmod(cells, self.width)
        if direction == 0:
            col = col + offset
            if self.periodic[0]:
                col = np.mod(col, self.width)
            ok = (col >= 0) & (col < self.width)
        else:
            row = row + offset
            if self.periodic[1]:
                row = np.mod(row, self.height)
            ok = (row >= 0) & (row < self.height)
        return np.where(ok, row * self.width + col, -1)


class CovariantOperator:
    """A stencil-derived covariant derivative along one mesh direction.

    ``assignments`` is a sequence of ``(cells, stencil)``; each listed cell
    uses that stencil, cells not listed get a zero row.  The operator is
    independent of the field it acts on and is stored as a sparse scalar
    matrix acting on Cartesian components plus the per-cell frames.
    """

    def __init__(self, grid: StructuredGrid, J: np.ndarray, direction: int,
                 assignments: Sequence, J_inv: np.ndarray | None = None):
        self.grid = grid
        self.direction = direction
        self.J = np.asarray(J, dtype=float)
        self.J_inv = np.linalg.inv(self.J) if J_inv is None else np.asarray(J_inv)
        self.stencil_of = {}
        self.pairs_of = {}
        rows, cols, vals = [], [], []
        for cells, stencil in assignments:
            cells = np.atleast_1d(np.asarray(cells, dtype=int))
            pairs = decompose_to_differences(stencil)
            for c in cells:
                self.stencil_of[int(c)] = stencil
                self.pairs_of[int(c)] = pairs
            for off, coef in zip(stencil.offsets, stencil.coefficients):
                src = grid.shift(cells, direction, off)
                if np.any(src < 0):
                    bad = int(cells[np.argmax(src < 0)])
                    raise StencilError(f"cell {bad}: offset {off} leaves the mesh "
                                       f"in direction {direction}")
                rows.append(cells)
                cols.append(src)
                vals.append(np.full(cells.shape, float(coef)))
        n = grid.n_cells
        if rows:
            self.matrix = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n, n))
        else:
            self.matrix = sp.csr_matrix((n, n))
        self.matrix.sum_duplicates()

    @property
    def dim(self):
        return self.J.shape[-1]

    def plain(self, f: np.ndarray) -> np.ndarray:
        """Apply the stencil to each component independently (no basis correction)."""
        flat = f.reshape(f.shape[0], -1)
        return (self.matrix @ flat).reshape(f.shape)

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Covariant derivative of a rank-n field at every cell (folded form)."""
        if w.ndim == 1:
            return self.matrix @ w
        cart = _transform_slots(w, self.J)
        return _transform_slots(self.plain(cart), self.J_inv)

    def coo(self):
        """(target cells, source cells, coefficients) of the scalar stencil matrix."""
        m = self.matrix.tocoo()
        return m.row, m.col, m.data

    def source_cell(self, c: int, offset: int) -> int:
        k = int(self.grid.shift(c, self.direction, offset))
        if k < 0:
            raise StencilError(f"cell {c}: offset {offset} leaves the mesh")
        return k


def covariant_derivative_rankn(op: CovariantOperator, w: np.ndarray, c: int) -> np.ndarray:
    """Difference-pair form of the discrete covariant derivative at cell c.

    For every pair (phi, k+, k-):
        phi * [ (w[k+] - w[k-])
                + Jc^-1..(J[k+].. - Jc..) w[k+]
                + Jc^-1..(Jc.. - J[k-]..) w[k-] ]
    with the Jacobian products taken over every tensor slot.
    """
    rank = w.ndim - 1
    if rank < 1:
        raise StencilError("rank-0 fields have no basis correction; use the plain stencil")
    if c not in op.pairs_of:
        raise StencilError(f"operator has no stencil at cell {c}")
    J, Ji = op.J, op.J_inv
    Jc, Jci = J[c], Ji[c]
    out = np.zeros(w.shape[1:])
    for phi, kp_off, km_off in op.pairs_of[c].pairs:
        kp = op.source_cell(c, kp_off)
        km = op.source_cell(c, km_off)
        up, um = w[kp], w[km]
        # Jci Jc is the identity only up to roundoff; the literal form is kept
        plus_corr = _slot_product(Jci, J[kp], up) - _slot_product(Jci, Jc, up)
        minus_corr = _slot_product(Jci, Jc, um) - _slot_product(Jci, J[km], um)
        out = out + float(phi) * ((up - um) + plus_corr + minus_corr)
    return out


def covariant_derivative_rank1(op: CovariantOperator, u: np.ndarray, c: int) -> np.ndarray:
    return covariant_derivative_rankn(op, u, c)


def covariant_derivative_rank2(op: CovariantOperator, w: np.ndarray, c: int) -> np.ndarray:
    return covariant_derivative_rankn(op, w, c)


def parallel_transport(w_j: np.ndarray, J_i: np.ndarray, J_j: np.ndarray,
                       J_i_inv: np.ndarray | None = None) -> np.ndarray:
    """Transport tensor components from cell j into the basis of cell i.

    Two-point form:  w_i = w_j - Ji^-1..(Ji.. - Jj..) w_j  over every slot.
    """
    Ji_inv = np.linalg.inv(J_i) if J_i_inv is None else J_i_inv
    if w_j.ndim == 0:
        return w_j
    return w_j - (_slot_product(Ji_inv, J_i, w_j) - _slot_product(Ji_inv, J_j, w_j))


def _check_adjacent(grid: StructuredGrid, i: int, j: int):
    for d in (0, 1):
        for off in (-1, 1):
            if int(grid.shift(j, d, off)) == i:
                return
    raise StencilError(f"cells {j} and {i} are not adjacent")


def parallel_transport_rank1(u_j, i: int, j: int, grid: StructuredGrid, J, J_inv=None):
    _check_adjacent(grid, i, j)
    return parallel_transport(np.asarray(u_j), J[i], J[j],
                              None if J_inv is None else J_inv[i])


def parallel_transport_rank2(w_j, i: int, j: int, grid: StructuredGrid, J, J_inv=None):
    _check_adjacent(grid, i, j)
    return parallel_transport(np.asarray(w_j), J[i], J[j],
                              None if J_inv is None else J_inv[i])


def transport_along_path(w: np.ndarray, path: Sequence[int], grid: StructuredGrid, J):
    """Compose neighbour transports along a list of adjacent cells."""
    out = np.asarray(w)
    for a, b in zip(path[:-1], path[1:]):
        _check_adjacent(grid, b, a)
        out = parallel_transport(out, J[b], J[a])
    return out


def reference_christoffel(jac_fn: Callable, x, k: int, djac_fn: Callable | None = None,
                          h: float = 1e-4) -> np.ndarray:
    """Continuous connection coefficients Gamma_k = J^-1 dJ/dx^k at point x.

    Entry ``[j, i]`` is Gamma_k^j_i.  ``djac_fn(x, k)`` supplies the analytic
    derivative; without it a sixth-order central difference is used.
    """
    x = np.asarray(x, dtype=float)
    J = np.asarray(jac_fn(x), dtype=float)
    if djac_fn is not None:
        dJ = np.asarray(djac_fn(x, k), dtype=float)
    else:
        e = np.zeros_like(x)
        e[k] = h
        f = lambda t: np.asarray(jac_fn(x + t * e), dtype=float)
        dJ = (45 * (f(1) - f(-1)) - 9 * (f(2) - f(-2)) + (f(3) - f(-3))) / (60 * h)
    return np.linalg.solve(J, dJ)


def stencil_exact(stencil: Stencil) -> bool:
    """True when the coefficients sum to zero in exact rational arithmetic."""
    return sum(Fraction(c) if not isinstance(c, Fraction) else c
               for c in stencil.coefficients) == 0
