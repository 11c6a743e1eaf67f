"""Abstractly rectangular meshes on the unit sphere.

A mesh is stored as planar corner coordinates (the spherical slice projected
onto the XY plane).  Cells are numbered left to right, bottom to top, so cell
``i`` has neighbours ``i +- 1`` in xi^1 (wrapping periodically) and
``i +- W`` in xi^2.  Corners are ordered to match the bilinear basis
functions b1..b4, i.e. (xi1, xi2) = (1, 0), (1, 1), (0, 1), (0, 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class MeshError(ValueError):
    """Invalid mesh geometry or topology."""


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SingularJacobianError(MeshError):
    def __init__(self, cell: int, det: float):
        self.cell = cell
        self.det = det
        super().__init__(f"singular Jacobian in cell {cell} (det = {det:.3e})")


# corner k of a cell sits at (xi1, xi2) = _CORNER_XI[k]
_CORNER_XI = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]])


def project_to_sphere(x, y):
    """Map planar coordinates on the unit disk to (theta, phi) on the sphere.

    theta is the azimuth measured so that it decreases counter-clockwise in
    the plane, taking values in (-3pi/2, pi/2]; phi = arcsin(r) is the zenith
    angle.  Works elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r2 = x * x + y * y
    if np.any(r2 > 1.0 + 1e-15):
        raise MeshError("point outside the unit disk: x^2 + y^2 > 1")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        base = np.arctan(x / y)
    # y -> 0 limits: arctan(+-inf) = +-pi/2, origin maps to theta = 0
    base = np.where(y == 0.0, np.sign(x) * (math.pi / 2), base)
    theta = np.where(y < 0.0, base - math.pi, base)
    phi = np.arcsin(np.sqrt(np.minimum(r2, 1.0)))
    if theta.ndim == 0:
        return float(theta), float(phi)
    return theta, phi


def sphere_to_plane(theta, phi):
    """Inverse of :func:`project_to_sphere`."""
    r = np.sin(phi)
    return r * np.sin(theta), r * np.cos(theta)


def cell_basis(xi1: float, xi2: float):
    """Bilinear corner basis values and their derivatives.

    Returns ``(b, db_dxi1, db_dxi2)``, each of length 4.
    """
    assert 0.0 <= xi1 <= 1.0 and 0.0 <= xi2 <= 1.0
    b = np.array([
        xi1 * (1 - xi2),
        xi1 * xi2,
        (1 - xi1) * xi2,
        (1 - xi1) * (1 - xi2),
    ])
    d1 = np.array([1 - xi2, xi2, -xi2, -(1 - xi2)])
    d2 = np.array([-xi1, xi1, 1 - xi1, -(1 - xi1)])
    return b, d1, d2


def jacobian_x_theta(theta, phi):
    """Jacobian of (x, y, z) with respect to (theta, phi, r) on the unit sphere.

    Vectorised over leading dimensions of ``theta``/``phi``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    zero = np.zeros_like(st)
    rows = [
        [-st * sp, ct * cp, ct * sp],
        [ct * sp, st * cp, st * sp],
        [zero, -sp, cp],
    ]
    return np.moveaxis(np.array(rows), (0, 1), (-2, -1))


def spherical_point(theta, phi):
    """Cartesian position on the unit sphere consistent with jacobian_x_theta."""
    return np.stack([np.cos(theta) * np.sin(phi),
                     np.sin(theta) * np.sin(phi),
                     np.cos(phi)], axis=-1)


@dataclass(frozen=True)
class QuadMesh:
    width: int
    height: int
    corners: np.ndarray  # (W*H, 4, 2)
    periodic_seam: bool = True

    def __post_init__(self):
        c = np.asarray(self.corners, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "corners", c)

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    def row_col(self, i):
        return np.divmod(i, self.width)

    def index(self, row, col):
        return np.asarray(row) * self.width + np.mod(col, self.width)

    def left(self, i):
        row, col = self.row_col(i)
        return self.index(row, col - 1)

    def right(self, i):
        row, col = self.row_col(i)
        return self.index(row, col + 1)

    def validate(self):
        """Check the QuadMesh invariants; raise MeshError naming the failure."""
        W, H = self.width, self.height
        c = self.corners
        if W < 8 or H < 4:
            raise MeshError(f"mesh too small: W={W}, H={H} (need W >= 8, H >= 4)")
        if c.shape != (W * H, 4, 2):
            raise MeshError(f"corner array has shape {c.shape}, expected {(W * H, 4, 2)}")
        if not np.all(np.isfinite(c)):
            raise MeshError("non-finite corner coordinate")
        if np.any(np.einsum("nkd,nkd->nk", c, c) > 1.0):
            raise MeshError("unit-disk check failed: a corner has x^2 + y^2 > 1")
        grid = c.reshape(H, W, 4, 2)
        # right edge (corners 1, 2) of each cell vs left edge (4, 3) of its right neighbour
        nxt = np.roll(grid, -1, axis=1)
        if not (np.array_equal(grid[:, :, 0], nxt[:, :, 3])
                and np.array_equal(grid[:, :, 1], nxt[:, :, 2])):
            bad = np.argwhere(np.any(grid[:, :, 0] != nxt[:, :, 3], axis=-1)
                              | np.any(grid[:, :, 1] != nxt[:, :, 2], axis=-1))[0]
            raise MeshError(f"shared-edge check failed: right edge of cell "
                            f"{bad[0] * W + bad[1]} does not match its right neighbour")
        # top edge (2, 3) vs bottom edge (1, 4) of the cell above
        if not (np.array_equal(grid[:-1, :, 1], grid[1:, :, 0])
                and np.array_equal(grid[:-1, :, 2], grid[1:, :, 3])):
            bad = np.argwhere(np.any(grid[:-1, :, 1] != grid[1:, :, 0], axis=-1)
                              | np.any(grid[:-1, :, 2] != grid[1:, :, 3], axis=-1))[0]
            raise MeshError(f"shared-edge check failed: top edge of cell "
                            f"{bad[0] * W + bad[1]} does not match the cell above")
        return self

    def cell_centers_planar(self) -> np.ndarray:
        return self.corners.mean(axis=1)


@dataclass(frozen=True)
class CellFrames:
    """Per-cell bases at cell centres, stacked over cells."""
    theta_phi_corners: np.ndarray  # (N, 4, 2), unwrapped
    theta_phi_center: np.ndarray   # (N, 2)
    J: np.ndarray                  # (N, 3, 3)
    J_inv: np.ndarray
    G: np.ndarray
    G_inv: np.ndarray
    J_x_theta: np.ndarray = field(repr=False)
    J_theta_xi: np.ndarray = field(repr=False)

    def __len__(self):
        return self.J.shape[0]


def unwrap_theta(theta_corners: np.ndarray) -> np.ndarray:
    """Shift corner azimuths by multiples of 2pi to lie within pi of corner 1."""
    ref = theta_corners[..., :1]
    return theta_corners - 2 * math.pi * np.round((theta_corners - ref) / (2 * math.pi))


def build_cell_frames(mesh: QuadMesh, det_tol: float = 1e-12) -> CellFrames:
    theta, phi = project_to_sphere(mesh.corners[..., 0], mesh.corners[..., 1])
    theta = unwrap_theta(np.atleast_2d(theta))
    phi = np.atleast_2d(phi)
    _, d1, d2 = cell_basis(0.5, 0.5)
    # J_{theta -> xi} = [[th_1, th_2, 0], [ph_1, ph_2, 0], [0, 0, 1]]
    n = mesh.n_cells
    Jtx = np.zeros((n, 3, 3))
    Jtx[:, 0, 0] = theta @ d1
    Jtx[:, 0, 1] = theta @ d2
    Jtx[:, 1, 0] = phi @ d1
    Jtx[:, 1, 1] = phi @ d2
    Jtx[:, 2, 2] = 1.0
    b, _, _ = cell_basis(0.5, 0.5)
    th_c = theta @ b
    ph_c = phi @ b
    Jxt = jacobian_x_theta(th_c, ph_c)
    J = Jxt @ Jtx
    det = np.linalg.det(J)
    bad = np.flatnonzero(np.abs(det) < det_tol)
    if bad.size:
        raise SingularJacobianError(int(bad[0]), float(det[bad[0]]))
    J_inv = np.linalg.inv(J)
    G = np.einsum("nhi,nhj->nij", J, J)
    G_inv = np.einsum("nkl,nil->nki", J_inv, J_inv)
    tp = np.stack([theta, phi], axis=-1)
    for arr in (tp, J, J_inv, G, G_inv, Jxt, Jtx):
        arr.setflags(write=False)
    return CellFrames(tp, np.stack([th_c, ph_c], axis=-1), J, J_inv, G, G_inv, Jxt, Jtx)


def _stretched_fractions(n: int, stretch: float) -> np.ndarray:
    """n+1 monotone fractions 0..1 with consecutive spacings growing by ``stretch``."""
    if stretch == 1.0:
        return np.linspace(0.0, 1.0, n + 1)
    steps = stretch ** np.arange(n)
    s = np.concatenate([[0.0], np.cumsum(steps)])
    return s / s[-1]


def generate_cone_mesh(body_radius_fn: Callable[[np.ndarray], np.ndarray], width: int,
                       height: int, outer_phi: float = math.pi / 3,
                       stretch: float = 1.02, alpha0: float = 0.0) -> QuadMesh:
    """Algebraic body-fitted mesh between a body curve and an outer circle.

    ``body_radius_fn(alpha)`` gives the planar radius of the body at planar
    polar angle ``alpha``.  Mesh lines run radially at equally spaced
    ``alpha``; along each line the zenith angle is distributed from the body to
    ``outer_phi`` with spacings growing geometrically by ``stretch`` away from
    the body.  xi^1 runs clockwise in the plane so that corners come out
    counter-clockwise.
    """
    if stretch < 1.0:
        raise MeshError(f"stretch must be >= 1, got {stretch}")
    if not 0.0 < outer_phi <= math.pi / 2:
        raise MeshError(f"outer_phi must be in (0, pi/2], got {outer_phi}")
    alpha = alpha0 - 2 * math.pi * np.arange(width + 1) / width
    rb = np.asarray(body_radius_fn(alpha), dtype=float) * np.ones_like(alpha)
    r_out = math.sin(outer_phi)
    if np.any(rb <= 0.0) or np.any(rb >= r_out):
        raise MeshError("body curve must lie strictly inside the outer boundary")
    phi_b = np.arcsin(rb)
    s = _stretched_fractions(height, stretch)
    phi = phi_b[None, :] + (outer_phi - phi_b)[None, :] * s[:, None]  # (H+1, W+1)
    r = np.sin(phi)
    r[0] = rb
    r[-1] = r_out
    nodes = np.stack([r * np.cos(alpha), r * np.sin(alpha)], axis=-1)
    nodes[:, -1] = nodes[:, 0]  # close the seam bitwise
    corners = np.stack([
        nodes[:-1, 1:],   # b1: (xi1, xi2) = (1, 0)
        nodes[1:, 1:],    # b2: (1, 1)
        nodes[1:, :-1],   # b3: (0, 1)
        nodes[:-1, :-1],  # b4: (0, 0)
    ], axis=2).reshape(width * height, 4, 2)
    return QuadMesh(width, height, corners).validate()


def circular_body(half_angle: float):
    r = math.sin(half_angle)
    return lambda alpha: np.full_like(np.asarray(alpha, dtype=float), r)


def elliptic_body(semi_major: float, aspect: float, rotation: float = 0.0):
    """Planar ellipse with semi-axes ``semi_major`` (along x) and semi_major/aspect."""
    a = semi_major
    b = semi_major / aspect

    def radius(alpha):
        t = np.asarray(alpha, dtype=float) - rotation
        return a * b / np.sqrt((b * np.cos(t)) ** 2 + (a * np.sin(t)) ** 2)
    return radius


def aircraft_body(scale: float = 0.12):
    """Rough smooth outline with a fuselage, wings and a fin (Fourier radius)."""
    def radius(alpha):
        t = np.asarray(alpha, dtype=float)
        wings = 1.2 * np.cos(t) ** 8
        fin = 0.5 * np.exp(-((np.mod(t - math.pi / 2 + math.pi, 2 * math.pi) - math.pi) / 0.25) ** 2)
        return scale * (0.45 + wings + fin)
    return radius


def save_mesh(mesh: QuadMesh, path) -> None:
    lines = [f"# conical quad mesh: W H, then one cell per line (x1 y1 ... x4 y4)",
             f"{mesh.width} {mesh.height}"]
    for cell in mesh.corners:
        lines.append(" ".join(repr(float(v)) for v in cell.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> QuadMesh:
    header = None
    records = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if header is None:
            if len(parts) != 2:
                raise MeshParseError("header must be 'W H'", lineno)
            try:
                header = (int(parts[0]), int(parts[1]))
            except ValueError:
                raise MeshParseError(f"bad header {line!r}", lineno) from None
            continue
        if len(parts) != 8:
            raise MeshParseError(f"expected 8 values per cell, got {len(parts)}", lineno)
        try:
            records.append([float(p) for p in parts])
        except ValueError:
            raise MeshParseError(f"non-numeric value in {line!r}", lineno) from None
    if header is None:
        raise MeshParseError("empty mesh file")
    W, H = header
    if len(records) != W * H:
        raise MeshParseError(f"header declares {W}x{H}={W * H} cells but file has "
                             f"{len(records)} records")
    corners = np.array(records, dtype=float).reshape(W * H, 4, 2)
    return QuadMesh(W, H, corners).validate()
