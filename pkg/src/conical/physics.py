"""Nondimensional perfect-gas and ideal-MHD model for the conical systems.

State arrays hold one row per cell.  Euler rows are (rho, v1, v2, V3, e);
MHD rows append (b1, b2, B3).  Velocity and field components live in the
mixed basis: the two surface slots are mesh components, the third is radial.
All flux functions accept stacked metrics ``G``/``G_inv`` of shape (N, 3, 3).

Flux derivatives are returned with the unknown index last, e.g. the
momentum flux derivative has shape (N, 3, 3, n_unknowns).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RHO, V1, V2, V3, E = 0, 1, 2, 3, 4
B1, B2, B3 = 5, 6, 7
VEL = slice(1, 4)
MAG = slice(5, 8)
N_EULER = 5
N_MHD = 8


class FreeStreamError(ValueError):
    pass


@dataclass(frozen=True)
class GasModel:
    gamma: float = 1.4

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")


@dataclass(frozen=True)
class FreeStream:
    mach: float
    aoa: float = 0.0
    roll: float = 0.0
    b_cartesian: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def b_magnitude(self) -> float:
        return float(np.linalg.norm(self.b_cartesian))


def pressure(gas: GasModel, rho, e):
    return (gas.gamma - 1.0) * rho * e


def _quad(G, a, b):
    return np.einsum("...i,...ij,...j->...", a, G, b)


def total_energy(state: np.ndarray, G: np.ndarray) -> np.ndarray:
    """e + |V|^2 / 2 with the norm taken in the metric G."""
    v = state[..., VEL]
    return state[..., E] + 0.5 * _quad(G, v, v)


def freestream_velocity(aoa: float, roll: float) -> np.ndarray:
    """Cartesian free-stream direction for a cone aligned with z."""
    rot_roll = np.array([[math.cos(roll), -math.sin(roll), 0.0],
                         [math.sin(roll), math.cos(roll), 0.0],
                         [0.0, 0.0, 1.0]])
    rot_aoa = np.array([[1.0, 0.0, 0.0],
                        [0.0, math.cos(aoa), math.sin(aoa)],
                        [0.0, -math.sin(aoa), math.cos(aoa)]])
    return rot_roll @ rot_aoa @ np.array([0.0, 0.0, 1.0])


def freestream_energy(gas: GasModel, mach: float) -> float:
    g = gas.gamma
    return 1.0 / (g * (g - 1.0) * mach ** 2)


def fast_magnetoacoustic_speed(b, mach: float, w, metric=None) -> float:
    """Nondimensional fast speed for a wave travelling along unit vector w."""
    b = np.asarray(b, dtype=float)
    w = np.asarray(w, dtype=float)
    G = np.eye(len(b)) if metric is None else np.asarray(metric)
    a2 = 1.0 / mach ** 2
    bb = float(b @ G @ b)
    bw = float(b @ G @ w)
    s = a2 + bb
    disc = max(s * s - 4.0 * a2 * bw * bw, 0.0)
    return math.sqrt(0.5 * (s + math.sqrt(disc)))


def validate_freestream(fs: FreeStream):
    """Return a list of violated conditions (empty when admissible)."""
    problems = []
    if not fs.mach > 1.0:
        problems.append(f"free stream must be supersonic: M = {fs.mach} <= 1")
    else:
        b2 = fs.b_magnitude ** 2
        bound = 1.0 - 1.0 / fs.mach ** 2
        if not b2 < bound:
            problems.append(f"magnetic field too strong: |B|^2 = {b2:.6g} >= "
                            f"1 - 1/M^2 = {bound:.6g}")
    return problems


def require_freestream(fs: FreeStream):
    problems = validate_freestream(fs)
    if problems:
        raise FreeStreamError("; ".join(problems))


def euler_fluxes(state: np.ndarray, G: np.ndarray, G_inv: np.ndarray, gas: GasModel):
    """Mass, momentum and energy fluxes (full 3-vectors / 3x3 tensors).

    Only the surface columns (beta = 1, 2) enter the contracted derivative,
    but the radial slot is carried so that the tensors transform correctly.
    """
    rho = state[..., RHO]
    v = state[..., VEL]
    e = state[..., E]
    P = pressure(gas, rho, e)
    Etot = e + 0.5 * _quad(G, v, v)
    f_rho = rho[..., None] * v
    f_mom = rho[..., None, None] * v[..., :, None] * v[..., None, :] + G_inv * P[..., None, None]
    f_e = ((rho * Etot + P)[..., None]) * v
    return f_rho, f_mom, f_e


def mhd_fluxes(state: np.ndarray, G: np.ndarray, G_inv: np.ndarray, gas: GasModel):
    """Ideal-MHD fluxes plus the divergence-source coefficients.

    Returns ``(f_rho, f_mom, f_e, f_mag, powell)`` where ``powell`` has one
    entry per equation (0, B, V.B, V) to be multiplied by the discrete div B.
    """
    rho = state[..., RHO]
    v = state[..., VEL]
    e = state[..., E]
    b = state[..., MAG]
    P = pressure(gas, rho, e)
    vv = _quad(G, v, v)
    bb = _quad(G, b, b)
    vb = _quad(G, v, b)
    Etot = e + 0.5 * vv
    f_rho = rho[..., None] * v
    f_mom = (rho[..., None, None] * v[..., :, None] * v[..., None, :]
             - b[..., :, None] * b[..., None, :]
             + G_inv * (P + 0.5 * bb)[..., None, None])
    f_e = (rho * Etot + P + bb)[..., None] * v - vb[..., None] * b
    f_mag = b[..., :, None] * v[..., None, :] - v[..., :, None] * b[..., None, :]
    powell = np.zeros(state.shape[:-1] + (N_MHD,))
    powell[..., VEL] = b
    powell[..., E] = vb
    powell[..., MAG] = v
    return f_rho, f_mom, f_e, f_mag, powell


def euler_flux_jacobians(state, G, G_inv, gas: GasModel):
    """Analytic derivatives of :func:`euler_fluxes` w.r.t. (rho, v1, v2, V3, e)."""
    return _flux_jacobians(state, G, G_inv, gas, mhd=False)


def mhd_flux_jacobians(state, G, G_inv, gas: GasModel):
    """Analytic derivatives of :func:`mhd_fluxes` w.r.t. all eight unknowns.

    Returns ``(d_rho, d_mom, d_e, d_mag, d_powell)``.
    """
    return _flux_jacobians(state, G, G_inv, gas, mhd=True)


def _flux_jacobians(state, G, G_inv, gas, mhd):
    g = gas.gamma
    nu = N_MHD if mhd else N_EULER
    lead = state.shape[:-1]
    rho = state[..., RHO]
    v = state[..., VEL]
    e = state[..., E]
    P = pressure(gas, rho, e)
    Gv = np.einsum("...ij,...j->...i", G, v)
    vv = np.einsum("...i,...i->...", v, Gv)
    eye = np.eye(3)

    d_rho = np.zeros(lead + (3, nu))
    d_rho[..., RHO] = v
    d_rho[..., VEL] = rho[..., None, None] * eye

    d_mom = np.zeros(lead + (3, 3, nu))
    d_mom[..., RHO] = v[..., :, None] * v[..., None, :] + G_inv * ((g - 1.0) * e)[..., None, None]
    # d(rho v_a v_b)/dv_c = rho (delta_ac v_b + v_a delta_bc)
    d_mom[..., VEL] = rho[..., None, None, None] * (
        eye[:, None, :] * v[..., None, :, None] + v[..., :, None, None] * eye[None, :, :])
    d_mom[..., E] = G_inv * ((g - 1.0) * rho)[..., None, None]

    # H = rho E + P (+ |B|^2 for MHD)
    H = g * rho * e + 0.5 * rho * vv
    dH = np.zeros(lead + (nu,))
    dH[..., RHO] = g * e + 0.5 * vv
    dH[..., VEL] = rho[..., None] * Gv
    dH[..., E] = g * rho

    if not mhd:
        d_e = v[..., :, None] * dH[..., None, :]
        d_e[..., VEL] += H[..., None, None] * eye
        return d_rho, d_mom, d_e

    b = state[..., MAG]
    Gb = np.einsum("...ij,...j->...i", G, b)
    bb = np.einsum("...i,...i->...", b, Gb)
    vb = np.einsum("...i,...i->...", v, Gb)

    # momentum: - b_a b_b + G_inv |B|^2 / 2
    d_mom[..., MAG] = (-(eye[:, None, :] * b[..., None, :, None] + b[..., :, None, None] * eye[None, :, :])
                       + G_inv[..., None] * Gb[..., None, None, :])

    H = H + bb
    dH[..., MAG] = 2.0 * Gb
    d_vb = np.zeros(lead + (nu,))
    d_vb[..., VEL] = Gb
    d_vb[..., MAG] = Gv
    d_e = v[..., :, None] * dH[..., None, :] - b[..., :, None] * d_vb[..., None, :]
    d_e[..., VEL] += H[..., None, None] * eye
    d_e[..., MAG] -= vb[..., None, None] * eye

    # induction flux b_i v_b - v_i b_b
    d_mag = np.zeros(lead + (3, 3, nu))
    d_mag[..., MAG] = eye[:, None, :] * v[..., None, :, None] - v[..., :, None, None] * eye[None, :, :]
    d_mag[..., VEL] = b[..., :, None, None] * eye[None, :, :] - eye[:, None, :] * b[..., None, :, None]

    d_powell = np.zeros(lead + (nu, nu))
    d_powell[..., VEL, MAG] = eye
    d_powell[..., E, :] = d_vb
    d_powell[..., MAG, VEL] = eye
    return d_rho, d_mom, d_e, d_mag, d_powell


def flux_jacobians(state, G, G_inv, gas: GasModel, mhd: bool = False):
    return _flux_jacobians(state, G, G_inv, gas, mhd)
