import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conical import physics as ph
from conical.discretization import (ConicalDiscretization, PositivityError, apply_wall_bc,
                                    assemble_euler_residual, assemble_mhd_residual,
                                    build_stencil_bank, read_triplets, write_triplets)
from conical.mesh import CellFrames, build_cell_frames, circular_body, generate_cone_mesh
from conical.physics import FreeStream, GasModel

from fixtures import BODIES, all_fixtures, mesh_fixture, random_freestream

GAS = GasModel()


def cone(W=16, H=10, half_angle=10.0):
    mesh = generate_cone_mesh(circular_body(math.radians(half_angle)), W, H)
    return mesh, build_cell_frames(mesh)


def perturbed(disc, rng, size=0.05):
    U = disc.U_inf.copy()
    U *= 1.0 + size * rng.uniform(-1, 1, size=U.shape)
    return U


def test_d1_fourth_order_on_smooth_scalar():
    errs = []
    for W in (16, 32, 64):
        mesh, fr = cone(W, 6)
        bank = build_stencil_bank(mesh, fr)
        th = fr.theta_phi_center[:, 0]
        f = np.sin(th) + 0.3 * np.cos(2 * th)
        exact = (np.cos(th) - 0.6 * np.sin(2 * th)) * fr.J_theta_xi[:, 0, 0]
        rows = np.arange(mesh.n_cells) // W
        errs.append(np.max(np.abs((bank.d1.matrix @ f - exact)[rows < 5])) * W)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 3.5)


def test_bottom_d2_exact_for_quadratic_rows():
    mesh, fr = cone(8, 6)
    bank = build_stencil_bank(mesh, fr)
    row = np.arange(mesh.n_cells) // 8
    f = 0.5 + 1.5 * row - 0.75 * row ** 2
    exact = 1.5 - 1.5 * row
    np.testing.assert_allclose((bank.d2.matrix @ f)[row == 0], exact[row == 0], atol=1e-14)
    np.testing.assert_allclose((bank.d2.matrix @ f)[row == 1], exact[row == 1], atol=1e-14)


@settings(max_examples=24, deadline=None)
@given(st.sampled_from(all_fixtures()), st.integers(0, 2 ** 32 - 1), st.booleans())
def test_uniform_state_exact(fixture, seed, mhd):
    mesh, fr = mesh_fixture(*fixture)
    fs = random_freestream(np.random.default_rng(seed), mhd)
    disc = ConicalDiscretization(mesh, fr, GAS, fs, 0.5, "mhd" if mhd else "euler")
    assert np.max(np.abs(disc.residual(disc.U_inf, 1.0))) <= 1e-12
    if mhd:
        assert np.max(np.abs(disc.divb_matrix() @ disc.U_inf.ravel())) <= 1e-12


@settings(max_examples=10, deadline=None)
@given(st.integers(10, 48), st.integers(6, 40), st.integers(0, 2 ** 32 - 1))
def test_uniform_state_residual_is_roundoff_on_any_mesh(W, H, seed):
    # mesh-basis components grow like the inverse cell size, and so does the
    # roundoff left in a constant Cartesian field after two basis changes
    mesh = generate_cone_mesh(BODIES["ellipse"], W, H)
    fr = build_cell_frames(mesh)
    fs = random_freestream(np.random.default_rng(seed), True)
    disc = ConicalDiscretization(mesh, fr, GAS, fs, 0.5, "mhd")
    bound = 50 * np.finfo(float).eps * np.max(np.abs(fr.J_inv)) ** 2
    assert np.max(np.abs(disc.interior_residual(disc.U_inf))) <= bound


def test_divb_of_constant_field_is_zero():
    mesh, fr = mesh_fixture("aircraft", (24, 14))
    fs = FreeStream(3.0, 0.2, 0.1, np.array([0.1, -0.3, 0.4]))
    disc = ConicalDiscretization(mesh, fr, GAS, fs, 0.5, "mhd")
    assert np.max(np.abs(disc.div_b(disc.U_inf))) <= 1e-12
    C = disc.divb_matrix()
    assert C.shape == (disc.constrained_cells.size, disc.n_cells * 8)


def _flat_frames(W, H):
    n = W * H
    eye = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
    tp = np.zeros((n, 4, 2))
    return CellFrames(tp, np.zeros((n, 2)), eye, eye.copy(), eye.copy(), eye.copy(),
                      eye.copy(), eye.copy())


def test_flat_frames_reduce_to_plain_stencils():
    mesh, _ = cone(12, 8)
    fr = _flat_frames(12, 8)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0), 0.5, "euler")
    rng = np.random.default_rng(0)
    f = rng.normal(size=(96, 3))
    T = rng.normal(size=(96, 3, 3))
    d1, d2 = disc.bank.d1.matrix, disc.bank.d2.matrix
    np.testing.assert_array_equal(disc.contracted_rank1(f), d1 @ f[:, 0] + d2 @ f[:, 1])
    np.testing.assert_allclose(disc.contracted_rank2(T), d1 @ T[:, :, 0] + d2 @ T[:, :, 1],
                               atol=1e-14)
    U = perturbed(disc, rng)
    V = disc.bank.visc1.matrix + disc.bank.visc2.matrix
    np.testing.assert_allclose(disc.viscous(U), V @ U, atol=1e-14)


def test_residual_equivariant_under_azimuthal_shift():
    W, H = 16, 10
    mesh, fr = cone(W, H)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0), 0.5, "euler")
    rng = np.random.default_rng(1)
    U = perturbed(disc, rng)

    def shift(A, k):
        return np.roll(A.reshape(H, W, -1), k, axis=1).reshape(A.shape)
    for k in (1, 5):
        np.testing.assert_allclose(disc.residual(shift(U, k), 0.4),
                                   shift(disc.residual(U, 0.4), k), atol=1e-12)


def test_zero_field_mhd_matches_euler_residual():
    mesh, fr = cone()
    fe = FreeStream(2.0, math.radians(15))
    de = ConicalDiscretization(mesh, fr, GAS, fe, 0.5, "euler")
    dm = ConicalDiscretization(mesh, fr, GAS, fe, 0.5, "mhd")
    rng = np.random.default_rng(2)
    Ue = perturbed(de, rng)
    Um = np.concatenate([Ue, np.zeros((len(Ue), 3))], axis=1)
    np.testing.assert_array_equal(assemble_mhd_residual(dm, Um, 0.3).residual[:, :5],
                                  assemble_euler_residual(de, Ue, 0.3).residual)
    with pytest.raises(ValueError):
        assemble_mhd_residual(de, Ue)


@pytest.mark.parametrize("system", ["euler", "mhd"])
def test_jacobian_matches_directional_differences(system):
    mesh, fr = cone(12, 8)
    b = 0.3 * ph.freestream_velocity(0.2, 0.0) if system == "mhd" else np.zeros(3)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0, 0.2, 0.0, b), 0.5, system)
    rng = np.random.default_rng(3)
    U = perturbed(disc, rng, 0.1)
    Jm = disc.jacobian(U)
    for _ in range(5):
        d = rng.normal(size=U.shape)
        h = 1e-6
        fd = (disc.residual(U + h * d, 0.5) - disc.residual(U - h * d, 0.5)).ravel() / (2 * h)
        jv = Jm @ d.ravel()
        assert np.linalg.norm(jv - fd) <= 1e-5 * np.linalg.norm(fd)


def test_interior_row_footprint_is_cross():
    W, H = 12, 10
    mesh, fr = cone(W, H)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0, 0.3), 0.5, "euler")
    Jm = disc.jacobian(perturbed(disc, np.random.default_rng(4)))
    c = 5 * W + 6
    cols = np.unique(Jm[c * 5:(c + 1) * 5].indices // 5)
    expected = {c, c - 1, c + 1, c - 2, c + 2, c - W, c + W, c - 2 * W, c + 2 * W}
    assert set(cols.tolist()) == expected


def test_pinned_rows_are_identity():
    W, H = 12, 8
    mesh, fr = cone(W, H)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0, 0.3), 0.5, "mhd")
    Jm = disc.jacobian(disc.U_inf).tocsr()
    pins = np.flatnonzero(disc.pinned_mask().ravel())
    sub = Jm[pins]
    assert sub.nnz == pins.size
    np.testing.assert_array_equal(sub.indices, pins)
    np.testing.assert_array_equal(sub.data, 1.0)
    top = np.arange((H - 1) * W, H * W)
    assert np.all(disc.pinned_mask()[top])


def test_wall_fraction_pins():
    mesh, fr = cone()
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0, 0.3, 0.0, np.array([0, 0.2, 0.1])),
                                 0.5, "mhd")
    U = disc.U_inf
    wall = disc.wall
    np.testing.assert_array_equal(apply_wall_bc(disc, U, 1.0), U)
    assert np.all(apply_wall_bc(disc, U, 0.0)[wall, ph.V2] == 0)
    half = apply_wall_bc(disc, U, 0.5)
    np.testing.assert_allclose(half[wall, ph.V2], 0.5 * U[wall, ph.V2])
    np.testing.assert_allclose(half[wall, ph.B2], 0.5 * U[wall, ph.B2])
    np.testing.assert_array_equal(half[wall, ph.V1], U[wall, ph.V1])
    with pytest.raises(ValueError):
        apply_wall_bc(disc, U, 1.5)
    R = disc.residual(U, 0.0)
    np.testing.assert_allclose(R[wall, ph.V2], U[wall, ph.V2])


def test_positivity_check():
    mesh, fr = cone()
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0), 0.5, "euler")
    U = disc.U_inf.copy()
    disc.check_positive(U)
    U[7, ph.E] = -1.0
    with pytest.raises(PositivityError, match="7"):
        disc.check_positive(U)


def test_triplet_round_trip(tmp_path):
    mesh, fr = cone(8, 4)
    disc = ConicalDiscretization(mesh, fr, GAS, FreeStream(2.0, 0.3), 0.5, "euler")
    Jm = disc.jacobian(perturbed(disc, np.random.default_rng(5)))
    write_triplets(Jm, tmp_path / "j.txt")
    back = read_triplets(tmp_path / "j.txt")
    assert (back != Jm).nnz == 0
