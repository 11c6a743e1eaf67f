import math
import warnings

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conical import physics as ph
from conical.discretization import ConicalDiscretization
from conical.mesh import build_cell_frames, circular_body, generate_cone_mesh
from conical.physics import FreeStream, GasModel
from conical.solver import (TRACE_FIELDS, ContinuationSchedule, RankDeficiencyWarning,
                            SingularSystemError, SolverError, independent_rows, newton_scalar,
                            newton_solve_euler, newton_solve_mhd, newton_step, solve_kkt,
                            write_trace)

GAS = GasModel()


def nullspace_reference(A, b, C, Z):
    """argmin ||A x - b|| subject to C x = Z, via an explicit null-space basis."""
    xp = np.linalg.lstsq(C, Z, rcond=None)[0]
    N = sla.null_space(C)
    y = np.linalg.lstsq(A @ N, b - A @ xp, rcond=None)[0]
    return xp + N @ y


def small_disc(system, aoa=20.0, b=0.0, W=12, H=8):
    mesh = generate_cone_mesh(circular_body(math.radians(10)), W, H)
    a = math.radians(aoa)
    fs = FreeStream(2.0, a, 0.0, b * ph.freestream_velocity(a, 0.0))
    return ConicalDiscretization(mesh, build_cell_frames(mesh), GAS, fs, 0.5, system)


def test_scalar_newton_first_iterate_and_quadratic_rate():
    its = newton_scalar(lambda u: u * u - 4, lambda u: 2 * u, 3.0)
    assert its[1] == pytest.approx(13 / 6, abs=1e-15)
    assert its[-1] == pytest.approx(2.0, abs=1e-14)
    err = np.abs(np.array(its) - 2.0)
    ratios = [err[k + 1] / err[k] ** 2 for k in range(len(err) - 1) if err[k + 1] > 0]
    assert max(ratios) < 0.3


def test_kkt_lagrange_example():
    # J = I, F chosen so the unconstrained target is (1, 2)
    U = np.zeros(2)
    F = -np.array([1.0, 2.0])
    x = solve_kkt(sp.identity(2), U, F, np.array([[1.0, 1.0]]), np.zeros(1))
    np.testing.assert_allclose(x, [-0.5, 0.5], atol=1e-14)


def test_kkt_without_constraints_is_newton_step():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(20, 20)) + 5 * np.eye(20)
    U, F = rng.normal(size=20), rng.normal(size=20)
    x = solve_kkt(sp.csr_matrix(A), U, F, None, None)
    np.testing.assert_allclose(A @ (x - U), -F, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_kkt_matches_nullspace_reference(seed):
    rng = np.random.default_rng(seed)
    n, m = 50, 5
    A = rng.normal(size=(n, n))
    C = rng.normal(size=(m, n))
    U, F, Z = rng.normal(size=n), rng.normal(size=n), rng.normal(size=m)
    x = solve_kkt(sp.csr_matrix(A), U, F, sp.csr_matrix(C), Z)
    ref = nullspace_reference(A, A @ U - F, C, Z)
    np.testing.assert_allclose(x, ref, atol=1e-10 * max(1.0, np.max(np.abs(ref))))
    np.testing.assert_allclose(C @ x, Z, atol=1e-10)


def test_kkt_deflates_dependent_rows():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(10, 10))
    C = rng.normal(size=(3, 10))
    C = np.vstack([C, C[0] + C[1]])
    Z = rng.normal(size=3)
    Z = np.append(Z, Z[0] + Z[1])
    with pytest.warns(RankDeficiencyWarning):
        x = solve_kkt(sp.csr_matrix(A), np.zeros(10), np.ones(10), sp.csr_matrix(C), Z)
    np.testing.assert_allclose(C @ x, Z, atol=1e-10)
    Z[3] += 1.0
    with pytest.warns(RankDeficiencyWarning), pytest.raises(SolverError, match="inconsistent"):
        independent_rows(C, Z)


def test_kkt_shape_mismatch_and_singular_step():
    with pytest.raises(ValueError):
        solve_kkt(sp.identity(3), np.zeros(3), np.zeros(3), np.ones((1, 2)), np.zeros(1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SingularSystemError):
            newton_step(sp.csr_matrix((2, 2)), np.ones(2))


def test_schedule_validation_and_fractions():
    for bad in (dict(num_increments=0), dict(tol=0.0), dict(damping=0.0), dict(damping=1.5),
                dict(spacing="cubic"), dict(max_newton_iters=-1)):
        with pytest.raises(ValueError):
            ContinuationSchedule(**bad)
    np.testing.assert_allclose(ContinuationSchedule(num_increments=4).fractions(),
                               [0.75, 0.5, 0.25, 0.0])
    geo = ContinuationSchedule(num_increments=6, spacing="geometric").fractions()
    assert geo[-1] == 0.0 and np.all(np.diff(geo) < 0) and geo[0] < 1.0


def test_restart_from_converged_state_needs_no_step():
    disc = small_disc("euler", aoa=0.0)
    sched = ContinuationSchedule(num_increments=1)
    first = newton_solve_euler(disc.U_inf, sched, disc)
    assert first.converged
    again = newton_solve_euler(first.states, sched, disc)
    assert again.converged
    assert len(again.trace) == 1 and again.trace[0].iteration == 0
    np.testing.assert_array_equal(again.states, first.states)


def test_solver_rejects_wrong_system():
    with pytest.raises(ValueError):
        newton_solve_mhd(None, ContinuationSchedule(), small_disc("euler"))
    with pytest.raises(ValueError):
        newton_solve_euler(None, ContinuationSchedule(), small_disc("mhd"))


def test_zero_field_mhd_reproduces_euler_iterates():
    sched = ContinuationSchedule(num_increments=3, max_newton_iters=4)
    de, dm = small_disc("euler"), small_disc("mhd")
    seen_e, seen_m = [], []
    re = newton_solve_euler(de.U_inf, sched, de, callback=lambda r: seen_e.append(r))
    rm = newton_solve_mhd(dm.U_inf, sched, dm, callback=lambda r: seen_m.append(r))
    assert len(re.trace) == len(rm.trace) == len(seen_e)
    for a, b in zip(re.trace, rm.trace):
        assert (a.increment, a.iteration) == (b.increment, b.iteration)
        assert abs(a.residual_l2 - b.residual_l2) <= 1e-12 * max(1.0, a.residual_l2)
    assert np.max(np.abs(re.states - rm.states[:, :5])) <= 1e-12
    assert np.all(rm.states[:, ph.MAG] == 0)


def test_mhd_iterates_keep_constraints():
    dm = small_disc("mhd", b=0.4)
    sched = ContinuationSchedule(num_increments=2, max_newton_iters=3)
    res = newton_solve_mhd(dm.U_inf, sched, dm)
    assert all(r.divb_max <= 1e-8 for r in res.trace)
    pins = dm.pinned_mask()
    np.testing.assert_allclose(res.states[pins], dm.targets(0.0)[pins], atol=1e-10)


def test_trace_csv_columns(tmp_path):
    disc = small_disc("euler")
    res = newton_solve_euler(disc.U_inf, ContinuationSchedule(num_increments=1, max_newton_iters=2),
                             disc)
    write_trace(res.trace, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == TRACE_FIELDS
    assert len(lines) == len(res.trace) + 1
    assert float(lines[-1].split(",")[3]) == res.final_residual
