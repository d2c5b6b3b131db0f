import numpy as np
import pytest

from wlsrom import io as wio
from wlsrom.basis import SpatialBasis, WeightingMatrix, pod_basis
from wlsrom.core_ode import CRANK_NICOLSON, BACKWARD_EULER, Trajectory, integrate_fom, uniform_grid
from wlsrom.errors import ConfigError, ContractViolation
from wlsrom.models import make_linear_model, random_stable_matrix, zero_model
from wlsrom.metrics import (continuous_objective, project_trajectory, space_time_error,
                            trajectory_objective)
from wlsrom.rom_classic import ReducedOperators


def _traj(rng, n=11, dim=3):
    return Trajectory(np.linspace(0.0, 1.0, n), rng.standard_normal((n, dim)))


# -- space-time error ---------------------------------------------------------

def test_error_of_identical_trajectories_is_zero(rng):
    t = _traj(rng)
    assert space_time_error(t, t) == 0.0


def test_error_of_constant_offset(rng):
    t = _traj(rng, n=11, dim=3)
    c = 0.3
    shifted = Trajectory(t.times, t.states + c)
    # ten steps of 0.1 with squared offset 3 c^2 each
    assert space_time_error(shifted, t) == pytest.approx(np.sqrt(3 * c ** 2), rel=1e-13)
    ref = space_time_error(Trajectory(t.times, np.zeros_like(t.states)), t)
    assert space_time_error(shifted, t, normalized=True) == pytest.approx(np.sqrt(3 * c ** 2) / ref,
                                                                          rel=1e-13)


def test_error_skips_initial_instance(rng):
    t = _traj(rng)
    X = t.states.copy()
    X[0] += 100.0
    assert space_time_error(Trajectory(t.times, X), t) == 0.0


def test_error_on_common_grid_interpolates(rng):
    coarse = Trajectory(np.array([0.0, 1.0]), np.array([[0.0], [1.0]]))
    fine = Trajectory(np.linspace(0.0, 1.0, 5), np.zeros((5, 1)))
    grid = np.linspace(0.0, 1.0, 5)
    expected = np.sqrt(np.sum(0.25 * grid[1:] ** 2))
    assert space_time_error(coarse, fine, grid) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ContractViolation):
        space_time_error(coarse, fine, grid, interpolate=False)


def test_error_rejects_bad_inputs(rng):
    t = _traj(rng)
    with pytest.raises(ContractViolation):
        space_time_error(t, _traj(rng, dim=2))
    with pytest.raises(ContractViolation):
        space_time_error(t, t, [0.0])


def test_reintegrated_fom_error_is_exactly_zero():
    r = np.random.default_rng(11)
    m = make_linear_model(random_stable_matrix(6, r))
    x0 = r.standard_normal(6)
    grid = uniform_grid(0.5, 0.05)
    a = integrate_fom(m, CRANK_NICOLSON, grid, x0)
    b = integrate_fom(m, CRANK_NICOLSON, grid, x0)
    assert space_time_error(a, b) == 0.0


# -- objectives --------------------------------------------------------------------

def test_trajectory_objective_is_zero_on_fom():
    r = np.random.default_rng(2)
    m = make_linear_model(random_stable_matrix(5, r))
    grid = uniform_grid(0.5, 0.05)
    fom = integrate_fom(m, BACKWARD_EULER, grid, r.standard_normal(5), newton_tol=1e-12)
    assert trajectory_objective(m, BACKWARD_EULER, fom) <= 1e-20
    assert trajectory_objective(m, CRANK_NICOLSON, fom) > 1e-8


def test_trajectory_objective_by_hand(rng):
    t = _traj(rng, n=4, dim=2)
    total = 0.0
    for i in range(1, 4):
        dt = t.times[i] - t.times[i - 1]
        r = (t.states[i] - t.states[i - 1]) / dt
        total += 0.5 * dt * r @ r
    assert trajectory_objective(zero_model(2), BACKWARD_EULER, t) == pytest.approx(total, rel=1e-13)
    W = WeightingMatrix.sampling(2, [1])
    part = trajectory_objective(zero_model(2), BACKWARD_EULER, t, W)
    assert part < total


def test_continuous_objective_linear_motion():
    # x(t) = t with f = 0 gives integrand 0.5 on [0, 1]
    t = Trajectory(np.linspace(0.0, 1.0, 3), np.linspace(0.0, 1.0, 3)[:, None])
    assert continuous_objective(zero_model(1), t) == pytest.approx(0.5, rel=1e-14)
    fine = np.linspace(0.0, 1.0, 9)
    assert continuous_objective(zero_model(1), t, fine) == pytest.approx(0.5, rel=1e-14)
    with pytest.raises(ContractViolation):
        continuous_objective(zero_model(1), t, np.linspace(0.0, 1.0, 4))
    with pytest.raises(ContractViolation):
        continuous_objective(zero_model(1), t, np.linspace(0.0, 2.0, 9))


def test_project_trajectory_is_idempotent(rng):
    V, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    ops = ReducedOperators(SpatialBasis(V, rng.standard_normal(6)))
    t = _traj(rng, dim=6)
    p = project_trajectory(ops, t)
    assert np.allclose(project_trajectory(ops, p).states, p.states, atol=1e-14)


# -- persistence -------------------------------------------------------------------

def test_matrix_round_trip_is_bit_exact(tmp_path, rng):
    M = rng.standard_normal((7, 3))
    M[0, 0] = np.nextafter(1.0, 2.0)
    p = tmp_path / "m.wlsm"
    wio.write_matrix(p, M)
    assert np.array_equal(wio.read_matrix(p), M)
    raw = p.read_bytes()
    assert raw[:4] == b"WLSM" and len(raw) == 4 + 4 + 8 + 8 + 8 * 21
    # column-major body
    assert np.frombuffer(raw[24:32], "<f8")[0] == M[0, 0]
    assert np.frombuffer(raw[32:40], "<f8")[0] == M[1, 0]


def test_bad_files_raise(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(ConfigError):
        wio.read_matrix(p)
    p.write_bytes(b"WL")
    with pytest.raises(ConfigError):
        wio.read_matrix(p)
    wio.write_matrix(p, np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ConfigError):
        wio.read_matrix(p)
    with pytest.raises(ConfigError):
        wio.read_matrix(tmp_path / "missing")


def test_trajectory_round_trip(tmp_path, rng):
    t = Trajectory(np.cumsum(rng.random(6)), rng.standard_normal((6, 4)))
    p = tmp_path / "traj.wlsm"
    wio.save_trajectory(p, t, model="linear", dt=0.1)
    back = wio.load_trajectory(p)
    assert np.array_equal(back.times, t.times) and np.array_equal(back.states, t.states)
    assert back.meta["model"] == "linear" and float(back.meta["dt"]) == 0.1


def test_basis_round_trip(tmp_path, rng):
    b = pod_basis(rng.standard_normal((8, 5)), 3, rng.standard_normal(8))
    p = tmp_path / "basis.wlsm"
    wio.save_basis(p, b)
    back = wio.load_basis(p)
    assert np.array_equal(back.V, b.V) and np.array_equal(back.x_ref, b.x_ref)
    assert back.energy == b.energy


def test_weighting_round_trip(tmp_path):
    for W in (WeightingMatrix.sampling(9, [7, 2, 4]), WeightingMatrix.identity(5)):
        p = tmp_path / "w.wlsm"
        wio.save_weighting(p, W)
        back = wio.load_weighting(p)
        assert back.kind == W.kind and back.dim == W.dim
        assert np.array_equal(back.apply(np.arange(float(W.dim))), W.apply(np.arange(float(W.dim))))


def test_meta_rejects_bad_lines(tmp_path):
    p = tmp_path / "x"
    wio.meta_path(p).write_text("no equals sign\n")
    with pytest.raises(ConfigError):
        wio.read_meta(p)
    with pytest.raises(ConfigError):
        wio.write_meta(p, {"a=b": 1})
