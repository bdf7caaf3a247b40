import numpy as np
import pytest

from ddvar import swe
from ddvar.errors import ConfigurationError, DimensionError, StepSizeError
from ddvar.spacetime import SpaceTimeGrid


def test_fluid_at_rest_stays_at_rest(grid8, params):
    z = swe.make_state(np.zeros((8, 8)), np.zeros((8, 8)), np.full((8, 8), 3000.0))
    np.testing.assert_allclose(swe.tendency(z, params, grid8), 0.0, atol=1e-12)
    np.testing.assert_allclose(swe.step(z, params, grid8), z, atol=1e-9)


def test_balanced_flow_drifts_little(grid8, params):
    z = swe.balanced_zonal_flow(grid8, params, u0=20.0)
    traj = swe.propagate(z, params, grid8, 6)
    drift = np.linalg.norm(traj.last - z) / np.linalg.norm(z)
    assert drift < 5e-3


def test_propagate_shapes_and_first_state(grid8, params):
    z = swe.balanced_zonal_flow(grid8, params) + swe.height_bump(grid8, 50.0)
    traj = swe.propagate(z, params, grid8, 3)
    assert traj.states.shape == (4, 3, 8, 8)
    np.testing.assert_array_equal(traj.states[0], z)
    np.testing.assert_array_equal(traj.states[1], swe.step(z, params, grid8))


def test_cfl_violation_raises(grid8, params):
    z = swe.balanced_zonal_flow(grid8, params)
    with pytest.raises(StepSizeError) as exc:
        swe.step(z, params, grid8, dt=50000.0)
    assert exc.value.courant >= exc.value.limit


def test_courant_below_limit_at_default_step(grid8, params):
    z = swe.balanced_zonal_flow(grid8, params)
    assert swe.courant_number(z, params, grid8, grid8.dt) < params.cfl_limit


def test_state_shape_checked(grid8, params):
    with pytest.raises(DimensionError):
        swe.step(np.zeros((3, 4, 4)), params, grid8)


def test_stencil_widths_validated():
    g = SpaceTimeGrid.band(4, 2, 3600.0)
    with pytest.raises(ConfigurationError) as exc:
        swe.SweParams(p_tz=2).validate(g)
    assert exc.value.key == "model.p_tz"
    swe.SweParams(p_tz=1, q_tz=1).validate(g)


def test_tlm_is_linear(grid8, params, rng):
    z = swe.balanced_zonal_flow(grid8, params) + swe.height_bump(grid8, 50.0)
    traj = swe.propagate(z, params, grid8, 3)
    a, b = rng.standard_normal((2,) + grid8.state_shape)
    lhs = swe.tlm_apply(traj, 0, 3, 2.0 * a - b)
    rhs = 2.0 * swe.tlm_apply(traj, 0, 3, a) - swe.tlm_apply(traj, 0, 3, b)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_adjoint_identity_small(grid8, params, rng):
    z = swe.balanced_zonal_flow(grid8, params) + swe.height_bump(grid8, 50.0)
    traj = swe.propagate(z, params, grid8, 3)
    dx, dy = rng.standard_normal((2,) + grid8.state_shape)
    lhs = np.vdot(dy, swe.tlm_apply(traj, 1, 3, dx))
    rhs = np.vdot(swe.adj_apply(traj, 1, 3, dy), dx)
    assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(dx) * np.linalg.norm(dy)


def test_tlm_matches_finite_difference(grid8, params, rng):
    z = swe.balanced_zonal_flow(grid8, params) + swe.height_bump(grid8, 50.0)
    traj = swe.propagate(z, params, grid8, 2)
    d = rng.standard_normal(grid8.state_shape) * np.array([1.0, 1.0, 10.0])[:, None, None]
    e = 1e-3
    fd = (swe.propagate(z + e * d, params, grid8, 2).last
          - swe.propagate(z - e * d, params, grid8, 2).last) / (2 * e)
    lin = swe.tlm_apply(traj, 0, 2, d)
    assert np.linalg.norm(fd - lin) <= 1e-6 * np.linalg.norm(lin)


def test_params_roundtrip():
    p = swe.SweParams(alpha_tz=0.25)
    assert swe.SweParams(**p.to_dict()) == p


def test_literal_stencil_variant_differs(grid8):
    z = swe.balanced_zonal_flow(grid8, swe.SweParams()) + swe.height_bump(grid8, 50.0)
    a = swe.tendency(z, swe.SweParams(), grid8)
    b = swe.tendency(z, swe.SweParams(literal_stencils=True), grid8)
    assert np.all(np.isfinite(b)) and not np.allclose(a, b)
