import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ddvar import perfmodel as pm
from ddvar import swe
from ddvar.covariance import CovarianceFactor
from ddvar.errors import ConfigurationError
from ddvar.observations import flat_index
from ddvar.spacetime import (SpaceTimeGrid, build_decomposition, extend, reconstruct, restrict,
                             weight_sum)

FAST = settings(max_examples=40, deadline=None)


@st.composite
def decompositions(draw):
    q = draw(st.sampled_from([1, 2, 3]))
    p1 = draw(st.sampled_from([1, 2, 3, 4]))
    p2 = draw(st.sampled_from([1, 2, 3]))
    nlon = p1 * draw(st.integers(3 if p1 == 1 else 2, 5))
    nlat = p2 * draw(st.integers(3 if p2 == 1 else 2, 5))
    M = q * draw(st.integers(1, 4))
    o_x = 0 if p1 == 1 else draw(st.integers(0, 2))
    o_y = draw(st.integers(0, 2))
    o_t = draw(st.integers(0, 1))
    grid = SpaceTimeGrid.band(nlon, M, 600.0, nlat=nlat)
    try:
        dec = build_decomposition(grid, q, p1, p2, o_x, o_y, o_t)
    except ConfigurationError:
        assume(False)
    return dec


@FAST
@given(decompositions(), st.integers(0, 2 ** 32 - 1))
def test_partition_of_unity_is_exact(dec, seed):
    f = np.random.default_rng(seed).standard_normal(dec.grid.field_shape)
    back = reconstruct([restrict(f, s) for s in dec], dec)
    assert np.array_equal(back, f)


@FAST
@given(decompositions())
def test_weights_sum_to_one(dec):
    assert np.array_equal(weight_sum(dec), np.ones(dec.grid.field_shape))


@FAST
@given(decompositions(), st.integers(0, 2 ** 32 - 1))
def test_extension_is_adjoint_of_restriction(dec, seed):
    rng = np.random.default_rng(seed)
    sub = dec.subdomains[rng.integers(len(dec))]
    f = rng.standard_normal(dec.grid.field_shape)
    loc = rng.standard_normal(sub.shape)
    assert np.isclose(np.vdot(extend(loc, sub, dec.grid), f), np.vdot(loc, restrict(f, sub)))


@FAST
@given(decompositions())
def test_overlaps_are_pairwise(dec):
    counts = sum(extend(np.ones(s.shape), s, dec.grid) for s in dec)
    assert counts.max() <= 8
    assert counts.min() >= 1


@FAST
@given(st.integers(2, 12), st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
def test_flat_index_is_bijective(nlon, nlat, seed):
    rng = np.random.default_rng(seed)
    loc = np.column_stack([rng.integers(0, nlon, 20), rng.integers(0, nlat, 20),
                           rng.integers(0, 3, 20)])
    flat = flat_index(loc, nlon, nlat)
    var, rest = np.divmod(flat, nlon * nlat)
    lon, lat = np.divmod(rest, nlat)
    assert np.array_equal(np.column_stack([lon, lat, var]), loc)


@FAST
@given(st.sampled_from(["diagonal", "gaussian"]), st.floats(0.3, 2.0),
       st.integers(0, 2 ** 32 - 1))
def test_covariance_factor_inverts(kind, length, seed):
    grid = SpaceTimeGrid.band(6, 1, 600.0)
    cov = CovarianceFactor.for_grid(grid, kind, (1.0, 2.0, 5.0), length)
    x = np.random.default_rng(seed).standard_normal(cov.shape)
    assert np.allclose(cov.apply(cov.solve(x)), x, atol=1e-8 * np.abs(x).max())
    assert cov.norm2(x) >= 0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_adjoint_identity_holds_for_random_pairs(seed, steps):
    grid = SpaceTimeGrid.band(6, steps + 1, 3600.0)
    params = swe.SweParams()
    rng = np.random.default_rng(seed)
    z = swe.balanced_zonal_flow(grid, params) + swe.height_bump(grid, 50.0)
    traj = swe.propagate(z, params, grid, steps)
    dx, dy = rng.standard_normal((2,) + grid.state_shape)
    gap = np.vdot(dy, swe.tlm_apply(traj, 0, steps, dx)) - np.vdot(swe.adj_apply(traj, 0, steps, dy), dx)
    assert abs(gap) <= 1e-12 * np.linalg.norm(dx) * np.linalg.norm(dy)


@FAST
@given(st.integers(1, 6), st.integers(1, 200), st.integers(1, 64))
def test_monomial_alpha_is_exactly_one(degree, n_loc, qp):
    assert pm.alpha(n_loc, qp, pm.ComplexityPoly.monomial(degree, 2.5)) == 1.0


@FAST
@given(st.integers(1, 64), st.floats(1.0, 64.0), st.floats(0.0, 1.0), st.floats(0.1, 100.0))
def test_alpha_measured_bracket(qp, s_loc, frac, sc):
    sv = frac * (1.0 - 1.0 / s_loc)
    verdict = pm.scaleup_bracket(sc, s_loc, sv, qp)
    if s_loc <= qp and pm.alpha_measured(s_loc, sv).in_model:
        assert verdict is True
    else:
        assert verdict is None


@FAST
@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4))
def test_surface_to_volume_decreases_with_block_size(d_t, d_s):
    assert pm.surface_to_volume(2 * d_t, d_s) < pm.surface_to_volume(d_t, d_s)
    assert pm.surface_to_volume(d_t, 2 * d_s) < pm.surface_to_volume(d_t, d_s)
