import numpy as np
import pytest

from ddvar.errors import ConfigurationError, DimensionError
from ddvar.spacetime import (Decomposition, SpaceTimeGrid, build_decomposition, extend,
                             overlap_region, reconstruct, restrict, weight_sum)


def test_band_grid_geometry():
    g = SpaceTimeGrid.band(8, 4, 3600.0)
    assert g.state_shape == (3, 8, 8)
    assert g.field_shape == (4, 3, 8, 8)
    lat = np.degrees(g.latitudes)
    assert lat.max() < 70 and lat.min() > -70
    np.testing.assert_allclose(lat, -lat[::-1])


def test_decomposition_counts_and_keys(grid8):
    dec = build_decomposition(grid8, 2, 2, 2, 1, 1, 0)
    assert dec.QP == 8 and len(dec) == 8
    assert [s.key for s in dec][:4] == [(1, 1), (1, 2), (1, 3), (1, 4)]
    assert dec.get(2, 3).key == (2, 3)
    assert dec.nloc_x == 6 and dec.nloc_y == 6


@pytest.mark.parametrize("args,key", [((3, 1, 1), "decomposition.q"),
                                      ((1, 3, 1), "decomposition.p1"),
                                      ((1, 2, 1, 2), "decomposition.o_x"),
                                      ((1, 1, 1, 1), "decomposition.o_x"),
                                      ((1, 1, 2, 0, 2), "decomposition.o_y")])
def test_invalid_decompositions_name_the_key(grid8, args, key):
    with pytest.raises(ConfigurationError) as exc:
        build_decomposition(grid8, *args)
    assert exc.value.key == key


def test_periodic_halo_wraps_the_seam(grid8):
    dec = build_decomposition(grid8, 1, 2, 1, 1)
    first = dec.get(1, 1)
    assert first.lon_idx.tolist() == [7, 0, 1, 2, 3, 4]


def test_weight_sum_is_one(grid8):
    for shape in [(1, 2, 1, 1, 0, 0), (2, 2, 2, 1, 1, 0), (1, 1, 2, 0, 1, 0)]:
        np.testing.assert_array_equal(weight_sum(build_decomposition(grid8, *shape)), 1.0)


def test_restrict_extend_roundtrip(grid8, rng):
    dec = build_decomposition(grid8, 2, 2, 1, 1)
    f = rng.standard_normal(grid8.field_shape)
    sub = dec.get(2, 1)
    local = restrict(f, sub)
    assert local.shape == sub.shape
    back = extend(local, sub, grid8)
    mask = extend(np.ones(sub.shape), sub, grid8) > 0
    np.testing.assert_array_equal(back[mask], f[mask])
    assert np.all(back[~mask] == 0)
    with pytest.raises(ValueError):
        restrict(f, sub, mode="bogus")


def test_weighted_restriction_sums_to_field(grid8, rng):
    dec = build_decomposition(grid8, 1, 2, 2, 1, 1)
    f = rng.standard_normal(grid8.field_shape)
    total = sum(extend(restrict(f, s, "weighted"), s, grid8) for s in dec)
    np.testing.assert_allclose(total, f, rtol=0, atol=1e-14)


def test_reconstruct_rejects_wrong_shapes(grid8):
    dec = build_decomposition(grid8, 1, 2, 1, 1)
    with pytest.raises(DimensionError):
        reconstruct([np.zeros((1, 1))], dec)
    with pytest.raises(DimensionError):
        reconstruct([np.zeros((1, 1)), np.zeros((1, 1))], dec)


def test_overlap_region_is_symmetric(grid8):
    dec = build_decomposition(grid8, 1, 2, 1, 1)
    a, b = dec
    ra, rb = overlap_region(a, b), overlap_region(b, a)
    assert ra.lon_idx.tolist() == rb.lon_idx.tolist() == [0, 3, 4, 7]
    assert not ra.is_empty


def test_neighbors_and_roundtrip_dict(grid8):
    dec = build_decomposition(grid8, 2, 2, 1, 1)
    assert {n.key for n in dec.neighbors(dec.get(1, 1))} == {(1, 2)}
    again = Decomposition.from_dict(dec.to_dict())
    assert [s.key for s in again] == [s.key for s in dec]
