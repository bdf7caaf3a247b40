import numpy as np
import pytest

from ddvar import swe
from ddvar.errors import ConfigurationError, DimensionError
from ddvar.observations import (ObservationSet, flat_index, misfit, observation_layout,
                                synth_observations)


def test_flat_index_matches_ravel():
    state = np.arange(3 * 8 * 6).reshape(3, 8, 6)
    loc = np.array([[7, 5, 2], [0, 0, 0], [3, 1, 1]])
    np.testing.assert_array_equal(state.ravel()[flat_index(loc, 8, 6)],
                                  state[loc[:, 2], loc[:, 0], loc[:, 1]])


def test_layout_respects_coverage_and_every(grid8, rng):
    layout = observation_layout(grid8, rng, every=2, coverage=0.25, boundary_rows=0)
    assert layout.times == (0, 2)
    for loc in layout.locations:
        assert len(loc) <= grid8.K // 4
        assert len({tuple(r) for r in loc}) == len(loc)


def test_noise_free_observations_sample_truth(grid8, params, rng):
    truth = swe.propagate(swe.balanced_zonal_flow(grid8, params), params, grid8, grid8.M - 1)
    layout = observation_layout(grid8, rng, every=1, coverage=0.1, boundary_rows=0)
    obs = synth_observations(truth, layout, 0.0, rng)
    for k in obs.times:
        np.testing.assert_array_equal(obs.sample(truth.states[k], k), obs.level(k)[1])
        np.testing.assert_array_equal(misfit(k, truth, obs), 0.0)


def test_json_roundtrip(grid8, params, rng):
    truth = swe.propagate(swe.balanced_zonal_flow(grid8, params), params, grid8, grid8.M - 1)
    layout = observation_layout(grid8, rng, every=1, coverage=0.1, boundary_rows=0)
    obs = synth_observations(truth, layout, 0.5, rng, seed=3)
    again = ObservationSet.from_json(obs.to_json())
    assert again.times == obs.times and again.seed == 3
    for a, b in zip(again.values, obs.values):
        np.testing.assert_array_equal(a, b)


def test_validation_errors(grid8):
    with pytest.raises(ConfigurationError):
        ObservationSet((1, 0), ([[0, 0, 0]], [[0, 0, 0]]), ([1.0], [1.0]))
    with pytest.raises(DimensionError):
        ObservationSet((0,), ([[0, 0, 0]],), ([1.0, 2.0],))
    too_many = np.array([[x, y, 0] for x in range(8) for y in range(8)])
    with pytest.raises(ConfigurationError):
        ObservationSet((0,), (too_many,), (np.zeros(64),)).validate(grid8)
    with pytest.raises(ConfigurationError):
        ObservationSet((9,), ([[0, 0, 0]],), ([1.0],)).validate(grid8)


def test_empty_level_lookup():
    loc, val = ObservationSet.empty().level(0)
    assert loc.shape == (0, 3) and val.shape == (0,)
