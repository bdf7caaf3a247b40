"""Point observations: storage, sampling layouts, synthesis and misfits.

An observation samples one state entry ``(lon, lat, variable)`` at one time
level, so the observation operator is a selection and its transpose a
scatter-add.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError


def flat_index(loc, nlon, nlat):
    """C-order positions of ``(lon, lat, var)`` triplets in a flattened ``(3, nlon, nlat)`` state."""
    loc = np.asarray(loc, dtype=int).reshape(-1, 3)
    return (loc[:, 2] * nlon + loc[:, 0]) * nlat + loc[:, 1]


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observations grouped by time level.

    Attributes
    ----------
    times : tuple of int
        Observed time levels, strictly increasing.
    locations : tuple of int arrays, each ``(n_k, 3)``
        ``(lon, lat, variable)`` grid indices per observed level.
    values : tuple of float arrays, each ``(n_k,)``
    sigma_o : float
        Standard deviation of the noise added at synthesis.
    seed : int or None
        Seed of the generator that produced the noise, for provenance.
    """

    times: tuple
    locations: tuple
    values: tuple
    sigma_o: float = 0.0
    seed: int = None

    def __post_init__(self):
        times = tuple(int(t) for t in self.times)
        locs = tuple(np.asarray(loc, dtype=int).reshape(-1, 3) for loc in self.locations)
        vals = tuple(np.asarray(v, dtype=float).ravel() for v in self.values)
        if not (len(times) == len(locs) == len(vals)):
            raise DimensionError("times, locations and values must have equal length")
        for loc, val in zip(locs, vals):
            if len(loc) != len(val):
                raise DimensionError("each level needs one value per location")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigurationError("observation times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "values", vals)

    @classmethod
    def empty(cls):
        return cls((), (), ())

    @property
    def count(self):
        return sum(len(v) for v in self.values)

    def level(self, k):
        """``(locations, values)`` at level ``k``; empty arrays if unobserved."""
        if k in self.times:
            n = self.times.index(k)
            return self.locations[n], self.values[n]
        return np.zeros((0, 3), dtype=int), np.zeros(0)

    def validate(self, grid):
        """Check indices, window and sparsity (``n_k <= K / 4`` per level)."""
        for t, loc in zip(self.times, self.locations):
            if not 0 <= t < grid.M:
                raise ConfigurationError(f"observation time {t} outside window [0, {grid.M})")
            bad = ((loc[:, 0] < 0) | (loc[:, 0] >= grid.nlon) | (loc[:, 1] < 0)
                   | (loc[:, 1] >= grid.nlat) | (loc[:, 2] < 0) | (loc[:, 2] > 2))
            if bad.any():
                raise ConfigurationError(f"observation location out of grid at level {t}")
            if 4 * len(loc) > grid.K:
                raise ConfigurationError(
                    f"{len(loc)} observations at level {t} exceed K/4 = {grid.K / 4:g}",
                    key="assimilation.obs_coverage")
        return self

    def sample(self, state, k):
        """``H_k`` applied to a global state."""
        loc, _ = self.level(k)
        return state[loc[:, 2], loc[:, 0], loc[:, 1]]

    def to_dict(self):
        return {
            "times": list(self.times),
            "locations": [loc.tolist() for loc in self.locations],
            "values": [[float(x) for x in v] for v in self.values],
            "sigma_o": float(self.sigma_o),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["times"], doc["locations"], doc["values"],
                   float(doc.get("sigma_o", 0.0)), doc.get("seed"))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ObservationLayout:
    """Where observations are taken: per-level ``(lon, lat, var)`` triplets."""

    times: tuple
    locations: tuple


def observation_layout(grid, rng, every=2, coverage=0.1, boundary_rows=2,
                       variables=(0, 1, 2), first=0):
    """Random point layout for twin experiments.

    Every ``every``-th level starting at ``first`` samples a random fraction
    ``coverage`` of the grid points that lie at least ``boundary_rows`` rows
    away from the latitude edges. Each selected point is observed in all
    ``variables``.
    """
    if every < 1:
        raise ConfigurationError("need every >= 1", key="assimilation.obs_every")
    if not 0 < coverage <= 1:
        raise ConfigurationError("coverage must lie in (0, 1]", key="assimilation.obs_coverage")
    lat = np.arange(boundary_rows, grid.nlat - boundary_rows)
    if lat.size == 0:
        raise ConfigurationError("no latitude rows left after excluding boundary rows",
                                 key="assimilation.obs_coverage")
    lon_g, lat_g = np.meshgrid(np.arange(grid.nlon), lat, indexing="ij")
    points = np.column_stack([lon_g.ravel(), lat_g.ravel()])
    npick = max(1, int(round(coverage * len(points))))
    times, locs = [], []
    for t in range(first, grid.M, every):
        pick = np.sort(rng.choice(len(points), size=npick, replace=False))
        sel = points[pick]
        loc = np.array([(x, y, v) for x, y in sel for v in variables], dtype=int)
        times.append(t)
        locs.append(loc)
    return ObservationLayout(tuple(times), tuple(locs))


def synth_observations(truth, layout, sigma_o, rng, seed=None):
    """Sample ``truth`` (array ``(M, 3, nlon, nlat)`` or Trajectory) and add noise.

    Noise is ``N(0, sigma_o^2)`` drawn from ``rng`` level by level; with
    ``sigma_o == 0`` no draws are made and values are exact samples.
    """
    states = getattr(truth, "states", truth)
    values = []
    for t, loc in zip(layout.times, layout.locations):
        v = states[t][loc[:, 2], loc[:, 0], loc[:, 1]].astype(float)
        if sigma_o > 0:
            v = v + sigma_o * rng.standard_normal(len(v))
        values.append(v)
    return ObservationSet(layout.times, layout.locations, tuple(values), float(sigma_o), seed)


def misfit(k, traj, obs):
    """``d_k = v_k - H_k(state at level k)``; empty when level ``k`` is unobserved."""
    states = getattr(traj, "states", traj)
    loc, val = obs.level(k)
    if len(loc) == 0:
        return np.zeros(0)
    return val - states[k][loc[:, 2], loc[:, 0], loc[:, 1]]
