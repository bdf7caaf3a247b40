"""Space-time grid, overlapping decomposition, and restriction/extension.

Global space-time fields are arrays of shape ``(M, 3, nlon, nlat)``: time
level, prognostic variable (u, v, h), longitude, latitude. Local fields use
the same axis order restricted to a subdomain's halo-inclusive ranges.

Longitude is periodic, so a subdomain's halo may wrap across the seam.
Latitude and time are not periodic and halos are clipped at the ends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

NVARS = 3
VARIABLES = ("u", "v", "h")


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Regular latitude-longitude grid with ``M`` time levels.

    Latitudes are ``theta0 + j * dtheta`` for ``j = 0..nlat-1`` and must stay
    away from the poles so that ``cos(theta) > 0`` everywhere.
    """

    nlon: int
    nlat: int
    M: int
    dt: float
    dtheta: float
    theta0: float
    dlambda: float = None
    nvars: int = NVARS

    def __post_init__(self):
        if self.dlambda is None:
            object.__setattr__(self, "dlambda", 2.0 * math.pi / self.nlon)
        if self.nlon < 3:
            raise ConfigurationError("need nlon >= 3", key="grid.n")
        if self.nlat < 3:
            raise ConfigurationError("need nlat >= 3", key="grid.nlat")
        if self.M < 1:
            raise ConfigurationError("need M >= 1", key="grid.M")
        if not self.dt > 0:
            raise ConfigurationError("need dt > 0", key="grid.dt")
        if not (self.dtheta > 0 and self.dlambda > 0):
            raise ConfigurationError("grid spacings must be positive", key="grid.dtheta")
        if self.nvars != NVARS:
            raise ConfigurationError("exactly 3 prognostic variables (u, v, h)")
        limit = math.pi / 2 - self.dtheta / 2
        if np.any(np.abs(self.latitudes) >= limit):
            raise ConfigurationError(
                f"latitudes must satisfy |theta| < pi/2 - dtheta/2 = {limit:.6g}",
                key="grid.theta0",
            )

    @classmethod
    def band(cls, n, M, dt, nlat=None, max_lat_deg=70.0):
        """Grid with ``n`` longitudes and ``nlat`` cell-centred latitudes in +-max_lat_deg."""
        nlat = n if nlat is None else nlat
        dtheta = math.radians(2.0 * max_lat_deg) / nlat
        return cls(nlon=n, nlat=nlat, M=M, dt=dt, dtheta=dtheta,
                   theta0=-math.radians(max_lat_deg) + dtheta / 2)

    @property
    def latitudes(self):
        return self.theta0 + self.dtheta * np.arange(self.nlat)

    @property
    def state_shape(self):
        return (self.nvars, self.nlon, self.nlat)

    @property
    def field_shape(self):
        return (self.M, self.nvars, self.nlon, self.nlat)

    @property
    def K(self):
        """Spatial problem size ``nlon * nlat * 3``."""
        return self.nlon * self.nlat * self.nvars

    def to_dict(self):
        return {"nlon": self.nlon, "nlat": self.nlat, "M": self.M, "dt": self.dt,
                "dtheta": self.dtheta, "theta0": self.theta0, "dlambda": self.dlambda}


@dataclass(frozen=True, eq=False)
class Subdomain:
    """One space-time box ``Delta_j x Omega_i`` of a decomposition.

    Ranges are half-open ``(start, stop)`` pairs of global indices. The
    halo-inclusive longitude range may start below 0 or stop above
    ``nlon``; indices are taken modulo ``nlon``.
    """

    j: int
    i: int
    i1: int
    i2: int
    owned_time_range: tuple
    owned_lon_range: tuple
    owned_lat_range: tuple
    time_range: tuple
    lon_range: tuple
    lat_range: tuple
    nlon: int
    weights_t: np.ndarray = field(repr=False)
    weights_lon: np.ndarray = field(repr=False)
    weights_lat: np.ndarray = field(repr=False)

    @property
    def key(self):
        return (self.j, self.i)

    @property
    def time_idx(self):
        return np.arange(*self.time_range)

    @property
    def lon_idx(self):
        return np.arange(*self.lon_range) % self.nlon

    @property
    def lat_idx(self):
        return np.arange(*self.lat_range)

    @property
    def shape(self):
        """Local space-time field shape ``(T, 3, X, Y)``."""
        return (self.time_range[1] - self.time_range[0], NVARS,
                self.lon_range[1] - self.lon_range[0],
                self.lat_range[1] - self.lat_range[0])

    @property
    def state_shape(self):
        return self.shape[1:]

    @property
    def t_start(self):
        return self.time_range[0]

    @property
    def t_stop(self):
        return self.time_range[1]

    def weights(self):
        """Overlap weight field on the local space-time box (broadcast over variables)."""
        w = (self.weights_t[:, None, None]
             * self.weights_lon[None, :, None]
             * self.weights_lat[None, None, :])
        return np.broadcast_to(w[:, None, :, :], self.shape)

    def spatial_mask(self, grid):
        """Boolean state-shaped mask of the halo-inclusive spatial region."""
        mask = np.zeros(grid.state_shape, dtype=bool)
        mask[:, self.lon_idx[:, None], self.lat_idx[None, :]] = True
        return mask

    def restrict_state(self, state):
        """Plain restriction of one state ``(3, nlon, nlat)`` to the spatial region."""
        return state[:, self.lon_idx][:, :, self.lat_range[0]:self.lat_range[1]]

    def embed_state(self, local, base):
        """Copy of ``base`` with the spatial region overwritten by ``local``."""
        out = np.array(base, dtype=float, copy=True)
        out[:, self.lon_idx[:, None], self.lat_idx[None, :]] = local
        return out

    def to_dict(self):
        return {
            "j": self.j, "i": self.i, "i1": self.i1, "i2": self.i2,
            "owned_time_range": list(self.owned_time_range),
            "owned_lon_range": list(self.owned_lon_range),
            "owned_lat_range": list(self.owned_lat_range),
            "time_range": list(self.time_range),
            "lon_range": list(self.lon_range),
            "lat_range": list(self.lat_range),
        }


@dataclass(frozen=True)
class OverlapRegion:
    """Product index set ``times x lons x lats`` (global indices, sorted)."""

    t_idx: np.ndarray
    lon_idx: np.ndarray
    lat_idx: np.ndarray

    @property
    def is_empty(self):
        return self.t_idx.size == 0 or self.lon_idx.size == 0 or self.lat_idx.size == 0

    @property
    def shape(self):
        return (self.t_idx.size, NVARS, self.lon_idx.size, self.lat_idx.size)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def take(self, field):
        """Values of a global space-time field on the region."""
        return field[self.t_idx][:, :, self.lon_idx][:, :, :, self.lat_idx]

    def local_positions(self, sub):
        """Positions of the region inside ``sub``'s local arrays (t, lon, lat)."""
        lon_pos = {int(g): k for k, g in enumerate(sub.lon_idx)}
        return (self.t_idx - sub.t_start,
                np.array([lon_pos[int(g)] for g in self.lon_idx], dtype=int),
                self.lat_idx - sub.lat_range[0])

    def take_local(self, local, sub):
        """Values of a local field of ``sub`` on the region."""
        t, x, y = self.local_positions(sub)
        return local[t][:, :, x][:, :, :, y]


def _halo_ranges(n, parts, halo, periodic):
    core = n // parts
    owned, ranges = [], []
    for k in range(parts):
        lo, hi = k * core, (k + 1) * core
        owned.append((lo, hi))
        if periodic:
            ranges.append((lo - halo, hi + halo))
        else:
            ranges.append((max(lo - halo, 0), min(hi + halo, n)))
    return owned, ranges


def _coverage_weights(n, ranges, periodic):
    count = np.zeros(n, dtype=int)
    for lo, hi in ranges:
        idx = np.arange(lo, hi) % n if periodic else np.arange(lo, hi)
        count[idx] += 1
    weights = []
    for lo, hi in ranges:
        idx = np.arange(lo, hi) % n if periodic else np.arange(lo, hi)
        weights.append(1.0 / count[idx])
    return weights


@dataclass(frozen=True, eq=False)
class Decomposition:
    """Uniform overlapping decomposition into ``q * p1 * p2`` space-time boxes."""

    grid: SpaceTimeGrid
    q: int
    p1: int
    p2: int
    o_x: int
    o_y: int
    o_t: int
    subdomains: tuple

    @property
    def p(self):
        return self.p1 * self.p2

    @property
    def QP(self):
        return self.q * self.p

    @property
    def nloc_x(self):
        return self.grid.nlon // self.p1 + 2 * self.o_x

    @property
    def nloc_y(self):
        return self.grid.nlat // self.p2 + 2 * self.o_y

    def __iter__(self):
        return iter(self.subdomains)

    def __len__(self):
        return len(self.subdomains)

    def get(self, j, i):
        return self.subdomains[(j - 1) * self.p + (i - 1)]

    def neighbors(self, sub):
        """Subdomains whose halo-inclusive box intersects ``sub``'s (excluding itself)."""
        return [b for b in self.subdomains
                if b is not sub and not overlap_region(sub, b).is_empty]

    def to_dict(self):
        return {
            "q": self.q, "p1": self.p1, "p2": self.p2,
            "o_x": self.o_x, "o_y": self.o_y, "o_t": self.o_t,
            "grid": self.grid.to_dict(),
            "subdomains": [s.to_dict() for s in self.subdomains],
        }

    @classmethod
    def from_dict(cls, doc):
        grid = SpaceTimeGrid(**doc["grid"])
        return build_decomposition(grid, doc["q"], doc["p1"], doc["p2"],
                                   doc["o_x"], doc["o_y"], doc["o_t"])


def build_decomposition(grid, q, p1, p2, o_x=0, o_y=0, o_t=0):
    """Split ``grid`` into ``q`` time windows and a ``p1 x p2`` spatial grid of boxes.

    Raises
    ------
    ConfigurationError
        If a count does not divide its axis or a halo is too wide for overlaps
        to stay pairwise.
    """
    for name, parts, n in (("q", q, grid.M), ("p1", p1, grid.nlon), ("p2", p2, grid.nlat)):
        if parts < 1 or n % parts:
            raise ConfigurationError(f"{parts} must be >= 1 and divide {n}",
                                     key=f"decomposition.{name}")
    for name, halo, core in (("o_x", o_x, grid.nlon // p1), ("o_y", o_y, grid.nlat // p2),
                             ("o_t", o_t, grid.M // q)):
        if halo < 0:
            raise ConfigurationError("halo width must be >= 0", key=f"decomposition.{name}")
        if halo and 2 * halo >= core:
            raise ConfigurationError(
                f"halo too wide in direction {name}: need 2*{halo} < core width {core}",
                key=f"decomposition.{name}")
    if p1 == 1 and o_x:
        raise ConfigurationError("halo too wide in direction o_x: a single periodic "
                                 "longitude block cannot overlap itself",
                                 key="decomposition.o_x")

    own_t, rng_t = _halo_ranges(grid.M, q, o_t, periodic=False)
    own_x, rng_x = _halo_ranges(grid.nlon, p1, o_x, periodic=True)
    own_y, rng_y = _halo_ranges(grid.nlat, p2, o_y, periodic=False)
    w_t = _coverage_weights(grid.M, rng_t, periodic=False)
    w_x = _coverage_weights(grid.nlon, rng_x, periodic=True)
    w_y = _coverage_weights(grid.nlat, rng_y, periodic=False)

    subs = []
    for jj in range(q):
        for i1 in range(p1):
            for i2 in range(p2):
                subs.append(Subdomain(
                    j=jj + 1, i=i1 * p2 + i2 + 1, i1=i1, i2=i2,
                    owned_time_range=own_t[jj], owned_lon_range=own_x[i1],
                    owned_lat_range=own_y[i2],
                    time_range=rng_t[jj], lon_range=rng_x[i1], lat_range=rng_y[i2],
                    nlon=grid.nlon,
                    weights_t=w_t[jj], weights_lon=w_x[i1], weights_lat=w_y[i2],
                ))
    return Decomposition(grid=grid, q=q, p1=p1, p2=p2, o_x=o_x, o_y=o_y, o_t=o_t,
                         subdomains=tuple(subs))


def _check_field(field, grid):
    if field.shape != grid.field_shape:
        raise DimensionError(f"field shape {field.shape} != grid shape {grid.field_shape}")


def restrict(field, sub, mode="plain"):
    """Restriction of a global space-time field to ``sub``'s halo-inclusive box.

    ``mode="plain"`` copies values (used for model and cost evaluations);
    ``mode="weighted"`` multiplies by the overlap weights (used for
    reconstruction).
    """
    t0, t1 = sub.time_range
    y0, y1 = sub.lat_range
    local = field[t0:t1][:, :, sub.lon_idx][:, :, :, y0:y1]
    if mode == "plain":
        return local
    if mode == "weighted":
        return local * sub.weights()
    raise ValueError(f"unknown restriction mode {mode!r}")


def extend(local, sub, grid):
    """Zero-padded extension of a local field of ``sub`` to the global grid."""
    if local.shape != sub.shape:
        raise DimensionError(f"local shape {local.shape} != subdomain shape {sub.shape}")
    out = np.zeros(grid.field_shape)
    out[sub.t_start:sub.t_stop, :, sub.lon_idx[:, None], sub.lat_idx[None, :]] = local
    return out


def reconstruct(locals_, dec):
    """Sum of weighted extensions of one local field per subdomain.

    The sum is accumulated one direction at a time (time, then longitude,
    then latitude). Every point then receives either one contribution with
    weight 1 or two with weight 1/2 per stage, so consistent restrictions of a
    single field reproduce it bit for bit.
    """
    locals_ = list(locals_)
    if len(locals_) != len(dec.subdomains):
        raise DimensionError(f"{len(locals_)} local fields for {len(dec.subdomains)} subdomains")
    for loc, sub in zip(locals_, dec.subdomains):
        if loc.shape != sub.shape:
            raise DimensionError(f"local shape {loc.shape} != subdomain shape {sub.shape}")
    grid = dec.grid
    by_key = {sub.key: (sub, loc) for sub, loc in zip(dec.subdomains, locals_)}

    out = np.zeros(grid.field_shape)
    for i2 in range(dec.p2):
        lat_acc = None
        for i1 in range(dec.p1):
            i = i1 * dec.p2 + i2 + 1
            time_acc = None
            for j in range(1, dec.q + 1):
                sub, loc = by_key[(j, i)]
                if time_acc is None:
                    time_acc = np.zeros((grid.M,) + loc.shape[1:])
                time_acc[sub.t_start:sub.t_stop] += sub.weights_t[:, None, None, None] * loc
            if lat_acc is None:
                lat_acc = np.zeros((grid.M, NVARS, grid.nlon, time_acc.shape[3]))
            lat_acc[:, :, sub.lon_idx, :] += sub.weights_lon[None, None, :, None] * time_acc
        y0, y1 = sub.lat_range
        out[:, :, :, y0:y1] += sub.weights_lat[None, None, None, :] * lat_acc
    return out


def overlap_region(a, b):
    """Intersection of the halo-inclusive index sets of two subdomains."""
    t = np.intersect1d(a.time_idx, b.time_idx)
    x = np.intersect1d(a.lon_idx, b.lon_idx)
    y = np.intersect1d(a.lat_idx, b.lat_idx)
    return OverlapRegion(t_idx=t, lon_idx=x, lat_idx=y)


def weight_sum(dec):
    """Sum over subdomains of the extended weight fields (all ones for a valid decomposition)."""
    return sum(extend(np.array(sub.weights()), sub, dec.grid) for sub in dec.subdomains)
