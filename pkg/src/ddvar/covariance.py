"""Background-error covariance factors ``B = V V^T`` on (sub)grids.

Two kinds are provided. ``diagonal`` scales each variable by its standard
deviation. ``gaussian`` additionally smooths with a separable, row-normalised
Gaussian kernel along longitude (periodic distance) and latitude. Factors are
defined on explicit index lists so that restriction to a subdomain or an
overlap region is simply a factor built on the sub-list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError

KINDS = ("diagonal", "gaussian")


def _kernel(idx, length_scale, period=None):
    idx = np.asarray(idx, dtype=float)
    dist = np.abs(idx[:, None] - idx[None, :])
    if period is not None:
        dist = np.minimum(dist, period - dist)
    k = np.exp(-0.5 * (dist / length_scale) ** 2)
    return k / k.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class CovarianceFactor:
    """Factor ``V`` acting on state-shaped arrays ``(3, X, Y)``.

    Parameters
    ----------
    kind : {"diagonal", "gaussian"}
    sigma : array of 3 per-variable standard deviations
    lon_idx, lat_idx : global grid indices spanned by the factor
    nlon : global longitude count (periodic distance)
    length_scale : correlation length in grid points (gaussian only)
    """

    kind: str
    sigma: np.ndarray
    lon_idx: np.ndarray
    lat_idx: np.ndarray
    nlon: int
    length_scale: float = 1.0
    _mats: tuple = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown covariance kind {self.kind!r}",
                                     key="assimilation.b_kind")
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (3,)).copy()
        if not np.all(sigma > 0):
            raise ConfigurationError("background standard deviations must be > 0 "
                                     "(singular factor)", key="assimilation.sigma_b")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "lon_idx", np.asarray(self.lon_idx, dtype=int))
        object.__setattr__(self, "lat_idx", np.asarray(self.lat_idx, dtype=int))
        if self.kind == "gaussian":
            if not self.length_scale > 0:
                raise ConfigurationError("length_scale must be > 0",
                                         key="assimilation.length_scale")
            s_lon = _kernel(self.lon_idx, self.length_scale, period=self.nlon)
            s_lat = _kernel(self.lat_idx, self.length_scale)
            mats = (s_lon, s_lat, np.linalg.inv(s_lon), np.linalg.inv(s_lat))
            object.__setattr__(self, "_mats", mats)

    @classmethod
    def for_grid(cls, grid, kind="diagonal", sigma=1.0, length_scale=1.0):
        return cls(kind, sigma, np.arange(grid.nlon), np.arange(grid.nlat), grid.nlon,
                   length_scale)

    @property
    def shape(self):
        return (3, len(self.lon_idx), len(self.lat_idx))

    def restrict(self, lon_idx, lat_idx):
        """Factor on a subset of this factor's global index lists."""
        return CovarianceFactor(self.kind, self.sigma, lon_idx, lat_idx, self.nlon,
                                self.length_scale)

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != self.shape:
            raise DimensionError(f"covariance factor expects shape {self.shape}, got {x.shape}")
        return x

    def _sandwich(self, x, inverse, transpose, scale):
        x = self._check(x)
        if self.kind == "diagonal":
            return x * scale[:, None, None]
        s_lon, s_lat = self._mats[2:] if inverse else self._mats[:2]
        if transpose:
            left, right = s_lon.T, s_lat
        else:
            left, right = s_lon, s_lat.T
        return np.stack([scale[v] * (left @ x[v] @ right) for v in range(3)])

    def apply(self, x):
        """``V x``."""
        return self._sandwich(x, False, False, self.sigma)

    def apply_t(self, x):
        """``V^T x``."""
        return self._sandwich(x, False, True, self.sigma)

    def solve(self, x):
        """``V^{-1} x``."""
        return self._sandwich(x, True, False, 1.0 / self.sigma)

    def solve_t(self, x):
        """``V^{-T} x``."""
        return self._sandwich(x, True, True, 1.0 / self.sigma)

    def inv_apply(self, x):
        """``B^{-1} x``."""
        return self.solve_t(self.solve(x))

    def norm2(self, x):
        """Squared ``B^{-1}``-norm ``x^T B^{-1} x``."""
        w = self.solve(x)
        return float(np.vdot(w, w))

    def dense(self):
        """Dense ``V`` (for small oracle checks)."""
        n = int(np.prod(self.shape))
        eye = np.eye(n)
        return np.column_stack([self.apply(eye[c].reshape(self.shape)).ravel()
                                for c in range(n)])
