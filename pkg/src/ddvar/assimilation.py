"""4D-Var cost functionals on the whole window or on one space-time subdomain.

A :class:`LocalProblem` bundles everything one subdomain needs: its
background anchor, restricted covariance, the fixed exterior trajectory
(values outside the subdomain's spatial box), its observations and the
neighbour values on shared overlap regions. The global problem is the
special case of a subdomain covering the whole grid with no neighbours.

Local model states are kept embedded in the full grid. After every step the
exterior is reset to the boundary trajectory, so the subdomain evolves with
prescribed outside values; with a full-grid box this is exactly the global
model.

Observation and overlap residuals share one stacked vector. Each block is a
selection of trajectory entries at one time level; observation blocks are
weighted by ``lam / sigma_r**2`` and overlap blocks by ``mu`` times the
inverse background covariance restricted to the overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import swe
from .covariance import CovarianceFactor
from .errors import DimensionError, ProtocolError, StepSizeError
from .observations import ObservationSet, flat_index
from .spacetime import build_decomposition, overlap_region


@dataclass(frozen=True)
class CostBreakdown:
    """Cost terms; ``total = background + lam * observation + mu * overlap``."""

    background: float
    observation: float
    overlap: float
    total: float

    @classmethod
    def from_terms(cls, background, observation, overlap, lam, mu):
        return cls(float(background), float(observation), float(overlap),
                   float(background + lam * observation + mu * overlap))

    def to_dict(self):
        return {"background": self.background, "observation": self.observation,
                "overlap": self.overlap, "total": self.total}


@dataclass(frozen=True, eq=False)
class AssimilationSetup:
    """Inputs shared by all subdomains of one assimilation window.

    Parameters
    ----------
    background : ndarray ``(3, nlon, nlat)``
        Background initial state at the first time level.
    sigma_r : float or sequence of 3 floats
        Observation-error standard deviation assumed in the cost, either one
        value or one per observed variable (``R`` is diagonal).
    lam, mu : float
        Weights of the observation and overlap terms.
    """

    grid: object
    params: swe.SweParams
    background: np.ndarray
    covariance: CovarianceFactor
    observations: ObservationSet
    sigma_r: float
    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if np.shape(self.background) != self.grid.state_shape:
            raise DimensionError(f"background shape {np.shape(self.background)} "
                                 f"!= {self.grid.state_shape}")
        sigma_r = np.broadcast_to(np.asarray(self.sigma_r, dtype=float), (3,)).copy()
        if not np.all(sigma_r > 0):
            raise DimensionError("sigma_r must be > 0")
        object.__setattr__(self, "sigma_r", sigma_r)
        self.observations.validate(self.grid)


@dataclass(frozen=True, eq=False)
class ResidualBlock:
    """One block of the stacked residual: selected entries at one local level."""

    level: int
    flat: np.ndarray
    target: np.ndarray
    inv_var: np.ndarray = None
    factor: CovarianceFactor = None
    key: tuple = None

    @property
    def is_overlap(self):
        return self.factor is not None


@dataclass(eq=False)
class LocalProblem:
    """Regularised least-squares problem on one subdomain (or the whole grid)."""

    grid: object
    params: swe.SweParams
    sub: object
    background: np.ndarray
    covariance: CovarianceFactor
    boundary: np.ndarray
    blocks: tuple
    lam: float = 1.0
    mu: float = 1.0
    coupling: np.ndarray = None
    mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = self.sub.spatial_mask(self.grid)
        self.mask = None if mask.all() else mask.astype(float)
        if self.background.shape != self.sub.state_shape:
            raise DimensionError(f"local background shape {self.background.shape} "
                                 f"!= {self.sub.state_shape}")
        self.nlevels = self.sub.t_stop - self.sub.t_start
        sizes = [len(b.flat) for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.targets = (np.concatenate([b.target for b in self.blocks])
                        if self.blocks else np.zeros(0))

    @property
    def size(self):
        return int(self.offsets[-1])

    @property
    def neighbor_keys(self):
        return sorted({b.key for b in self.blocks if b.is_overlap})

    def embed(self, u, level=0):
        if self.mask is None:
            return np.array(u, dtype=float, copy=True)
        return self.sub.embed_state(u, self.boundary[level])

    def trajectory(self, u):
        """Run the local model from control ``u`` over the subdomain's levels."""
        z = self.embed(u, 0)
        states = [z]
        for k in range(1, self.nlevels):
            try:
                z = swe.step(z, self.params, self.grid)
            except StepSizeError as exc:
                exc.step_index = self.sub.t_start + k - 1
                raise StepSizeError(f"subdomain {self.sub.key}, level "
                                    f"{self.sub.t_start + k - 1}: {exc}", exc.courant,
                                    exc.limit, exc.step_index) from exc
            if self.mask is not None:
                z = np.where(self.mask > 0, z, self.boundary[k])
            states.append(z)
        return swe.Trajectory(states=np.array(states), params=self.params, grid=self.grid,
                              dt=self.grid.dt, mask=self.mask)

    def local_field(self, traj):
        """Trajectory restricted to the subdomain box, shape ``(T, 3, X, Y)``."""
        return np.array([self.sub.restrict_state(s) for s in traj.states])

    def select(self, traj):
        """Stacked observation and overlap entries of a trajectory."""
        if not self.blocks:
            return np.zeros(0)
        return np.concatenate([traj.states[b.level].ravel()[b.flat] for b in self.blocks])

    def misfit(self, traj):
        return self.targets - self.select(traj)

    def weight_apply(self, y):
        """Apply the block-diagonal residual weight ``W``."""
        out = np.empty_like(y, dtype=float)
        for n, b in enumerate(self.blocks):
            s = slice(self.offsets[n], self.offsets[n + 1])
            if b.is_overlap:
                out[s] = self.mu * b.factor.inv_apply(y[s].reshape(b.factor.shape)).ravel()
            else:
                out[s] = self.lam * b.inv_var * y[s]
        return out

    def cost(self, u, traj=None):
        """Cost breakdown at control ``u``; returns ``(CostBreakdown, trajectory)``."""
        traj = self.trajectory(u) if traj is None else traj
        d = self.misfit(traj)
        obs = ov = 0.0
        for n, b in enumerate(self.blocks):
            r = d[self.offsets[n]:self.offsets[n + 1]]
            if b.is_overlap:
                ov += b.factor.norm2(r.reshape(b.factor.shape))
            else:
                obs += float(np.dot(r * b.inv_var, r))
        bg = self.covariance.norm2(u - self.background)
        return CostBreakdown.from_terms(bg, obs, ov, self.lam, self.mu), traj

    def objective(self, cost, u):
        """Quantity minimised by the local solver: total cost plus the coupling term."""
        if self.coupling is None:
            return cost.total
        return cost.total + float(np.vdot(self.coupling, u))

    def gradient(self, u, traj=None, with_coupling=True):
        """``2 B^{-1}(u - u_b) - 2 G^T W d`` at control ``u`` (plus the coupling vector)."""
        from .solver import GOperator

        traj = self.trajectory(u) if traj is None else traj
        gop = GOperator(self, traj)
        wd = self.weight_apply(self.misfit(traj))
        grad = (2.0 * self.covariance.inv_apply(u - self.background)
                - 2.0 * gop.transpose_apply(wd))
        if with_coupling and self.coupling is not None:
            grad = grad + self.coupling
        return grad


def _observation_blocks(setup, sub):
    blocks = []
    lon_set = set(sub.lon_idx.tolist())
    y0, y1 = sub.lat_range
    g = setup.grid
    for k in range(sub.t_stop - sub.t_start):
        loc, val = setup.observations.level(sub.t_start + k)
        if len(loc) == 0:
            continue
        inside = np.array([int(x) in lon_set and y0 <= y < y1 for x, y, _ in loc], dtype=bool)
        if inside.any():
            sel = loc[inside]
            blocks.append(ResidualBlock(k, flat_index(sel, g.nlon, g.nlat), val[inside].copy(),
                                        inv_var=1.0 / setup.sigma_r[sel[:, 2]] ** 2))
    return blocks


def _overlap_blocks(setup, sub, region, values, key):
    g = setup.grid
    factor = setup.covariance.restrict(region.lon_idx, region.lat_idx)
    var, lon, lat = np.meshgrid(np.arange(3), region.lon_idx, region.lat_idx, indexing="ij")
    flat = ((var * g.nlon + lon) * g.nlat + lat).ravel()
    if values.shape != region.shape:
        raise ProtocolError(f"neighbour values for {key} have shape {values.shape}, "
                            f"expected {region.shape}")
    return [ResidualBlock(int(t - sub.t_start), flat, values[n].ravel().copy(), factor=factor,
                          key=key)
            for n, t in enumerate(region.t_idx)]


def build_local_problem(setup, sub, dec, boundary=None, anchor=None, neighbor_values=None):
    """Assemble the local problem of ``sub``.

    Parameters
    ----------
    boundary : ndarray ``(M, 3, nlon, nlat)``, optional
        Global field supplying exterior values; required unless ``sub``
        covers the whole spatial grid.
    anchor : ndarray ``(3, X, Y)``, optional
        Local background; defaults to the restricted global background.
    neighbor_values : dict, optional
        Maps each adjacent subdomain key ``(j, i)`` to its values on the
        shared overlap region (shape of :class:`OverlapRegion`).

    Raises
    ------
    ProtocolError
        If an adjacent subdomain has no entry in ``neighbor_values``.
    """
    g = setup.grid
    full = sub.spatial_mask(g).all()
    if boundary is None:
        if not full:
            raise ProtocolError(f"subdomain {sub.key} needs exterior boundary values")
        boundary = np.zeros((g.M,) + g.state_shape)
    anchor = sub.restrict_state(setup.background) if anchor is None else anchor
    neighbor_values = {} if neighbor_values is None else neighbor_values
    blocks = _observation_blocks(setup, sub)
    for nb in dec.neighbors(sub):
        if nb.key not in neighbor_values:
            raise ProtocolError(f"subdomain {sub.key} is missing overlap data from "
                                f"neighbour {nb.key}")
        region = overlap_region(sub, nb)
        blocks.extend(_overlap_blocks(setup, sub, region, np.asarray(neighbor_values[nb.key]),
                                      nb.key))
    blocks.sort(key=lambda b: (b.is_overlap, b.key or (0, 0), b.level))
    return LocalProblem(
        grid=g, params=setup.params, sub=sub, background=np.array(anchor, dtype=float),
        covariance=setup.covariance.restrict(sub.lon_idx, sub.lat_idx),
        boundary=boundary[sub.t_start:sub.t_stop], blocks=tuple(blocks),
        lam=setup.lam, mu=setup.mu)


def global_problem(setup):
    """The undecomposed problem as a single-subdomain local problem."""
    dec = build_decomposition(setup.grid, 1, 1, 1)
    return build_local_problem(setup, dec.subdomains[0], dec)


def global_cost(u0, setup):
    """Global 4D-Var cost at initial state ``u0``."""
    return global_problem(setup).cost(np.asarray(u0, dtype=float))[0]


def local_cost(u, problem):
    """Cost of a local control ``u`` on a prepared :class:`LocalProblem`."""
    return problem.cost(np.asarray(u, dtype=float))[0]


def cost_gradient(u0, setup_or_problem):
    """Gradient of the global (or local) cost with respect to the control."""
    problem = setup_or_problem
    if isinstance(problem, AssimilationSetup):
        problem = global_problem(problem)
    return problem.gradient(np.asarray(u0, dtype=float))
