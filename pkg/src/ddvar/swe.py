"""Shallow water equations on the sphere: forward, tangent-linear and adjoint models.

The spatial operator is the unstaggered Turkel-Zwas scheme: centred
first-neighbour advection, wide (+-p, +-q point) pressure-gradient and
divergence stencils, and alpha-weighted averaging of the Coriolis terms.
Time integration is classical RK4.

Every tendency term is stored as a *monomial*: a latitude-dependent
coefficient times a product of at most two shifted fields. The nonlinear
tendency and its exact Jacobian (product rule, assembled as a sparse matrix)
are both generated from that one list, so the tangent-linear model and the
adjoint (the transposed sparse matrices) are consistent with the forward model
by construction.

States are arrays of shape ``(3, nlon, nlat)`` holding ``(u, v, h)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError, NumericalError, StepSizeError

U, V, H = 0, 1, 2
RK4_IMAG_LIMIT = 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class SweParams:
    """Physical constants and Turkel-Zwas scheme parameters.

    ``literal_stencils=True`` switches to an alternative stencil variant: a
    global alpha factor on H without metric factors, doubled Coriolis
    brackets and ``u`` in the meridional self-advection of v. It exists for
    comparison only; the default is the consistent scheme.
    """

    a: float = 6.371e6
    g: float = 9.80616
    omega_rot: float = 7.292e-5
    alpha_tz: float = 0.5
    p_tz: int = 2
    q_tz: int = 2
    cfl_safety: float = 0.8
    literal_stencils: bool = False

    def validate(self, grid):
        if not 0.0 <= self.alpha_tz <= 1.0:
            raise ConfigurationError("alpha_tz must lie in [0, 1]", key="model.alpha_tz")
        if self.p_tz < 1 or not self.p_tz < grid.nlon / 2:
            raise ConfigurationError(f"need 1 <= p_tz < nlon/2 = {grid.nlon / 2}",
                                     key="model.p_tz")
        if self.q_tz < 1 or not self.q_tz < grid.nlat / 2:
            raise ConfigurationError(f"need 1 <= q_tz < nlat/2 = {grid.nlat / 2}",
                                     key="model.q_tz")
        if not (self.a > 0 and self.g > 0):
            raise ConfigurationError("a and g must be positive", key="model.a")
        if not self.cfl_safety > 0:
            raise ConfigurationError("cfl_safety must be positive", key="model.cfl_safety")

    @property
    def cfl_limit(self):
        return self.cfl_safety * RK4_IMAG_LIMIT

    def to_dict(self):
        return {"a": self.a, "g": self.g, "omega_rot": self.omega_rot,
                "alpha_tz": self.alpha_tz, "p_tz": self.p_tz, "q_tz": self.q_tz,
                "cfl_safety": self.cfl_safety, "literal_stencils": self.literal_stencils}


def coriolis(theta, omega_rot):
    """Coriolis parameter ``2 * omega * sin(theta)``."""
    return 2.0 * omega_rot * np.sin(theta)


class _Stencil:
    """Shift maps and the monomial expansion of the discrete tendency."""

    def __init__(self, grid, params):
        params.validate(grid)
        self.grid = grid
        self.params = params
        self.nlon, self.nlat = grid.nlon, grid.nlat
        self.npts = grid.nlon * grid.nlat
        self.size = 3 * self.npts
        self._lon = {}
        self._lat = {}
        self._cols = {}
        self.monomials = self._build_monomials()
        self.shifts = sorted({f for _, _, fac in self.monomials for f in fac})

    def lon_map(self, di):
        if di not in self._lon:
            self._lon[di] = (np.arange(self.nlon) + di) % self.nlon
        return self._lon[di]

    def lat_map(self, dj):
        if dj not in self._lat:
            self._lat[dj] = np.clip(np.arange(self.nlat) + dj, 0, self.nlat - 1)
        return self._lat[dj]

    def shift(self, f, di, dj):
        return f[self.lon_map(di)][:, self.lat_map(dj)]

    def columns(self, var, di, dj):
        key = (var, di, dj)
        if key not in self._cols:
            base = self.lon_map(di)[:, None] * self.nlat + self.lat_map(dj)[None, :]
            self._cols[key] = (var * self.npts + base).ravel()
        return self._cols[key]

    def _span(self, d):
        """Latitude span (in rows) of the centred pair (j+d, j-d) after clamping."""
        return (self.lat_map(d) - self.lat_map(-d)).astype(float)

    def _build_monomials(self):
        g_, p = self.grid, self.params
        theta = g_.latitudes
        rc = 1.0 / np.cos(theta)
        tn = np.tan(theta)
        f = coriolis(theta, p.omega_rot)
        P, Q, al = p.p_tz, p.q_tz, p.alpha_tz
        a, grav = p.a, p.g
        cl = 1.0 / (2.0 * a * g_.dlambda)
        g1 = 1.0 / (a * g_.dtheta * self._span(1))
        gq = 1.0 / (a * g_.dtheta * self._span(Q))
        fq_p, fq_m = f[self.lat_map(Q)], f[self.lat_map(-Q)]
        tq_p, tq_m = tn[self.lat_map(Q)], tn[self.lat_map(-Q)]
        cq_p, cq_m = np.cos(theta[self.lat_map(Q)]), np.cos(theta[self.lat_map(-Q)])

        literal = p.literal_stencils
        kcor = 2.0 if literal else 1.0
        xv = U if literal else V
        one = np.ones_like(theta)
        mono = []

        def add(out, coef, *factors):
            mono.append((out, np.broadcast_to(np.asarray(coef, dtype=float), theta.shape).copy(),
                         tuple(factors)))

        # zonal momentum
        add(U, -cl * rc, (U, 0, 0), (U, 1, 0))
        add(U, cl * rc, (U, 0, 0), (U, -1, 0))
        add(U, -g1, (V, 0, 0), (U, 0, 1))
        add(U, g1, (V, 0, 0), (U, 0, -1))
        add(U, -(cl / P) * grav * rc, (H, P, 0))
        add(U, (cl / P) * grav * rc, (H, -P, 0))
        add(U, kcor * (1 - al) * f, (V, 0, 0))
        add(U, kcor * (1 - al) * tn / a, (U, 0, 0), (V, 0, 0))
        for s in (P, -P):
            add(U, kcor * al / 2 * f, (V, s, 0))
            add(U, kcor * al / 2 * tn / a, (U, s, 0), (V, s, 0))

        # meridional momentum
        add(V, -cl * rc, (U, 0, 0), (V, 1, 0))
        add(V, cl * rc, (U, 0, 0), (V, -1, 0))
        add(V, -g1, (V, 0, 0), (xv, 0, 1))
        add(V, g1, (V, 0, 0), (xv, 0, -1))
        add(V, -grav * gq, (H, 0, Q))
        add(V, grav * gq, (H, 0, -Q))
        add(V, -kcor * (1 - al) * f, (U, 0, 0))
        add(V, -kcor * (1 - al) * tn / a, (U, 0, 0), (U, 0, 0))
        for s, fs, ts in ((Q, fq_p, tq_p), (-Q, fq_m, tq_m)):
            add(V, -kcor * al / 2 * fs, (U, 0, s))
            add(V, -kcor * al / 2 * ts / a, (U, 0, s), (U, 0, s))

        # continuity
        if literal:
            amp, e1, e2, e3, e4 = al, one, one, one / P, one / Q
        else:
            amp, e1, e2, e3, e4 = 1.0, cl * one, g1, cl / P * one, gq
        add(H, -amp * e1 * rc, (U, 0, 0), (H, 1, 0))
        add(H, amp * e1 * rc, (U, 0, 0), (H, -1, 0))
        add(H, -amp * e2, (V, 0, 0), (H, 0, 1))
        add(H, amp * e2, (V, 0, 0), (H, 0, -1))
        # h/cos * zonal divergence stencil
        dlam = [((1 - al), P, 0), (-(1 - al), -P, 0)]
        for sq in (Q, -Q):
            dlam += [(al / 2, P, sq), (-al / 2, -P, sq)]
        for w, di, dj in dlam:
            add(H, -amp * e3 * rc * w, (H, 0, 0), (U, di, dj))
        # meridional divergence stencil of v*cos(theta)
        dth = [((1 - al), 0, Q, cq_p), (-(1 - al), 0, -Q, cq_m)]
        for sp_ in (P, -P):
            dth += [(al / 2, sp_, Q, cq_p), (-al / 2, sp_, -Q, cq_m)]
        for w, di, dj, cs in dth:
            if literal:
                add(H, -amp * e4 * w * cs, (V, di, dj))
            else:
                add(H, -amp * e4 * rc * w * cs, (H, 0, 0), (V, di, dj))
        return mono

    def _shifted(self, z):
        return {(var, di, dj): self.shift(z[var], di, dj) for var, di, dj in self.shifts}

    def tendency(self, z):
        sh = self._shifted(z)
        out = np.zeros((3, self.nlon, self.nlat))
        for ov, coef, fac in self.monomials:
            term = coef[None, :] * sh[fac[0]]
            for fk in fac[1:]:
                term = term * sh[fk]
            out[ov] += term
        return out

    def jacobian(self, z):
        """Sparse Jacobian of the tendency at ``z`` (flattened C-order state)."""
        sh = self._shifted(z)
        rows_base = np.arange(self.npts)
        rows, cols, vals = [], [], []
        for ov, coef, fac in self.monomials:
            for k, fk in enumerate(fac):
                c = np.broadcast_to(coef[None, :], (self.nlon, self.nlat))
                for m, fm in enumerate(fac):
                    if m != k:
                        c = c * sh[fm]
                rows.append(ov * self.npts + rows_base)
                cols.append(self.columns(*fk))
                vals.append(np.ravel(c))
        jac = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(self.size, self.size))
        return jac.tocsr()

    def courant(self, z, dt):
        p, g_ = self.params, self.grid
        hmax = max(float(np.max(z[H])), 0.0)
        speed = max(float(np.max(np.abs(z[U]))), float(np.max(np.abs(z[V]))),
                    math.sqrt(p.g * hmax))
        cos_min = float(np.min(np.cos(g_.latitudes)))
        spacing = p.a * min(g_.dlambda * cos_min, g_.dtheta)
        return dt * speed / spacing


@lru_cache(maxsize=32)
def _stencil(grid, params):
    return _Stencil(grid, params)


def _check_state(z, grid):
    z = np.asarray(z, dtype=float)
    if z.shape != grid.state_shape:
        raise DimensionError(f"state shape {z.shape} != {grid.state_shape}")
    return z


def make_state(u, v, h):
    """Stack the three prognostic fields into one state array."""
    return np.stack([np.asarray(u, float), np.asarray(v, float), np.asarray(h, float)])


def tendency(z, params, grid):
    """Semi-discrete right-hand side ``(U, V, H)`` at state ``z``."""
    return _stencil(grid, params).tendency(_check_state(z, grid))


def tendency_jacobian(z, params, grid):
    """Exact sparse Jacobian of :func:`tendency` at ``z``."""
    return _stencil(grid, params).jacobian(_check_state(z, grid))


def courant_number(z, params, grid, dt):
    return _stencil(grid, params).courant(z, dt)


def _rk4(st, z, dt):
    k1 = st.tendency(z)
    z2 = z + 0.5 * dt * k1
    k2 = st.tendency(z2)
    z3 = z + 0.5 * dt * k2
    k3 = st.tendency(z3)
    z4 = z + dt * k3
    k4 = st.tendency(z4)
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (z, z2, z3, z4)


def step(z, params, grid, dt=None):
    """One RK4 step of length ``dt`` (defaults to ``grid.dt``).

    Raises
    ------
    StepSizeError
        If the Courant number reaches ``params.cfl_limit``.
    """
    dt = grid.dt if dt is None else dt
    z = _check_state(z, grid)
    st = _stencil(grid, params)
    c = st.courant(z, dt)
    if c >= params.cfl_limit:
        raise StepSizeError(f"Courant number {c:.4g} >= limit {params.cfl_limit:.4g} "
                            f"(reduce dt below {dt * params.cfl_limit / c:.6g} s)",
                            courant=c, limit=params.cfl_limit)
    return _rk4(st, z, dt)[0]


@dataclass(eq=False)
class Trajectory:
    """Model states at consecutive time levels plus the linearisation cache.

    ``states[k]`` is the linearisation point of the step from level ``k`` to
    ``k + 1``. When ``mask`` is given, perturbations outside it are zeroed
    after every step (the region evolves with fixed exterior values).
    """

    states: np.ndarray
    params: SweParams
    grid: object
    dt: float
    mask: np.ndarray = None
    _jac: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.states)

    @property
    def last(self):
        return self.states[-1]

    def _stage_jacobians(self, k):
        if k not in self._jac:
            st = _stencil(self.grid, self.params)
            _, stages = _rk4(st, self.states[k], self.dt)
            self._jac[k] = [st.jacobian(s) for s in stages]
        return self._jac[k]

    def step_tlm(self, k, dz):
        j1, j2, j3, j4 = self._stage_jacobians(k)
        dt = self.dt
        dk1 = j1 @ dz
        dk2 = j2 @ (dz + 0.5 * dt * dk1)
        dk3 = j3 @ (dz + 0.5 * dt * dk2)
        dk4 = j4 @ (dz + dt * dk3)
        return dz + dt / 6.0 * (dk1 + 2.0 * dk2 + 2.0 * dk3 + dk4)

    def step_adj(self, k, dy):
        j1, j2, j3, j4 = self._stage_jacobians(k)
        dt = self.dt
        ak4 = dt / 6.0 * dy
        ak3 = dt / 3.0 * dy
        ak2 = dt / 3.0 * dy
        ak1 = dt / 6.0 * dy
        out = dy.copy()
        az4 = j4.T @ ak4
        out += az4
        ak3 = ak3 + dt * az4
        az3 = j3.T @ ak3
        out += az3
        ak2 = ak2 + 0.5 * dt * az3
        az2 = j2.T @ ak2
        out += az2
        ak1 = ak1 + 0.5 * dt * az2
        out += j1.T @ ak1
        return out

    def _check_levels(self, k_from, k_to):
        if not 0 <= k_from <= k_to < len(self.states):
            raise IndexError(f"levels ({k_from}, {k_to}) outside trajectory of "
                             f"{len(self.states)} states")


def propagate(z0, params, grid, nsteps, dt=None):
    """Integrate ``nsteps`` RK4 steps from ``z0``; returns ``nsteps + 1`` states."""
    if nsteps < 0:
        raise ValueError("nsteps must be >= 0")
    dt = grid.dt if dt is None else dt
    z = _check_state(z0, grid).copy()
    states = [z]
    for k in range(nsteps):
        try:
            z = step(z, params, grid, dt)
        except StepSizeError as exc:
            exc.step_index = k
            raise
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite state after step {k}")
        states.append(z)
    _warn_nonpositive_height(states)
    return Trajectory(states=np.array(states), params=params, grid=grid, dt=dt)


def _warn_nonpositive_height(states):
    hmin = min(float(np.min(s[H])) for s in states)
    if hmin <= 0:
        warnings.warn(f"non-positive height {hmin:.4g} in trajectory", RuntimeWarning,
                      stacklevel=3)


def tlm_apply(traj, k_from, k_to, dz):
    """Tangent-linear propagation of ``dz`` from level ``k_from`` to ``k_to``."""
    traj._check_levels(k_from, k_to)
    shape = np.shape(dz)
    x = np.asarray(dz, dtype=float).ravel()
    mask = None if traj.mask is None else traj.mask.ravel()
    for k in range(k_from, k_to):
        x = traj.step_tlm(k, x)
        if mask is not None:
            x = x * mask
    return x.reshape(shape)


def adj_apply(traj, k_from, k_to, dy):
    """Adjoint of :func:`tlm_apply`: reversed product of transposed step Jacobians."""
    traj._check_levels(k_from, k_to)
    shape = np.shape(dy)
    x = np.asarray(dy, dtype=float).ravel()
    mask = None if traj.mask is None else traj.mask.ravel()
    for k in reversed(range(k_from, k_to)):
        if mask is not None:
            x = x * mask
        x = traj.step_adj(k, x)
    return x.reshape(shape)


def balanced_zonal_flow(grid, params, u0=20.0, h0=3000.0):
    """Solid-body-rotation zonal jet in gradient-wind balance with the height field."""
    theta = grid.latitudes
    u = np.broadcast_to(u0 * np.cos(theta), (grid.nlon, grid.nlat))
    h = h0 - (params.a * params.omega_rot * u0 + 0.5 * u0 ** 2) * np.sin(theta) ** 2 / params.g
    h = np.broadcast_to(h, (grid.nlon, grid.nlat))
    return make_state(u, np.zeros((grid.nlon, grid.nlat)), h)


def height_bump(grid, amplitude, lon_center=math.pi, lat_center=0.0, width=0.5):
    """Gaussian height anomaly (radians for centre and width), as a state increment."""
    lon = grid.dlambda * np.arange(grid.nlon)
    dlon = np.angle(np.exp(1j * (lon - lon_center)))
    dlat = grid.latitudes - lat_center
    bump = amplitude * np.exp(-(dlon[:, None] ** 2 + dlat[None, :] ** 2) / (2 * width ** 2))
    out = np.zeros(grid.state_shape)
    out[H] = bump
    return out
