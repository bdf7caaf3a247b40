"""Analytical performance model for the decomposed solver.

Covers the surface-to-volume ratio of a uniform space-time split, the
theoretical scale-up bound from iteration counts and a polynomial cost
model of the tangent-linear model, the measured scale-up from timings, the
accelerator-adjusted scale-up factor and a per-subdomain memory model. The
functions are pure; the table builders return lists of row dictionaries
ready for CSV output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError

# Reference measurements used for calibration and report formatting.
MEMORY_TABLE_MB = {32: 177.0, 40: 286.0, 48: 485.0, 56: 812.0, 64: 1313.0, 72: 2041.0,
                   80: 3057.0, 88: 4427.0}
ACCELERATOR_SPEEDUP = {32: 15.3, 40: 17.5, 48: 18.08, 56: 19.0, 64: 19.8, 72: 20.2,
                       80: 22.5, 88: 20.54}
WEAK_SCALING_TABLE = ((2, 6.1e3, 3.3), (4, 1.2e4, 15.4), (8, 2.4e4, 54.1),
                      (16, 4.9e4, 123.0), (32, 9.8e4, 230.0), (64, 1.9e5, 320.0))
BYTES_PER_MB = 2 ** 20


@dataclass(frozen=True)
class ComplexityPoly:
    """Cost polynomial ``sum_i coefficients[i] * N**i`` of one tangent-linear step."""

    coefficients: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        c = tuple(float(a) for a in self.coefficients)
        if not c or c[-1] == 0:
            raise ConfigurationError("leading coefficient must be nonzero",
                                     key="perf.coefficients")
        object.__setattr__(self, "coefficients", c)

    @property
    def degree(self):
        return len(self.coefficients) - 1

    def __call__(self, n):
        return float(np.polyval(self.coefficients[::-1], n))

    def normalized(self, n):
        """``P(n) / n**d``: tends to the leading coefficient as ``n`` grows."""
        d = self.degree
        return float(sum(a * float(n) ** (i - d) for i, a in enumerate(self.coefficients)))

    @classmethod
    def monomial(cls, degree=2, coefficient=1.0):
        return cls((0.0,) * degree + (coefficient,))


@dataclass(frozen=True)
class ScalabilityRecord:
    """Inputs of one scalability data point (times in seconds)."""

    QP: int
    N_loc: float
    rho_G: float
    rho_DD: float
    T_flop: float
    T_oh: float
    s_loc: float = 1.0

    def __post_init__(self):
        for name in ("QP", "N_loc", "rho_G", "rho_DD", "T_flop", "s_loc"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0", key=f"perf.{name}")
        if not self.T_oh >= 0:
            raise ConfigurationError("T_oh must be >= 0", key="perf.T_oh")

    @property
    def N(self):
        return self.N_loc * self.QP


@dataclass(frozen=True)
class AlphaValue:
    """Accelerator-adjusted factor and whether its hypothesis held."""

    value: float
    in_model: bool
    s_loc: float
    sv_ratio: float


def surface_to_volume(D_t, D_s):
    """Surface-to-volume ratio ``2 (1/D_t + 1/D_s)`` of a ``D_t x D_s`` space-time block."""
    if not (D_t >= 1 and D_s >= 1):
        raise DimensionError(f"block sizes must be >= 1, got D_t={D_t}, D_s={D_s}")
    return 2.0 * (1.0 / D_t + 1.0 / D_s)


def block_sizes(dec):
    """``(D_t, D_s)``: owned time levels and owned spatial points per subdomain."""
    g = dec.grid
    return g.M // dec.q, (g.nlon // dec.p1) * (g.nlat // dec.p2)


def discrete_surface_to_volume(dec, key=(1, 1), width=1):
    """Halo-to-core point ratio of one subdomain counted on the index plane.

    The subdomain's owned points are laid out as a rectangle in the
    (time level, flattened spatial index) plane; the halo is the band of
    ``width`` points around it. The count exceeds the continuous ratio by
    the ``4 width**2`` corner points.
    """
    sub = dec.get(*key)
    D_t, D_s = block_sizes(dec)
    core = np.zeros((D_t + 2 * width, D_s + 2 * width), dtype=bool)
    core[width:width + D_t, width:width + D_s] = True
    band = np.zeros_like(core)
    for dt in range(-width, width + 1):
        for ds in range(-width, width + 1):
            band |= np.roll(np.roll(core, dt, axis=0), ds, axis=1)
    halo = int(np.count_nonzero(band & ~core))
    owned = int(np.count_nonzero(core))
    if owned != D_t * D_s or sub.owned_time_range[1] - sub.owned_time_range[0] != D_t:
        raise DimensionError("subdomain does not match the uniform block sizes")
    return halo / owned


def corner_correction(D_t, D_s, width=1):
    """Difference between the discrete halo ratio and the continuous formula."""
    return 4.0 * width ** 2 / (D_t * D_s)


def alpha(N_loc, QP, poly):
    """Ratio ``(P(N)/N**d) / (P(N_loc)/N_loc**d)`` with ``N = QP * N_loc``.

    Equals 1 for a monomial cost and tends to 1 as ``N_loc`` grows.
    """
    if not (N_loc > 0 and QP > 0):
        raise DimensionError("N_loc and QP must be > 0")
    return poly.normalized(QP * N_loc) / poly.normalized(N_loc)


def theoretical_scaleup(rho_G, rho_DD, N_loc, QP, poly=None):
    """Lower bound ``(rho_G / rho_DD) * alpha * QP**(d - 1)`` on the scale-up factor."""
    poly = ComplexityPoly() if poly is None else poly
    if not (rho_G > 0 and rho_DD > 0):
        raise DimensionError("iteration products must be > 0")
    return (rho_G / rho_DD) * alpha(N_loc, QP, poly) * float(QP) ** (poly.degree - 1)


def measured_scaleup(T_flop, T_oh, QP, T_global=None, literal=False):
    """Measured scale-up from ``QP`` concurrent local solves.

    By default returns ``T_global / (QP * (T_flop + T_oh))``, where
    ``T_global`` is the time of the undecomposed problem and ``T_flop``,
    ``T_oh`` the local compute and overhead times. With ``literal=True`` the
    local time replaces ``T_global``, which bounds the value by ``1 / QP``.
    """
    if not (T_flop > 0 and T_oh >= 0 and QP > 0):
        raise DimensionError("need T_flop > 0, T_oh >= 0 and QP > 0")
    if literal:
        numerator = T_flop
    else:
        if T_global is None or not T_global > 0:
            raise DimensionError("T_global > 0 is required unless literal=True")
        numerator = T_global
    return numerator / (QP * (T_flop + T_oh))


def alpha_measured(s_loc, sv_ratio):
    """Accelerator-adjusted factor ``s_loc / (1 + s_loc * sv_ratio)``.

    The value is returned in all cases; ``in_model`` is False when the
    hypothesis ``s_loc >= 1`` and ``0 <= sv_ratio < 1 - 1/s_loc`` fails.
    """
    value = s_loc / (1.0 + s_loc * sv_ratio)
    ok = bool(s_loc >= 1 and 0 <= sv_ratio < 1.0 - 1.0 / s_loc)
    return AlphaValue(float(value), ok, float(s_loc), float(sv_ratio))


def scaleup_bracket(sc, s_loc, sv_ratio, QP):
    """Whether ``alpha_measured * sc`` lies in ``(sc, QP * sc]``.

    Returns None when the inputs are outside the model (``s_loc`` not in
    ``[1, QP]`` or the ratio hypothesis fails).
    """
    a = alpha_measured(s_loc, sv_ratio)
    if not (a.in_model and 1 <= s_loc <= QP):
        return None
    meas = a.value * sc
    return bool(sc < meas <= QP * sc)


@dataclass(frozen=True)
class MemoryModel:
    """``bytes = c4 * n_loc**4 + c0`` calibrated by relative least squares."""

    c4: float
    c0: float

    @classmethod
    def calibrate(cls, table=None):
        table = MEMORY_TABLE_MB if table is None else table
        n = np.array(sorted(table), dtype=float)
        y = np.array([table[k] for k in sorted(table)], dtype=float) * BYTES_PER_MB
        a = np.column_stack([n ** 4, np.ones_like(n)]) / y[:, None]
        c4, c0 = np.linalg.lstsq(a, np.ones_like(n), rcond=None)[0]
        return cls(float(c4), float(c0))

    def __call__(self, n_loc):
        if not n_loc >= 1:
            raise DimensionError("n_loc must be >= 1")
        return self.c4 * float(n_loc) ** 4 + self.c0


def memory_estimate(n_loc, model=None):
    """Modelled bytes needed to hold one ``n_loc x n_loc`` subdomain's dense workspace."""
    model = MemoryModel.calibrate() if model is None else model
    return model(n_loc)


def artifact_memory(n_loc, levels, nnz_per_row=25, stages=4):
    """Approximate bytes of this package's matrix-free local solve.

    Counts the stored trajectory and, per level, ``stages`` sparse Jacobians
    in CSR form (8-byte values, 4-byte column indices).
    """
    if not (n_loc >= 1 and levels >= 1):
        raise DimensionError("n_loc and levels must be >= 1")
    rows = 3 * n_loc * n_loc
    state = 8 * rows
    jac = stages * (12 * nnz_per_row * rows + 4 * (rows + 1))
    return float(levels * (state + jac))


def memory_table(model=None, levels=8):
    """Rows ``n_loc, reference_MB, model_MB, relative_error, artifact_MB``."""
    model = MemoryModel.calibrate() if model is None else model
    rows = []
    for n, ref in sorted(MEMORY_TABLE_MB.items()):
        est = model(n) / BYTES_PER_MB
        rows.append({"n_loc": n, "reference_MB": ref, "model_MB": est,
                     "relative_error": abs(est - ref) / ref,
                     "artifact_MB": artifact_memory(n, levels) / BYTES_PER_MB})
    return rows


def memory_ratio_diagnostic(table=None):
    """Observed ``Data(64) / Data(32)`` against the quartic prediction 16."""
    table = MEMORY_TABLE_MB if table is None else table
    observed = table[64] / table[32]
    return {"observed": observed, "quartic": 16.0,
            "relative_gap": abs(observed - 16.0) / 16.0}


def speedup_table(sv_ratio=0.0, speedups=None):
    """Rows ``n_loc, s_loc, alpha, in_model`` for what-if accelerator studies."""
    speedups = ACCELERATOR_SPEEDUP if speedups is None else speedups
    rows = []
    for n, s in sorted(speedups.items()):
        a = alpha_measured(s, sv_ratio)
        rows.append({"n_loc": n, "s_loc": s, "sv_ratio": sv_ratio, "alpha": a.value,
                     "in_model": a.in_model})
    return rows


def modeled_times(QP, N_loc, poly=None, flop_time=1e-9, gather_cost=None):
    """Modelled ``(T_global, T_flop, T_oh)`` for one iteration.

    Compute time is ``flop_time * P(n)``. The overhead models gathering the
    local results at one process: ``gather_cost`` seconds per subdomain per
    local point (default ``2e-3 * flop_time * N_loc``), so it grows
    linearly with ``QP``.
    """
    poly = ComplexityPoly() if poly is None else poly
    gather_cost = 2e-3 * flop_time * N_loc if gather_cost is None else gather_cost
    t_global = flop_time * poly(QP * N_loc)
    t_flop = flop_time * poly(N_loc)
    t_oh = gather_cost * QP * N_loc
    return t_global, t_flop, t_oh


def weak_scaling_table(N_loc=3 * 32 * 32, qps=(2, 4, 8, 16, 32, 64), poly=None,
                       rho_G=1.0, rho_DD=1.0, D_t=4, reference=False, timings=None):
    """Weak-scaling rows at fixed local size.

    Each row carries the modelled (or, with ``timings``, measured) scale-up,
    the theoretical bound and the surface-to-volume ratio of a ``D_t`` by
    ``N_loc / 3`` block (three fields per grid point). ``timings`` maps
    ``QP`` to ``(T_global, T_flop, T_oh)``. With ``reference=True`` the
    published reference values are echoed in extra columns.
    """
    poly = ComplexityPoly() if poly is None else poly
    ref = {qp: (size, sc) for qp, size, sc in WEAK_SCALING_TABLE}
    rows = []
    for qp in qps:
        source = "measured" if timings and qp in timings else "modeled"
        t_g, t_f, t_o = (timings[qp] if source == "measured"
                         else modeled_times(qp, N_loc, poly))
        row = {"QP": qp, "problem_size": qp * N_loc, "source": source,
               "T_global_s": t_g, "T_flop_s": t_f, "T_oh_s": t_o,
               "Sc_meas": measured_scaleup(t_f, t_o, qp, T_global=t_g),
               "Sc_theory": theoretical_scaleup(rho_G, rho_DD, N_loc, qp, poly),
               "surface_to_volume": surface_to_volume(D_t, N_loc / 3)}
        if reference and qp in ref:
            row["reference_problem_size"], row["reference_Sc_meas"] = ref[qp]
        rows.append(row)
    return rows


def strong_scaling_table(N, qps=(1, 2, 4, 8, 16), poly=None, D_t=4, rho_G=1.0, rho_DD=1.0):
    """Strong-scaling rows at fixed total size ``N`` split in space only.

    Each row holds the theoretical bound and the surface-to-volume ratio of
    a ``D_t`` by ``N / (3 QP)`` block.
    """
    poly = ComplexityPoly() if poly is None else poly
    rows = []
    for qp in qps:
        n_loc = N / qp
        rows.append({"QP": qp, "N_loc": n_loc,
                     "Sc_theory": theoretical_scaleup(rho_G, rho_DD, n_loc, qp, poly),
                     "surface_to_volume": surface_to_volume(D_t, n_loc / 3)})
    return rows
