"""Numerical self-checks: adjoint identity, Taylor test, partition of unity, dense oracle.

Each check returns a :class:`CheckResult`. :data:`FAULTS` is a test hook:
adding ``"adjoint_sign"`` flips the sign of the adjoint output inside the
dot-product check, which must then fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import swe
from .assimilation import AssimilationSetup, global_problem
from .covariance import CovarianceFactor
from .observations import observation_layout, synth_observations
from .solver import GnConfig, GOperator, solve_normal_equations
from .spacetime import SpaceTimeGrid, build_decomposition, reconstruct, restrict

FAULTS = set()
TAYLOR_EPS = (1e-2, 1e-3, 1e-4, 1e-5)
# Perturbation scales (u, v, h) that keep the Taylor test in its asymptotic range.
TAYLOR_SCALE = (500.0, 500.0, 20000.0)


@dataclass
class CheckResult:
    name: str
    metric: str
    value: float
    tolerance: float
    passed: bool
    seconds: float = 0.0
    detail: str = ""

    def row(self):
        return {"check": self.name, "metric": self.metric, "value": float(self.value),
                "tolerance": float(self.tolerance), "passed": bool(self.passed),
                "seconds": self.seconds, "detail": self.detail}


CHECK_FIELDS = ("check", "metric", "value", "tolerance", "passed", "seconds", "detail")


def reference_state(grid, params):
    """Smooth, dynamically active state used by the model checks."""
    return (swe.balanced_zonal_flow(grid, params, u0=20.0)
            + swe.height_bump(grid, 50.0))


def adjoint_check(grid, params, rng, pairs=100, tol=1e-12):
    """``max |<dy, TLM dx> - <ADJ dy, dx>| / (|dx| |dy|)`` over random pairs."""
    t0 = time.perf_counter()
    traj = swe.propagate(reference_state(grid, params), params, grid, grid.M - 1)
    worst = 0.0
    for _ in range(pairs):
        dx = rng.standard_normal(grid.state_shape)
        dy = rng.standard_normal(grid.state_shape)
        tlm = swe.tlm_apply(traj, 0, grid.M - 1, dx)
        adj = swe.adj_apply(traj, 0, grid.M - 1, dy)
        if "adjoint_sign" in FAULTS:
            adj = -adj
        gap = abs(float(np.vdot(dy, tlm)) - float(np.vdot(adj, dx)))
        worst = max(worst, gap / (np.linalg.norm(dx) * np.linalg.norm(dy)))
    return CheckResult("adjoint", "max relative dot-product gap", float(worst), tol,
                       bool(worst <= tol),
                       time.perf_counter() - t0, f"{pairs} pairs, M={grid.M}")


def taylor_errors(grid, params, rng, eps=TAYLOR_EPS, scale=TAYLOR_SCALE):
    """Relative centred-difference errors of the tangent-linear model."""
    z = reference_state(grid, params)
    n = grid.M - 1
    traj = swe.propagate(z, params, grid, n)
    d = rng.standard_normal(grid.state_shape) * np.asarray(scale)[:, None, None]
    lin = swe.tlm_apply(traj, 0, n, d)
    errs = []
    for e in eps:
        plus = swe.propagate(z + e * d, params, grid, n).last
        minus = swe.propagate(z - e * d, params, grid, n).last
        errs.append(np.linalg.norm((plus - minus) / (2 * e) - lin) / np.linalg.norm(lin))
    return np.array(errs)


def taylor_order(eps, errs):
    """Least-squares slope of ``log(err)`` against ``log(eps)``."""
    return float(np.polyfit(np.log10(eps), np.log10(errs), 1)[0])


def taylor_check(grid, params, rng, min_order=1.9):
    t0 = time.perf_counter()
    errs = taylor_errors(grid, params, rng)
    order = taylor_order(TAYLOR_EPS, errs)
    return CheckResult("taylor", "observed convergence order", order, min_order,
                       order >= min_order, time.perf_counter() - t0,
                       "errors " + " ".join(f"{e:.3e}" for e in errs))


def decomposition_shapes(grid):
    """Up to five valid decompositions of ``grid``, including a periodic-seam split."""
    cands = [(1, 2, 1, 1, 0, 0), (1, 3, 1, 1, 0, 0), (1, 2, 2, 1, 1, 0), (2, 2, 1, 1, 0, 0),
             (3, 1, 2, 0, 1, 0), (1, 1, 3, 0, 1, 0), (2, 1, 1, 0, 0, 1), (1, 4, 1, 1, 0, 0),
             (3, 2, 1, 1, 0, 0), (1, 3, 2, 0, 1, 0), (1, 2, 3, 1, 0, 0), (3, 3, 1, 0, 0, 0),
             (1, 1, 2, 0, 1, 0), (3, 1, 1, 0, 0, 0)]
    shapes = []
    for q, p1, p2, ox, oy, ot in cands:
        try:
            build_decomposition(grid, q, p1, p2, ox, oy, ot)
        except ValueError:
            continue
        shapes.append((q, p1, p2, ox, oy, ot))
        if len(shapes) == 5:
            break
    return shapes


def partition_check(grid, rng, fields=20):
    """``reconstruct(restrict(f))`` equals ``f`` element-wise for random fields."""
    t0 = time.perf_counter()
    shapes = decomposition_shapes(grid)
    bad = 0
    for shape in shapes:
        dec = build_decomposition(grid, *shape)
        for _ in range(fields):
            f = rng.standard_normal(grid.field_shape)
            back = reconstruct([restrict(f, s) for s in dec], dec)
            bad += int(np.count_nonzero(back != f))
    return CheckResult("partition_of_unity", "mismatched entries", float(bad), 0.0, bad == 0,
                       time.perf_counter() - t0, f"{len(shapes)} shapes x {fields} fields")


def oracle_problem(grid, params, rng, kind="diagonal", sigma_r=0.1, coverage=0.25):
    """Small assimilation problem for dense comparisons."""
    z = reference_state(grid, params)
    truth = swe.propagate(z, params, grid, grid.M - 1)
    sigma = (1.0, 1.0, 10.0)
    cov = CovarianceFactor.for_grid(grid, kind, sigma, 1.0)
    background = z + cov.apply(rng.standard_normal(grid.state_shape))
    layout = observation_layout(grid, rng, every=1, coverage=coverage, boundary_rows=0)
    obs = synth_observations(truth, layout, 0.0, rng)
    return AssimilationSetup(grid, params, background, cov, obs, sigma_r=sigma_r)


def oracle_error(setup, cfg=None):
    """Relative gap between the matrix-free increment and a dense direct solve."""
    cfg = GnConfig() if cfg is None else cfg
    problem = global_problem(setup)
    traj = problem.trajectory(setup.background)
    gop = GOperator(problem, traj)
    d = problem.misfit(traj)
    du, _, stats = solve_normal_equations(gop, problem.covariance, d, cfg)
    g = gop.dense()
    eye = np.eye(problem.size)
    w = np.column_stack([problem.weight_apply(eye[c]) for c in range(problem.size)])
    v = problem.covariance.dense()
    a = np.linalg.inv(v @ v.T) + g.T @ w @ g
    ref = np.linalg.solve(a, g.T @ w @ d)
    return float(np.linalg.norm(du.ravel() - ref) / np.linalg.norm(ref)), stats


def oracle_check(grid, params, rng, tol=1e-8):
    t0 = time.perf_counter()
    err, stats = oracle_error(oracle_problem(grid, params, rng))
    return CheckResult("normal_equations_oracle", "relative increment error", err, tol,
                       err <= tol, time.perf_counter() - t0,
                       f"{stats.iterations} CG iterations")


def run_checks(n=6, M=3, pairs=20, seed=7, adjoint_tol=1e-12, taylor_order=1.9,
               oracle_tol=1e-8, params=None):
    """All checks on an ``n x n`` grid with ``M`` levels; returns a list of results."""
    grid = SpaceTimeGrid.band(n, M, 3600.0)
    params = swe.SweParams() if params is None else params
    params.validate(grid)
    seeds = np.random.SeedSequence(seed).spawn(4)
    rngs = [np.random.default_rng(s) for s in seeds]
    return [adjoint_check(grid, params, rngs[0], pairs, adjoint_tol),
            taylor_check(grid, params, rngs[1], taylor_order),
            partition_check(grid, rngs[2]),
            oracle_check(grid, params, rngs[3], oracle_tol)]
