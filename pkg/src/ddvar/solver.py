"""Incremental Gauss-Newton with background-preconditioned conjugate gradients.

Each outer iteration linearises the local model about the current
trajectory and solves the normal equations in the preconditioned variable
``w`` (with ``u = u_b + V w``)::

    (I (1 + damping) + V^T G^T W G V) dw = V^T G^T W d - w

by conjugate gradients. Only ``V`` and ``V^T`` are applied, never a
pseudo-inverse.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericalError, StepSizeError

MAX_ESCALATIONS = 3
START_DAMPING = 1e-4


@dataclass(frozen=True)
class GnConfig:
    """Outer/inner iteration limits and tolerances.

    ``damping > 0`` adds ``damping * I`` to the preconditioned normal matrix
    (Levenberg-Marquardt).
    """

    max_outer: int = 10
    outer_tol: float = 1e-8
    max_inner: int = 500
    inner_tol: float = 1e-12
    damping: float = 0.0

    def __post_init__(self):
        if self.max_outer < 1:
            raise ConfigurationError("need max_outer >= 1", key="solver.max_outer")
        if self.max_inner < 1:
            raise ConfigurationError("need max_inner >= 1", key="solver.max_inner")
        if not self.outer_tol > 0:
            raise ConfigurationError("need outer_tol > 0", key="solver.outer_tol")
        if not self.inner_tol > 0:
            raise ConfigurationError("need inner_tol > 0", key="solver.inner_tol")
        if not self.damping >= 0:
            raise ConfigurationError("need damping >= 0", key="solver.damping")

    def to_dict(self):
        return {"max_outer": self.max_outer, "outer_tol": self.outer_tol,
                "max_inner": self.max_inner, "inner_tol": self.inner_tol,
                "damping": self.damping}


class GOperator:
    """Linearised observation-and-overlap operator of one local problem.

    ``apply`` maps a control increment to the stacked residual space:
    propagate it with the tangent-linear model and sample every residual
    block at its level. ``transpose_apply`` is the exact adjoint.
    """

    def __init__(self, problem, traj):
        self.problem = problem
        self.traj = traj
        self.mask = None if problem.mask is None else problem.mask.ravel()
        self.by_level = {}
        for n, b in enumerate(problem.blocks):
            s = slice(problem.offsets[n], problem.offsets[n + 1])
            self.by_level.setdefault(b.level, []).append((s, b.flat))
        self.last = max(self.by_level) if self.by_level else -1

    @property
    def size(self):
        return self.problem.size

    def _embed(self, du):
        p = self.problem
        if p.mask is None:
            return np.array(du, dtype=float).ravel()
        return p.sub.embed_state(du, np.zeros(p.grid.state_shape)).ravel()

    def apply(self, du):
        y = np.zeros(self.size)
        x = self._embed(du)
        for k in range(self.last + 1):
            for s, flat in self.by_level.get(k, ()):
                y[s] = x[flat]
            if k < self.last:
                x = self.traj.step_tlm(k, x)
                if self.mask is not None:
                    x = x * self.mask
        return y

    def transpose_apply(self, dy):
        p = self.problem
        lam = np.zeros(int(np.prod(p.grid.state_shape)))
        for k in range(self.last, -1, -1):
            if k < self.last:
                if self.mask is not None:
                    lam = lam * self.mask
                lam = self.traj.step_adj(k, lam)
            for s, flat in self.by_level.get(k, ()):
                np.add.at(lam, flat, dy[s])
        state = lam.reshape(p.grid.state_shape)
        return state.copy() if p.mask is None else p.sub.restrict_state(state)

    def dense(self):
        """Dense matrix of :meth:`apply` assembled column by column."""
        shape = self.problem.sub.state_shape
        n = int(np.prod(shape))
        eye = np.eye(n)
        return np.column_stack([self.apply(eye[c].reshape(shape)) for c in range(n)])


def g_apply(gop, du):
    return gop.apply(du)


def g_transpose_apply(gop, dy):
    return gop.transpose_apply(dy)


@dataclass
class IncrementSolveStats:
    iterations: int
    rel_residual: float
    converged: bool
    cost_before: float = None
    cost_after: float = None
    step_norm: float = None


def solve_normal_equations(gop, cov, d, cfg, w=None, damping=None):
    """Conjugate-gradient solve of the preconditioned Gauss-Newton system.

    Parameters
    ----------
    gop : GOperator
    cov : CovarianceFactor
        Factor ``V`` of the local background covariance.
    d : ndarray
        Stacked misfit ``targets - H(trajectory)``.
    w : ndarray, optional
        Current preconditioned control ``V^{-1}(u - u_b)``; zero by default.
    damping : float, optional
        Overrides ``cfg.damping``.

    Returns
    -------
    du, dw, IncrementSolveStats

    Raises
    ------
    NumericalError
        On non-positive curvature ``<p, A p> <= 0``.
    """
    damping = cfg.damping if damping is None else damping
    weight = gop.problem.weight_apply
    shape = cov.shape

    def normal(x):
        gx = gop.apply(cov.apply(x))
        return (1.0 + damping) * x + cov.apply_t(gop.transpose_apply(weight(gx)))

    b = cov.apply_t(gop.transpose_apply(weight(d)))
    if w is not None:
        b = b - w
    if gop.problem.coupling is not None:
        b = b - 0.5 * cov.apply_t(gop.problem.coupling)
    x = np.zeros(shape)
    r = b.copy()
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros(shape), x, IncrementSolveStats(0, 0.0, True)
    p = r.copy()
    rr = float(np.vdot(r, r))
    it = 0
    rel = 1.0
    while it < cfg.max_inner:
        ap = normal(p)
        curv = float(np.vdot(p, ap))
        if not curv > 0:
            raise NumericalError(f"non-positive curvature {curv:.3e} at inner iteration {it + 1}")
        alpha = rr / curv
        x = x + alpha * p
        r = r - alpha * ap
        it += 1
        rr_new = float(np.vdot(r, r))
        rel = np.sqrt(rr_new) / bnorm
        if rel <= cfg.inner_tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return cov.apply(x), x, IncrementSolveStats(it, float(rel), bool(rel <= cfg.inner_tol))


@dataclass
class GnResult:
    """Outcome of a local Gauss-Newton minimisation."""

    u: np.ndarray
    traj: object
    costs: list
    inner_iterations: list
    step_norms: list
    converged: bool
    flagged: str = ""
    escalations: int = 0
    stats: list = field(default_factory=list)

    @property
    def outer_iterations(self):
        return len(self.inner_iterations)

    @property
    def rho(self):
        """Iteration product: outer iterations times the largest inner count."""
        return self.outer_iterations * max(self.inner_iterations, default=0)

    @property
    def cost(self):
        return self.costs[-1]


def _safe_cost(problem, u):
    try:
        return problem.cost(u)
    except StepSizeError:
        return None, None


def gauss_newton(problem, cfg, u0=None):
    """Minimise a :class:`~ddvar.assimilation.LocalProblem` by Gauss-Newton.

    Starts from the local background unless ``u0`` is given. Stops when the
    relative cost decrease drops below ``outer_tol``, when the step satisfies
    ``|du|_inf < outer_tol * (1 + |u|_inf)``, or after ``max_outer``
    iterations. A step that raises the cost is retried with escalating
    damping (at most three times); if it still fails the run ends flagged
    with the last accepted iterate.
    """
    cov = problem.covariance
    u = np.array(problem.background if u0 is None else u0, dtype=float)
    cost, traj = problem.cost(u)
    result = GnResult(u=u, traj=traj, costs=[cost], inner_iterations=[], step_norms=[],
                      converged=False)
    damping = cfg.damping
    for _ in range(cfg.max_outer):
        d = problem.misfit(traj)
        w = cov.solve(u - problem.background)
        gop = GOperator(problem, traj)
        while True:
            du, _, stats = solve_normal_equations(gop, cov, d, cfg, w=w, damping=damping)
            u_new = u + du
            new_cost, new_traj = _safe_cost(problem, u_new)
            obj = problem.objective(cost, u)
            slack = 1e-12 * abs(obj) + 1e-300
            if new_cost is not None and problem.objective(new_cost, u_new) <= obj + slack:
                break
            if result.escalations >= MAX_ESCALATIONS:
                result.inner_iterations.append(stats.iterations)
                result.flagged = "cost increase persisted after damping escalation"
                return result
            damping = START_DAMPING if damping == 0 else 10.0 * damping
            result.escalations += 1
        step = float(np.max(np.abs(du))) if du.size else 0.0
        stats.cost_before, stats.cost_after, stats.step_norm = cost.total, new_cost.total, step
        result.stats.append(stats)
        result.inner_iterations.append(stats.iterations)
        result.step_norms.append(step)
        result.costs.append(new_cost)
        obj = problem.objective(cost, u)
        decrease = (obj - problem.objective(new_cost, u_new)) / abs(obj) if obj else 0.0
        u, cost, traj = u_new, new_cost, new_traj
        result.u, result.traj = u, traj
        if decrease < cfg.outer_tol or step < cfg.outer_tol * (1.0 + np.max(np.abs(u))):
            result.converged = True
            break
        if stats.iterations == 0:
            result.converged = True
            break
    return result


LOG_FIELDS = ("j", "i", "round", "outer", "inner_iterations", "J_background", "J_obs",
              "J_overlap", "J_total", "step_norm")


def convergence_rows(result, key=(1, 1), round_index=0):
    """Per-outer-iteration log rows of one Gauss-Newton run."""
    rows = []
    for n, c in enumerate(result.costs[1:]):
        rows.append({"j": key[0], "i": key[1], "round": round_index, "outer": n + 1,
                     "inner_iterations": result.inner_iterations[n],
                     "J_background": c.background, "J_obs": c.observation,
                     "J_overlap": c.overlap, "J_total": c.total,
                     "step_norm": result.step_norms[n]})
    return rows


def rows_to_csv(rows, fields=LOG_FIELDS):
    """CSV text with floats written in round-trip precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([repr(float(row[f])) if isinstance(row[f], (float, np.floating))
                         else row[f] for f in fields])
    return buf.getvalue()
