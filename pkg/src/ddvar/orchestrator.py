"""Domain-decomposed 4D-Var driver with additive-Schwarz overlap exchange.

Each round solves every local problem concurrently with inputs frozen from
the previous round (Jacobi semantics), then exchanges overlap values and
rebuilds the global space-time field by partition-of-unity reconstruction.
Rounds stop once the largest max-norm change of any local iterate falls
below ``eps`` times the max norm of the background trajectory.

Inputs of round ``l + 1`` for subdomain ``(j, i)``:

* exterior (boundary) values: the reconstruction after round ``l``;
* background anchor at the first local level: for ``j == 1`` the global
  background state; for ``j > 1`` the round-``l`` iterate of ``(j - 1, i)``
  at that level when the two windows share it, otherwise one model step of
  the reconstruction from the preceding level;
* neighbour values: round-``l`` iterates of adjacent subdomains on the
  shared overlap regions.

With ``coherence`` enabled (and more than one subdomain) two additions make
the fixed point of the rounds the minimiser of the global cost:

* subdomains starting at the first level get a linear coupling term
  ``<c, u>`` with ``c`` the restricted global gradient at the current
  reconstruction minus the local gradient there, so local and global
  first-order conditions agree;
* the round update is not taken in full. The change of the reconstruction
  (combined with the previous search direction, Polak-Ribiere style) is a
  search direction for the global cost, and a step length along it is
  chosen by a safeguarded parabolic line search. This keeps the global cost
  decreasing even where local curvature underestimates the global one.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import swe
from .assimilation import build_local_problem, global_problem
from .errors import ConfigurationError, StepSizeError
from .solver import GnConfig, convergence_rows, gauss_newton
from .spacetime import build_decomposition, overlap_region, reconstruct, restrict

EXCHANGE_MODES = ("outer_round", "every_gn_iteration")


@dataclass(frozen=True)
class DdRunConfig:
    """Decomposition shape, local solver settings and exchange-loop controls."""

    q: int = 1
    p1: int = 1
    p2: int = 1
    o_x: int = 0
    o_y: int = 0
    o_t: int = 0
    gn: GnConfig = field(default_factory=GnConfig)
    eps: float = 1e-6
    max_rounds: int = 50
    exchange_every: str = "outer_round"
    coherence: bool = True

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError("need eps > 0", key="solver.eps")
        if self.max_rounds < 1:
            raise ConfigurationError("need max_rounds >= 1", key="solver.max_rounds")
        if self.exchange_every not in EXCHANGE_MODES:
            raise ConfigurationError(f"must be one of {EXCHANGE_MODES}",
                                     key="solver.exchange_every")

    def decomposition(self, grid):
        return build_decomposition(grid, self.q, self.p1, self.p2, self.o_x, self.o_y, self.o_t)

    def undecomposed(self):
        return replace(self, q=1, p1=1, p2=1, o_x=0, o_y=0, o_t=0)

    def local_gn(self):
        if self.exchange_every == "every_gn_iteration":
            return replace(self.gn, max_outer=1)
        return self.gn

    def to_dict(self):
        return {"q": self.q, "p1": self.p1, "p2": self.p2, "o_x": self.o_x, "o_y": self.o_y,
                "o_t": self.o_t, "gn": self.gn.to_dict(), "eps": self.eps,
                "max_rounds": self.max_rounds, "exchange_every": self.exchange_every,
                "coherence": self.coherence}


@dataclass(eq=False)
class AnalysisReport:
    """Result of a (decomposed or global) assimilation run.

    ``analysis`` is the reconstructed space-time field and ``analysis_cost``
    the global cost of its initial state. The gather candidate with the
    smallest global cost is recorded in ``gather_key`` / ``gather_cost``.
    """

    decomposition: object
    background: np.ndarray
    analysis: np.ndarray
    analysis_cost: object
    background_cost: object
    gather_key: tuple
    gather_cost: object
    candidate_costs: dict
    gather_divergence: float
    rounds: int
    converged: bool
    changes: list
    local_costs: list
    rho_rounds: list
    rho_dd: int
    rho_total: int
    errors: list = None
    log_rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    notices: list = field(default_factory=list)
    step_lengths: list = field(default_factory=list)

    @property
    def analysis_initial(self):
        return self.analysis[0]

    @property
    def keys(self):
        return [s.key for s in self.decomposition]

    def summary(self):
        """JSON-ready dictionary of everything except the large fields and timings."""
        return {
            "decomposition": {k: v for k, v in self.decomposition.to_dict().items()
                              if k != "subdomains"},
            "subdomains": [s.key for s in self.decomposition],
            "rounds": self.rounds,
            "converged": self.converged,
            "analysis_cost": self.analysis_cost.to_dict(),
            "background_cost": self.background_cost.to_dict(),
            "gather": {"key": list(self.gather_key), "cost": self.gather_cost.to_dict(),
                       "divergence_from_analysis": self.gather_divergence},
            "candidate_costs": [{"j": k[0], "i": k[1], "total": c.total}
                                for k, c in self.candidate_costs.items()],
            "changes": self.changes,
            "step_lengths": self.step_lengths,
            "rho": {"rho_dd": self.rho_dd, "rho_total": self.rho_total,
                    "per_round": self.rho_rounds},
            "notices": self.notices,
        }


def exchange_overlaps(iterates, dec):
    """Neighbour tables: ``tables[key][nbr_key]`` = neighbour's values on the shared region.

    ``iterates`` maps subdomain keys to local fields ``(T, 3, X, Y)``.
    """
    tables = {}
    for sub in dec:
        row = {}
        for nb in dec.neighbors(sub):
            row[nb.key] = overlap_region(sub, nb).take_local(iterates[nb.key], nb)
        tables[sub.key] = row
    return tables


def _anchor(sub, dec, setup, iterates, recon):
    if sub.j == 1:
        return sub.restrict_state(setup.background)
    prev = dec.get(sub.j - 1, sub.i)
    if prev.t_start <= sub.t_start < prev.t_stop:
        return iterates[prev.key][sub.t_start - prev.t_start]
    state = swe.step(recon[sub.t_start - 1], setup.params, setup.grid)
    return sub.restrict_state(state)


def _same(a, b):
    if a is None or b is None:
        return False
    if a.keys() != b.keys():
        return False
    return all(np.array_equal(a[k], b[k]) for k in a)


def _local_inputs(sub, dec, setup, iterates, recon, tables):
    full = sub.spatial_mask(setup.grid).all()
    inputs = {"anchor": _anchor(sub, dec, setup, iterates, recon),
              "start": iterates[sub.key][0]}
    if not full:
        inputs["boundary"] = recon[sub.t_start:sub.t_stop]
    for nkey, val in tables[sub.key].items():
        inputs[f"nbr{nkey}"] = val
    return inputs


def _relaxation(problem, u, step, grad, shrink=0.5, max_trials=30):
    """Step length along ``step`` from ``u`` that lowers the cost of ``problem``.

    A parabola through the cost at 0, its slope ``<grad, step>`` and the cost
    at 1 proposes the length; it is halved until the cost decreases. Returns
    0 when ``step`` is not a descent direction.
    """
    slope = float(np.vdot(grad, step))
    if not slope < 0:
        return 0.0

    def cost(alpha):
        try:
            return problem.cost(u + alpha * step)[0].total
        except StepSizeError:
            return np.inf

    j0 = problem.cost(u)[0].total
    j1 = cost(1.0)
    curv = j1 - j0 - slope
    alpha = -slope / (2.0 * curv) if np.isfinite(j1) and curv > 0 else 1.0
    alpha = min(alpha, 4.0)
    for _ in range(max_trials):
        if cost(alpha) < j0:
            return float(alpha)
        alpha *= shrink
    return 0.0


def run_dd(setup, cfg, reference=None, workers=1):
    """Decomposed 4D-Var on ``setup`` with decomposition and solver settings ``cfg``.

    Parameters
    ----------
    reference : ndarray ``(M, 3, nlon, nlat)``, optional
        Field against which per-round errors ``E^l`` are recorded.
    workers : int
        Thread-pool size for local solves; results do not depend on it.
    """
    grid = setup.grid
    dec = cfg.decomposition(grid)
    gn_cfg = cfg.local_gn()
    timings = {"background": 0.0, "local_solve": 0.0, "exchange": 0.0, "gather": 0.0}

    t0 = time.perf_counter()
    bg = swe.propagate(setup.background, setup.params, grid, grid.M - 1).states
    timings["background"] = time.perf_counter() - t0
    bg_norm = float(np.max(np.abs(bg)))

    gproblem = global_problem(setup)
    iterates = {sub.key: restrict(bg, sub) for sub in dec}
    recon = bg
    tables = exchange_overlaps(iterates, dec)
    errors = None
    if reference is not None:
        errors = [{sub.key: float(np.max(np.abs(restrict(reference, sub) - iterates[sub.key])))
                   for sub in dec}]

    memo = {}
    relax_history = []
    prev_search = None
    changes, local_costs, rho_rounds, log_rows = [], [], [], []
    converged = stalled = False
    rounds = 0
    with ThreadPoolExecutor(max_workers=max(1, int(workers))) as pool:
        for rounds in range(1, cfg.max_rounds + 1):
            t1 = time.perf_counter()
            inputs = {sub.key: _local_inputs(sub, dec, setup, iterates, recon, tables)
                      for sub in dec}
            if cfg.coherence and dec.QP > 1:
                ggrad = gproblem.gradient(recon[0])
                for sub in dec:
                    if sub.t_start == 0:
                        inputs[sub.key]["global_gradient"] = sub.restrict_state(ggrad)

            def solve(sub, inputs=inputs):
                key = sub.key
                prev = memo.get(key)
                if prev is not None and _same(prev[0], inputs[key]):
                    return prev[1], prev[2], False
                inp = inputs[key]
                nbr = {k: inp[f"nbr{k}"] for k in tables[key]}
                problem = build_local_problem(setup, sub, dec, boundary=recon,
                                              anchor=inp["anchor"], neighbor_values=nbr)
                if "global_gradient" in inp:
                    base = sub.restrict_state(recon[0])
                    problem.coupling = (inp["global_gradient"]
                                        - problem.gradient(base, with_coupling=False))
                result = gauss_newton(problem, gn_cfg, u0=inp["start"])
                return result, problem.local_field(result.traj), True

            outcomes = list(pool.map(solve, dec.subdomains))
            timings["local_solve"] += time.perf_counter() - t1

            t2 = time.perf_counter()
            new_iterates, rhos, costs = {}, {}, {}
            change = 0.0
            for sub, (result, local, fresh) in zip(dec, outcomes):
                memo[sub.key] = (inputs[sub.key], result, local)
                new_iterates[sub.key] = local
                rhos[sub.key] = result.rho if fresh else 0
                costs[sub.key] = result.cost.total
                change = max(change, float(np.max(np.abs(local - iterates[sub.key]))))
                if result.flagged:
                    log_rows.append({"j": sub.j, "i": sub.i, "round": rounds, "outer": 0,
                                     "inner_iterations": 0, "J_background": float("nan"),
                                     "J_obs": float("nan"), "J_overlap": float("nan"),
                                     "J_total": float("nan"), "step_norm": float("nan")})
                if fresh:
                    log_rows.extend(convergence_rows(result, sub.key, rounds))
            trial = reconstruct([new_iterates[s.key] for s in dec], dec)
            if cfg.coherence and dec.QP > 1:
                direction = {k: v - iterates[k] for k, v in new_iterates.items()}
                field_dir = trial - recon
                beta = 0.0
                if prev_search is not None:
                    beta = max(0.0, float(np.vdot(field_dir[0], prev_search[3] - ggrad))
                               / -float(np.vdot(prev_search[2], prev_search[3])))
                    direction = {k: v + beta * prev_search[0][k] for k, v in direction.items()}
                    field_dir = field_dir + beta * prev_search[1]
                    if not float(np.vdot(ggrad, field_dir[0])) < 0:
                        direction = {k: v - iterates[k] for k, v in new_iterates.items()}
                        field_dir = trial - recon
                alpha = _relaxation(gproblem, recon[0], field_dir[0], ggrad)
                relax_history.append(alpha)
                stalled = alpha == 0.0
                prev_search = (direction, field_dir, (trial - recon)[0], ggrad)
                new_iterates = {k: iterates[k] + alpha * direction[k] for k in iterates}
                trial = recon + alpha * field_dir
                change = max(float(np.max(np.abs(new_iterates[k] - iterates[k])))
                             for k in iterates)
            iterates = new_iterates
            recon = trial
            tables = exchange_overlaps(iterates, dec)
            timings["exchange"] += time.perf_counter() - t2

            changes.append(change)
            local_costs.append(costs)
            rho_rounds.append(max(rhos.values()))
            if reference is not None:
                errors.append({sub.key: float(np.max(np.abs(restrict(reference, sub)
                                                            - iterates[sub.key])))
                               for sub in dec})
            if stalled:
                break
            if change < cfg.eps * bg_norm:
                converged = True
                break

    t3 = time.perf_counter()
    analysis_cost = gproblem.cost(recon[0])[0]
    candidate_costs = {}
    for sub in dec:
        cand = recon.copy()
        cand[sub.t_start:sub.t_stop, :, sub.lon_idx[:, None], sub.lat_idx[None, :]] = \
            iterates[sub.key]
        candidate_costs[sub.key] = gproblem.cost(cand[0])[0]
    gather_key = min(candidate_costs, key=lambda k: (candidate_costs[k].total, k))
    gsub = dec.get(*gather_key)
    winner = recon[0].copy()
    if gsub.t_start == 0:
        winner[:, gsub.lon_idx[:, None], gsub.lat_idx[None, :]] = iterates[gather_key][0]
    timings["gather"] = time.perf_counter() - t3

    notices = []
    if stalled:
        notices.append(f"round {rounds}: no step along the combined local update lowers "
                       f"the global cost; loop stopped")
    elif not converged:
        notices.append(f"exchange loop stopped at the round limit {cfg.max_rounds} "
                       f"without meeting eps")
    if reference is None:
        notices.append("no reference field supplied; E^l table omitted")
    return AnalysisReport(
        decomposition=dec, background=bg, analysis=recon, analysis_cost=analysis_cost,
        background_cost=gproblem.cost(setup.background)[0], gather_key=gather_key,
        gather_cost=candidate_costs[gather_key], candidate_costs=candidate_costs,
        gather_divergence=float(np.max(np.abs(winner - recon[0]))), rounds=rounds,
        converged=converged, changes=changes, local_costs=local_costs,
        rho_rounds=rho_rounds, rho_dd=max(rho_rounds), rho_total=int(sum(rho_rounds)),
        errors=errors, log_rows=log_rows, timings=timings, notices=notices,
        step_lengths=relax_history)


def run_global(setup, cfg, reference=None, workers=1):
    """Undecomposed solve: :func:`run_dd` on the single-subdomain decomposition."""
    return run_dd(setup, cfg.undecomposed(), reference=reference, workers=workers)


def convergence_history(report):
    """Per-round ``E^l`` rows and the fraction of non-increasing transitions.

    Returns ``(rows, monotone_fraction)``; ``rows`` is empty when the run had
    no reference field.
    """
    if report.errors is None:
        return [], None
    rows = []
    for rnd, table in enumerate(report.errors):
        for key in report.keys:
            rows.append({"round": rnd, "j": key[0], "i": key[1], "E": table[key]})
    steps = ok = 0
    for key in report.keys:
        seq = [table[key] for table in report.errors]
        for a, b in zip(seq, seq[1:]):
            steps += 1
            ok += b <= a * (1 + 1e-12)
    return rows, (ok / steps if steps else 1.0)
