"""The iterative engines, exposed as resumable step machines.

Four engines share one :class:`SolverState` layout:

* ``rek``: independent weighted row and column draws every step; the column
  projection cleans z, the row projection refreshes x against b - z.
* ``grak``: greedy thresholding over the stacked residual builds candidate
  index sets, then one stacked index is drawn with probability proportional
  to its squared residual.  Column branches leave x untouched.
* ``agrak``: replaces the draw with a deterministic argmax of the stacked
  criteria and, on column branches, additionally refreshes x along one
  weighted-randomly chosen row.
* ``sampled``: evaluates the same criteria only on a small uniformly sampled
  index subset, redrawn every iteration; branches as in ``agrak``.

``grak`` and ``agrak`` need the full residuals b - z - A x and A^T z each
step.  Those are cached in ``state.scratch`` and updated incrementally after
every branch (the updates touch one row or column of the Gram products), with
a full recomputation every ``RESIDUAL_REFRESH`` steps to cap drift.
``sampled`` deliberately never forms full residuals; that is its point.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .diagnostics import BoundReport
from .errors import ZeroResidual
from .matrix import as_vector
from .sampling import (
    RngStream,
    grak_residual_sample,
    simple_random_subset,
    weighted_column_sample,
    weighted_row_sample,
)
from .stopping import StoppingRule, make_monitor

__all__ = [
    "ENGINES",
    "SolverState",
    "GreedySelection",
    "StepOutcome",
    "RunReport",
    "init_state",
    "rek_step",
    "grak_build_selection",
    "grak_step",
    "agrak_step",
    "sampled_step",
    "run",
]

ENGINES = ("rek", "grak", "agrak", "sampled")

RESIDUAL_REFRESH = 1000


@dataclass
class SolverState:
    """Iterate pair, step counter and the engine's private random stream.

    ``x`` starts in range(A^T) (zero by default) and ``z`` at b; every step
    function advances ``k`` by exactly one.  ``scratch`` holds engine-owned
    caches and is not part of the mathematical state.
    """

    x: np.ndarray
    z: np.ndarray
    k: int
    rng: RngStream
    scratch: dict = field(default_factory=dict)


@dataclass
class StepOutcome:
    """What one step did: branch kind, touched indices, criterion value."""

    kind: str  # "row" | "col" | "converged"
    row: int | None = None
    col: int | None = None
    value: float = 0.0

    @property
    def converged(self) -> bool:
        return self.kind == "converged"


class GreedySelection:
    """Thresholds, candidate index sets and masked residuals of one greedy
    sweep over the stacked system.

    ``residual_row`` is b - z - A x and ``residual_col`` is A^T z (views of
    the engine caches).  ``row_values``/``col_values`` hold the masked
    residual entries on the candidate sets (column values negated);
    ``masked_row_residual``/``masked_col_residual`` expand them to full
    length on demand.
    """

    __slots__ = ("eps", "eps_row", "eps_col", "row_set", "col_set",
                 "row_values", "col_values", "residual_row", "residual_col")

    def __init__(self, eps, eps_row, eps_col, row_set, col_set,
                 row_values, col_values, residual_row, residual_col):
        self.eps = eps
        self.eps_row = eps_row
        self.eps_col = eps_col
        self.row_set = row_set
        self.col_set = col_set
        self.row_values = row_values
        self.col_values = col_values
        self.residual_row = residual_row
        self.residual_col = residual_col

    @property
    def masked_row_residual(self) -> np.ndarray:
        out = np.zeros(self.residual_row.shape[0])
        out[self.row_set] = self.row_values
        return out

    @property
    def masked_col_residual(self) -> np.ndarray:
        out = np.zeros(self.residual_col.shape[0])
        out[self.col_set] = self.col_values
        return out


def init_state(system, seed: int, stream_id: int = 0, x0=None, z0=None) -> SolverState:
    """Fresh state: x0 = 0 (or a caller vector in range(A^T)), z0 = b."""
    n, m = system.mat.n, system.mat.m
    x = np.zeros(n) if x0 is None else as_vector(x0, length=n, name="x0").copy()
    z = system.b.copy() if z0 is None else as_vector(z0, length=m, name="z0").copy()
    return SolverState(x=x, z=z, k=0, rng=RngStream(seed, stream_id))


# ---------------------------------------------------------------------------
# residual caches
# ---------------------------------------------------------------------------


def _residuals(state: SolverState, system):
    """Cached (b - z - A x, A^T z), recomputed on first use and periodically."""
    sc = state.scratch
    if "residual_row" not in sc or sc["stale_steps"] >= RESIDUAL_REFRESH:
        sc["residual_row"] = system.b - state.z - system.mat.matvec(state.x)
        sc["residual_col"] = system.mat.rmatvec(state.z)
        sc["stale_steps"] = 0
    return sc["residual_row"], sc["residual_col"]


def _criteria(state: SolverState, system):
    """Normalized squared criteria of every stacked row, in reused buffers."""
    rr, rc = _residuals(state, system)
    sc = state.scratch
    bufs = sc.get("criteria_buffers")
    if bufs is None:
        bufs = (np.empty(system.mat.m), np.empty(system.mat.n))
        sc["criteria_buffers"] = bufs
    row_crit, col_crit = bufs
    np.multiply(rr, rr, out=row_crit)
    row_crit /= system.mat.aug_row_norms_sq
    np.multiply(rc, rc, out=col_crit)
    col_crit /= system.mat.col_norms_sq
    return rr, rc, row_crit, col_crit


def _apply_stacked_row(state: SolverState, system, i: int, d: float):
    """z_i += d and x += d * A^(i), keeping the residual caches in sync."""
    mat = system.mat
    state.z[i] += d
    mat.add_row_to(state.x, i, d)
    sc = state.scratch
    rr = sc.get("residual_row")
    if rr is not None:
        rr[i] -= d
        mat.gram_row_update(rr, i, -d)
        mat.add_row_to(sc["residual_col"], i, d)
        sc["stale_steps"] += 1


def _apply_column_projection(state: SolverState, system, j: int, c: float):
    """z -= c * A_(j) (c chosen to zero A_(j)'s correlation), caches in sync."""
    mat = system.mat
    mat.add_col_to(state.z, j, -c)
    sc = state.scratch
    rr = sc.get("residual_row")
    if rr is not None:
        mat.add_col_to(rr, j, c)
        mat.gram_col_update(sc["residual_col"], j, -c)
        sc["stale_steps"] += 1


def _apply_x_refresh(state: SolverState, system, i: int, d: float):
    """x += d * A^(i) only (z untouched), caches in sync."""
    mat = system.mat
    mat.add_row_to(state.x, i, d)
    sc = state.scratch
    rr = sc.get("residual_row")
    if rr is not None:
        mat.gram_row_update(rr, i, -d)
        sc["stale_steps"] += 1


# ---------------------------------------------------------------------------
# engines
# ---------------------------------------------------------------------------


def rek_step(state: SolverState, system) -> StepOutcome:
    """One extended-Kaczmarz step: weighted column draw cleans z, weighted
    row draw projects x onto the updated equation A^(i) x = b_i - z_i."""
    mat = system.mat
    i = weighted_row_sample(mat, state.rng)
    j = weighted_column_sample(mat, state.rng)
    c = mat.col_dot(j, state.z) / mat.col_norms_sq[j]
    mat.add_col_to(state.z, j, -c)
    d = (system.b[i] - state.z[i] - mat.row_dot(i, state.x)) / mat.row_norms_sq[i]
    mat.add_row_to(state.x, i, d)
    state.k += 1
    return StepOutcome("col", row=i, col=j, value=abs(d))


def grak_build_selection(state: SolverState, system) -> GreedySelection:
    """Thresholds, index sets and masked residuals of the greedy draw.

    An index enters the row (column) set when its normalized squared
    residual reaches ``eps`` times the total squared stacked residual; the
    thresholds average the best normalized criterion with the inverse
    stacked Frobenius weight, so the argmax index always qualifies.
    """
    rr, rc, row_crit, col_crit = _criteria(state, system)
    mat = system.mat
    total = float(rr @ rr) + float(rc @ rc)
    if total <= 0.0:
        raise ZeroResidual("stacked residual is zero")
    base = 1.0 / (mat.m + 2.0 * mat.frob_sq)
    max_row = float(row_crit.max())
    max_col = float(col_crit.max())
    eps_row = 0.5 * (max_row / total + base)
    eps_col = 0.5 * (max_col / total + base)
    eps = max(eps_row, eps_col)
    threshold = eps * total
    row_set = np.flatnonzero(row_crit >= threshold)
    col_set = np.flatnonzero(col_crit >= threshold)
    if row_set.size == 0 and col_set.size == 0:
        # rounding pushed the threshold past the max; keep the best index
        if max_row >= max_col:
            row_set = np.array([np.argmax(row_crit)])
        else:
            col_set = np.array([np.argmax(col_crit)])
    return GreedySelection(
        eps=eps,
        eps_row=eps_row,
        eps_col=eps_col,
        row_set=row_set,
        col_set=col_set,
        row_values=rr[row_set],
        col_values=-rc[col_set],
        residual_row=rr,
        residual_col=rc,
    )


def grak_step(state: SolverState, system) -> StepOutcome:
    """One greedy randomized step over the stacked system."""
    mat = system.mat
    try:
        sel = grak_build_selection(state, system)
        t = grak_residual_sample(sel, state.rng)
    except ZeroResidual:
        return StepOutcome("converged")
    if t < mat.m:
        d = sel.residual_row[t] / mat.aug_row_norms_sq[t]
        value = sel.residual_row[t] * sel.residual_row[t] / mat.aug_row_norms_sq[t]
        _apply_stacked_row(state, system, t, d)
        out = StepOutcome("row", row=t, value=float(value))
    else:
        j = t - mat.m
        c = sel.residual_col[j] / mat.col_norms_sq[j]
        value = sel.residual_col[j] * sel.residual_col[j] / mat.col_norms_sq[j]
        _apply_column_projection(state, system, j, c)
        out = StepOutcome("col", col=j, value=float(value))
    state.k += 1
    return out


def agrak_step(state: SolverState, system) -> StepOutcome:
    """One accelerated step: deterministic argmax selection; column branches
    also refresh x along a weighted-randomly drawn row.

    Ties break toward the row block, then toward the smallest index.
    """
    rr, rc, row_crit, col_crit = _criteria(state, system)
    mat = system.mat
    i_best = int(np.argmax(row_crit))
    j_best = int(np.argmax(col_crit))
    max_row = float(row_crit[i_best])
    max_col = float(col_crit[j_best])
    if max_row == 0.0 and max_col == 0.0:
        return StepOutcome("converged")
    if max_row >= max_col:
        d = rr[i_best] / mat.aug_row_norms_sq[i_best]
        _apply_stacked_row(state, system, i_best, d)
        out = StepOutcome("row", row=i_best, value=max_row)
    else:
        c = rc[j_best] / mat.col_norms_sq[j_best]
        _apply_column_projection(state, system, j_best, c)
        i = weighted_row_sample(mat, state.rng)
        # cache already reflects the new z, so this is b_i - z_i - A^(i) x
        d = rr[i] / mat.row_norms_sq[i]
        _apply_x_refresh(state, system, i, d)
        out = StepOutcome("col", row=i, col=j_best, value=max_col)
    state.k += 1
    return out


def _subset_argmax(state: SolverState, system, subset):
    """Best stacked index over the subset by the squared criteria.

    Squaring preserves the argmax of the square-root criteria and keeps the
    hot loop free of square roots.  Returns (None, 0.0) when every sampled
    criterion is zero.
    """
    mat = system.mat
    best_t = None
    best = 0.0
    if subset.rows.size:
        rows = subset.rows
        crit = system.b[rows] - state.z[rows]
        crit -= mat.rows_dot(rows, state.x)
        np.multiply(crit, crit, out=crit)
        crit /= mat.aug_row_norms_sq[rows]
        k = int(np.argmax(crit))
        if crit[k] > best:
            best = float(crit[k])
            best_t = int(rows[k])
    if subset.cols.size:
        cols = subset.cols
        crit = mat.cols_dot(cols, state.z)
        np.multiply(crit, crit, out=crit)
        crit /= mat.col_norms_sq[cols]
        k = int(np.argmax(crit))
        if crit[k] > best:
            best = float(crit[k])
            best_t = mat.m + int(cols[k])
    return best_t, best


def sampled_step(state: SolverState, system, eta_s: float = 0.01) -> StepOutcome:
    """One step of the subset-sampled semi-randomized engine.

    A fresh uniform subset of stacked indices is drawn, the greedy criterion
    is evaluated only there, and the winning index is projected exactly as in
    the accelerated engine.  No full residual is ever formed.  If the sampled
    criteria all vanish the subset is redrawn once; if they still vanish the
    full residual decides between convergence and a full-sweep fallback.
    """
    mat = system.mat
    m, n = mat.m, mat.n
    subset = simple_random_subset(m, n, eta_s, state.rng)
    t, value = _subset_argmax(state, system, subset)
    if t is None:
        subset = simple_random_subset(m, n, eta_s, state.rng)
        t, value = _subset_argmax(state, system, subset)
    if t is None:
        rr = system.b - state.z - mat.matvec(state.x)
        rc = mat.rmatvec(state.z)
        row_crit = (rr * rr) / mat.aug_row_norms_sq
        col_crit = (rc * rc) / mat.col_norms_sq
        max_row = float(row_crit.max())
        max_col = float(col_crit.max())
        if max_row == 0.0 and max_col == 0.0:
            return StepOutcome("converged")
        if max_row >= max_col:
            t, value = int(np.argmax(row_crit)), max_row
        else:
            t, value = m + int(np.argmax(col_crit)), max_col
    if t < m:
        d = (system.b[t] - state.z[t] - mat.row_dot(t, state.x)) / mat.aug_row_norms_sq[t]
        state.z[t] += d
        mat.add_row_to(state.x, t, d)
        out = StepOutcome("row", row=t, value=value)
    else:
        j = t - m
        c = mat.col_dot(j, state.z) / mat.col_norms_sq[j]
        mat.add_col_to(state.z, j, -c)
        i = weighted_row_sample(mat, state.rng)
        d = (system.b[i] - state.z[i] - mat.row_dot(i, state.x)) / mat.row_norms_sq[i]
        mat.add_row_to(state.x, i, d)
        out = StepOutcome("col", row=i, col=j, value=value)
    state.k += 1
    return out


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    """Everything one solver run produced, plus the metadata to replay it."""

    engine: str
    provenance: str
    seed: int
    stream_id: int
    eta_s: float | None
    stop_kind: str | None
    stop_tol: float | None
    stop_window: int | None
    max_iters: int
    iterations: int
    wall_time_s: float
    converged: bool
    max_iters_hit: bool
    stop_value: float | None
    final_rse: float | None
    branch_counts: dict
    stop_trace: list
    metrics: list
    snr: float | None = None
    bounds: BoundReport | None = None

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        if self.bounds is not None:
            out["bounds"] = self.bounds.to_dict()
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _zres(state: SolverState, system) -> float:
    mat = system.mat
    denom = np.sqrt(mat.frob_sq) * np.linalg.norm(system.b)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(mat.rmatvec(state.z))) / denom


def run(engine: str, system, rule: StoppingRule | None = None,
        max_iters: int = 1_000_000, seed: int = 0, *, stream_id: int = 0,
        eta_s: float = 0.01, metrics_every: int = 0, trace_path=None) -> RunReport:
    """Drive one engine until the stopping rule fires or max_iters is hit.

    Wall time covers the iteration loop only (problem assembly and oracle
    work happen before).  ``metrics_every > 0`` records (k, RSE, normalized
    ||A^T z||) every so many iterations for convergence studies; recording
    cost is included in the wall time, so leave it off when timing.
    ``trace_path`` streams one line per step: k, branch, index, criterion.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; expected one of {ENGINES}")
    state = init_state(system, seed, stream_id)
    monitor = make_monitor(rule, system, engine) if rule is not None else None
    if monitor is not None:
        monitor.start(state, system)
    if engine == "rek":
        stepper = rek_step
    elif engine == "grak":
        stepper = grak_step
    elif engine == "agrak":
        stepper = agrak_step
    else:
        stepper = lambda st, sy: sampled_step(st, sy, eta_s)  # noqa: E731

    counts = {"row": 0, "col": 0}
    exact = False
    fired = False
    stop_value = None
    metrics = []
    tracef = open(trace_path, "w", encoding="ascii") if trace_path else None
    try:
        t0 = time.perf_counter()
        for _ in range(max_iters):
            out = stepper(state, system)
            if out.converged:
                exact = True
                break
            counts[out.kind] += 1
            if tracef is not None:
                idx = out.row if out.kind == "row" else out.col
                tracef.write(f"{state.k},{out.kind},{idx},{out.value:.6e}\n")
            if metrics_every and state.k % metrics_every == 0:
                rse = None
                if system.x_star is not None:
                    rse = float(np.linalg.norm(state.x - system.x_star)
                                / np.linalg.norm(system.x_star))
                metrics.append((state.k, rse, _zres(state, system)))
            if monitor is not None and state.k % monitor.period == 0:
                fired, value = monitor.observe(state.k, state, system)
                if fired:
                    stop_value = value
                    break
        wall = time.perf_counter() - t0
    finally:
        if tracef is not None:
            tracef.close()

    final_rse = None
    if system.x_star is not None:
        ref = float(np.linalg.norm(system.x_star))
        if ref > 0:
            final_rse = float(np.linalg.norm(state.x - system.x_star)) / ref
    report = RunReport(
        engine=engine,
        provenance=system.provenance,
        seed=seed,
        stream_id=stream_id,
        eta_s=eta_s if engine == "sampled" else None,
        stop_kind=rule.kind if rule is not None else None,
        stop_tol=rule.tol if rule is not None else None,
        stop_window=rule.window if rule is not None and rule.kind == "lise" else None,
        max_iters=max_iters,
        iterations=state.k,
        wall_time_s=wall,
        converged=bool(fired or exact),
        max_iters_hit=bool(not (fired or exact) and state.k >= max_iters),
        stop_value=stop_value,
        final_rse=final_rse,
        branch_counts=counts,
        stop_trace=list(monitor.trace) if monitor is not None else [],
        metrics=metrics,
    )
    report.final_state = state  # handy for callers; not part of serialization
    return report
