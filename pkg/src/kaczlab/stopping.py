"""Stopping rules as pluggable predicates over the iterate stream.

The windowed rule (``lise``) is the practical default: every L iterations it
compares the current iterate against a snapshot from L iterations ago and
fires when ``||current - snapshot|| / L`` drops below the tolerance.  It
needs neither the reference solution nor a residual, and keeps exactly one
snapshot.  For the stacked-system engines the monitored vector is [z; x];
for ``rek`` it is x alone.

The remaining kinds exist for comparison studies: ``rse``/``ase`` need the
reference solution, ``rres`` needs a full residual (and plateaus at the
noise floor on inconsistent systems), ``aise`` compares consecutive
iterates, ``rek-native`` evaluates the extended method's two normalized
residuals every ``8 * min(m, n)`` steps, and ``grak-native`` is the
reference-based combined-error test whose large denominator makes it fire
early on big systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ReferenceUnavailable, WindowNotReady

__all__ = [
    "RULE_KINDS",
    "StoppingRule",
    "LiseWindow",
    "lise_check",
    "rse_check",
    "aise_check",
    "rres_check",
    "rek_native_check",
    "grak_native_check",
    "make_monitor",
]

RULE_KINDS = ("lise", "rse", "ase", "aise", "rres", "rek-native", "grak-native")

DEFAULT_WINDOW = 400
DEFAULT_ORACLE_PERIOD = 400


@dataclass(frozen=True)
class StoppingRule:
    """Configuration record for one stopping rule.

    ``window`` is the lag L of the windowed rule; ``check_period`` overrides
    the evaluation cadence (defaults: L for ``lise``, every iteration for
    ``aise``, ``8 * min(m, n)`` for ``rek-native``, 400 for the rest).
    """

    kind: str
    tol: float
    window: int = DEFAULT_WINDOW
    check_period: int | None = None

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown stopping rule {self.kind!r}; expected {RULE_KINDS}")
        if not self.tol > 0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.window < 1:
            raise ValueError(f"window length must be >= 1, got {self.window}")


@dataclass
class LiseWindow:
    """One retained snapshot of the monitored iterate, L iterations old."""

    snapshot: np.ndarray
    last_value: float | None = None


def lise_check(window: LiseWindow, current: np.ndarray, k: int, L: int, tol: float):
    """Windowed lagged-iterate check at iteration k (a positive multiple of L).

    Returns ``(fired, value)`` with ``value = ||current - snapshot|| / L``;
    fires on ``value < tol``.  The snapshot is replaced by ``current``.
    """
    if k <= 0 or k % L != 0:
        raise WindowNotReady(f"iteration {k} is not a positive multiple of L={L}")
    value = float(np.linalg.norm(current - window.snapshot)) / L
    window.snapshot = np.array(current, copy=True)
    window.last_value = value
    return value < tol, value


def rse_check(x, x_star, tol: float):
    """Relative solution error ||x - x_star|| / ||x_star||; fires on <= tol."""
    if x_star is None:
        raise ReferenceUnavailable("relative solution error needs x_star")
    ref = float(np.linalg.norm(x_star))
    if ref == 0.0:
        raise ReferenceUnavailable("x_star is zero; relative error undefined")
    value = float(np.linalg.norm(x - x_star)) / ref
    return value <= tol, value


def aise_check(x_k, x_prev, b, tol: float):
    """Consecutive-iterate distance scaled by ||b||; fires on <= tol."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        raise ValueError("b is zero; adjacent-iterate error undefined")
    value = float(np.linalg.norm(x_k - x_prev)) / bnorm
    return value <= tol, value


def rres_check(x, system, tol: float):
    """Relative residual ||b - A x|| / ||b||; fires on <= tol.

    On inconsistent systems this plateaus at the orthogonal noise level, so
    it is a diagnostic rather than a default.
    """
    bnorm = float(np.linalg.norm(system.b))
    if bnorm == 0.0:
        raise ValueError("b is zero; relative residual undefined")
    value = float(np.linalg.norm(system.b - system.mat.matvec(x))) / bnorm
    return value <= tol, value


def rek_native_check(x, z, system, tol: float):
    """The extended method's own two-part test; deferred while x is zero.

    Fires when both ``||A x - (b - z)|| / (||A||_F ||x||)`` and
    ``||A^T z|| / (||A||_F^2 ||x||)`` are <= tol.  Costs two full products.
    """
    xnorm = float(np.linalg.norm(x))
    if xnorm == 0.0:
        return False, (math.inf, math.inf)
    mat = system.mat
    fro = math.sqrt(mat.frob_sq)
    v1 = float(np.linalg.norm(mat.matvec(x) - (system.b - z))) / (fro * xnorm)
    v2 = float(np.linalg.norm(mat.rmatvec(z))) / (mat.frob_sq * xnorm)
    return (v1 <= tol and v2 <= tol), (v1, v2)


def grak_native_check(x, z, x_star, z_star, b, tol: float):
    """Combined squared error of (x, z) over ``||x_star||^2 + ||b - z_star||^2``.

    The denominator grows with the problem, which is exactly why this test
    can fire long before x is accurate.
    """
    if x_star is None or z_star is None:
        raise ReferenceUnavailable("combined-error test needs x_star and z_star")
    b_range = b - z_star
    denom = float(x_star @ x_star) + float(b_range @ b_range)
    if denom == 0.0:
        raise ReferenceUnavailable("zero reference energy; test undefined")
    dx = x - x_star
    dz = z - z_star
    value = (float(dx @ dx) + float(dz @ dz)) / denom
    return value <= tol, value


# ---------------------------------------------------------------------------
# run-loop monitors
# ---------------------------------------------------------------------------


class _Monitor:
    """Evaluation state of one rule inside one run; owns its trace."""

    def __init__(self, rule: StoppingRule):
        self.rule = rule
        self.period = 1
        self.trace: list = []

    def start(self, state, system):  # pragma: no cover - overridden
        raise NotImplementedError

    def observe(self, k, state, system):  # pragma: no cover - overridden
        raise NotImplementedError

    def _record(self, k, fired, value):
        self.trace.append((k, value))
        return fired, value


class _LiseMonitor(_Monitor):
    """Windowed monitor over x or the stacked [z; x] pair.

    Equivalent to :func:`lise_check` on the stacked vector, but computed in
    preallocated buffers: the run loop is sensitive to megabyte-sized
    allocations every window.
    """

    def __init__(self, rule, stacked: bool):
        super().__init__(rule)
        self.stacked = stacked
        # the lag L *is* the cadence; a separate check period makes no sense here
        self.period = rule.window
        self.snaps = None
        self.diffs = None

    def _parts(self, state):
        return (state.z, state.x) if self.stacked else (state.x,)

    def start(self, state, system):
        self.snaps = tuple(p.copy() for p in self._parts(state))
        self.diffs = tuple(np.empty_like(p) for p in self.snaps)

    def observe(self, k, state, system):
        total = 0.0
        for part, snap, diff in zip(self._parts(state), self.snaps, self.diffs):
            np.subtract(part, snap, out=diff)
            total += float(diff @ diff)
            np.copyto(snap, part)
        value = math.sqrt(total) / self.period
        return self._record(k, value < self.rule.tol, value)


class _RseMonitor(_Monitor):
    def __init__(self, rule, absolute=False):
        super().__init__(rule)
        self.period = rule.check_period or DEFAULT_ORACLE_PERIOD
        self.absolute = absolute

    def start(self, state, system):
        if system.x_star is None:
            raise ReferenceUnavailable("solution-error rules need x_star")
        if not self.absolute and float(np.linalg.norm(system.x_star)) == 0.0:
            raise ReferenceUnavailable("x_star is zero; relative error undefined")

    def observe(self, k, state, system):
        if self.absolute:
            value = float(np.linalg.norm(state.x - system.x_star))
            return self._record(k, value <= self.rule.tol, value)
        fired, value = rse_check(state.x, system.x_star, self.rule.tol)
        return self._record(k, fired, value)


class _AiseMonitor(_Monitor):
    def __init__(self, rule):
        super().__init__(rule)
        self.period = rule.check_period or 1
        self.prev = None

    def start(self, state, system):
        self.prev = state.x.copy()

    def observe(self, k, state, system):
        fired, value = aise_check(state.x, self.prev, system.b, self.rule.tol)
        np.copyto(self.prev, state.x)
        return self._record(k, fired, value)


class _RresMonitor(_Monitor):
    def __init__(self, rule):
        super().__init__(rule)
        self.period = rule.check_period or DEFAULT_ORACLE_PERIOD

    def start(self, state, system):
        if float(np.linalg.norm(system.b)) == 0.0:
            raise ValueError("b is zero; relative residual undefined")

    def observe(self, k, state, system):
        fired, value = rres_check(state.x, system, self.rule.tol)
        return self._record(k, fired, value)


class _RekNativeMonitor(_Monitor):
    def start(self, state, system):
        self.period = self.rule.check_period or 8 * min(system.mat.m, system.mat.n)

    def observe(self, k, state, system):
        fired, values = rek_native_check(state.x, state.z, system, self.rule.tol)
        return self._record(k, fired, max(values))


class _GrakNativeMonitor(_Monitor):
    def __init__(self, rule):
        super().__init__(rule)
        self.period = rule.check_period or DEFAULT_ORACLE_PERIOD

    def start(self, state, system):
        if system.x_star is None or system.z_star is None:
            raise ReferenceUnavailable("combined-error rule needs x_star and z_star")

    def observe(self, k, state, system):
        fired, value = grak_native_check(state.x, state.z, system.x_star,
                                         system.z_star, system.b, self.rule.tol)
        return self._record(k, fired, value)


def make_monitor(rule: StoppingRule, system, engine: str) -> _Monitor:
    """Instantiate the evaluation state for one (rule, system, engine) run."""
    if rule.kind == "lise":
        return _LiseMonitor(rule, stacked=engine != "rek")
    if rule.kind == "rse":
        return _RseMonitor(rule)
    if rule.kind == "ase":
        return _RseMonitor(rule, absolute=True)
    if rule.kind == "aise":
        return _AiseMonitor(rule)
    if rule.kind == "rres":
        return _RresMonitor(rule)
    if rule.kind == "rek-native":
        return _RekNativeMonitor(rule)
    if rule.kind == "grak-native":
        return _GrakNativeMonitor(rule)
    raise ValueError(f"unknown stopping rule {rule.kind!r}")
