"""Fixed-step integration of retarded functional differential equations.

Integration follows the method of steps on a dense history buffer. At every
stage the right-hand side receives a segment that reads the recorded history,
the initial segment for negative times, and the tentative stage value at
``theta = 0``; inside the current step the gap between the last recorded
point and the stage value is bridged linearly.

With ``rk4`` each completed step also records a midpoint knot from the cubic
Hermite interpolant through both step ends. Delayed lookups at stage
midpoints then land on knots, so the linear interpolation between knots does
not drag the method down to second order.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, DomainError
from .models import (
    ModelPair,
    eval_composite_feedback,
    eval_extended_rhs,
    eval_stacked_rhs,
)
from .segments import (
    Segment,
    Trajectory,
    _LazySegment,
    _shifted_segment,
    slope_bound,
    stack,
    sup_norm,
    window,
)

__all__ = [
    "IntegratorConfig",
    "HistoryBuffer",
    "integrate_rfde",
    "integrate_continuous",
    "integrate_extended",
    "check_initial_slopes",
    "BLOWUP_THRESHOLD",
    "run_manifest",
    "write_manifest",
]

BLOWUP_THRESHOLD = 1e9
SCHEMES = ("euler", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    step: float
    horizon: float
    scheme: str = "rk4"

    def validate(self, delay: float) -> None:
        if self.scheme not in SCHEMES:
            raise DomainError(f"unknown scheme {self.scheme!r}; use one of {SCHEMES}")
        if not (self.step > 0 and self.horizon > 0):
            raise DomainError("step and horizon must be positive")
        limit = delay / 2 if self.scheme == "rk4" else delay
        if self.step > limit:
            raise DomainError(
                f"{self.scheme} step {self.step} exceeds {limit} for delay {delay}"
            )

    @property
    def n_steps(self) -> int:
        ratio = self.horizon / self.step
        n = round(ratio)
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            n = math.ceil(ratio)
        return max(int(n), 1)


class HistoryBuffer:
    """Growable record of ``(t, x(t))`` on top of an initial segment."""

    def __init__(self, initial: Segment):
        self.initial = initial
        self.delay = initial.delay
        self.dim = initial.dim
        self.times = [0.0]
        self.states = [np.array(initial(0.0), dtype=float)]

    @property
    def t_last(self) -> float:
        return self.times[-1]

    def append(self, t: float, x: np.ndarray) -> None:
        self.times.append(t)
        self.states.append(x)

    def lookup(self, s: float) -> np.ndarray:
        if s <= 0.0:
            return self.initial(max(s, -self.delay))
        tl = self.times
        i = bisect_right(tl, s) - 1
        t0 = tl[i]
        v0 = self.states[i]
        if s == t0 or i == len(tl) - 1:
            return v0
        return v0 + (s - t0) / (tl[i + 1] - t0) * (self.states[i + 1] - v0)

    def view(self, t: float, tip: np.ndarray | None = None) -> "_BufferWindow":
        return _BufferWindow(self, t, tip)

    def freeze(self) -> Trajectory:
        return Trajectory(self.initial, self.times, np.vstack(self.states))

    def check_finite(self, x: np.ndarray, t: float, interval=None) -> None:
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_THRESHOLD:
            raise DivergenceError(
                f"state left |x| <= {BLOWUP_THRESHOLD:g} at t={t:.6g}",
                time=t, interval=interval,
            )


class _BufferWindow(_LazySegment):
    """``x_t`` read from a history buffer, optionally with a tentative value
    at ``t`` beyond the last recorded time."""

    __slots__ = ("_buf", "_t", "_tip")

    def __init__(self, buf: HistoryBuffer, t: float, tip=None):
        super().__init__(buf.delay, buf.dim)
        self._buf = buf
        self._t = t
        if tip is None:
            if t != buf.t_last:
                raise DomainError("a tip value is needed beyond the recorded history")
            tip = buf.states[-1]
        self._tip = tip

    def __call__(self, theta: float) -> np.ndarray:
        if theta == 0.0:
            return self._tip
        buf = self._buf
        s = self._t + theta
        t_last = buf.times[-1]
        if s > t_last:
            w = (s - t_last) / (self._t - t_last)
            v0 = buf.states[-1]
            return v0 + w * (self._tip - v0)
        return buf.lookup(s)

    def _build(self) -> Segment:
        buf, t, delay = self._buf, self._t, self.delay
        lo = t - delay
        init = buf.initial
        ik = init.knots
        mask = (ik > lo) & (ik < 0.0)
        tt = np.asarray(buf.times)
        tmask = (tt > lo) & (tt < t)
        knots = np.concatenate([ik[mask], tt[tmask]]) - t
        vals = [init.values[mask]]
        if tmask.any():
            vals.append(np.vstack(buf.states)[tmask])
        vals = np.vstack(vals)
        inner = (knots > -delay) & (knots < 0.0)
        return _shifted_segment(
            np.concatenate([[-delay], knots[inner], [0.0]]),
            np.vstack([self(-delay)[None, :], vals[inner], self._tip[None, :]]),
            delay,
        )


def euler_step(buf: HistoryBuffer, rhs, t: float, t_new: float, k1=None, interval=None):
    """Advance one explicit Euler step; returns ``None`` (nothing to reuse)."""
    y = buf.states[-1]
    if k1 is None:
        k1 = rhs(buf.view(t))
    y_new = y + (t_new - t) * k1
    buf.check_finite(y_new, t_new, interval)
    buf.append(t_new, y_new)
    return None


def rk4_step(buf: HistoryBuffer, rhs, t: float, t_new: float, k1=None, interval=None):
    """Advance one classical RK4 step and record the Hermite midpoint.

    Returns the right-hand side at the new point (evaluated before the
    midpoint knot is recorded) so callers with an unchanged ``rhs`` can pass
    it back as the next ``k1``.
    """
    h = t_new - t
    y = buf.states[-1]
    if k1 is None:
        k1 = rhs(buf.view(t))
    tm = 0.5 * (t + t_new)
    k2 = rhs(buf.view(tm, y + 0.5 * h * k1))
    k3 = rhs(buf.view(tm, y + 0.5 * h * k2))
    k4 = rhs(buf.view(t_new, y + h * k3))
    y_new = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    buf.check_finite(y_new, t_new, interval)
    k_end = rhs(buf.view(t_new, y_new))
    y_mid = 0.5 * (y + y_new) + (h / 8.0) * (k1 - k_end)
    buf.append(tm, y_mid)
    buf.append(t_new, y_new)
    return k_end


STEPPERS = {"euler": euler_step, "rk4": rk4_step}


def integrate_rfde(
    rhs: Callable[[Segment], np.ndarray], initial: Segment, cfg: IntegratorConfig
) -> Trajectory:
    """Integrate ``x' = rhs(x_t)`` from ``initial`` over ``[0, n_steps*step]``."""
    cfg.validate(initial.delay)
    buf = HistoryBuffer(initial)
    stepper = STEPPERS[cfg.scheme]
    k = None
    for i in range(cfg.n_steps):
        k = stepper(buf, rhs, i * cfg.step, (i + 1) * cfg.step, k)
    return buf.freeze()


def check_initial_slopes(x0: Segment, xhat0: Segment, q_tilde: float | None) -> None:
    """Enforce the ``q_tilde / sqrt(2)`` derivative bound on both initial
    segments (skipped when ``q_tilde`` is ``None``)."""
    if q_tilde is None:
        return
    limit = q_tilde / math.sqrt(2.0)
    for label, seg in (("x0", x0), ("xhat0", xhat0)):
        s = slope_bound(seg)
        if s > limit:
            raise DomainError(
                f"{label} has slope bound {s:.6g} > q_tilde/sqrt(2) = {limit:.6g}"
            )


def _stacked_initial(model: ModelPair, x0: Segment, xhat0: Segment) -> Segment:
    for label, seg in (("x0", x0), ("xhat0", xhat0)):
        if seg.dim != model.n or seg.delay != model.delay:
            raise DomainError(
                f"{label} must have dim {model.n} and delay {model.delay}"
            )
    return stack(x0, xhat0)


def integrate_continuous(
    model: ModelPair,
    x0: Segment,
    xhat0: Segment,
    cfg: IntegratorConfig,
    q_tilde: float | None = 1.0,
) -> Trajectory:
    """Simulate the continuous-time closed loop ``x~' = F(x~_t)``.

    The returned trajectory has dimension ``2n``: plant then observer.
    """
    check_initial_slopes(x0, xhat0, q_tilde)
    initial = _stacked_initial(model, x0, xhat0)
    return integrate_rfde(lambda w: eval_stacked_rhs(model, w), initial, cfg)


def integrate_extended(
    model: ModelPair,
    x0: Segment,
    xhat0: Segment,
    feedback_path: str,
    cfg: IntegratorConfig,
    q_tilde: float | None = 1.0,
) -> Trajectory:
    """Simulate ``x~' = F_tilde(x~_t, k_tilde(x~_t))`` (``composite``) or via
    ``F`` directly (``stacked``). Both paths do the same arithmetic."""
    check_initial_slopes(x0, xhat0, q_tilde)
    initial = _stacked_initial(model, x0, xhat0)
    if feedback_path == "composite":
        def rhs(w):
            return eval_extended_rhs(model, w, eval_composite_feedback(model, w))
    elif feedback_path == "stacked":
        def rhs(w):
            return eval_stacked_rhs(model, w)
    else:
        raise DomainError(f"unknown feedback path {feedback_path!r}")
    return integrate_rfde(rhs, initial, cfg)


def run_manifest(model: ModelPair, cfg: IntegratorConfig, traj: Trajectory, seed=None) -> dict:
    """JSON-ready summary of one integration run."""
    return {
        "model": model.name,
        "params": dict(model.params),
        "config": {"step": cfg.step, "horizon": cfg.horizon, "scheme": cfg.scheme},
        "seed": seed,
        "t_end": traj.t_end,
        "terminal_sup_norm": sup_norm(window(traj, traj.t_end)),
    }


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
