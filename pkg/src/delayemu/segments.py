"""Piecewise-linear function segments on [-delay, 0] and dense trajectories.

A :class:`Segment` is the state of a delay system at one instant: the map
``theta -> x(t + theta)`` over the delay window. Segments are stored as sorted
knots with one value vector per knot and are evaluated by linear
interpolation, which keeps the sup norm and the derivative bound exact.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_right
from pathlib import Path

import numpy as np

from .errors import DomainError

__all__ = [
    "Segment",
    "Trajectory",
    "segment_eval",
    "sup_norm",
    "slope_bound",
    "stack",
    "split",
    "euler_extend",
    "window",
    "constant_segment",
    "zero_segment",
]


def _as_vector(value) -> np.ndarray:
    return np.atleast_1d(np.asarray(value, dtype=float))


class Segment:
    """Function on ``[-delay, 0]`` into R^dim, linear between knots.

    ``knots[0]`` is exactly ``-delay`` and ``knots[-1]`` is exactly 0.
    Instances are treated as immutable.
    """

    __slots__ = ("delay", "_knots", "_values")

    def __init__(self, knots, values, delay: float | None = None):
        knots = np.array(knots, dtype=float)
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if knots.ndim != 1 or knots.size < 2:
            raise DomainError("a segment needs at least two knots")
        if values.shape[0] != knots.size:
            raise DomainError(
                f"{knots.size} knots but {values.shape[0]} value rows"
            )
        if delay is None:
            delay = -knots[0]
        delay = float(delay)
        if not delay > 0:
            raise DomainError(f"delay must be positive, got {delay}")
        if knots[0] != -delay or knots[-1] != 0.0:
            raise DomainError(
                f"knots must run from -{delay} to 0, got [{knots[0]}, {knots[-1]}]"
            )
        if np.any(np.diff(knots) <= 0):
            raise DomainError("knots must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("segment values must be finite")
        knots.setflags(write=False)
        values.setflags(write=False)
        self.delay = delay
        self._knots = knots
        self._values = values

    @property
    def knots(self) -> np.ndarray:
        return self._knots

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def dim(self) -> int:
        return self._values.shape[1]

    def __call__(self, theta: float) -> np.ndarray:
        """Evaluate at ``theta``; stored values come back exactly at knots."""
        knots = self._knots
        i = int(np.searchsorted(knots, theta, side="right")) - 1
        if i >= knots.size - 1:
            return self._values[-1]
        if i < 0:
            i = 0
        k0 = knots[i]
        v0 = self._values[i]
        if theta == k0:
            return v0
        w = (theta - k0) / (knots[i + 1] - k0)
        return v0 + w * (self._values[i + 1] - v0)

    def sample(self, thetas) -> np.ndarray:
        """Vectorised evaluation, shape ``(len(thetas), dim)``."""
        thetas = np.asarray(thetas, dtype=float)
        knots, values = self.knots, self.values
        return np.column_stack(
            [np.interp(thetas, knots, values[:, i]) for i in range(values.shape[1])]
        )

    def materialize(self) -> "Segment":
        return self

    def __repr__(self) -> str:
        return (
            f"Segment(delay={self.delay}, dim={self.dim}, "
            f"knots={self.knots.size})"
        )

    # CSV: columns theta, v1..vn
    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["theta"] + [f"v{i + 1}" for i in range(self.dim)])
            for k, v in zip(self.knots, self.values):
                w.writerow([_fmt(k)] + [_fmt(x) for x in v])

    @classmethod
    def from_csv(cls, path) -> "Segment":
        rows = _read_csv(path)
        data = np.array(rows, dtype=float)
        return cls(data[:, 0], data[:, 1:])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _read_csv(path) -> list[list[float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [[float(c) for c in row] for row in reader if row]


def _shifted_segment(knots, values, delay: float) -> Segment:
    """Build a segment from knots produced by shifting, dropping any knot
    that rounding has pushed onto (or behind) its predecessor."""
    knots = np.asarray(knots, dtype=float)
    keep = np.ones(knots.size, dtype=bool)
    last = knots[0]
    for i in range(1, knots.size - 1):
        if knots[i] <= last or knots[i] >= 0.0:
            keep[i] = False
        else:
            last = knots[i]
    return Segment(knots[keep], np.asarray(values)[keep], delay)


def constant_segment(value, delay: float) -> Segment:
    v = _as_vector(value)
    return Segment([-delay, 0.0], [v, v], delay)


def zero_segment(dim: int, delay: float) -> Segment:
    return constant_segment(np.zeros(dim), delay)


def _check_theta(seg: Segment, theta: float) -> None:
    if not (-seg.delay <= theta <= 0.0):
        raise DomainError(f"theta={theta} outside [-{seg.delay}, 0]")


def segment_eval(seg: Segment, theta: float) -> np.ndarray:
    _check_theta(seg, theta)
    return seg(theta)


def sup_norm(seg: Segment) -> float:
    """Largest Euclidean norm over knots.

    Exact for piecewise-linear segments: along a linear piece the Euclidean
    norm is a convex function of the parameter, so its maximum sits at an
    endpoint, in any dimension.
    """
    return float(np.max(np.linalg.norm(seg.values, axis=1)))


def slope_bound(seg: Segment) -> float:
    """Ess-sup of ``|d seg / d theta|``, i.e. the steepest linear piece."""
    dv = np.diff(seg.values, axis=0)
    dk = np.diff(seg.knots)
    return float(np.max(np.linalg.norm(dv, axis=1) / dk))


def stack(a: Segment, b: Segment) -> Segment:
    """Pointwise concatenation ``[a(theta); b(theta)]`` on the union knots."""
    if a.delay != b.delay:
        raise DomainError(f"cannot stack delays {a.delay} and {b.delay}")
    knots = np.union1d(a.knots, b.knots)
    return Segment(knots, np.hstack([a.sample(knots), b.sample(knots)]), a.delay)


def split(seg: Segment, n: int) -> tuple[Segment, Segment]:
    """Inverse of :func:`stack` for a segment of dimension ``2n``."""
    if seg.dim != 2 * n:
        raise DomainError(f"expected dimension {2 * n}, got {seg.dim}")
    if isinstance(seg, _LazySegment):
        return _ComponentView(seg, 0, n), _ComponentView(seg, n, 2 * n)
    return (
        Segment(seg.knots, seg.values[:, :n], seg.delay),
        Segment(seg.knots, seg.values[:, n:], seg.delay),
    )


def euler_extend(seg: Segment, h: float, drift) -> Segment:
    """Shift left by ``h`` and append an Euler ramp with slope ``drift``.

    Result is ``seg(s + h)`` on ``[-delay, -h)`` and
    ``seg(0) + (s + h) * drift`` on ``[-h, 0]``.
    """
    delay = seg.delay
    if not (0.0 < h < delay):
        raise DomainError(f"extension step h={h} must lie in (0, {delay})")
    drift = _as_vector(drift)
    if drift.shape != (seg.dim,):
        raise DomainError(f"drift has shape {drift.shape}, expected ({seg.dim},)")
    knots, values = seg.knots, seg.values
    inner = (knots > -delay + h) & (knots < 0.0)
    shifted = knots[inner] - h
    keep = (shifted > -delay) & (shifted < -h)
    v0 = values[-1]
    new_knots = np.concatenate([[-delay], shifted[keep], [-h, 0.0]])
    new_values = np.vstack(
        [seg(-delay + h)[None, :], values[inner][keep], v0[None, :], (v0 + h * drift)[None, :]]
    )
    return _shifted_segment(new_knots, new_values, delay)


class Trajectory:
    """Dense solution record with the initial segment as backfill.

    ``lookup(s)`` reads the initial segment for ``s <= 0`` and interpolates
    linearly between recorded times for ``s > 0``.
    """

    def __init__(self, initial: Segment, times, states):
        times = np.array(times, dtype=float)
        states = np.array(states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if times.ndim != 1 or times.size == 0 or times[0] != 0.0:
            raise DomainError("trajectory times must start at 0")
        if np.any(np.diff(times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        if states.shape != (times.size, initial.dim):
            raise DomainError(
                f"states shape {states.shape} does not match "
                f"({times.size}, {initial.dim})"
            )
        if not np.array_equal(states[0], initial(0.0)):
            raise DomainError("states[0] must equal the initial segment at 0")
        times.setflags(write=False)
        states.setflags(write=False)
        self.initial = initial
        self.times = times
        self.states = states
        self._tlist = times.tolist()

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def delay(self) -> float:
        return self.initial.delay

    @property
    def t_end(self) -> float:
        return self._tlist[-1]

    def lookup(self, s: float) -> np.ndarray:
        if s <= 0.0:
            if s < -self.delay:
                raise DomainError(f"lookup at {s} precedes the initial segment")
            return self.initial(s)
        tl = self._tlist
        if s > tl[-1]:
            raise DomainError(f"lookup at {s} beyond trajectory end {tl[-1]}")
        i = bisect_right(tl, s) - 1
        t0 = tl[i]
        if s == t0:
            return self.states[i]
        v0 = self.states[i]
        return v0 + (s - t0) / (tl[i + 1] - t0) * (self.states[i + 1] - v0)

    def window(self, t: float) -> Segment:
        return window(self, t)

    def to_csv(self, path) -> None:
        """Write ``t, x1..xn`` rows (initial knots first, as negative times)
        plus a JSON sidecar ``<path>.json`` with ``delay`` and ``dim``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(self.dim)])
            for k, v in zip(self.initial.knots[:-1], self.initial.values[:-1]):
                w.writerow([_fmt(k)] + [_fmt(x) for x in v])
            for t, v in zip(self.times, self.states):
                w.writerow([_fmt(t)] + [_fmt(x) for x in v])
        sidecar = path.with_suffix(path.suffix + ".json")
        sidecar.write_text(
            json.dumps({"delay": self.delay, "dim": self.dim}, sort_keys=True) + "\n"
        )

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        path = Path(path)
        header = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        data = np.array(_read_csv(path), dtype=float)
        t = data[:, 0]
        pre = t <= 0.0
        initial = Segment(t[pre], data[pre, 1:], header["delay"])
        post = t >= 0.0
        return cls(initial, t[post], data[post, 1:])


def window(traj: Trajectory, t: float) -> Segment:
    """The segment ``theta -> traj(t + theta)`` with knots at every recorded
    time (and initial knot) falling inside ``[t - delay, t]``."""
    if t < 0.0 or t > traj.t_end:
        raise DomainError(f"window at t={t} outside [0, {traj.t_end}]")
    delay = traj.delay
    if t == 0.0:
        return traj.initial
    lo = t - delay
    init = traj.initial
    ik = init.knots
    mask_i = (ik > lo) & (ik < 0.0)
    tt = traj.times
    mask_t = (tt > lo) & (tt < t)
    knots = np.concatenate([ik[mask_i], tt[mask_t]]) - t
    vals = np.vstack([init.values[mask_i], traj.states[mask_t]])
    inner = (knots > -delay) & (knots < 0.0)
    knots = np.concatenate([[-delay], knots[inner], [0.0]])
    vals = np.vstack(
        [traj.lookup(lo)[None, :], vals[inner], traj.lookup(t)[None, :]]
    )
    return _shifted_segment(knots, vals, delay)


class _LazySegment(Segment):
    """Segment whose values come from a callable; knots built on demand.

    Used inside integration loops where the model only probes a few
    ``theta`` values and building the full knot set every stage would
    dominate the cost.
    """

    __slots__ = ("_dim", "_cache")

    def __init__(self, delay: float, dim: int):
        self.delay = delay
        self._dim = dim
        self._cache = None

    @property
    def dim(self) -> int:
        return self._dim

    def _build(self) -> Segment:
        raise NotImplementedError

    def materialize(self) -> Segment:
        if self._cache is None:
            self._cache = self._build()
        return self._cache

    @property
    def knots(self) -> np.ndarray:
        return self.materialize().knots

    @property
    def values(self) -> np.ndarray:
        return self.materialize().values

    def sample(self, thetas) -> np.ndarray:
        return self.materialize().sample(thetas)


class _ComponentView(_LazySegment):
    __slots__ = ("_parent", "_lo", "_hi")

    def __init__(self, parent: Segment, lo: int, hi: int):
        super().__init__(parent.delay, hi - lo)
        self._parent = parent
        self._lo = lo
        self._hi = hi

    def __call__(self, theta: float) -> np.ndarray:
        return self._parent(theta)[self._lo:self._hi]

    def _build(self) -> Segment:
        p = self._parent.materialize()
        return Segment(p.knots, p.values[:, self._lo:self._hi], p.delay)
