"""Sampled-data closed loop with Euler-emulated observer.

Over each sampling interval ``[t_j, t_{j+1})`` the input
``u_j = k(xhat_{t_j}, h(x_{t_j}))`` is held, the plant is integrated in
continuous time, and the observer takes one explicit Euler step:
``xhat(t_{j+1}) = xhat(t_j) + (t_{j+1} - t_j) f_hat(xhat_{t_j}, u_j, h(x_{t_j}))``.
The observer segment ``xhat_{t_j}`` is the initial observer state for
``t_j + theta <= 0`` and the linear interpolant of the observer samples
otherwise.
"""

from __future__ import annotations

import csv
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import HistoryBuffer, check_initial_slopes, rk4_step
from .errors import DomainError
from .models import ModelPair
from .segments import Segment, Trajectory, _LazySegment, _fmt, _shifted_segment, zero_segment

__all__ = [
    "Partition",
    "SampledRun",
    "generate_partition",
    "reconstruct_observer_history",
    "simulate_sampled",
    "sample_initial_state",
    "stacked_sup_norms",
]

# relative slack absorbing float rounding in accumulated sampling instants
_GAP_SLACK = 64 * np.finfo(float).eps
# keeps the stated bounds after rounding when building initial states
_SAFETY = 1.0 - 1e-12
_SNAP = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class Partition:
    """Sampling instants with every gap in ``[a*delta, delta]``."""

    a: float
    delta: float
    times: np.ndarray

    def __post_init__(self):
        if not (0.0 < self.a <= 1.0):
            raise DomainError(f"a must lie in (0, 1], got {self.a}")
        if not self.delta > 0.0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2 or times[0] != 0.0:
            raise DomainError("partition needs at least two instants starting at 0")
        gaps = np.diff(times)
        slack = _GAP_SLACK * max(1.0, float(times[-1]))
        if gaps.min() < self.a * self.delta - slack or gaps.max() > self.delta + slack:
            raise DomainError(
                f"partition gaps [{gaps.min()}, {gaps.max()}] outside "
                f"[{self.a * self.delta}, {self.delta}]"
            )
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.times)

    def index_of(self, t: float) -> int:
        j = int(np.searchsorted(self.times, t))
        if j >= self.times.size or self.times[j] != t:
            raise DomainError(f"{t} is not a partition instant")
        return j

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["j", "t_j"])
            for j, t in enumerate(self.times):
                w.writerow([j, _fmt(t)])


def generate_partition(a: float, delta: float, horizon: float, seed=None) -> Partition:
    """Random partition with iid gaps uniform on ``[a*delta, delta]``.

    Stops at the first instant ``>= horizon``. ``a = 1`` gives the periodic
    partition ``j * delta``.
    """
    if not (0.0 < a <= 1.0):
        raise DomainError(f"a must lie in (0, 1], got {a}")
    if not delta > 0.0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not horizon > 0.0:
        raise DomainError(f"horizon must be positive, got {horizon}")
    if a == 1.0:
        count = math.ceil(horizon / delta - 1e-9)
        return Partition(a, delta, np.arange(count + 1) * delta)
    rng = np.random.default_rng(seed)
    times = [0.0]
    # draw in blocks; the expected gap is (1 + a) delta / 2
    block = max(16, int(2.0 * horizon / (a * delta)) // 8)
    while times[-1] < horizon:
        for g in rng.uniform(a * delta, delta, size=block):
            times.append(times[-1] + g)
            if times[-1] >= horizon:
                break
    return Partition(a, delta, np.array(times))


class _ObserverWindow(_LazySegment):
    """``xhat_{t_j}`` evaluated straight from the reconstruction formula."""

    __slots__ = ("_init", "_times", "_samples", "_j")

    def __init__(self, initial: Segment, times, samples, j: int):
        super().__init__(initial.delay, initial.dim)
        self._init = initial
        self._times = times
        self._samples = samples
        self._j = j

    def __call__(self, theta: float) -> np.ndarray:
        j = self._j
        times = self._times
        if theta == 0.0:
            return self._samples[j]
        s = times[j] + theta
        # t_j + (t_l - t_j) can miss t_l by an ulp; snap to the instant
        tol = _SNAP * max(1.0, times[j])
        if s <= 0.0:
            if s >= -tol:
                return self._samples[0]
            return self._init(max(s, -self.delay))
        k = bisect_right(times, s, 0, j + 1) - 1
        tk = times[k]
        xk = self._samples[k]
        if s - tk <= tol:
            return xk
        if times[k + 1] - s <= tol:
            return self._samples[k + 1]
        return xk + (s - tk) / (times[k + 1] - tk) * (self._samples[k + 1] - xk)

    def _build(self) -> Segment:
        j, delay = self._j, self.delay
        tj = self._times[j]
        lo = tj - delay
        init = self._init
        ik = init.knots
        imask = (ik > lo) & (ik < 0.0)
        pt = np.asarray(self._times[: j + 1])
        pmask = pt > lo
        knots = np.concatenate([ik[imask] - tj, pt[pmask] - tj])
        vals = np.vstack(
            [init.values[imask]]
            + [self._samples[i][None, :] for i in np.flatnonzero(pmask)]
        )
        inner = knots > -delay
        knots = np.concatenate([[-delay], knots[inner]])
        vals = np.vstack([self(-delay)[None, :], vals[inner]])
        return _shifted_segment(knots, vals, delay)


@dataclass(frozen=True)
class SampledRun:
    """Plant trajectory plus observer samples at the partition instants."""

    plant: Trajectory
    observer_times: np.ndarray
    observer_values: np.ndarray
    initial_observer: Segment
    partition: Partition

    @property
    def observer_samples(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.observer_times.tolist(), self.observer_values))

    def observer_window(self, j: int) -> _ObserverWindow:
        return _ObserverWindow(
            self.initial_observer,
            self.observer_times.tolist(),
            list(self.observer_values),
            j,
        )

    def export(self, outdir, prefix: str = "") -> dict:
        """Write plant, observer and partition CSVs; returns the file names."""
        outdir = Path(outdir)
        names = {
            "plant": f"{prefix}plant.csv",
            "observer": f"{prefix}observer.csv",
            "partition": f"{prefix}partition.csv",
        }
        self.plant.to_csv(outdir / names["plant"])
        with open(outdir / names["observer"], "w", newline="") as fh:
            w = csv.writer(fh)
            dim = self.observer_values.shape[1]
            w.writerow(["t_j"] + [f"xhat{i + 1}" for i in range(dim)])
            for t, v in zip(self.observer_times, self.observer_values):
                w.writerow([_fmt(t)] + [_fmt(x) for x in v])
        self.partition.to_csv(outdir / names["partition"])
        return names


def reconstruct_observer_history(run: SampledRun, t_j: float) -> Segment:
    """Observer segment ``xhat_{t_j}`` with knots at ``0``, the splice point
    ``-t_j``, every shifted sampling instant and every shifted initial knot
    inside the window.

    Point evaluation goes through the reconstruction formula, so stored
    samples and initial data come back exactly; ``knots``/``values`` are
    built on first access.
    """
    times = run.observer_times
    j = int(np.searchsorted(times, t_j))
    if j >= times.size or times[j] != t_j:
        raise DomainError(f"t_j={t_j} is not a sampled partition instant")
    return run.observer_window(j)


def simulate_sampled(
    model: ModelPair,
    x0: Segment,
    xhat0: Segment,
    partition: Partition,
    substeps: int = 16,
    q_tilde: float | None = 1.0,
) -> SampledRun:
    """Run the sample-and-hold loop over every interval of ``partition``.

    The plant is integrated with ``substeps`` rk4 steps per interval.
    ``h``, ``k`` and ``f_hat`` are each evaluated once per interval.
    Raises :class:`DivergenceError` (with ``interval`` set) on blow-up.
    """
    if substeps < 1:
        raise DomainError("substeps must be a positive integer")
    for label, seg in (("x0", x0), ("xhat0", xhat0)):
        if seg.dim != model.n or seg.delay != model.delay:
            raise DomainError(f"{label} must have dim {model.n} and delay {model.delay}")
    check_initial_slopes(x0, xhat0, q_tilde)
    buf = HistoryBuffer(x0)
    ptimes = partition.times.tolist()
    obs = [np.array(xhat0(0.0), dtype=float)]
    f = model.f
    for j in range(len(ptimes) - 1):
        tj, tn = ptimes[j], ptimes[j + 1]
        window = buf.view(tj)
        y = model.h(window)
        obs_window = _ObserverWindow(xhat0, ptimes, obs, j)
        u = model.k(obs_window, y)
        fh = model.f_hat(obs_window, u, y)

        def rhs(w, u=u):
            return f(w, u)

        hsub = (tn - tj) / substeps
        k1 = None
        for i in range(substeps):
            t0 = tj + i * hsub if i else tj
            t1 = tn if i == substeps - 1 else tj + (i + 1) * hsub
            k1 = rk4_step(buf, rhs, t0, t1, k1, interval=j)
        nxt = obs[j] + (tn - tj) * fh
        buf.check_finite(nxt, tn, interval=j)
        obs.append(nxt)
    return SampledRun(
        plant=buf.freeze(),
        observer_times=partition.times,
        observer_values=np.vstack(obs),
        initial_observer=xhat0,
        partition=partition,
    )


def sample_initial_state(
    R: float, q_tilde: float, delay: float, dim: int, seed=None, knots: int = 8
) -> Segment:
    """Random piecewise-linear initial state with ``sup_norm <= R`` and
    ``slope_bound <= q_tilde / sqrt(2)``.

    Knot values follow a random walk with bounded slopes around a centre
    drawn in the ``R``-ball; values outside the ball are projected radially
    onto it. The projection is 1-Lipschitz, so slopes never grow.
    """
    if not (R >= 0 and q_tilde > 0):
        raise DomainError("R must be non-negative and q_tilde positive")
    if R == 0:
        return zero_segment(dim, delay)
    rng = np.random.default_rng(seed)
    theta = np.linspace(-delay, 0.0, knots)
    theta[0], theta[-1] = -delay, 0.0
    radius = R * _SAFETY
    smax = q_tilde / math.sqrt(2.0) * _SAFETY

    dtheta = theta[1:] - theta[:-1]

    def rownorm(v):
        return np.sqrt(np.einsum("ij,ij->i", v, v))

    def unit(size):
        v = rng.normal(size=(size, dim))
        return v / np.maximum(rownorm(v), 1e-300)[:, None]

    centre = unit(1)[0] * radius * rng.uniform() ** (1.0 / dim)
    steps = unit(knots - 1) * (rng.uniform(0.0, smax, size=(knots - 1, 1)) * dtheta[:, None])
    walk = np.vstack([np.zeros(dim), np.cumsum(steps, axis=0)])
    values = centre + walk - walk.mean(axis=0)
    norms = rownorm(values)
    over = norms > radius
    values[over] *= (radius / norms[over])[:, None]
    slopes = rownorm(values[1:] - values[:-1]) / dtheta
    if slopes.max() > smax:
        values *= smax / slopes.max()
    return Segment(theta, values, delay)


def stacked_sup_norms(run: SampledRun, grid) -> np.ndarray:
    """Sup norm of ``[x_t; xhat_{t_j}]`` at each grid time, where ``t_j`` is
    the last partition instant ``<= t``.

    Evaluated on the union of both segments' knots, which is exact for
    piecewise-linear data.
    """
    x0, xh0 = run.plant.initial, run.initial_observer
    delay = x0.delay
    pre = x0.knots < 0.0
    p_t = np.concatenate([x0.knots[pre], run.plant.times])
    p_x = np.vstack([x0.values[pre], run.plant.states])
    pre = xh0.knots < 0.0
    h_t = np.concatenate([xh0.knots[pre], run.observer_times])
    h_x = np.vstack([xh0.values[pre], run.observer_values])
    ptimes = run.observer_times
    out = np.empty(len(grid))
    for idx, t in enumerate(grid):
        j = int(np.searchsorted(ptimes, t, side="right")) - 1
        tj = ptimes[j]
        i0, i1 = np.searchsorted(p_t, [t - delay, t])
        k0, k1 = np.searchsorted(h_t, [tj - delay, tj])
        thetas = np.concatenate(
            [p_t[i0:i1] - t, h_t[k0:k1] - tj, [-delay, 0.0]]
        )
        thetas = thetas[(thetas >= -delay) & (thetas <= 0.0)]
        sq = np.zeros(thetas.size)
        for c in range(p_x.shape[1]):
            sq += np.interp(t + thetas, p_t, p_x[:, c]) ** 2
        for c in range(h_x.shape[1]):
            sq += np.interp(tj + thetas, h_t, h_x[:, c]) ** 2
        out[idx] = math.sqrt(sq.max())
    return out
