"""Empirical practical-stability certification and emulation-order studies."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .engine import IntegratorConfig, integrate_continuous
from .errors import ConfigError, DivergenceError, DomainError
from .models import ModelPair, build_model
from .sampled import (
    generate_partition,
    sample_initial_state,
    simulate_sampled,
    stacked_sup_norms,
)
from .segments import _fmt, constant_segment

__all__ = [
    "DeltaSearch",
    "ConvergenceSettings",
    "ScenarioConfig",
    "TrialResult",
    "StabilityReport",
    "ConvergenceTable",
    "run_trial",
    "certify_practical_stability",
    "convergence_study",
    "load_config",
    "parse_config",
]

ENTRY_FRACTION = 0.8
GRID_PER_INTERVAL = 4


@dataclass(frozen=True)
class DeltaSearch:
    delta_max: float
    delta_min: float
    bisection_steps: int = 4


@dataclass(frozen=True)
class ConvergenceSettings:
    deltas: tuple = (0.1, 0.05, 0.025, 0.0125)
    horizon: float = 5.0
    reference_step: float = 1e-4
    substeps: int = 16
    a: float = 1.0
    x0: float = 1.0
    xhat0: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    model: str
    R: float
    r: float
    a: float
    q_tilde: float
    horizon: float
    trials: int
    seed: int
    model_params: dict = field(default_factory=dict)
    substeps: int = 16
    delta_grid: tuple | None = None
    delta_search: DeltaSearch | None = None
    workers: int = 1
    export_trials: int = 1
    convergence: ConvergenceSettings = field(default_factory=ConvergenceSettings)
    lkf_samples: int = 1000
    lkf_bound: float = 2.0

    def __post_init__(self):
        if not (self.R > 0 and self.r > 0):
            raise ConfigError("R and r must be positive")
        if not self.r < self.R:
            raise ConfigError(f"r ({self.r}) must be smaller than R ({self.R})")
        if not (0 < self.a <= 1):
            raise ConfigError(f"a must lie in (0, 1], got {self.a}")
        if not self.q_tilde > 0:
            raise ConfigError("q_tilde must be positive")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.substeps < 1:
            raise ConfigError("substeps must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if (self.delta_grid is None) == (self.delta_search is None):
            raise ConfigError("give exactly one of delta_grid or delta_search")
        if self.delta_grid is not None:
            if not self.delta_grid or min(self.delta_grid) <= 0:
                raise ConfigError("delta_grid must be a non-empty list of positive reals")
        if self.delta_search is not None:
            ds = self.delta_search
            if not (0 < ds.delta_min < ds.delta_max):
                raise ConfigError("delta_search needs 0 < delta_min < delta_max")
            if ds.bisection_steps < 0:
                raise ConfigError("bisection_steps must be non-negative")

    def build_model(self) -> ModelPair:
        return build_model(self.model, self.model_params)

    def trial_seed(self, i: int) -> int:
        return int(np.random.SeedSequence([self.seed, i]).generate_state(1)[0])

    @property
    def nominal_delta(self) -> float:
        if self.delta_grid is not None:
            return max(self.delta_grid)
        return self.delta_search.delta_max

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = {"name": self.model, "params": self.model_params}
        del d["model_params"]
        return d


# Config parsing. Plain JSON with hand validation so every error names
# the offending field.

_REQUIRED = ("model", "R", "r", "a", "q_tilde", "horizon", "trials", "seed")


def _num(d, key, kind=float, default=None, where=""):
    if key not in d:
        if default is None:
            raise ConfigError(f"missing field {where}{key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field {where}{key!r} must be a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"field {where}{key!r} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def parse_config(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    for key in _REQUIRED:
        if key not in data:
            raise ConfigError(f"missing field {key!r}")
    model = data["model"]
    if isinstance(model, str):
        name, params = model, {}
    elif isinstance(model, dict) and isinstance(model.get("name"), str):
        name, params = model["name"], model.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("field 'model.params' must be an object")
    else:
        raise ConfigError("field 'model' must be a name or {\"name\": ..., \"params\": {...}}")
    delta_grid = delta_search = None
    if "delta_grid" in data:
        grid = data["delta_grid"]
        if not isinstance(grid, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in grid
        ):
            raise ConfigError("field 'delta_grid' must be a list of numbers")
        delta_grid = tuple(float(x) for x in grid)
    if "delta_search" in data:
        ds = data["delta_search"]
        if not isinstance(ds, dict):
            raise ConfigError("field 'delta_search' must be an object")
        delta_search = DeltaSearch(
            delta_max=_num(ds, "delta_max", where="delta_search."),
            delta_min=_num(ds, "delta_min", where="delta_search."),
            bisection_steps=_num(ds, "bisection_steps", int, 4, where="delta_search."),
        )
    conv = ConvergenceSettings()
    if "convergence" in data:
        c = data["convergence"]
        if not isinstance(c, dict):
            raise ConfigError("field 'convergence' must be an object")
        deltas = c.get("deltas", list(conv.deltas))
        if not isinstance(deltas, list) or not deltas:
            raise ConfigError("field 'convergence.deltas' must be a non-empty list")
        conv = ConvergenceSettings(
            deltas=tuple(float(x) for x in deltas),
            horizon=_num(c, "horizon", default=conv.horizon, where="convergence."),
            reference_step=_num(c, "reference_step", default=conv.reference_step, where="convergence."),
            substeps=_num(c, "substeps", int, conv.substeps, where="convergence."),
            a=_num(c, "a", default=conv.a, where="convergence."),
            x0=_num(c, "x0", default=conv.x0, where="convergence."),
            xhat0=_num(c, "xhat0", default=conv.xhat0, where="convergence."),
        )
    lkf = data.get("lkf", {})
    if not isinstance(lkf, dict):
        raise ConfigError("field 'lkf' must be an object")
    known = set(_REQUIRED) | {
        "substeps", "delta_grid", "delta_search", "workers", "export_trials",
        "convergence", "lkf", "version",
    }
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}")
    cfg = ScenarioConfig(
        model=name,
        model_params=dict(params),
        R=_num(data, "R"),
        r=_num(data, "r"),
        a=_num(data, "a"),
        q_tilde=_num(data, "q_tilde"),
        horizon=_num(data, "horizon"),
        trials=_num(data, "trials", int),
        seed=_num(data, "seed", int),
        substeps=_num(data, "substeps", int, 16),
        delta_grid=delta_grid,
        delta_search=delta_search,
        workers=_num(data, "workers", int, 1),
        export_trials=_num(data, "export_trials", int, 1),
        convergence=conv,
        lkf_samples=_num(lkf, "samples", int, 1000, where="lkf."),
        lkf_bound=_num(lkf, "bound", default=2.0, where="lkf."),
    )
    cfg.build_model()  # rejects unknown model names and parameters early
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from None
    return parse_config(data)


@dataclass(frozen=True)
class TrialResult:
    index: int
    seed: int
    delta: float
    passed: bool
    reason: str | None
    violation_time: float | None
    entry_time: float | None
    max_norm: float


def trial_initial_states(cfg: ScenarioConfig, model: ModelPair, index: int):
    """``x0`` and ``xhat0`` for one trial, each in the ``R/sqrt(2)`` ball with
    slope bound ``q_tilde/sqrt(2)``, so the stacked state lies in the
    ``R``-ball."""
    seed = cfg.trial_seed(index)
    radius = cfg.R / math.sqrt(2.0)
    x0 = sample_initial_state(radius, cfg.q_tilde, model.delay, model.n, [seed, 0])
    xh0 = sample_initial_state(radius, cfg.q_tilde, model.delay, model.n, [seed, 1])
    return x0, xh0


def simulate_trial(cfg: ScenarioConfig, model: ModelPair, delta: float, index: int):
    x0, xh0 = trial_initial_states(cfg, model, index)
    partition = generate_partition(cfg.a, delta, cfg.horizon, [cfg.trial_seed(index), 2])
    return simulate_sampled(model, x0, xh0, partition, cfg.substeps, cfg.q_tilde)


def monitor_grid(times: np.ndarray, per_interval: int = GRID_PER_INTERVAL) -> np.ndarray:
    """``per_interval`` equispaced times in each sampling interval plus the
    final instant; spacing is at most ``delta / per_interval``."""
    t0, gaps = times[:-1], np.diff(times)
    frac = np.arange(per_interval) / per_interval
    grid = (t0[:, None] + gaps[:, None] * frac[None, :]).ravel()
    return np.append(grid, times[-1])


def run_trial(cfg: ScenarioConfig, delta: float, index: int, model: ModelPair | None = None) -> TrialResult:
    """Simulate one trial and classify it against the ``r``-ball contract."""
    model = model or cfg.build_model()
    seed = cfg.trial_seed(index)
    try:
        run = simulate_trial(cfg, model, delta, index)
    except DivergenceError as exc:
        return TrialResult(index, seed, delta, False, "diverged", exc.time, None, math.inf)
    grid = monitor_grid(run.observer_times)
    norms = stacked_sup_norms(run, grid)
    inside = norms <= cfg.r
    deadline = ENTRY_FRACTION * cfg.horizon
    max_norm = float(norms.max())
    # entry time = first grid time after the last excursion outside the ball
    outside = np.flatnonzero(~inside)
    settle = 0 if outside.size == 0 else int(outside[-1]) + 1
    entry = float(grid[settle]) if settle < grid.size else None
    if entry is not None and entry <= deadline:
        return TrialResult(index, seed, delta, True, None, None, entry, max_norm)
    if not inside[grid <= deadline].any():
        return TrialResult(index, seed, delta, False, "no-entry", deadline, entry, max_norm)
    late = outside[grid[outside] > deadline]
    t_out = float(grid[late[0] if late.size else outside[-1]])
    return TrialResult(index, seed, delta, False, "left-ball", t_out, entry, max_norm)


def _run_trial_args(args):
    cfg, delta, index = args
    return run_trial(cfg, delta, index)


def _evaluate_delta(cfg: ScenarioConfig, delta: float, model: ModelPair) -> list[TrialResult]:
    if cfg.workers > 1:
        jobs = [(cfg, delta, i) for i in range(cfg.trials)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_trial_args, jobs))
    else:
        results = [run_trial(cfg, delta, i, model) for i in range(cfg.trials)]
    return sorted(results, key=lambda r: (r.seed, r.index))


@dataclass
class StabilityReport:
    delta_star: float | None
    E_hat: float | None
    T_hat: float | None
    trials: int
    failures: list
    passed: bool
    tested: list
    anomalies: list
    config: dict

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "passed": self.passed,
            "delta_star": self.delta_star,
            "E_hat": self.E_hat,
            "T_hat": self.T_hat,
            "trials": self.trials,
            "failures": self.failures,
            "tested": self.tested,
            "anomalies": self.anomalies,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _failure_entry(t: TrialResult) -> dict:
    return {
        "seed": t.seed,
        "trial": t.index,
        "delta": t.delta,
        "reason": t.reason,
        "time": t.violation_time,
    }


def certify_practical_stability(cfg: ScenarioConfig, model: ModelPair | None = None) -> StabilityReport:
    """Search for a sampling bound under which every trial enters the
    ``r``-ball by ``0.8 * horizon`` and stays there.

    With ``delta_search`` the largest delta is tried first, then the
    smallest, then ``bisection_steps`` geometric midpoints between the
    largest failing and the smallest passing value. With ``delta_grid`` every
    listed value is tried. Failing to find a delta is reported, not raised.
    """
    model = model or cfg.build_model()
    outcomes: dict[float, list[TrialResult]] = {}

    def evaluate(delta):
        if delta not in outcomes:
            outcomes[delta] = _evaluate_delta(cfg, delta, model)
        return all(t.passed for t in outcomes[delta])

    if cfg.delta_grid is not None:
        for d in sorted(set(cfg.delta_grid), reverse=True):
            evaluate(d)
    else:
        ds = cfg.delta_search
        if not evaluate(ds.delta_max) and evaluate(ds.delta_min):
            lo, hi = ds.delta_min, ds.delta_max
            for _ in range(ds.bisection_steps):
                mid = math.sqrt(lo * hi)
                if evaluate(mid):
                    lo = mid
                else:
                    hi = mid

    passing = sorted(d for d, res in outcomes.items() if all(t.passed for t in res))
    tested = [
        {
            "delta": d,
            "passed": all(t.passed for t in outcomes[d]),
            "failed_trials": sum(not t.passed for t in outcomes[d]),
        }
        for d in sorted(outcomes)
    ]
    anomalies = [
        {"passing_delta": d, "failing_smaller_delta": d2}
        for d in passing
        for d2 in sorted(outcomes)
        if d2 < d and d2 not in passing
    ]
    if passing:
        delta_star = passing[-1]
        res = outcomes[delta_star]
        return StabilityReport(
            delta_star=delta_star,
            E_hat=max(t.max_norm for t in res),
            T_hat=max(t.entry_time for t in res),
            trials=cfg.trials,
            failures=[],
            passed=True,
            tested=tested,
            anomalies=anomalies,
            config=cfg.to_dict(),
        )
    failures = [
        _failure_entry(t)
        for d in sorted(outcomes)
        for t in outcomes[d]
        if not t.passed
    ]
    return StabilityReport(
        delta_star=None, E_hat=None, T_hat=None, trials=cfg.trials,
        failures=failures, passed=False, tested=tested, anomalies=anomalies,
        config=cfg.to_dict(),
    )


@dataclass
class ConvergenceTable:
    """Rows of ``(delta, sup error, observed order)``; order is ``None`` on
    the first row or when an error is zero or missing."""

    deltas: list
    errors: list
    orders: list
    status: list

    @property
    def has_order(self) -> bool:
        return len(self.deltas) > 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["delta", "sup_error", "status"]
            if self.has_order:
                head.insert(2, "order")
            w.writerow(head)
            for d, e, o, s in zip(self.deltas, self.errors, self.orders, self.status):
                row = [_fmt(d), _fmt(e)]
                if self.has_order:
                    row.append("" if o is None else _fmt(o))
                row.append(s)
                w.writerow(row)


def convergence_study(
    model: ModelPair, delta_list, settings: ConvergenceSettings = ConvergenceSettings()
) -> ConvergenceTable:
    """Sup-in-time plant error of the sampled loop against a fine continuous
    reference, for decreasing sampling periods.

    Periodic partitions are used when ``settings.a == 1``. A diverging run is
    recorded in its row and does not stop the study.
    """
    deltas = [float(d) for d in delta_list]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise DomainError("delta values must be strictly decreasing")
    x0 = constant_segment(np.full(model.n, settings.x0), model.delay)
    xh0 = constant_segment(np.full(model.n, settings.xhat0), model.delay)
    ref = integrate_continuous(
        model, x0, xh0,
        IntegratorConfig(settings.reference_step, settings.horizon, "rk4"),
        q_tilde=None,
    )
    n = model.n
    errors, status = [], []
    for i, d in enumerate(deltas):
        partition = generate_partition(settings.a, d, settings.horizon, seed=i)
        try:
            run = simulate_sampled(model, x0, xh0, partition, settings.substeps, q_tilde=None)
        except DivergenceError as exc:
            errors.append(math.nan)
            status.append(f"diverged at t={exc.time:.6g}")
            continue
        t = run.plant.times
        keep = t <= settings.horizon
        ref_x = np.column_stack(
            [np.interp(t[keep], ref.times, ref.states[:, c]) for c in range(n)]
        )
        diff = np.linalg.norm(run.plant.states[keep] - ref_x, axis=1)
        errors.append(float(diff.max()))
        status.append("ok")
    orders = [None]
    for i in range(1, len(deltas)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 > 0 and e1 > 0 and math.isfinite(e0) and math.isfinite(e1):
            orders.append(math.log(e0 / e1) / math.log(deltas[i - 1] / deltas[i]))
        else:
            orders.append(None)
    return ConvergenceTable(deltas, errors, orders, status)
