"""Plant/observer-controller pairs and the stacked closed-loop maps.

The plant is ``x' = f(x_t, u)``, ``y = h(x_t)``; the observer-based controller
is ``xhat' = f_hat(xhat_t, u, y)``, ``u = k(xhat_t, y)``. Stacking the two
states gives the closed-loop map ``F`` and, with the observer derivative
treated as a second input, the open-loop map ``F_tilde`` together with the
composite feedback ``k_tilde`` such that ``F(phi) = F_tilde(phi, k_tilde(phi))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np

from .errors import ConfigError, DomainError
from .segments import Segment, split

__all__ = [
    "ModelPair",
    "BenchmarkSpec",
    "eval_stacked_rhs",
    "eval_extended_rhs",
    "eval_composite_feedback",
    "BENCHMARKS",
    "build_model",
    "benchmark",
]


@dataclass(frozen=True)
class ModelPair:
    """Plant maps ``(f, h)`` and observer-controller maps ``(f_hat, k)``.

    All maps must be pure, vanish at zero and be Lipschitz on bounded sets.
    Vector arguments and results are 1-d float arrays.
    """

    n: int
    m: int
    q: int
    delay: float
    f: Callable[[Segment, np.ndarray], np.ndarray]
    h: Callable[[Segment], np.ndarray]
    f_hat: Callable[[Segment, np.ndarray, np.ndarray], np.ndarray]
    k: Callable[[Segment, np.ndarray], np.ndarray]
    name: str = "custom"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    description: str
    defaults: dict
    factory: Callable[..., ModelPair]

    def build(self, **params) -> ModelPair:
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(
                f"unknown parameter(s) for model {self.name!r}: {sorted(unknown)}"
            )
        merged = {**self.defaults, **params}
        return self.factory(**merged)


def _check_stacked(model: ModelPair, phi: Segment) -> None:
    if phi.dim != 2 * model.n:
        raise DomainError(
            f"stacked segment has dimension {phi.dim}, model needs {2 * model.n}"
        )


def eval_stacked_rhs(model: ModelPair, phi: Segment) -> np.ndarray:
    """Closed-loop right-hand side ``F(phi)`` for a stacked segment."""
    _check_stacked(model, phi)
    plant, obs = split(phi, model.n)
    y = model.h(plant)
    u = model.k(obs, y)
    return np.concatenate([model.f(plant, u), model.f_hat(obs, u, y)])


def eval_extended_rhs(model: ModelPair, phi: Segment, u_tilde) -> np.ndarray:
    """Open-loop right-hand side ``F_tilde(phi, u_tilde) = [f(phi1, u1); u2]``."""
    _check_stacked(model, phi)
    u_tilde = np.atleast_1d(np.asarray(u_tilde, dtype=float))
    if u_tilde.shape != (model.m + model.n,):
        raise DomainError(
            f"u_tilde has shape {u_tilde.shape}, expected ({model.m + model.n},)"
        )
    plant, _ = split(phi, model.n)
    return np.concatenate([model.f(plant, u_tilde[: model.m]), u_tilde[model.m:]])


def eval_composite_feedback(model: ModelPair, phi: Segment) -> np.ndarray:
    """Composite feedback ``k_tilde(phi) = [k(phi2, y); f_hat(phi2, k, y)]``."""
    _check_stacked(model, phi)
    plant, obs = split(phi, model.n)
    y = model.h(plant)
    u = model.k(obs, y)
    return np.concatenate([u, model.f_hat(obs, u, y)])


# Benchmark library. Maps are module-level functions bound with partial so
# models pickle cleanly into worker processes.


def _lin_f(phi, u, *, a0, a1, b, delay):
    return a0 * phi(0.0) + a1 * phi(-delay) + b * u


def _lin_f_hat(phi, u, y, *, a0, a1, b, L, delay):
    x0 = phi(0.0)
    return a0 * x0 + a1 * phi(-delay) + b * u + L * (y - x0)


def _lin_f_hat_delayed_output(phi, u, y, *, a0, a1, b, L, delay):
    return a0 * phi(0.0) + a1 * phi(-delay) + b * u + L * (y - phi(-delay))


def _sin_f(phi, u, *, a0, a1, b, delay):
    return a0 * phi(0.0) + a1 * np.sin(phi(-delay)) + b * u


def _sin_f_hat(phi, u, y, *, a0, a1, b, L, delay):
    x0 = phi(0.0)
    return a0 * x0 + a1 * np.sin(phi(-delay)) + b * u + L * (y - x0)


def _out_current(phi):
    return phi(0.0)


def _out_delayed(phi, *, delay):
    return phi(-delay)


def _state_feedback(phi, y, *, K):
    return -K * phi(0.0)


def _zero_map(*args):
    return np.zeros(1)


def linear_scalar(a0=0.2, a1=0.1, b=1.0, L=1.0, K=1.5, delay=1.0) -> ModelPair:
    """``x' = a0 x + a1 x(t - delay) + b u``, ``y = x``; copy observer with
    output injection ``L`` and ``u = -K xhat``."""
    return ModelPair(
        n=1, m=1, q=1, delay=float(delay),
        f=partial(_lin_f, a0=a0, a1=a1, b=b, delay=delay),
        h=_out_current,
        f_hat=partial(_lin_f_hat, a0=a0, a1=a1, b=b, L=L, delay=delay),
        k=partial(_state_feedback, K=K),
        name="linear-scalar",
        params=dict(a0=a0, a1=a1, b=b, L=L, K=K, delay=delay),
    )


def nonlinear_sine(a0=0.5, a1=0.5, b=1.0, L=1.5, K=2.0, delay=1.0) -> ModelPair:
    """``x' = a0 x + a1 sin(x(t - delay)) + b u``, ``y = x``."""
    return ModelPair(
        n=1, m=1, q=1, delay=float(delay),
        f=partial(_sin_f, a0=a0, a1=a1, b=b, delay=delay),
        h=_out_current,
        f_hat=partial(_sin_f_hat, a0=a0, a1=a1, b=b, L=L, delay=delay),
        k=partial(_state_feedback, K=K),
        name="nonlinear-sine",
        params=dict(a0=a0, a1=a1, b=b, L=L, K=K, delay=delay),
    )


def delayed_output(a0=-1.0, a1=0.0, b=1.0, L=0.5, K=1.0, delay=1.0) -> ModelPair:
    """Linear plant measured through ``y = x(t - delay)``; the observer
    injects ``L (y - xhat(t - delay))``."""
    return ModelPair(
        n=1, m=1, q=1, delay=float(delay),
        f=partial(_lin_f, a0=a0, a1=a1, b=b, delay=delay),
        h=partial(_out_delayed, delay=delay),
        f_hat=partial(_lin_f_hat_delayed_output, a0=a0, a1=a1, b=b, L=L, delay=delay),
        k=partial(_state_feedback, K=K),
        name="delayed-output",
        params=dict(a0=a0, a1=a1, b=b, L=L, K=K, delay=delay),
    )


def zero_model(delay=1.0) -> ModelPair:
    return ModelPair(
        n=1, m=1, q=1, delay=float(delay),
        f=_zero_map, h=_zero_map, f_hat=_zero_map, k=_zero_map,
        name="zero", params=dict(delay=delay),
    )


BENCHMARKS = {
    spec.name: spec
    for spec in [
        BenchmarkSpec(
            "linear-scalar",
            "linear scalar plant with one point delay, full-state output",
            dict(a0=0.2, a1=0.1, b=1.0, L=1.0, K=1.5, delay=1.0),
            linear_scalar,
        ),
        BenchmarkSpec(
            "nonlinear-sine",
            "scalar plant with a sin(x(t - delay)) term, full-state output",
            dict(a0=0.5, a1=0.5, b=1.0, L=1.5, K=2.0, delay=1.0),
            nonlinear_sine,
        ),
        BenchmarkSpec(
            "delayed-output",
            "stable scalar plant observed through a delayed output",
            dict(a0=-1.0, a1=0.0, b=1.0, L=0.5, K=1.0, delay=1.0),
            delayed_output,
        ),
        BenchmarkSpec("zero", "all maps identically zero", dict(delay=1.0), zero_model),
    ]
}


def benchmark(name: str) -> BenchmarkSpec:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ConfigError(
            f"unknown model {name!r}; choose from {sorted(BENCHMARKS)}"
        ) from None


def build_model(name: str, params: dict | None = None) -> ModelPair:
    return benchmark(name).build(**(params or {}))
