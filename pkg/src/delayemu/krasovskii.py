"""Lyapunov-Krasovskii functionals and sampling-based condition checkers.

Functionals act on segments. Their derivative along a system is taken in
Driver's form, the upper right limit of ``(V(phi_h) - V(phi)) / h`` where
``phi_h`` shifts ``phi`` left by ``h`` and appends an Euler ramp with the
system drift. Finite ``h`` can only approximate that limit, so every
estimate carries its quotient sequence and a flag for erratic sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EvaluationError
from .models import (
    ModelPair,
    eval_composite_feedback,
    eval_extended_rhs,
    eval_stacked_rhs,
)
from .segments import Segment, euler_extend, sup_norm

__all__ = [
    "DEFAULT_H",
    "DriverEstimate",
    "driver_derivative",
    "exp_weighted_square_integral",
    "FunctionalSuite",
    "Violation",
    "CheckReport",
    "check_classes",
    "check_smooth_separability",
    "check_assumption1",
    "check_steepest_descent",
    "linear_scalar_suite",
    "sample_segments",
    "SHIPPED_SUITES",
]

DEFAULT_H = (1e-2, 1e-3, 1e-4, 1e-5)
_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class DriverEstimate:
    value: float
    limsup: float
    richardson: float
    hs: tuple
    quotients: tuple
    flagged: bool


def driver_derivative(V, phi: Segment, drift, h_sequence=DEFAULT_H) -> DriverEstimate:
    """Estimate the Driver-form derivative of ``V`` at ``phi`` along ``drift``.

    ``value`` is the quotient at the smallest ``h``; ``limsup`` (max of the
    last two quotients) is what the checkers use. ``richardson`` is the
    first-order extrapolation from the last two quotients. A sequence whose
    successive differences change sign beyond rounding noise is ``flagged``.
    """
    hs = tuple(float(h) for h in h_sequence)
    if len(hs) < 2 or any(b >= a for a, b in zip(hs, hs[1:])) or hs[-1] <= 0:
        raise ValueError("h_sequence must be strictly decreasing positive reals")
    v0 = float(V(phi))
    if not math.isfinite(v0):
        raise EvaluationError(f"functional is not finite at phi: {v0}")
    quotients, noise = [], []
    for h in hs:
        vh = float(V(euler_extend(phi, h, drift)))
        if not math.isfinite(vh):
            raise EvaluationError(f"functional is not finite on phi_h, h={h}")
        quotients.append((vh - v0) / h)
        noise.append(64 * _EPS * max(abs(v0), abs(vh)) / h)
    signs = set()
    for i in range(len(hs) - 1):
        d = quotients[i + 1] - quotients[i]
        if abs(d) > noise[i] + noise[i + 1]:
            signs.add(d > 0)
    h1, h2 = hs[-2], hs[-1]
    q1, q2 = quotients[-2], quotients[-1]
    return DriverEstimate(
        value=q2,
        limsup=max(q1, q2),
        richardson=(h1 * q2 - h2 * q1) / (h1 - h2),
        hs=hs,
        quotients=tuple(quotients),
        flagged=len(signs) > 1,
    )


def _exp_moments(lam: float, w: np.ndarray):
    """``int_0^w s^k exp(lam s) ds`` for ``k = 0, 1, 2``, elementwise."""
    x = lam * w
    small = np.abs(x) < 0.5
    i0 = np.empty_like(w)
    i1 = np.empty_like(w)
    i2 = np.empty_like(w)
    if small.any():
        xs, ws = x[small], w[small]
        s0 = np.zeros_like(xs)
        s1 = np.zeros_like(xs)
        s2 = np.zeros_like(xs)
        term = np.ones_like(xs)
        for j in range(30):
            s0 += term / (j + 1)
            s1 += term / (j + 2)
            s2 += term / (j + 3)
            term = term * xs / (j + 1)
        i0[small] = ws * s0
        i1[small] = ws**2 * s1
        i2[small] = ws**3 * s2
    big = ~small
    if big.any():
        xb = x[big]
        e = np.exp(xb)
        i0[big] = np.expm1(xb) / lam
        i1[big] = (e * (xb - 1.0) + 1.0) / lam**2
        i2[big] = (e * (xb * xb - 2.0 * xb + 2.0) - 2.0) / lam**3
    return i0, i1, i2


def exp_weighted_square_integral(seg: Segment, lam: float) -> float:
    """``int_{-delay}^0 exp(lam theta) |seg(theta)|^2 dtheta``, exact per
    linear piece."""
    k, v = seg.knots, seg.values
    w = np.diff(k)
    a = v[:-1]
    b = (v[1:] - a) / w[:, None]
    i0, i1, i2 = _exp_moments(lam, w)
    per = np.exp(lam * k[:-1]) * (
        np.einsum("ij,ij->i", a, a) * i0
        + 2.0 * np.einsum("ij,ij->i", a, b) * i1
        + np.einsum("ij,ij->i", b, b) * i2
    )
    return float(per.sum())


@dataclass(frozen=True)
class FunctionalSuite:
    """A smoothly separable functional ``V = V1(phi(0)) + V2(phi)`` with the
    comparison functions and constants the stability conditions refer to.

    ``classes`` declares the comparison class of each scalar function
    (``"Kinf"``, ``"K"`` or ``"P"``); they are checked on a grid only.
    """

    V1: Callable[[np.ndarray], float]
    V2: Callable[[Segment], float]
    gamma1: Callable[[float], float]
    gamma2: Callable[[float], float]
    beta1: Callable[[float], float]
    beta2: Callable[[float], float]
    alpha3: Callable[[float], float]
    alpha_bar: Callable[[float], float]
    p: Callable[[float], float]
    eta: float
    mu: float
    nu: int
    delay: float
    classes: dict = field(
        default_factory=lambda: {
            "gamma1": "Kinf", "gamma2": "Kinf", "beta1": "Kinf", "beta2": "Kinf",
            "alpha3": "K", "alpha_bar": "K", "p": "Kinf",
        }
    )
    name: str = "custom"

    def V(self, phi: Segment) -> float:
        return self.V1(phi(0.0)) + self.V2(phi)

    def pV1(self, phi: Segment) -> float:
        return self.p(self.V1(phi(0.0)))


@dataclass(frozen=True)
class Violation:
    sample: int | None
    inequality: str
    lhs: float
    rhs: float
    margin: float

    def to_dict(self) -> dict:
        return {
            "seed": self.sample,
            "inequality": self.inequality,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
        }


@dataclass
class CheckReport:
    """Outcome of one checker; ``passed`` iff there are no violations.

    ``margin`` is ``rhs - lhs`` of an inequality ``lhs <= rhs``; flagged
    samples had unreliable derivative estimates and are listed, not counted.
    """

    check: str
    samples_tested: int
    violations: list = field(default_factory=list)
    flagged: list = field(default_factory=list)
    worst_margin: float = math.inf

    @property
    def passed(self) -> bool:
        return not self.violations

    def record(self, sample, inequality, lhs, rhs, tol) -> None:
        margin = float(rhs - lhs)
        self.worst_margin = min(self.worst_margin, margin)
        if margin < -tol:
            self.violations.append(
                Violation(sample, inequality, float(lhs), float(rhs), margin)
            )

    def merge(self, other: "CheckReport") -> None:
        # margins of the grid class checks live on a different scale
        self.violations.extend(other.violations)
        self.flagged.extend(other.flagged)

    def inequalities(self) -> list[str]:
        return sorted({v.inequality for v in self.violations})

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "samples": self.samples_tested,
            "passed": self.passed,
            "worst_margin": self.worst_margin if math.isfinite(self.worst_margin) else None,
            "violations": [v.to_dict() for v in self.violations],
            "flagged": self.flagged,
        }


_GRID = np.concatenate([[0.0], np.geomspace(1e-3, 1e3, 61)])


def check_classes(suite: FunctionalSuite, names, grid=_GRID) -> CheckReport:
    """Grid test of the declared comparison classes.

    Class P: zero at zero, positive elsewhere. K adds strict increase. K-inf
    adds growth, taken here as ``g(max grid) >= 100 g(1)``, a heuristic
    stand-in for unboundedness.
    """
    report = CheckReport("classes", 0)
    funcs = {n: getattr(suite, n) for n in names if n in suite.classes}
    if "alpha_bar" in names:
        funcs["id_minus_alpha_bar"] = lambda s: s - suite.alpha_bar(s)
    declared = dict(suite.classes, id_minus_alpha_bar="Kinf")
    for name, g in funcs.items():
        cls = declared[name]
        vals = np.array([float(g(s)) for s in grid])
        tag = f"class:{name}"
        tests = [("zero", -abs(vals[0]) + 1e-12), ("positive", vals[1:].min())]
        if cls in ("K", "Kinf"):
            tests.append(("increasing", np.diff(vals).min()))
        if cls == "Kinf":
            tests.append(("unbounded", vals[-1] - 100.0 * float(g(1.0))))
        for prop, margin in tests:
            margin = float(margin)
            report.worst_margin = min(report.worst_margin, margin)
            if margin <= 0.0:
                report.violations.append(Violation(None, f"{tag}:{prop}", 0.0, margin, margin))
    return report


def check_smooth_separability(
    suite: FunctionalSuite, samples, tol: float = 1e-9
) -> CheckReport:
    """``beta1(|phi(0)|) <= V1(phi(0)) <= beta2(|phi(0)|)`` on every sample."""
    report = CheckReport("smooth_separability", len(samples))
    report.merge(check_classes(suite, ("beta1", "beta2")))
    for i, phi in enumerate(samples):
        v = phi(0.0)
        s = float(np.linalg.norm(v))
        v1 = float(suite.V1(v))
        report.record(i, "beta1<=V1", suite.beta1(s), v1, tol)
        report.record(i, "V1<=beta2", v1, suite.beta2(s), tol)
    return report


def _tolerance(atol, rtol, *estimates):
    return atol + rtol * sum(abs(e) for e in estimates)


def check_assumption1(
    suite: FunctionalSuite,
    model: ModelPair,
    samples,
    atol: float = 1e-6,
    rtol: float = 1e-3,
    sandwich_tol: float = 1e-9,
    h_sequence=DEFAULT_H,
) -> CheckReport:
    """Sandwich bounds, decrease ``D+V <= -alpha3`` and the mixed condition
    ``nu D+V + eta D+(p o V1) + eta mu p(V1) <= 0``, all with the closed-loop
    drift ``F(phi)`` (input fixed at zero)."""
    report = CheckReport("assumption1", len(samples))
    report.merge(check_classes(suite, ("gamma1", "gamma2", "alpha3", "p")))
    for i, phi in enumerate(samples):
        drift = eval_stacked_rhs(model, phi)
        s0 = float(np.linalg.norm(phi(0.0)))
        sn = sup_norm(phi)
        V = suite.V(phi)
        report.record(i, "gamma1<=V", suite.gamma1(s0), V, sandwich_tol)
        report.record(i, "V<=gamma2", V, suite.gamma2(sn), sandwich_tol)
        dV = driver_derivative(suite.V, phi, drift, h_sequence)
        dP = driver_derivative(suite.pV1, phi, drift, h_sequence)
        if dV.flagged or dP.flagged:
            report.flagged.append({"seed": i, "dV": list(dV.quotients), "dpV1": list(dP.quotients)})
            continue
        report.record(
            i, "D+V<=-alpha3", dV.limsup, -suite.alpha3(s0),
            _tolerance(atol, rtol, dV.limsup),
        )
        pv = suite.p(suite.V1(phi(0.0)))
        lhs = suite.nu * dV.limsup + suite.eta * dP.limsup + suite.eta * suite.mu * pv
        report.record(
            i, "mixed<=0", lhs, 0.0,
            _tolerance(atol, rtol, suite.nu * dV.limsup, suite.eta * dP.limsup),
        )
    return report


def check_steepest_descent(
    suite: FunctionalSuite,
    model: ModelPair,
    samples,
    mode: str = "definition4",
    atol: float = 1e-6,
    rtol: float = 1e-3,
    h_sequence=DEFAULT_H,
) -> CheckReport:
    """Steepest-descent inequality for the composite feedback ``k_tilde``.

    ``definition4`` bounds the left side by
    ``alpha_bar(eta mu exp(-mu delay) p(beta1(||phi||)))``; ``proof_form``
    bounds it by 0. Both share every evaluation except that bound.
    """
    if mode not in ("definition4", "proof_form"):
        raise ValueError(f"unknown mode {mode!r}")
    report = CheckReport(f"steepest_descent:{mode}", len(samples))
    report.merge(check_classes(suite, ("alpha_bar", "beta1", "p")))
    for i, phi in enumerate(samples):
        lhs, dV, dP, sn = _steepest_lhs(suite, model, phi, h_sequence)
        if dV.flagged or dP.flagged:
            report.flagged.append({"seed": i, "dV": list(dV.quotients), "dpV1": list(dP.quotients)})
            continue
        if mode == "proof_form":
            rhs = 0.0
        else:
            rhs = suite.alpha_bar(
                suite.eta * suite.mu * math.exp(-suite.mu * suite.delay)
                * suite.p(suite.beta1(sn))
            )
        report.record(
            i, f"steepest:{mode}", lhs, rhs,
            _tolerance(atol, rtol, suite.nu * dV.limsup, suite.eta * dP.limsup),
        )
    return report


def _steepest_lhs(suite, model, phi, h_sequence):
    u_tilde = eval_composite_feedback(model, phi)
    drift = eval_extended_rhs(model, phi, u_tilde)
    dV = driver_derivative(suite.V, phi, drift, h_sequence)
    dP = driver_derivative(suite.pV1, phi, drift, h_sequence)
    pv = suite.p(suite.V1(phi(0.0)))
    lhs = suite.nu * dV.limsup + suite.eta * max(0.0, dP.limsup + suite.mu * pv)
    return lhs, dV, dP, sup_norm(phi)


def linear_scalar_suite(model: ModelPair, c: float = 0.5, lam: float = 0.25) -> FunctionalSuite:
    """Shipped functional for the linear-scalar benchmark.

    ``V1 = |x|^2 + |x - xhat|^2`` (plant state and estimation error) and
    ``V2 = c int exp(lam theta) |phi(theta)|^2``. With the nominal gains the
    decrease and mixed conditions reduce to quadratic forms in
    ``(x, xhat, x(t-delay), xhat(t-delay))`` whose largest eigenvalues are
    about -0.266 and -0.248, which is what ``alpha3(s) = 0.25 s^2`` rests on.
    """
    n = model.n
    P = np.kron(np.array([[2.0, -1.0], [-1.0, 1.0]]), np.eye(n))
    eig = np.linalg.eigvalsh(P)
    b1, b2 = float(eig[0]), float(eig[-1])
    delay = model.delay
    g2 = b2 + c * (-math.expm1(-lam * delay)) / lam

    def V1(v):
        x, e = v[:n], v[:n] - v[n:]
        return float(x @ x + e @ e)

    def V2(phi):
        return c * exp_weighted_square_integral(phi, lam)

    return FunctionalSuite(
        V1=V1,
        V2=V2,
        gamma1=lambda s: b1 * s * s,
        gamma2=lambda s: g2 * s * s,
        beta1=lambda s: b1 * s * s,
        beta2=lambda s: b2 * s * s,
        alpha3=lambda s: 0.25 * s * s,
        alpha_bar=lambda s: 0.5 * s,
        p=lambda s: s,
        eta=lam,
        mu=lam,
        nu=1,
        delay=delay,
        name="linear-scalar",
    )


SHIPPED_SUITES = {"linear-scalar": linear_scalar_suite}


def sample_segments(count: int, dim: int, delay: float, bound: float, seed=0) -> list[Segment]:
    """Random piecewise-linear segments with ``sup_norm <= bound``.

    Every fourth sample is constant; the rest have 2 to 10 knots at random
    positions. Sample ``i`` depends only on ``(seed, i)``.
    """
    out = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        if i % 4 == 3:
            nk = 2
            knots = np.array([-delay, 0.0])
        else:
            nk = int(rng.integers(2, 11))
            inner = np.sort(rng.uniform(-delay, 0.0, size=nk - 2))
            knots = np.concatenate([[-delay], inner, [0.0]])
            if np.any(np.diff(knots) <= 0):
                knots = np.linspace(-delay, 0.0, nk)
                knots[0], knots[-1] = -delay, 0.0
        d = rng.normal(size=(nk, dim))
        d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-300)
        r = bound * rng.uniform(size=(nk, 1)) ** (1.0 / dim)
        values = d * r
        if i % 4 == 3:
            values[1] = values[0]
        out.append(Segment(knots, values, delay))
    return out
