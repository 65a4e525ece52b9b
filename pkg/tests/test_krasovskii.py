import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _strategies import segments
from delayemu.engine import IntegratorConfig, integrate_continuous
from delayemu.errors import EvaluationError
from delayemu.krasovskii import (
    check_assumption1,
    check_classes,
    check_smooth_separability,
    check_steepest_descent,
    driver_derivative,
    exp_weighted_square_integral,
    linear_scalar_suite,
    sample_segments,
)
from delayemu.models import build_model
from delayemu.segments import Segment, constant_segment, window, zero_segment

A = build_model("linear-scalar")
SUITE = linear_scalar_suite(A)


def quad(phi):
    return float(np.sum(phi(0.0) ** 2))


# driver derivative

def test_stationary_quadratic():
    est = driver_derivative(quad, constant_segment(0.8, 1.0), [0.0])
    assert abs(est.limsup) <= 1e-8


def test_quadratic_decay():
    est = driver_derivative(quad, constant_segment(1.0, 1.0), [-1.0])
    assert est.limsup == pytest.approx(-2.0, rel=1e-3)
    assert est.richardson == pytest.approx(-2.0, rel=1e-6)
    assert len(est.quotients) == 4 and not est.flagged


def test_integral_functional_stationary():
    def V(phi):
        return exp_weighted_square_integral(phi, 1.0)

    est = driver_derivative(V, constant_segment(1.0, 1.0), [0.0])
    assert abs(est.limsup) <= 1e-3


@settings(max_examples=60)
@given(st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_quadratic_matches_gradient(x, d):
    phi = Segment([-1.0, 0.0], [[0.3, -0.1], x])
    est = driver_derivative(quad, phi, d)
    exact = 2 * np.dot(x, d)
    assert abs(est.limsup - exact) <= 1e-3 * abs(exact) + 1e-6 + 2 * 1e-4 * np.dot(d, d)


@settings(max_examples=60, deadline=None)
@given(segments(dim=2, delay=1.0), st.floats(0.1, 1.0))
def test_integral_functional_matches_analytic(phi, mu):
    def V2(p):
        return exp_weighted_square_integral(p, mu)

    est = driver_derivative(V2, phi, [0.0, 0.0])
    exact = (
        np.sum(phi(0.0) ** 2) - math.exp(-mu) * np.sum(phi(-1.0) ** 2) - mu * V2(phi)
    )
    # D+ of V2 along the shift; quotients at h >= 1e-5 carry O(h * slope^2)
    slope2 = max(np.sum(np.diff(phi.values, axis=0) ** 2, axis=1) / np.diff(phi.knots) ** 2)
    assert abs(est.richardson - exact) <= 1e-3 * max(1.0, abs(exact)) + 1e-4 * slope2


def test_nonfinite_functional():
    with pytest.raises(EvaluationError):
        driver_derivative(lambda p: math.inf, constant_segment(1.0, 1.0), [0.0])


def test_bad_h_sequence():
    with pytest.raises(ValueError):
        driver_derivative(quad, constant_segment(1.0, 1.0), [0.0], h_sequence=[1e-3, 1e-2])


@given(segments(delay=1.0), st.floats(-2.0, 2.0))
def test_exp_integral_against_dense_quadrature(seg, lam):
    # 12-point Gauss-Legendre per piece, independent of the closed form
    x, w = np.polynomial.legendre.leggauss(12)
    total = 0.0
    for k0, k1 in zip(seg.knots[:-1], seg.knots[1:]):
        th = 0.5 * (k1 - k0) * x + 0.5 * (k1 + k0)
        vals = np.sum(seg.sample(th) ** 2, axis=1) * np.exp(lam * th)
        total += 0.5 * (k1 - k0) * float(w @ vals)
    assert exp_weighted_square_integral(seg, lam) == pytest.approx(total, rel=1e-10, abs=1e-12)


def test_exp_moments_branches_agree():
    # piece widths straddle the series / closed-form switch at |lam w| = 0.5
    for lam in (0.499999, 0.500001, 1e-9):
        seg = Segment([-1.0, 0.0], [1.0, 2.0])
        exact = (
            sum(((1 + (s + 1)) ** 2) * math.exp(lam * s) for s in np.linspace(-1, 0, 200001)[:-1])
            / 200000
        )
        assert exp_weighted_square_integral(seg, lam) == pytest.approx(exact, rel=1e-4)


# separability

def quadratic_suite(b1=1.0, b2=1.0):
    return dataclasses.replace(
        SUITE,
        V1=lambda v: float(v @ v),
        beta1=lambda s: b1 * s * s,
        beta2=lambda s: b2 * s * s,
    )


def test_separability_equality_case():
    samples = sample_segments(200, 2, 1.0, 5.0, seed=1)
    assert check_smooth_separability(quadratic_suite(), samples).passed


def test_separability_broken_lower_bound():
    samples = sample_segments(50, 2, 1.0, 5.0, seed=2)
    rep = check_smooth_separability(quadratic_suite(b1=2.0), samples)
    assert not rep.passed
    for v in rep.violations:
        x0 = samples[v.sample](0.0)
        assert v.margin == pytest.approx(-float(x0 @ x0))


def test_shipped_suite_separability_wide_ball():
    samples = sample_segments(1000, 2, 1.0, 5.0, seed=3)
    assert check_smooth_separability(SUITE, samples).passed


# assumption 1 and steepest descent

def test_zero_segment_equalities():
    z = [zero_segment(2, 1.0)]
    rep = check_assumption1(SUITE, A, z)
    assert rep.passed and rep.worst_margin == 0.0
    for mode in ("definition4", "proof_form"):
        r = check_steepest_descent(SUITE, A, z, mode)
        assert r.passed and r.worst_margin == 0.0


def test_shrunk_gamma2_detected():
    broken = dataclasses.replace(SUITE, gamma2=lambda s: 0.5 * SUITE.gamma2(s))
    rep = check_assumption1(broken, A, sample_segments(100, 2, 1.0, 2.0, seed=4))
    assert "V<=gamma2" in rep.inequalities()


def test_negated_alpha3_fails_class_check():
    broken = dataclasses.replace(SUITE, alpha3=lambda s: -SUITE.alpha3(s))
    rep = check_assumption1(broken, A, sample_segments(20, 2, 1.0, 2.0, seed=5))
    assert any(i.startswith("class:alpha3") for i in rep.inequalities())


def test_class_grid_checks():
    assert check_classes(SUITE, list(SUITE.classes) + ["alpha_bar"]).passed
    bad = dataclasses.replace(SUITE, p=lambda s: math.atan(s), alpha_bar=lambda s: 2 * s)
    rep = check_classes(bad, ["p", "alpha_bar"])
    names = rep.inequalities()
    assert "class:p:unbounded" in names
    assert "class:id_minus_alpha_bar:positive" in names


def test_shipped_suite_passes_on_moderate_batch():
    samples = sample_segments(300, 2, 1.0, 2.0, seed=6)
    assert check_assumption1(SUITE, A, samples).passed
    assert check_steepest_descent(SUITE, A, samples, "proof_form").passed


def test_mode_implication():
    # a deliberately weak functional so some samples fail proof_form
    weak = dataclasses.replace(SUITE, eta=2.0, mu=2.0)
    samples = sample_segments(200, 2, 1.0, 2.0, seed=7)
    proof = check_steepest_descent(weak, A, samples, "proof_form")
    defn = check_steepest_descent(weak, A, samples, "definition4")
    fail_proof = {v.sample for v in proof.violations}
    fail_defn = {v.sample for v in defn.violations}
    assert fail_proof and fail_defn <= fail_proof
    assert {f["seed"] for f in proof.flagged} == {f["seed"] for f in defn.flagged}


def test_unknown_mode():
    with pytest.raises(ValueError):
        check_steepest_descent(SUITE, A, [], "strict")


def test_lkf_quadratic_form_oracle():
    # independent eigenvalue oracle for the frozen constants, in
    # w = (x, xhat, x(t-1), xhat(t-1)); V1 = w' P w on the current block
    a0, a1, K, L, c, lam = 0.2, 0.1, 1.5, 1.0, 0.5, 0.25
    P = np.array([[2.0, -1.0], [-1.0, 1.0]])
    A0 = np.array([[a0, -K], [L, a0 - K - L]])
    A1 = a1 * np.eye(2)
    top = P @ A0 + A0.T @ P
    tail = -c * math.exp(-lam) * np.eye(2)
    M2 = np.block([[top + c * np.eye(2), P @ A1], [A1.T @ P, tail]])
    M3 = np.block(
        [[(1 + lam) * top + lam**2 * P + c * np.eye(2), (1 + lam) * P @ A1],
         [(1 + lam) * A1.T @ P, tail]]
    )
    e2, e3 = np.linalg.eigvalsh(M2).max(), np.linalg.eigvalsh(M3).max()
    assert e2 == pytest.approx(-0.2657, abs=1e-4)
    assert e3 == pytest.approx(-0.248, abs=1e-3)
    # decrease form dominates alpha3(s) = 0.25 s^2; mixed form is negative definite
    assert e2 <= -0.25 and e3 < 0.0


def test_lyapunov_monotone_along_trajectory():
    tr = integrate_continuous(A, constant_segment(1.0, 1.0), zero_segment(1, 1.0),
                              IntegratorConfig(0.01, 10.0))
    ts = np.arange(0.0, 10.0 + 1e-9, 0.25)
    V = np.array([SUITE.V(window(tr, t)) for t in ts])
    assert np.all(np.diff(V) <= 1e-6 * (1 + V[:-1]))


def test_report_json_schema():
    broken = dataclasses.replace(SUITE, gamma2=lambda s: 0.5 * SUITE.gamma2(s))
    rep = check_assumption1(broken, A, sample_segments(10, 2, 1.0, 2.0, seed=8))
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) >= {"check", "samples", "violations", "flagged", "passed"}
    assert set(d["violations"][0]) == {"seed", "inequality", "lhs", "rhs", "margin"}
