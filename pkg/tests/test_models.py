import dataclasses
import pickle

import numpy as np
import pytest
from hypothesis import given

from _strategies import segments
from delayemu.errors import ConfigError, DomainError
from delayemu.krasovskii import sample_segments
from delayemu.models import (
    BENCHMARKS,
    build_model,
    eval_composite_feedback,
    eval_extended_rhs,
    eval_stacked_rhs,
)
from delayemu.segments import Segment, constant_segment, stack, sup_norm, zero_segment

A = build_model("linear-scalar")


def ones2():
    return stack(constant_segment(1.0, 1.0), constant_segment(1.0, 1.0))


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_zero_preservation(name):
    m = build_model(name)
    z = zero_segment(2 * m.n, m.delay)
    zn = zero_segment(m.n, m.delay)
    u0, y0 = np.zeros(m.m), np.zeros(m.q)
    assert np.all(m.f(zn, u0) == 0) and np.all(m.h(zn) == 0)
    assert np.all(m.f_hat(zn, u0, y0) == 0) and np.all(m.k(zn, y0) == 0)
    assert np.all(eval_stacked_rhs(m, z) == 0)
    assert np.all(eval_extended_rhs(m, z, np.zeros(m.m + m.n)) == 0)
    assert np.all(eval_composite_feedback(m, z) == 0)


def test_stacked_rhs_hand_value():
    # [0.2 + 0.1 - 1.5, 0.2 + 0.1 - 1.5 + 1 * (1 - 1)]
    assert eval_stacked_rhs(A, ones2()) == pytest.approx([-1.2, -1.2], abs=1e-15)


def test_extended_rhs_first_block_and_pass_through():
    out = eval_extended_rhs(A, ones2(), [-1.5, 0.123456789])
    assert out[0] == pytest.approx(-1.2, abs=1e-15)
    assert out[1] == 0.123456789


def test_composite_feedback_hand_value():
    assert eval_composite_feedback(A, ones2()) == pytest.approx([-1.5, -1.2], abs=1e-15)


@pytest.mark.parametrize("name", ["linear-scalar", "nonlinear-sine", "delayed-output"])
def test_identity_over_random_segments(name):
    m = build_model(name)
    for phi in sample_segments(100, 2 * m.n, m.delay, 10.0, seed=3):
        direct = eval_stacked_rhs(m, phi)
        composed = eval_extended_rhs(m, phi, eval_composite_feedback(m, phi))
        assert np.max(np.abs(direct - composed)) <= 1e-12


@given(segments(dim=2, delay=1.0))
def test_identity_property(phi):
    m = build_model("nonlinear-sine")
    np.testing.assert_array_equal(
        eval_stacked_rhs(m, phi), eval_extended_rhs(m, phi, eval_composite_feedback(m, phi))
    )


def test_dimension_checks():
    with pytest.raises(DomainError):
        eval_stacked_rhs(A, constant_segment(1.0, 1.0))
    with pytest.raises(DomainError):
        eval_composite_feedback(A, zero_segment(3, 1.0))
    with pytest.raises(DomainError):
        eval_extended_rhs(A, ones2(), [1.0])


def test_delayed_output_uses_history():
    m = build_model("delayed-output")
    plant = Segment([-1.0, 0.0], [3.0, 0.0])
    assert m.h(plant)[0] == 3.0
    phi = stack(plant, zero_segment(1, 1.0))
    # observer sees y - xhat(t - delay) = 3
    assert eval_stacked_rhs(m, phi)[1] == pytest.approx(0.5 * 3.0)


def test_h_evaluated_once_per_call():
    calls = []
    base = build_model("linear-scalar")

    def h(phi):
        calls.append(1)
        return base.h(phi)

    m = dataclasses.replace(base, h=h)
    eval_stacked_rhs(m, ones2())
    eval_composite_feedback(m, ones2())
    assert len(calls) == 2


@pytest.mark.parametrize("name", ["linear-scalar", "nonlinear-sine"])
def test_lipschitz_spot_check(name):
    m = build_model(name)
    rng = np.random.default_rng(5)
    phis = sample_segments(1000, 1, 1.0, 2.0, seed=10)
    psis = sample_segments(1000, 1, 1.0, 2.0, seed=11)
    ratios = []
    for phi, psi in zip(phis, psis):
        u = rng.uniform(-2, 2, size=1)
        d = stack(phi, psi)  # union knots give an exact difference
        diff = sup_norm(Segment(d.knots, d.values[:, :1] - d.values[:, 1:], 1.0))
        if diff > 1e-9:
            ratios.append(abs(m.f(phi, u) - m.f(psi, u))[0] / diff)
    L = max(ratios)
    assert np.isfinite(L) and L <= abs(m.params["a0"]) + abs(m.params["a1"]) + 1e-12


def test_unknown_model_and_params():
    with pytest.raises(ConfigError):
        build_model("nope")
    with pytest.raises(ConfigError):
        build_model("linear-scalar", {"gain": 2})


def test_models_pickle():
    m = build_model("nonlinear-sine", {"K": 3.0})
    m2 = pickle.loads(pickle.dumps(m))
    np.testing.assert_array_equal(eval_stacked_rhs(m, ones2()), eval_stacked_rhs(m2, ones2()))
