"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL criterion N: ...`` line (shown
even without ``-s``) and asserts both the numerical tolerance and the
runtime budget.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from delayemu.certify import (
    ConvergenceSettings,
    certify_practical_stability,
    convergence_study,
    parse_config,
)
from delayemu.engine import IntegratorConfig, integrate_continuous, integrate_extended
from delayemu.krasovskii import (
    check_assumption1,
    check_smooth_separability,
    check_steepest_descent,
    driver_derivative,
    exp_weighted_square_integral,
    linear_scalar_suite,
    sample_segments,
)
from delayemu.models import (
    build_model,
    eval_composite_feedback,
    eval_extended_rhs,
    eval_stacked_rhs,
)
from delayemu.sampled import (
    generate_partition,
    reconstruct_observer_history,
    sample_initial_state,
    simulate_sampled,
)
from delayemu.segments import constant_segment, slope_bound, stack, sup_norm, zero_segment

BENCH_A = {
    "model": {"name": "linear-scalar"},
    "R": 1.0,
    "r": 0.1,
    "a": 0.5,
    "q_tilde": 1.0,
    "horizon": 40.0,
    "trials": 50,
    "seed": 2024,
    "substeps": 4,
    "delta_search": {"delta_max": 0.2, "delta_min": 0.01, "bisection_steps": 4},
}


@pytest.fixture
def report(capsys):
    def emit(n, ok, budget, elapsed, detail):
        ok = ok and elapsed < budget
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail} [{elapsed:.2f}s / {budget:g}s]"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


def test_criterion_1_identity(report):
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("linear-scalar", "nonlinear-sine"):
        m = build_model(name)
        for phi in sample_segments(1000, 2 * m.n, m.delay, 10.0, seed=101):
            d = eval_stacked_rhs(m, phi) - eval_extended_rhs(m, phi, eval_composite_feedback(m, phi))
            worst = max(worst, float(np.abs(d).max()))
    report(1, worst <= 1e-12, 5.0, time.perf_counter() - t0,
           f"F vs composite path, 2x1000 segments, max diff {worst:.3g} <= 1e-12")


def test_criterion_2_path_equality(report):
    t0 = time.perf_counter()
    m = build_model("linear-scalar")
    cfg = IntegratorConfig(0.01, 10.0)
    one, zero = constant_segment(1.0, 1.0), zero_segment(1, 1.0)
    a = integrate_continuous(m, one, zero, cfg)
    b = integrate_extended(m, one, zero, "composite", cfg)
    diff = float(np.abs(a.states - b.states).max()) if a.states.shape == b.states.shape else math.inf
    report(2, diff <= 1e-12, 5.0, time.perf_counter() - t0,
           f"stacked vs composite integration, max diff {diff:.3g} <= 1e-12")


def test_criterion_3_driver_derivative(report):
    t0 = time.perf_counter()

    def quad(phi):
        return float(np.sum(phi(0.0) ** 2))

    def V2(phi):
        return exp_weighted_square_integral(phi, 1.0)

    one = constant_segment(1.0, 1.0)
    cases = [
        ("quadratic", driver_derivative(quad, one, [-1.0]).limsup, -2.0),
        ("integral", driver_derivative(V2, one, [0.0]).limsup, 0.0),
        ("stationary", driver_derivative(quad, constant_segment(0.8, 1.0), [0.0]).limsup, 0.0),
    ]
    errs = {name: abs(got - exact) for name, got, exact in cases}
    ok = all(abs(got - exact) <= max(1e-3 * abs(exact), 1e-6) for _, got, exact in cases)
    detail = ", ".join(f"{k} err {v:.2g}" for k, v in errs.items())
    report(3, ok, 1.0, time.perf_counter() - t0, f"driver derivative cases: {detail}")


def test_criterion_4_reconstruction(report):
    t0 = time.perf_counter()
    m = build_model("linear-scalar")
    rng = np.random.default_rng(404)
    cases = violations = 0
    run_id = 0
    while cases < 10_000:
        init = sample_initial_state(1.0, 1.0, 1.0, 1, seed=[run_id, 0])
        a = float(rng.uniform(0.2, 1.0))
        p = generate_partition(a, 0.15, 2.5, seed=[run_id, 1])
        run = simulate_sampled(m, init, init, p, substeps=1, q_tilde=None)
        times, vals = run.observer_times, run.observer_values
        for j in rng.choice(times.size, size=min(8, times.size), replace=False):
            tj = times[j]
            r = reconstruct_observer_history(run, tj)
            lo = int(np.searchsorted(times, tj - 1.0, side="left"))
            # node exactness at every instant inside the window
            for l in range(lo, j + 1):
                cases += 1
                violations += not np.array_equal(r(times[l] - tj), vals[l])
            # midpoint linearity between consecutive instants
            for l in range(lo, j):
                mid = 0.5 * (times[l] + times[l + 1]) - tj
                want = 0.5 * (vals[l] + vals[l + 1])
                cases += 1
                violations += not np.allclose(r(mid), want, rtol=1e-12, atol=1e-15)
            # initial-data branch, bit-exact
            if tj < 1.0:
                for th in rng.uniform(-1.0, -tj, size=3):
                    cases += 1
                    violations += not np.array_equal(r(th), init(tj + th))
        run_id += 1
    report(4, violations == 0, 5.0, time.perf_counter() - t0,
           f"{cases} reconstruction cases over {run_id} runs, {violations} violations")


def test_criterion_5_emulation_order(report):
    t0 = time.perf_counter()
    table = convergence_study(build_model("linear-scalar"), [0.1, 0.05, 0.025, 0.0125], ConvergenceSettings())
    orders = [o for o in table.orders if o is not None]
    ok = len(orders) == 3 and all(0.7 <= o <= 1.3 for o in orders)
    report(5, ok, 30.0, time.perf_counter() - t0,
           "Euler emulation orders " + ", ".join(f"{o:.3f}" for o in orders) + " in [0.7, 1.3]")


def test_criterion_6_certification(report):
    t0 = time.perf_counter()
    good = certify_practical_stability(parse_config(BENCH_A))
    flipped = dict(BENCH_A, model={"name": "linear-scalar", "params": {"K": -1.5}})
    bad = certify_practical_stability(parse_config(flipped))
    bad_deltas = sorted({t["delta"] for t in bad.tested})
    ok = (
        good.passed and good.delta_star is not None and good.delta_star >= 0.01
        and not bad.passed and bad_deltas[0] == 0.01 and bad_deltas[-1] == 0.2
    )
    report(6, ok, 120.0, time.perf_counter() - t0,
           f"benchmark A passed={good.passed} delta*={good.delta_star}; "
           f"K=-1.5 passed={bad.passed} at deltas {bad_deltas}")


def test_criterion_7_lkf_checker(report):
    t0 = time.perf_counter()
    A = build_model("linear-scalar")
    suite = linear_scalar_suite(A)
    samples = sample_segments(1000, 2, 1.0, 2.0, seed=707)
    shipped = [
        check_smooth_separability(suite, samples),
        check_assumption1(suite, A, samples),
        check_steepest_descent(suite, A, samples, "proof_form"),
    ]
    unflagged = sum(len(r.violations) for r in shipped)
    few = samples[:200]
    broken = {
        "shrunk gamma2": check_assumption1(
            dataclasses.replace(suite, gamma2=lambda s: 0.5 * suite.gamma2(s)), A, few),
        "inflated beta1": check_smooth_separability(
            dataclasses.replace(suite, beta1=lambda s: 2.0 * suite.beta1(s)), few),
        "negated alpha3": check_assumption1(
            dataclasses.replace(suite, alpha3=lambda s: -suite.alpha3(s)), A, few),
    }
    counts = {k: len(r.violations) for k, r in broken.items()}
    ok = unflagged == 0 and all(c >= 1 for c in counts.values())
    report(7, ok, 60.0, time.perf_counter() - t0,
           f"shipped suite {unflagged} violations "
           f"({sum(len(r.flagged) for r in shipped)} flagged); broken suites {counts}")


def test_criterion_8_initial_states(report):
    t0 = time.perf_counter()
    R, q = 1.0, 1.0
    bad = 0
    for i in range(10_000):
        x0 = sample_initial_state(R / math.sqrt(2), q, 1.0, 1, seed=[i, 0])
        xh0 = sample_initial_state(R / math.sqrt(2), q, 1.0, 1, seed=[i, 1])
        s = stack(x0, xh0)
        bad += not (slope_bound(s) <= q and sup_norm(s) <= R)
    report(8, bad == 0, 5.0, time.perf_counter() - t0,
           f"10000 stacked initial states, {bad} outside slope <= {q}, sup <= {R}")


def test_criterion_9_determinism(report):
    t0 = time.perf_counter()
    cfg = parse_config(dict(BENCH_A, trials=20, horizon=30.0, seed=99))
    a = certify_practical_stability(cfg).to_json().encode()
    b = certify_practical_stability(cfg).to_json().encode()
    report(9, a == b, 120.0, time.perf_counter() - t0,
           f"two certification runs, reports byte-identical={a == b} ({len(a)} bytes)")
