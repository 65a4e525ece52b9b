"""Command-line front end.

Subcommands ``simulate``, ``certify``, ``check-lkf`` and ``sweep`` all read a
JSON scenario config. Exit status: 0 on pass, 1 on fail, 2 on a config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (
    ScenarioConfig,
    certify_practical_stability,
    convergence_study,
    load_config,
    simulate_trial,
)
from .engine import IntegratorConfig, integrate_continuous, run_manifest, write_manifest
from .errors import ConfigError, DivergenceError, DomainError
from .krasovskii import (
    SHIPPED_SUITES,
    check_assumption1,
    check_smooth_separability,
    check_steepest_descent,
    sample_segments,
)
from .segments import constant_segment

log = logging.getLogger("delayemu")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _prepare(config, out, seed) -> tuple[ScenarioConfig, Path]:
    cfg = load_config(config)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    outdir = Path(out)
    outdir.mkdir(parents=True, exist_ok=True)
    return cfg, outdir


def export_trials(cfg: ScenarioConfig, delta: float, outdir: Path) -> list[str]:
    """Write the sampled runs of the first ``cfg.export_trials`` trials."""
    model = cfg.build_model()
    written = []
    for i in range(min(cfg.export_trials, cfg.trials)):
        try:
            run = simulate_trial(cfg, model, delta, i)
        except DivergenceError as exc:  # nothing to export
            log.info("trial %d not exported: %s", i, exc)
            continue
        written += list(run.export(outdir, prefix=f"trial{i:03d}_").values())
    return written


def cmd_simulate(cfg: ScenarioConfig, outdir: Path) -> int:
    model = cfg.build_model()
    delta = cfg.nominal_delta
    files = export_trials(dataclasses.replace(cfg, export_trials=max(cfg.export_trials, 1)), delta, outdir)
    c = cfg.convergence
    x0 = np.full(model.n, c.x0)
    xh0 = np.full(model.n, c.xhat0)
    icfg = IntegratorConfig(min(delta / cfg.substeps, model.delay / 2), cfg.horizon, "rk4")
    ref = integrate_continuous(
        model,
        constant_segment(x0, model.delay),
        constant_segment(xh0, model.delay),
        icfg,
        q_tilde=None,
    )
    ref.to_csv(outdir / "continuous.csv")
    write_manifest(outdir / "continuous_manifest.json", run_manifest(model, icfg, ref, cfg.seed))
    files += ["continuous.csv", "continuous_manifest.json"]
    log.info("simulate: wrote %s", ", ".join(files))
    return EXIT_PASS if files else EXIT_FAIL


def cmd_certify(cfg: ScenarioConfig, outdir: Path) -> int:
    report = certify_practical_stability(cfg)
    (outdir / "stability_report.json").write_text(report.to_json())
    delta = report.delta_star if report.passed else cfg.nominal_delta
    export_trials(cfg, delta, outdir)
    log.info(
        "certify: passed=%s delta*=%s E=%s T=%s",
        report.passed, report.delta_star, report.E_hat, report.T_hat,
    )
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_check_lkf(cfg: ScenarioConfig, outdir: Path) -> int:
    if cfg.model not in SHIPPED_SUITES:
        raise ConfigError(
            f"no shipped functional suite for model {cfg.model!r}; "
            f"available: {sorted(SHIPPED_SUITES)}"
        )
    model = cfg.build_model()
    suite = SHIPPED_SUITES[cfg.model](model)
    samples = sample_segments(cfg.lkf_samples, 2 * model.n, model.delay, cfg.lkf_bound, cfg.seed)
    reports = [
        check_smooth_separability(suite, samples),
        check_assumption1(suite, model, samples),
        check_steepest_descent(suite, model, samples, "proof_form"),
    ]
    for rep in reports:
        name = rep.check.replace(":", "_")
        _write_json(outdir / f"check_{name}.json", {"version": __version__, **rep.to_dict()})
        log.info("check-lkf: %s passed=%s violations=%d flagged=%d",
                 rep.check, rep.passed, len(rep.violations), len(rep.flagged))
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


def cmd_sweep(cfg: ScenarioConfig, outdir: Path) -> int:
    model = cfg.build_model()
    table = convergence_study(model, cfg.convergence.deltas, cfg.convergence)
    table.to_csv(outdir / "convergence.csv")
    for row in zip(table.deltas, table.errors, table.orders, table.status):
        log.info("sweep: delta=%g error=%.6g order=%s %s", *row)
    return EXIT_PASS if all(s == "ok" for s in table.status) else EXIT_FAIL


COMMANDS = {
    "simulate": cmd_simulate,
    "certify": cmd_certify,
    "check-lkf": cmd_check_lkf,
    "sweep": cmd_sweep,
}


def run_scenario(path, out="out", seed=None) -> int:
    """Full scenario: certification report, exported trial trajectories and,
    when a functional suite ships for the model, the LKF check reports.

    Returns the exit status; a bad config gives 2 after printing the reason.
    """
    try:
        cfg, outdir = _prepare(path, out, seed)
        status = cmd_certify(cfg, outdir)
        if cfg.model in SHIPPED_SUITES:
            status = max(status, cmd_check_lkf(cfg, outdir))
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayemu",
        description="Sampled-data emulation of observer-based delay controllers.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__name__.removeprefix("cmd_").replace("_", " "))
        p.add_argument("--config", required=True, help="JSON scenario config")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg, outdir = _prepare(args.config, args.out, args.seed)
        return COMMANDS[args.command](cfg, outdir)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
