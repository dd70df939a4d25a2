"""Command-line front end.

    snlslab <subcommand> --config run.yaml [--seed S] [--paths P] [--out DIR] [--threads T]

Exit status: 0 success, 1 experiment or acceptance failure, 2 invalid
config or usage.  Outputs go to ``<out>/<digest>/`` where the digest is the
config hash (see :mod:`snlslab.config`).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import AXIS_OF, RunConfig, load_config
from .lab import (
    MeshingReport,
    calibrate_meshing,
    delta_for_target,
    fit_rate,
    meshing_check,
    moment_diagnostic,
    strong_error,
    write_errors_csv,
    write_lemmas_csv,
    write_rates_csv,
)
from .semigroup import run_lemma_suite
from .solver import IntegrationError

log = logging.getLogger("snlslab")


def _run_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.out) / cfg.digest()[:16]
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(cfg: RunConfig, run_dir: Path, command: str, outputs: list[str], status: str, **extra) -> None:
    data = {
        "command": command,
        "digest": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "status": status,
        "outputs": outputs,
        "config": cfg.canonical(),
        **extra,
    }
    (run_dir / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_print_plan(cfg: RunConfig, args) -> int:
    print(f"digest   {cfg.digest()}")
    print(f"seed     {cfg.seed}   paths {cfg.paths}   T {cfg.T}")
    print(f"model    {cfg.model.name} {cfg.model.params}")
    print(f"noise    r={cfg.noise.r} scale={cfg.noise.scale}")
    for axis in AXIS_OF:
        for exp in cfg.experiments(axis):
            plan = cfg.plan(exp)
            band = "" if exp.expected_slope is None else f" expect {exp.expected_slope:+g} +- {exp.tolerance:g}"
            print(f"[{axis}] {exp.name}: eps={plan.eps} ladder={plan.ladder} "
                  f"ref=(K={plan.K_ref}, M={plan.M_ref}) r={plan.r} paths={plan.paths}{band}")
    print(f"lemmas   trials={cfg.lemmas.trials} K={cfg.lemmas.K} m_max={cfg.lemmas.m_max}")
    if cfg.meshing is not None:
        m = cfg.meshing
        print(f"meshing  eps={m.eps} mu={m.mu} ladder_K={m.ladder_K} target_K_cut={m.target_K_cut}")
    if cfg.moments is not None:
        m = cfg.moments
        print(f"moments  eps={m.eps} K_cut={m.K_cut} M={m.M} mu={m.mu} offsets={m.holder_offsets}")
    return 0


def cmd_convergence(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg)
    axes = args.axis or list(AXIS_OF)
    tables, reports, failed = [], [], False
    for axis in axes:
        for exp in cfg.experiments(axis):
            table = strong_error(cfg.plan(exp), args.threads)
            tables.append(table)
            for row in table.rows:
                log.info("%s eps=%g K=%d M=%d e=%.4e +- %.2e", exp.name, row.eps, row.K_cut, row.M,
                         row.error, row.stderr)
            rep = fit_rate(table, AXIS_OF[axis], exp.expected_slope, exp.tolerance)
            reports.append(rep)
            print(rep.summary(), "" if rep.passed is None else ("PASS" if rep.passed else "FAIL"))
            failed |= rep.passed is False
    write_errors_csv(tables, run_dir / "errors.csv")
    write_rates_csv(reports, run_dir / "rates.csv")
    _manifest(cfg, run_dir, f"run-convergence {' '.join(axes)}", ["errors.csv", "rates.csv"],
              "fail" if failed else "ok")
    return 1 if failed else 0


def cmd_lemmas(cfg: RunConfig, args) -> int:
    run_dir = _run_dir(cfg)
    lc = cfg.lemmas
    rows = run_lemma_suite(np.random.default_rng(cfg.seed), lc.trials, lc.K, lc.m_max, lc.rel_tol)
    write_lemmas_csv(rows, run_dir / "lemmas.csv")
    bad = [r for r in rows if not r.passed]
    print(f"{len(rows)} lemma rows, {len(bad)} failed")
    for r in bad[:10]:
        print(f"  {r.lemma} {r.params}: defect {r.defect:.3e} > bound {r.bound:.3e}")
    _manifest(cfg, run_dir, "run-lemma-tests", ["lemmas.csv"], "fail" if bad else "ok")
    return 1 if bad else 0


def run_meshing(cfg: RunConfig, threads: int = 1) -> tuple[MeshingReport, float]:
    mc = cfg.meshing
    base = cfg.meshing_base()
    C, _ = calibrate_meshing(base, mc.mu, 1, mc.eps, mc.calibration_K, threads)
    delta = mc.delta if mc.delta is not None else delta_for_target(mc.target_K_cut, mc.mu, 1, mc.eps, C,
                                                                    mc.delta_margin)
    rep = meshing_check(delta, mc.mu, 1, mc.eps, C, base, mc.ladder_K, mc.max_steps, True, threads)
    return rep, C


def cmd_meshing(cfg: RunConfig, args) -> int:
    if cfg.meshing is None:
        print("config has no meshing section", file=sys.stderr)
        return 2
    run_dir = _run_dir(cfg)
    rep, C = run_meshing(cfg, args.threads)
    print(f"C = {C:.6g}, delta = {rep.delta:.6g}, pairing tau = N^-{rep.exponent:g}")
    print(f"selected K_cut={rep.K_cut} N={rep.N} M={rep.M}: {rep.message}", "PASS" if rep.passed else "FAIL")
    fields = ["delta", "mu", "d", "eps", "C", "exponent", "feasible", "K_cut", "N", "M", "tau", "error",
              "stderr", "required_N", "passed"]
    with open(run_dir / "meshing.csv", "w") as fh:
        fh.write(",".join(fields) + "\n")
        fh.write(",".join("" if getattr(rep, f) is None else repr(getattr(rep, f)) for f in fields) + "\n")
    _manifest(cfg, run_dir, "run-meshing", ["meshing.csv"], "ok" if rep.passed else "fail")
    return 0 if rep.passed else 1


def cmd_moments(cfg: RunConfig, args) -> int:
    if cfg.moments is None:
        print("config has no moments section", file=sys.stderr)
        return 2
    mc = cfg.moments
    run_dir = _run_dir(cfg)
    rep = moment_diagnostic(cfg.moment_plan(), mc.holder_offsets, mc.holder_eps, args.threads)
    rep.write_csv(run_dir / "moments.csv")
    ok = True
    if rep.level_fit is not None:
        rep.level_fit.expected, rep.level_fit.tolerance = mc.level_slope, mc.level_tolerance
        print(rep.level_fit.summary(), "PASS" if rep.level_fit.passed else "FAIL")
        ok &= bool(rep.level_fit.passed)
    for f in rep.holder_fits:
        f.expected, f.tolerance = mc.holder_slope, mc.holder_tolerance
        print(f.summary(), "PASS" if f.passed else "FAIL")
        ok &= bool(f.passed)
    if rep.C_min is not None:
        print(f"minimal moment constant C = {rep.C_min:.6g}")
    write_rates_csv(([rep.level_fit] if rep.level_fit else []) + rep.holder_fits, run_dir / "moment_rates.csv")
    _manifest(cfg, run_dir, "run-moments", ["moments.csv", "moment_rates.csv"], "ok" if ok else "fail")
    return 0 if ok else 1


COMMANDS = {
    "run-convergence": cmd_convergence,
    "run-lemma-tests": cmd_lemmas,
    "run-meshing": cmd_meshing,
    "run-moments": cmd_moments,
    "print-plan": cmd_print_plan,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--paths", type=int, help="override every Monte Carlo path count")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--threads", type=int, help="worker threads for path batches")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="snlslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    conv = sub.add_parser("run-convergence", parents=[common], help="strong-error ladders and fitted rates")
    conv.add_argument("--axis", nargs="+", choices=list(AXIS_OF), help="experiment groups (default: all)")
    sub.add_parser("run-lemma-tests", parents=[common], help="semigroup defect suite")
    sub.add_parser("run-meshing", parents=[common], help="meshing strategy end-to-end check")
    sub.add_parser("run-moments", parents=[common], help="moment levels and Hoelder increments")
    sub.add_parser("print-plan", parents=[common], help="validate the config and show the plan")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, paths=args.paths, out=args.out, threads=args.threads)
    except ValidationError as exc:
        print(f"invalid config {args.config}:", file=sys.stderr)
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            print(f"  {loc}: {err['msg']}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"invalid config {args.config}: {exc}", file=sys.stderr)
        return 2
    args.threads = cfg.threads
    try:
        return COMMANDS[args.command](cfg, args)
    except (IntegrationError, ArithmeticError, RuntimeError) as exc:
        run_dir = _run_dir(cfg)
        _manifest(cfg, run_dir, args.command, [], "error", error=str(exc))
        print(f"experiment failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
