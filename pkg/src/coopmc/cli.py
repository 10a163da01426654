"""Command line interface: ``coopmc <command> ...``.

Failures print one JSON object on stderr and exit with a code from
:data:`EXIT_CODES`.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from coopmc import __version__
from coopmc.scenario import ScenarioError, scenario_from_dict

EXIT_CODES = {
    "ok": 0,
    "error": 1,
    "usage": 2,
    "unknown_figure": 3,
    "malformed_json": 4,
    "invalid_scenario": 5,
    "io_error": 6,
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, **details):
        super().__init__(message)
        self.kind = kind
        self.details = details


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError("malformed_json", f"{path}: {exc.msg}", line=exc.lineno, column=exc.colno) from None
    except OSError as exc:
        raise CliError("io_error", f"{path}: {exc.strerror}") from None
    if not isinstance(data, dict):
        raise CliError("malformed_json", f"{path}: top level must be an object")
    return data


def _load_scenario(path: str):
    data = _read_json(path)
    try:
        return scenario_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise CliError("malformed_json", f"{path}: missing or mistyped field {exc}") from None


def _open_out(path: str | None):
    if path is None:
        return sys.stdout
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise CliError("io_error", f"{path}: {exc.strerror}") from None


def _write_intervals(report, out_path: str | None):
    fh = _open_out(out_path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "q_md", "q_fa", "q_err", "method", "ci_halfwidth", "n_trials", "seed", "toolkit_version"])
        tail = [
            report.method,
            "" if report.ci_halfwidth is None else repr(report.ci_halfwidth),
            "" if report.n_samples is None else report.n_samples,
            "" if report.seed is None else report.seed,
            __version__,
        ]
        for j, (md, fa, err) in enumerate(report.per_interval, start=1):
            w.writerow([j, repr(float(md)), repr(float(fa)), repr(float(err))] + tail)
        w.writerow(["mean", repr(report.q_md_bar), repr(report.q_fa_bar), repr(report.q_bar)] + tail)
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_analytic(args) -> None:
    from coopmc.evaluator import expected_error

    sc = _load_scenario(args.scenario)
    method = "monte-carlo" if args.samples else "exact"
    report = expected_error(sc, args.reporting, method=method, n_samples=args.samples, seed=args.seed)
    _write_intervals(report, args.out)


def cmd_simulate(args) -> None:
    from coopmc import sim

    sc = _load_scenario(args.scenario)
    report = sim.estimate_error(sc, args.trials, args.seed, args.reporting)
    _write_intervals(report, args.out)
    if args.trace:
        counts = sim.simulate_counts(sc, args.seed, 0)
        record = sim.decide(sc, counts, reporting=args.reporting)
        sim.write_trace(sc, counts, record, args.trace)


def cmd_sweep(args) -> None:
    from coopmc.experiments import run_experiment, spec_from_dict

    data = _read_json(args.spec)
    try:
        spec = spec_from_dict(data)
    except KeyError as exc:
        raise CliError("unknown_figure", str(exc.args[0])) from None
    except TypeError as exc:
        raise CliError("malformed_json", f"{args.spec}: {exc}") from None
    if args.trials:
        spec = replace(spec, n_trials=args.trials)
    out = args.out or spec.output
    if out is None:
        raise CliError("usage", "no output path: pass --out or set 'output' in the experiment spec")
    run_experiment(spec, out)
    _status({"output": str(out)})


def cmd_optimize(args) -> None:
    from coopmc.evaluator import SweepGrid, optimize_soft, optimize_thresholds

    sc = _load_scenario(args.scenario)
    if sc.rule.is_soft:
        xi, q, _ = optimize_soft(sc, range(1, args.xi_r_max + 1))
        _status({"rule": "soft", "xi_soft": xi, "q_bar": q})
        return
    xi_fc = range(1, (1 if args.reporting == "perfect" else args.xi_fc_max) + 1)
    grid = SweepGrid(xi_r=list(range(1, args.xi_r_max + 1)), xi_fc=list(xi_fc))
    res = optimize_thresholds(sc, grid, args.reporting)
    _status(
        {
            "rule": sc.source_rule.label,
            "reporting": args.reporting,
            "xi_r": list(res.xi_r),
            "xi_fc": None if args.reporting == "perfect" else res.xi_fc,
            "q_bar": res.q_bar,
        }
    )


def cmd_reproduce(args) -> None:
    from coopmc.experiments import PRESETS, preset, run_experiment

    if args.figure not in PRESETS:
        raise CliError("unknown_figure", f"unknown figure {args.figure!r}", available=sorted(PRESETS))
    spec = preset(args.figure)
    if args.with_sim and spec.kind == "surface" and "simulator" not in spec.engines:
        spec = replace(spec, engines=spec.engines + ("simulator",))
    if args.analytic_only:
        spec = replace(spec, engines=("analytic",))
    if args.trials:
        spec = replace(spec, n_trials=args.trials)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    out = Path(args.out) / f"{spec.id}.csv"
    run_experiment(spec, out)
    _status({"figure": spec.id, "output": str(out)})


def cmd_template(args) -> None:
    from coopmc.presets import paper_scenario

    sc = paper_scenario(args.k, args.layout, args.rule, args.xi_r, args.xi_fc)
    fh = _open_out(args.out)
    try:
        json.dump(sc.to_dict(), fh, indent=2)
        fh.write("\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _status(obj: dict) -> None:
    print(json.dumps(obj))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="coopmc", description="Cooperative molecular communication error analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analytic", help="expected error of a scenario")
    a.add_argument("scenario")
    a.add_argument("--reporting", choices=["perfect", "noisy"], default="noisy")
    a.add_argument("--samples", type=int, help="average over sampled bit histories instead of all of them")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", help="CSV path (default: stdout)")
    a.set_defaults(func=cmd_analytic)

    s = sub.add_parser("simulate", help="particle simulation of a scenario")
    s.add_argument("scenario")
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--reporting", choices=["perfect", "noisy"], default="noisy")
    s.add_argument("--out", help="CSV path (default: stdout)")
    s.add_argument("--trace", help="write per-sample counts of trial 0 to this CSV")
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run an experiment spec")
    w.add_argument("spec")
    w.add_argument("--out", help="CSV path (overrides the experiment spec)")
    w.add_argument("--trials", type=int)
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("optimize", help="grid-search optimal thresholds")
    o.add_argument("scenario")
    o.add_argument("--xi-r-max", type=int, default=40)
    o.add_argument("--xi-fc-max", type=int, default=40)
    o.add_argument("--reporting", choices=["perfect", "noisy"], default="noisy")
    o.set_defaults(func=cmd_optimize)

    r = sub.add_parser("reproduce", help="regenerate a figure's data table")
    r.add_argument("figure")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--with-sim", action="store_true", help="add simulator rows to surface figures")
    r.add_argument("--analytic-only", action="store_true", help="drop simulator rows, even for fig4")
    r.add_argument("--trials", type=int)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_reproduce)

    t = sub.add_parser("template", help="print a scenario JSON with the bundled defaults")
    t.add_argument("--k", type=int, default=2)
    t.add_argument("--layout", choices=["symmetric", "asymmetric"], default="symmetric")
    t.add_argument("--rule", default="or")
    t.add_argument("--xi-r", type=int, default=10)
    t.add_argument("--xi-fc", type=int, default=7)
    t.add_argument("--out")
    t.set_defaults(func=cmd_template)
    return p


def _fail(kind: str, message: str, **details) -> int:
    payload = {"error": kind, "message": message, **details}
    print(json.dumps(payload, default=str), file=sys.stderr)
    return EXIT_CODES[kind]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), **exc.details)
    except ScenarioError as exc:
        violations = [{"field": v.field, "value": v.value, "message": v.message} for v in exc.violations]
        return _fail("invalid_scenario", "scenario violates model constraints", violations=violations)
    except ValueError as exc:
        return _fail("invalid_scenario", str(exc))
    except OSError as exc:
        return _fail("io_error", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
