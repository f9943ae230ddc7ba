"""Command-line interface: ``pgnudge {simulate,assimilate,constants,spectrum}``.

Exit codes: 0 success, 2 invalid configuration or usage, 3 numerical failure.
``PGNUDGE_THREADS`` caps the number of BLAS/LAPACK threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .config import ConfigError, apply_override, load_config
from .runner import (jsonable, run_assimilate, run_constants, run_simulate, run_spectrum,
                     write_csv, write_json)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

COMMANDS = {
    "simulate": "reference-only forward run; writes series.csv, snapshots and report.json",
    "assimilate": "twin experiment with nudging; writes error_series.csv and report.json",
    "constants": "print the theory constants and feasibility checks as JSON",
    "spectrum": "export the modal basis and the measured interpolant constant",
}
SWEEPABLE = ("assimilate", "constants", "spectrum")


class UsageError(Exception):
    pass


def build_parser():
    parser = argparse.ArgumentParser(prog="pgnudge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", type=Path, help="JSON configuration (defaults if omitted)")
        sp.add_argument("--out", type=Path, help="output directory"
                        + (" (optional)" if name == "constants" else ""))
        sp.add_argument("--force", action="store_true", help="allow a non-empty output directory")
        sp.add_argument("--seed", type=int, help="override the configuration seed")
        if name in SWEEPABLE:
            sp.add_argument("--sweep", metavar="KEY=v1,v2,...",
                            help="repeat the command for each value of a dotted config key")
    return parser


def parse_sweep(text):
    if "=" not in text:
        raise UsageError(f"--sweep expects KEY=v1,v2,..., got {text!r}")
    key, values = text.split("=", 1)
    items = [v.strip() for v in values.split(",") if v.strip()]
    if not key or not items:
        raise UsageError(f"--sweep expects KEY=v1,v2,..., got {text!r}")
    return key.strip(), items


def _prepare_out(path, force):
    if path.exists():
        if not path.is_dir():
            raise UsageError(f"{path} exists and is not a directory")
        if any(path.iterdir()) and not force:
            raise UsageError(f"{path} is not empty; use --force to write into it")
    path.mkdir(parents=True, exist_ok=True)


def _thread_limit():
    value = os.environ.get("PGNUDGE_THREADS")
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise UsageError(f"PGNUDGE_THREADS must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _summary(report):
    if report.get("command") == "assimilate":
        fit = report["decay_fit"]
        rate = fit.get("rate", "n/a")
        return (f"mu={report['mu']:.4g} final |chi|/|chi0|={report['final']['relative_l2_chi']:.3e} "
                f"rate={rate}")
    if report.get("command") == "simulate":
        return f"steps={report['steps']} final |T|={report['final']['l2_T']:.6e}"
    return ""


def _run_one(command, config, out):
    if command == "simulate":
        return run_simulate(config, out)
    if command == "assimilate":
        return run_assimilate(config, out)
    if command == "spectrum":
        return run_spectrum(config, out)
    return run_constants(config, out)


def _run_sweep(command, config, out, key, values):
    configs = [apply_override(config, key, v) for v in values]
    results = []
    for i, cfg in enumerate(configs):
        sub = None
        if out is not None:
            sub = out / f"sweep_{i:02d}"
            sub.mkdir(exist_ok=True)
        report = _run_one(command, cfg, sub)
        node = cfg.to_dict()
        for part in key.split("."):
            node = node[part]
        entry = {"value": node, "report": report}
        if sub is not None:
            entry["directory"] = sub.name
        results.append(entry)
    summary = {"sweep": {"key": key, "values": [r["value"] for r in results]}, "results": results}
    if out is not None and command == "spectrum":
        write_csv(out / "sweep.csv", ["value", "c0_measured", "m_h"],
                  [[float(r["value"]) if not isinstance(r["value"], list) else None for r in results],
                   [r["report"]["c0_measured"] for r in results],
                   [r["report"].get("m_h") for r in results]])
    if out is not None:
        write_json(out / "sweep.json", {"sweep": summary["sweep"],
                                        "results": [{k: v for k, v in r.items() if k != "report"}
                                                    | {"summary": _brief(command, r["report"])}
                                                    for r in results]})
    return summary


def _brief(command, report):
    if command == "assimilate":
        return {"decay_fit": report["decay_fit"], "final": report["final"],
                "feasibility": report["feasibility"]}
    if command == "spectrum":
        return {"c0_measured": report["c0_measured"], "m_h": report.get("m_h")}
    return {"feasible": report["constants"]["feasible"],
            "mu_c0sq_hsq": report["constants"]["mu_c0sq_hsq"]}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            config = load_config(args.config)
            if args.seed is not None:
                if args.seed < 0:
                    raise ConfigError(["seed: must be a nonnegative integer"])
                config = apply_override(config, "seed", args.seed)
            if args.command != "constants" and args.out is None:
                raise UsageError(f"{args.command} needs --out DIR")
            if args.out is not None:
                _prepare_out(args.out, args.force)
            sweep = getattr(args, "sweep", None)
            if sweep:
                key, values = parse_sweep(sweep)
                report = _run_sweep(args.command, config, args.out, key, values)
            else:
                report = _run_one(args.command, config, args.out)
    except (ConfigError, UsageError) as exc:
        for line in str(exc).splitlines():
            print(f"pgnudge: error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"pgnudge: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if args.command == "constants":
        print(json.dumps(jsonable(report), indent=2, sort_keys=True))
    elif not getattr(args, "sweep", None):
        print(_summary(report))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
