"""Command-line front end.

Commands: run (simulate a scenario and write per-wave summary tables plus
a reproducibility manifest), validate (check every input and report every
violation), schedules (look up what an instrument pays at a date), and
synth (write a synthetic population).

Exit codes: 0 success, 1 validation error, 2 infeasible calibration,
3 I/O error. Outputs are byte-identical across runs with an identical
manifest, at any --threads value.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import os
import sys
from importlib.resources import files


from . import __version__, metrics, population, scenario, taxben
from .calibration import AlignmentError, IpfError
from .expenses import ExpenseError
from .igm import ModelError
from .money import cents, euros
from .population import PopulationError
from .scenario import ControlError, ScenarioError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_INFEASIBLE = 2
EXIT_IO = 3

_VALIDATION_ERRORS = (PopulationError, ControlError, ScenarioError,
                      taxben.PolicyError, ModelError, ExpenseError, ValueError)

DEFAULT_DATA_DIR = str(files("nowcastsim") / "data")
DEFAULT_POLICY_DIR = os.path.join(DEFAULT_DATA_DIR, "policy")


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _dir_digest(path) -> str:
    digest = hashlib.sha256()
    for root, _, names in sorted(os.walk(path)):
        for name in sorted(names):
            full = os.path.join(root, name)
            digest.update(os.path.relpath(full, path).encode())
            digest.update(_sha256(full).encode())
    return digest.hexdigest()


def write_outputs(out_dir, summaries, manifest):
    os.makedirs(out_dir, exist_ok=True)
    metrics.write_summary_tables(out_dir, summaries)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_population(args):
    if args.population:
        return population.load_population(args.population)
    if args.synth_config:
        cfg = population.parse_synth_config(args.synth_config)
    else:
        cfg = population.SynthConfig()
    return population.generate_synthetic(cfg, args.seed)


def cmd_run(args) -> int:
    plan = scenario.parse_scenario(args.scenario)
    seed = args.seed if args.seed is not None else plan.seed
    tables = scenario.load_data_tables(args.data_dir)
    schedules = taxben.load_policy(args.policy_dir)
    args.seed = seed
    pop = _load_population(args)
    _, _, summaries = scenario.run_scenario(pop, plan, tables, schedules, seed,
                                            threads=args.threads)
    import numpy

    manifest = {
        "tool_version": __version__,
        # synthetic generation rides on numpy's Generator, whose streams
        # are only guaranteed stable within a numpy version
        "numpy_version": numpy.__version__,
        "seed": seed,
        "waves": [w.label for w in plan.waves],
        "inputs": {
            "scenario": _sha256(args.scenario),
            "controls": _sha256(plan.controls_path),
            "data_dir": _dir_digest(args.data_dir),
            "policy_dir": _dir_digest(args.policy_dir),
            "population": _dir_digest(args.population) if args.population else None,
            "synth_config": _sha256(args.synth_config) if args.synth_config else None,
        },
    }
    write_outputs(args.out, summaries, manifest)
    print(f"wrote {len(summaries)} wave summaries to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    problems = []

    def check(label, fn):
        try:
            return fn()
        except PopulationError as exc:
            problems.extend(f"{label}: {v}" for v in exc.violations)
        except _VALIDATION_ERRORS as exc:
            problems.append(f"{label}: {exc}")
        return None

    plan = check("scenario", lambda: scenario.parse_scenario(args.scenario))
    if plan is not None:
        check("controls", lambda: scenario.load_control_totals(plan.controls_path))
    check("data", lambda: scenario.load_data_tables(args.data_dir))
    check("policy", lambda: taxben.load_policy(args.policy_dir))
    if args.population:
        check("population", lambda: population.load_population(args.population))
    elif args.synth_config:
        check("synth-config", lambda: population.parse_synth_config(args.synth_config))
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        return EXIT_VALIDATION
    print("all inputs valid")
    return EXIT_OK


def cmd_schedules(args) -> int:
    schedules = taxben.load_policy(args.policy_dir)
    date = dt.date.fromisoformat(args.date)
    amount_cents = cents(args.earnings or 0.0)
    if args.instrument == "pup":
        value = taxben.pup_rate_cents(schedules, amount_cents, date)
    elif args.instrument == "ceib":
        value = taxben.ceib_rate_cents(schedules, date)
    elif args.instrument == "twss":
        value = taxben.twss_subsidy_cents(schedules, amount_cents, date)
    else:
        value = taxben.ewss_subsidy_cents(schedules, amount_cents, date)
    print(f"{euros(value):.2f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = population.parse_synth_config(args.config) if args.config \
        else population.SynthConfig()
    pop = population.generate_synthetic(cfg, args.seed)
    population.save_population(pop, args.out)
    print(f"wrote {len(pop.households)} households / {len(pop.persons)} persons "
          f"to {args.out}")
    return EXIT_OK


def print_config(args) -> int:
    defaults = {
        "data_dir": DEFAULT_DATA_DIR,
        "policy_dir": DEFAULT_POLICY_DIR,
        "scenario": os.path.join(DEFAULT_DATA_DIR, "scenario.cfg"),
        "seed": 0,
        "threads": 1,
        "synth": population.SynthConfig().__dict__ | {
            "sector_shares": "per the national reference employment mix",
            "essential_shares": "per-sector defaults, see README",
        },
    }
    print(json.dumps(defaults, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nowcastsim",
        description="Distributional nowcasting of a labour-market shock and "
                    "its income-support response.",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print resolved defaults and exit")
    sub = parser.add_subparsers(dest="command")

    def add_common(p, scenario_required=True):
        p.add_argument("--scenario", required=scenario_required,
                       default=None if scenario_required else
                       os.path.join(DEFAULT_DATA_DIR, "scenario.cfg"))
        p.add_argument("--population", default=None,
                       help="directory with households.csv / persons.csv")
        p.add_argument("--synth-config", default=None,
                       help="synth.cfg for a generated population")
        p.add_argument("--data-dir", default=DEFAULT_DATA_DIR)
        p.add_argument("--policy-dir", default=DEFAULT_POLICY_DIR)
        p.add_argument("--seed", type=int, default=None)

    run_p = sub.add_parser("run", help="run a scenario and write summaries")
    add_common(run_p)
    run_p.add_argument("--out", required=True)
    run_p.add_argument("--threads", type=int, default=1)
    run_p.set_defaults(fn=cmd_run)

    val_p = sub.add_parser("validate", help="validate all inputs without simulating")
    add_common(val_p)
    val_p.set_defaults(fn=cmd_validate)

    sched_p = sub.add_parser("schedules", help="look up an instrument's rate")
    sched_p.add_argument("instrument", choices=["pup", "ceib", "twss", "ewss"])
    sched_p.add_argument("--earnings", type=float, default=None,
                         help="weekly earnings EUR (previous, take-home, or gross "
                              "depending on the instrument)")
    sched_p.add_argument("--date", required=True)
    sched_p.add_argument("--policy-dir", default=DEFAULT_POLICY_DIR)
    sched_p.set_defaults(fn=cmd_schedules)

    synth_p = sub.add_parser("synth", help="generate a synthetic population")
    synth_p.add_argument("--config", default=None)
    synth_p.add_argument("--seed", type=int, default=0)
    synth_p.add_argument("--out", required=True)
    synth_p.set_defaults(fn=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        return print_config(args)
    if not getattr(args, "fn", None):
        parser.print_help()
        return EXIT_VALIDATION
    if getattr(args, "seed", None) is None and args.fn is not cmd_run:
        args.seed = 0
    try:
        return args.fn(args)
    except (AlignmentError, IpfError) as exc:
        print(f"infeasible calibration: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except PopulationError as exc:
        for violation in exc.violations:
            print(violation, file=sys.stderr)
        return EXIT_VALIDATION
    except _VALIDATION_ERRORS as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
