"""Command-line front end: run scenarios, compare policies, plan preloads,
generate profiles.

Exit codes: 0 success, 2 usage error, 3 invariant-breach abort.  The device
config used when a scenario file carries none comes from the config
directory, overridable with the LAUNCHSIM_CONFIG_DIR environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources
from pathlib import Path

from .device import MIB, DeviceConfig
from .engine import POLICIES, simulate
from .errors import ConfigError, InvariantError, ScenarioError
from .metrics import comparison_rows, rows_to_csv, rows_to_json, rows_to_text
from .preloader import plan_for_profiles
from .workload import AppClass, generate_profile, parse_scenario, profile_from_dict, profile_to_dict

CONFIG_DIR_ENV = "LAUNCHSIM_CONFIG_DIR"
DEVICE_CONFIG_NAME = "default_device.json"


def load_default_device() -> DeviceConfig:
    override = os.environ.get(CONFIG_DIR_ENV)
    if override:
        path = Path(override) / DEVICE_CONFIG_NAME
        if not path.exists():
            raise ConfigError(f"no {DEVICE_CONFIG_NAME} in {override}")
        return DeviceConfig.from_json(path)
    ref = resources.files("launchsim").joinpath(f"data/{DEVICE_CONFIG_NAME}")
    with resources.as_file(ref) as path:
        return DeviceConfig.from_json(path)


def _load_profiles(path):
    profiles = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            where = f"{path}: line {lineno}"
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"{where}: invalid JSON ({exc})") from None
            if obj.get("kind") == "profile":
                profiles.append(profile_from_dict(obj, where))
    if not profiles:
        raise ScenarioError(f"{path}: no profile lines found")
    return profiles


def _write_out(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_simulate(args) -> int:
    scenario = parse_scenario(args.scenario, default_device=load_default_device())
    log = [] if args.events else None
    report = simulate(scenario, args.policy, seed=args.seed, event_log=log)
    _write_out(report.to_json(), args.out)
    if args.events:
        with open(args.events, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return 0


def cmd_compare(args) -> int:
    scenario = parse_scenario(args.scenario, default_device=load_default_device())
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    reports = [simulate(scenario, p, seed=args.seed) for p in policies]
    rows = comparison_rows(reports)
    if args.format == "csv":
        text = rows_to_csv(rows)
    elif args.format == "json":
        text = rows_to_json(rows)
    else:
        text = rows_to_text(rows)
    _write_out(text, args.out)
    return 0


def cmd_plan(args) -> int:
    device = load_default_device()
    profiles = _load_profiles(args.profiles)
    plan = plan_for_profiles(profiles, device, budget=args.budget_mb * MIB)
    _write_out(json.dumps(plan.to_dict(), sort_keys=True, indent=2) + "\n", args.out)
    return 0


def cmd_gen(args) -> int:
    profile = generate_profile(args.seed, AppClass(args.app_class))
    _write_out(json.dumps(profile_to_dict(profile), sort_keys=True) + "\n", args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="launchsim",
        description="Simulate memory scheduling policies for app cold launches.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario under one policy")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policy", required=True, choices=sorted(POLICIES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="report JSON path (stdout if omitted)")
    p.add_argument("--events", default=None, help="write the event log as JSON lines")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies and tabulate")
    p.add_argument("--scenario", required=True)
    p.add_argument("--policies", required=True,
                   help="comma-separated policy names, e.g. baseline,appflow")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=["text", "csv", "json"], default="text")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("plan", help="compute preload cutoffs for a profile set")
    p.add_argument("--profiles", required=True, help="JSON-lines profile file")
    p.add_argument("--budget-mb", type=int, default=100,
                   help="preload budget in MiB (default 100)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("gen", help="generate a synthetic app profile")
    p.add_argument("--class", dest="app_class", required=True, choices=["gb", "low"])
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ScenarioError) as exc:
        parser.exit(2, f"error: {exc}\n")
    except InvariantError as exc:
        parser.exit(3, f"invariant breach: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
