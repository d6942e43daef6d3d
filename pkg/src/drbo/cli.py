"""Command-line entry point: ``drbo run`` and ``drbo check-config``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import yaml

from .harness import EPSILON_MODES, RunConfig, load_config, run_experiment
from .kernels import InvalidInputError
from .policies import POLICIES

EXIT_CONFIG = 2
EXIT_RUNTIME = 1


def _seeds(text: str) -> list[int]:
    """``5`` means seeds 0..4, ``1,4,7`` an explicit list, ``3-6`` a range."""
    text = text.strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    if "-" in text[1:]:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    return list(range(int(text)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drbo", description="Distributionally robust Bayesian optimization experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run an experiment and write CSV output"),
                            ("check-config", "validate a config and print the resolved values")):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--policy", choices=POLICIES)
        sp.add_argument("--env", choices=("benchmark1", "benchmark2", "wind"))
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--seeds", type=_seeds, help="count (20), list (1,2,3) or range (0-9)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--beta", help="a number for fixed beta, or 'theoretical'")
        sp.add_argument("--epsilon-mode", choices=EPSILON_MODES)
        sp.add_argument("--wind-csv", help="timestamp,power CSV")
        sp.add_argument("--synthetic-wind", action="store_true", default=None,
                        help="use the synthetic wind generator")
        sp.add_argument("--workers", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> RunConfig:
    base = load_config(args.config).to_dict() if args.config else {}
    overrides = {k: getattr(args, k) for k in ("policy", "env", "horizon", "seeds", "out",
                                               "epsilon_mode", "wind_csv", "synthetic_wind", "workers")}
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.beta is not None:
        if args.beta == "theoretical":
            base["beta_mode"] = "theoretical"
        else:
            try:
                base["beta"] = float(args.beta)
            except ValueError:
                raise InvalidInputError(f"--beta must be a number or 'theoretical', got {args.beta!r}") from None
            base["beta_mode"] = "fixed"
    if base.get("policy") == "drbo-datadriven" and "epsilon_mode" not in base:
        base["epsilon_mode"] = "lemma2"
    if base.get("env") == "wind" and not base.get("wind_csv") and "synthetic_wind" not in base:
        base["synthetic_wind"] = True
    return RunConfig.from_dict(base)


def _error(kind: str, exc: Exception, code: int) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (InvalidInputError, OSError, yaml.YAMLError, TypeError) as exc:
        return _error("config", exc, EXIT_CONFIG)
    if args.command == "check-config":
        print(yaml.safe_dump(config.to_dict(), sort_keys=True), end="")
        return 0
    try:
        records = run_experiment(config)
    except Exception as exc:  # report any failure as a machine-readable record
        return _error("runtime", exc, EXIT_RUNTIME)
    failed = [r for r in records if r.error]
    summary = {"policy": config.policy, "env": config.env, "seeds": len(records),
               "failed_seeds": [r.seed for r in failed], "out": config.out,
               "final_mean_regret": sum(r.rows[-1]["cumulative_regret"] for r in records if r.rows) / max(len(records), 1)}
    print(json.dumps(summary))
    if failed:
        print(json.dumps({"error": "runtime", "type": "SolverError",
                          "message": "; ".join(f"seed {r.seed}: {r.error}" for r in failed)}), file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
