"""Command-line front end for the scenario harness."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import tempfile
from importlib import resources
from typing import Sequence

from . import experiments as ex

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

# grid-valued scenarios take comma-separated lists for --alpha / --beta
_ALPHA_GRID = {"theorem4"}
_BETA_GRID = {"theorem1", "theorem2", "theorem3", "moment_bound"}


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON scenario file")
    p.add_argument("--t", type=float)
    p.add_argument("--alpha", type=_floats, help="value, or comma-separated grid for theorem4")
    p.add_argument("--beta", type=_floats, help="value, or comma-separated grid for beta-grid scenarios")
    p.add_argument("--rho", type=float)
    p.add_argument("--p", type=float, help="Bernoulli occupation probability")
    p.add_argument("--gamma", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--u", type=_floats, help="comma-separated checkpoint exponents for theorem5")
    p.add_argument("--n", type=int, help="initial block count for sparse-recursion")
    p.add_argument("--init", choices=("poisson", "bernoulli", "thinned"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--buffer", type=float)
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--threads", type=int, help="worker processes (default: available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coalsim", description="Spatial coalescent scenario runner.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ex.SCENARIOS:
        _add_run_flags(sub.add_parser(name.replace("_", "-"), help=f"run the {name} scenario"))
    v = sub.add_parser("validate", help="check a scenario file without running it")
    _add_run_flags(v)
    g = sub.add_parser("goldens", help="regenerate oracle tables and diff them against the checked-in copies")
    g.add_argument("--update", action="store_true", help="overwrite the checked-in tables")
    g.add_argument("--dir", help="directory holding the tables (default: packaged copies)")
    return parser


def _load_config(args: argparse.Namespace, scenario: str | None) -> ex.ScenarioConfig:
    data: dict = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ex.ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(data, dict):
            raise ex.ConfigError("config file must hold a JSON object")
    if scenario is not None:
        if data.get("scenario", scenario) != scenario:
            raise ex.ConfigError(f"config scenario {data['scenario']!r} does not match subcommand {scenario!r}")
        data["scenario"] = scenario
    name = data.get("scenario")
    simple = {"t": "t", "rho": "rho", "p": "p", "gamma": "gamma", "delta": "delta", "n": "n", "init": "init",
              "replicates": "replicates", "seed": "master_seed", "buffer": "buffer"}
    for flag, key in simple.items():
        v = getattr(args, flag)
        if v is not None:
            data[key] = v
    if args.alpha is not None:
        if name in _ALPHA_GRID:
            data["alpha_grid"] = args.alpha
        elif len(args.alpha) == 1:
            data["alpha"] = args.alpha[0]
        else:
            raise ex.ConfigError("--alpha takes a single value for this scenario")
    if args.beta is not None:
        if name in _BETA_GRID:
            data["beta_grid"] = args.beta
        elif len(args.beta) == 1:
            data["beta"] = args.beta[0]
        else:
            raise ex.ConfigError("--beta takes a single value for this scenario")
    if args.u is not None:
        data["u_vector"] = args.u
    try:
        cfg = ex.ScenarioConfig.from_dict(data)
    except TypeError as e:
        raise ex.ConfigError(str(e)) from None
    ex.validate(cfg)
    return cfg


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".coalsim-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _progress(done: int, total: int) -> None:
    sys.stderr.write(f"\rreplicates {done}/{total}")
    if done == total:
        sys.stderr.write("\n")
    sys.stderr.flush()


def _golden_dir(override: str | None):
    if override:
        return override
    return str(resources.files("coalsim") / "goldens")


def _goldens(args) -> int:
    d = _golden_dir(args.dir)
    bad = 0
    for name, (header, rows) in ex.golden_tables().items():
        path = os.path.join(d, name)
        if args.update:
            os.makedirs(d, exist_ok=True)
            lines = [",".join(header)] + [",".join(repr(v) if isinstance(v, float) else str(v) for v in r) for r in rows]
            write_atomic(path, "\n".join(lines) + "\n")
            print(f"{name}: written ({len(rows)} rows)")
            continue
        try:
            with open(path, newline="") as fh:
                stored = list(csv.reader(fh))
        except OSError as e:
            print(f"{name}: missing ({e})")
            bad += 1
            continue
        if tuple(stored[0]) != header or len(stored) - 1 != len(rows):
            print(f"{name}: shape differs")
            bad += 1
            continue
        worst = max(abs(float(a) - float(b)) for srow, row in zip(stored[1:], rows) for a, b in zip(srow, row))
        ok = worst <= 1e-9
        bad += not ok
        print(f"{name}: {'match' if ok else 'MISMATCH'} (max abs difference {worst:.3g})")
    return EXIT_OK if bad == 0 else EXIT_RUNTIME


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "goldens":
        return _goldens(args)
    scenario = None if args.command == "validate" else args.command.replace("-", "_")
    try:
        cfg = _load_config(args, scenario)
    except ex.ConfigError as e:
        print(f"config-error: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        print("ok")
        return EXIT_OK
    try:
        run = ex.run_full(cfg, threads=args.threads, progress=_progress)
        if args.format == "json":
            text = ex.summary_to_json(ex.summarize(run))
        else:
            text = ex.records_to_csv(run.records)
        if args.out:
            write_atomic(args.out, text)
        else:
            sys.stdout.write(text)
    except Exception as e:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"runtime-error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
