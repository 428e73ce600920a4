"""Command-line surface: config ingestion, run orchestration, persistence.

Verbs:

* ``run``     -- execute a bare simulation or, when the config has a
  ``[study]`` section, the named study; writes snapshots, CSV report, JSON
  summary, and a hashed manifest.
* ``inspect`` -- verify a manifest's artifact hashes and print a summary.
* ``sweep``   -- like ``run`` for study configs, but requires at least one
  populated sweep axis.

Exit codes: 0 pass, 1 tolerance failure, 2 config error, 3 blow-up,
4 integrity error.

Config files are TOML (or JSON encoding the same tree)::

    [simulation]
    N = 1000
    n = 10
    dt = 1e-3
    T = 0.1
    kernel = "biot_savart"

    [study]                 # optional
    id = "lamb_oseen"
    seed_list = [0, 1, 2]

    [study.tolerances]
    density_l1 = 0.05

The ``VORTEXSDE_OUTPUT_ROOT`` environment variable sets the default output
directory; ``--out`` overrides it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml

from . import experiments, storage
from .estimators import krylov_ratio, sup_moment
from .kernels import ConfigurationError
from .particles import BlowUpError, SimulationConfig, simulate
from .spaces import GriddedFunction, LocalizedNormSpec

EXIT_PASS = 0
EXIT_TOLERANCE = 1
EXIT_CONFIG = 2
EXIT_BLOW_UP = 3
EXIT_INTEGRITY = 4

OUTPUT_ROOT_ENV = "VORTEXSDE_OUTPUT_ROOT"

_STUDIES = {
    "lamb_oseen": experiments.lamb_oseen_study,
    "mollification_limit": experiments.mollification_limit_study,
    "regime_sweep": experiments.regime_sweep,
}


# -- config ingestion ---------------------------------------------------------


def load_config_tree(path: str | Path) -> dict:
    """Parse TOML or JSON into a plain dict; raises ConfigurationError with position info."""
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        try:
            return json.loads(text.decode("utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigurationError(
                f"{path}: JSON parse error at line {err.lineno}, column {err.colno}: {err.msg}"
            ) from err
    try:
        return _toml.loads(text.decode("utf-8"))
    except _toml.TOMLDecodeError as err:
        raise ConfigurationError(f"{path}: TOML parse error: {err}") from err


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(tree: dict, overrides) -> dict:
    """Apply repeatable --set dotted.key=value pairs onto the config tree."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"override {key!r} descends through a non-table")
        node[parts[-1]] = _coerce(raw)
    return tree


def simulation_config_from_tree(tree: dict) -> SimulationConfig:
    sim = dict(tree.get("simulation", {}))
    known = {f.name for f in dataclasses.fields(SimulationConfig)}
    unknown = set(sim) - known
    if unknown:
        raise ConfigurationError(f"unknown simulation keys: {sorted(unknown)}")
    try:
        return SimulationConfig(**sim)
    except TypeError as err:
        raise ConfigurationError(str(err)) from err


def study_plan_from_tree(tree: dict, base: SimulationConfig) -> experiments.StudyPlan | None:
    study = tree.get("study")
    if not study:
        return None
    study = dict(study)
    study_id = study.pop("id", None)
    if study_id not in _STUDIES:
        raise ConfigurationError(
            f"unknown study id {study_id!r}; available: {sorted(_STUDIES)}"
        )
    kwargs = {
        key: tuple(study[key]) if isinstance(study.get(key), list) else study[key]
        for key in ("N_list", "n_list", "dt_list", "seed_list", "checkpoints")
        if key in study
    }
    for key in ("kde_extent", "kde_resolution"):
        if key in study:
            kwargs[key] = study[key]
    return experiments.StudyPlan(
        study_id, base, tolerances=dict(study.get("tolerances", {})), **kwargs
    )


# -- run ----------------------------------------------------------------------


def _output_dir(args) -> Path:
    out = args.out or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _bare_simulation_summary(store) -> dict:
    ax = np.linspace(-8, 8, 161)
    gx, gy = np.meshgrid(ax, ax, indexing="ij")
    disk = GriddedFunction(((gx**2 + gy**2) <= 1.0).astype(float), (ax, ax))
    spec = LocalizedNormSpec(alpha=0, p=4.0, q=8.0, T=max(float(store.times[-1]), 1e-9))
    report = krylov_ratio(store, [("unit_disk", disk)], spec)
    moment = sup_moment(store, 2.0)
    return {
        "snapshots": int(len(store.times)),
        "final_second_moment": float(np.mean(np.sum(store.final_positions**2, axis=1))),
        "krylov_worst_ratio": report.worst_ratio,
        "krylov_exponents": {"p": spec.p, "q": spec.q},
        "sup_moment_beta2": moment.value,
    }


def _cmd_run(args, require_sweep: bool = False) -> int:
    tree = load_config_tree(args.config)
    apply_overrides(tree, args.set)
    if args.seed is not None:
        tree.setdefault("simulation", {})["seed"] = args.seed
    base = simulation_config_from_tree(tree)
    plan = study_plan_from_tree(tree, base)
    if require_sweep:
        if plan is None:
            raise ConfigurationError("sweep requires a [study] section")
        if not (plan.N_list or plan.n_list or plan.dt_list or len(plan.seed_list) > 1):
            raise ConfigurationError("sweep requires at least one populated sweep axis")
    out = _output_dir(args)

    artifacts = []
    if plan is None:
        store = simulate(base)
        snap_path = out / "snapshots.vsde"
        store.save(snap_path)
        artifacts.append(snap_path)
        summary = {"passed": True, "config_hash": base.config_hash()}
        summary.update(_bare_simulation_summary(store))
        rows = [
            experiments.ToleranceRow("simulation", k, float(v), float("nan"), True)
            for k, v in summary.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        ]
    else:
        rows = _STUDIES[plan.study](plan)
        summary = experiments.summarize(rows)
        summary["config_hash"] = base.config_hash()

    csv_path = out / "report.csv"
    json_path = out / "summary.json"
    experiments.write_study_report(rows, csv_path, json_path)
    # rewrite summary.json including the config hash
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    artifacts += [csv_path, json_path]

    manifest_path = out / "manifest.json"
    storage.write_manifest(
        manifest_path,
        {"tree": tree, "resolved_simulation": base.to_dict(), "config_hash": base.config_hash()},
        artifacts,
        extra={"summary": summary},
    )
    print(f"manifest: {manifest_path}")
    print(f"passed: {summary['passed']}")
    if not summary["passed"]:
        for r in rows:
            if not r.passed:
                print(f"FAIL {r.name}: value={r.value} tolerance={r.tolerance} {r.note}")
        return EXIT_TOLERANCE
    return EXIT_PASS


def _cmd_inspect(args) -> int:
    manifest = storage.verify_manifest(args.manifest)
    config = manifest.get("config", {})
    summary = manifest.get("summary", {})
    print(f"config hash: {config.get('config_hash', 'n/a')}")
    print("resolved simulation config:")
    for key, value in sorted(config.get("resolved_simulation", {}).items()):
        print(f"  {key} = {value}")
    if "krylov_worst_ratio" in summary:
        exps = summary.get("krylov_exponents", {})
        print(
            f"krylov worst ratio (p={exps.get('p')}, q={exps.get('q')}): "
            f"{summary['krylov_worst_ratio']:.6g}"
        )
    if "rows" in summary:
        print("tolerance rows:")
        for name, row in summary["rows"].items():
            mark = "PASS" if row["passed"] else "FAIL"
            print(f"  [{mark}] {name}: value={row['value']:.6g} tolerance={row['tolerance']:.6g}")
    print(f"artifacts verified: {len(manifest.get('artifacts', []))}")
    print(f"passed: {summary.get('passed', 'n/a')}")
    return EXIT_PASS if summary.get("passed", True) else EXIT_TOLERANCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortexsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--out", help="output directory (default: $%s or ./runs)" % OUTPUT_ROOT_ENV)
        p.add_argument("--threads", type=int, help="numba thread count")
        p.add_argument("--seed", type=int, help="override simulation.seed")

    add_common(sub.add_parser("run", help="run a bare simulation or a configured study"))
    add_common(sub.add_parser("sweep", help="run a study with populated sweep axes"))
    insp = sub.add_parser("inspect", help="verify a manifest and print its summary")
    insp.add_argument("manifest", help="path to manifest.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "inspect":
            return _cmd_inspect(args)
        if args.threads:
            import numba

            numba.set_num_threads(args.threads)
        return _cmd_run(args, require_sweep=args.verb == "sweep")
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as err:
        print(f"blow-up: {err}", file=sys.stderr)
        return EXIT_BLOW_UP
    except storage.IntegrityError as err:
        print(f"integrity error: {err}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    raise SystemExit(main())
