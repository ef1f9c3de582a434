"""Experiment runner: presets, JSON configs, trace/summary emission.

Two zero-configuration presets reproduce the headline experiments (the
paper-scale EV charging run and the constant-broadcast fixed-point study);
arbitrary experiments load from a JSON config.  Command-line flags override
config fields, which override preset defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .controller import ResourceSpec
from .cost_model import CostFunction, quadratic_cost
from .engine import (
    MODES,
    ConfigError,
    EvPopulationSpec,
    SimConfig,
    run,
)
from .oracle import solve_fixed_point, solve_social_optimum

PRESET_NAMES = ("ev-charging", "single-resource-theorem2", "custom")

_TOP_KEYS = {
    "n", "m", "steps", "seed", "resources", "population",
    "include_linear", "constant_omega", "mode",
    "snapshot_every", "snapshot_enabled", "summary_window",
}
_RESOURCE_KEYS = {"capacity", "tau", "gamma", "omega0", "omega_min", "omega_max"}
_POPULATION_KEYS = {"ev": {"kind", "class_sizes", "seed"},
                    "explicit": {"kind", "costs"}}


@dataclass
class RunManifest:
    """Everything needed to execute one experiment and emit its artifacts."""

    preset: str
    config_path: str | None = None
    seed: int | None = None
    steps: int | None = None
    out_dir: str = "runs/latest"
    oracle: bool = False
    constant_omega: bool = False
    snapshot_every: int | None = None
    gamma: tuple[float, ...] | None = None
    mode: str | None = None
    emit_trace: bool = True
    emit_snapshots: bool = False


def build_preset(name: str) -> SimConfig:
    if name == "ev-charging":
        return SimConfig(
            n=1200, m=2, steps=2000, seed=7,
            resources=(
                ResourceSpec(capacity=400.0, tau=0.0002275, omega0=0.328),
                ResourceSpec(capacity=500.0, tau=0.0002125, omega0=0.35),
            ),
            population=EvPopulationSpec(class_sizes=(300, 300, 300, 300)),
            include_linear=False,
        )
    if name == "single-resource-theorem2":
        coeffs = np.linspace(1.0, 3.0, 100)
        population = tuple(quadratic_cost(float(c)) for c in coeffs)
        capacity = float((0.5 / (2.0 * coeffs)).sum())
        return SimConfig(
            n=100, m=1, steps=50_000, seed=11,
            resources=(
                ResourceSpec(capacity=capacity, tau=0.01, omega0=0.5),
            ),
            population=population,
            constant_omega=True,
            snapshot_every=1000,
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")


def _reject_unknown(doc: dict, allowed: set, where: str, problems: list):
    unknown = set(doc) - allowed
    if unknown:
        problems.append(f"{where}: unknown fields {sorted(unknown)}")


def load_config(path) -> SimConfig:
    """Parse and validate a JSON experiment config; rejects unknown fields."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")

    problems: list[str] = []
    _reject_unknown(doc, _TOP_KEYS, "config", problems)
    missing = {"n", "m", "steps", "seed", "resources", "population"} - set(doc)
    if missing:
        problems.append(f"config: missing required fields {sorted(missing)}")
    if problems:
        raise ConfigError(f"{path}:\n  " + "\n  ".join(problems))

    resources = []
    for idx, rdoc in enumerate(doc["resources"]):
        _reject_unknown(rdoc, _RESOURCE_KEYS, f"resources[{idx}]", problems)
        if {"capacity", "tau"} - set(rdoc):
            problems.append(f"resources[{idx}]: capacity and tau are required")
            continue
        try:
            resources.append(ResourceSpec(**{k: float(v) for k, v in rdoc.items()}))
        except (TypeError, ValueError) as exc:
            problems.append(f"resources[{idx}]: {exc}")

    pdoc = doc["population"]
    population = None
    kind = pdoc.get("kind") if isinstance(pdoc, dict) else None
    if kind not in _POPULATION_KEYS:
        problems.append("population: kind must be 'ev' or 'explicit'")
    else:
        _reject_unknown(pdoc, _POPULATION_KEYS[kind], "population", problems)
        if kind == "ev":
            sizes = pdoc.get("class_sizes")
            if not isinstance(sizes, list) or len(sizes) != 4:
                problems.append("population: class_sizes must be a list of 4 counts")
            else:
                population = EvPopulationSpec(
                    class_sizes=tuple(int(s) for s in sizes),
                    seed=pdoc.get("seed"),
                )
        else:
            try:
                population = tuple(
                    CostFunction.from_json(cdoc) for cdoc in pdoc.get("costs", [])
                )
            except (KeyError, TypeError, ValueError) as exc:
                problems.append(f"population.costs: {exc}")

    if problems:
        raise ConfigError(f"{path}:\n  " + "\n  ".join(problems))

    config = SimConfig(
        n=int(doc["n"]),
        m=int(doc["m"]),
        steps=int(doc["steps"]),
        seed=int(doc["seed"]),
        resources=tuple(resources),
        population=population,
        include_linear=bool(doc.get("include_linear", True)),
        constant_omega=bool(doc.get("constant_omega", False)),
        mode=str(doc.get("mode", "vector")),
        snapshot_every=int(doc.get("snapshot_every", 10)),
        snapshot_enabled=bool(doc.get("snapshot_enabled", True)),
        summary_window=int(doc.get("summary_window", 60)),
    )
    issues = config.validate()
    if issues:
        raise ConfigError(f"{path}:\n  " + "\n  ".join(issues))
    return config


def _build_config(manifest: RunManifest) -> SimConfig:
    if manifest.preset == "custom":
        if not manifest.config_path:
            raise ConfigError("preset 'custom' requires a config path")
        config = load_config(manifest.config_path)
    else:
        config = build_preset(manifest.preset)

    updates = {}
    if manifest.seed is not None:
        updates["seed"] = manifest.seed
    if manifest.steps is not None:
        updates["steps"] = manifest.steps
    if manifest.constant_omega:
        updates["constant_omega"] = True
    if manifest.snapshot_every is not None:
        updates["snapshot_every"] = manifest.snapshot_every
    if manifest.mode is not None:
        updates["mode"] = manifest.mode
    if manifest.gamma is not None:
        if len(manifest.gamma) != config.m:
            raise ConfigError(
                f"--gamma needs {config.m} values, got {len(manifest.gamma)}"
            )
        updates["resources"] = tuple(
            replace(spec, gamma=g) for spec, g in zip(config.resources, manifest.gamma)
        )
    if updates:
        config = replace(config, **updates)
    config.ensure_valid()
    return config


def _write_snapshots(trace, path):
    m = trace.config.m
    header = "k,agent," + ",".join(f"y_{j}" for j in range(1, m + 1))
    with open(path, "w", newline="") as f:
        f.write(header + "\n")
        for k in sorted(trace.snapshots):
            snap = trace.snapshots[k]
            for i in range(snap.shape[0]):
                vals = ",".join(format(snap[i, j], ".17g") for j in range(m))
                f.write(f"{k},{i},{vals}\n")


def _oracle_comparison(config: SimConfig, trace) -> tuple[dict, dict]:
    """Compare the final averages against the matching ground-truth solver."""
    incl = config.include_linear
    if config.constant_omega:
        omega = np.array([s.omega0 for s in config.resources])
        y_star = solve_fixed_point(trace.population, omega, incl)
        err = np.abs(trace.final_y - y_star)
        comparison = {
            "kind": "fixed-point",
            "omega": omega.tolist(),
            "max_abs_err": float(err.max()),
            "mean_abs_err": float(err.mean()),
        }
        detail = {"comparison": comparison, "y_star": y_star.tolist()}
    else:
        caps = np.array([s.capacity for s in config.resources])
        sol = solve_social_optimum(trace.population, caps, include_linear=incl)
        err = np.abs(trace.final_y - sol.y_star)
        comparison = {
            "kind": "social-optimum",
            "mu": sol.mu.tolist(),
            "capacity_residual": sol.capacity_residual.tolist(),
            "consensus_residual": sol.consensus_residual.tolist(),
            "max_abs_err": float(err.max()),
            "mean_abs_err": float(err.mean()),
        }
        detail = {"comparison": comparison, "solution": sol.to_json()}
    return comparison, detail


def run_experiment(manifest: RunManifest) -> int:
    """Execute a manifest; writes artifacts into the output directory.

    Returns 0 on success, 1 on fatal engine/oracle failures, 2 on bad input.
    """
    try:
        config = _build_config(manifest)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        trace = run(config)
    except Exception as exc:  # noqa: BLE001 - surface anything fatal with context
        (out / "summary.json").write_text(json.dumps(
            {"schema": "unitalloc-summary/1", "status": "failed", "error": str(exc)},
            indent=2, sort_keys=True) + "\n")
        print(f"fatal: {exc}", file=sys.stderr)
        return 1

    artifacts = {}
    if manifest.emit_trace:
        trace.to_csv(out / "trace.csv")
        artifacts["trace_csv"] = "trace.csv"
    if manifest.emit_snapshots:
        _write_snapshots(trace, out / "snapshots.csv")
        artifacts["snapshots_csv"] = "snapshots.csv"

    status = "ok"
    exit_code = 0
    oracle_summary = None
    if manifest.oracle:
        try:
            oracle_summary, detail = _oracle_comparison(config, trace)
            (out / "oracle.json").write_text(
                json.dumps(detail, indent=2, sort_keys=True) + "\n")
            artifacts["oracle_json"] = "oracle.json"
        except Exception as exc:  # noqa: BLE001
            print(f"oracle comparison failed: {exc}", file=sys.stderr)
            oracle_summary = {"error": str(exc)}
            status = "partial"
            exit_code = 1

    summary = trace.summary()
    summary["status"] = status
    summary["preset"] = manifest.preset
    summary["artifacts"] = artifacts
    if oracle_summary is not None:
        summary["oracle"] = oracle_summary
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")

    cap = summary["capacity"]
    print(f"wrote {out}/summary.json"
          + (f" and {out}/trace.csv" if manifest.emit_trace else ""))
    print(f"  final |sum_y - C|: "
          + ", ".join(f"{d:.3f}" for d in cap["y_final_abs_dev"])
          + f"   mean |sum_xi - C| (last {cap['window']}): "
          + ", ".join(f"{d:.3f}" for d in cap["xi_mean_abs_dev"]))
    return exit_code


def _parse_args(argv):
    parser = argparse.ArgumentParser(
        prog="unitalloc",
        description="Distributed stochastic unit-demand resource allocation experiments.",
    )
    parser.add_argument("--preset", choices=PRESET_NAMES,
                        help="named experiment; 'custom' requires --config")
    parser.add_argument("--config", metavar="PATH", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--steps", type=int, help="horizon override")
    parser.add_argument("--out", default="runs/latest", help="output directory")
    parser.add_argument("--oracle", action="store_true",
                        help="attach ground-truth comparison artifacts")
    parser.add_argument("--constant-omega", action="store_true", dest="constant_omega",
                        help="freeze the broadcast factors at omega0")
    parser.add_argument("--snapshot-every", type=int, dest="snapshot_every",
                        help="per-agent snapshot cadence")
    parser.add_argument("--snapshots", action="store_true",
                        help="emit per-agent snapshots CSV")
    parser.add_argument("--gamma", help="per-resource damping, e.g. 0.9,0.95")
    parser.add_argument("--mode", choices=MODES, help="execution schedule")
    args = parser.parse_args(argv)

    if args.config:
        if args.preset not in (None, "custom"):
            parser.error("--config implies --preset custom")
        preset = "custom"
    else:
        if args.preset is None:
            parser.error("one of --preset or --config is required")
        if args.preset == "custom":
            parser.error("preset 'custom' requires --config PATH")
        preset = args.preset

    gamma = None
    if args.gamma:
        try:
            gamma = tuple(float(g) for g in args.gamma.split(","))
        except ValueError:
            parser.error(f"--gamma expects comma-separated floats, got {args.gamma!r}")

    return RunManifest(
        preset=preset,
        config_path=args.config,
        seed=args.seed,
        steps=args.steps,
        out_dir=args.out,
        oracle=args.oracle,
        constant_omega=args.constant_omega,
        snapshot_every=args.snapshot_every,
        gamma=gamma,
        mode=args.mode,
        emit_snapshots=args.snapshots,
    )


def main(argv=None) -> int:
    return run_experiment(_parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
