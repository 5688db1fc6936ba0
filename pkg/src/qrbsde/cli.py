"""Command-line front end: strict JSON config, experiment dispatch, artifacts.

One run owns one output directory and writes summary.json (numeric results,
bit-reproducible across reruns), one CSV table per result family, and
manifest.json (config hash, timings, file list).  Exit codes: 0 success,
2 config error, 3 numeric failure, 4 a pass flag came back false.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import lab
from .forward import euler_simulate, make_grid, sample_increments
from .model import (PRESET_NAMES, ProblemSpec, TruncationRadius, build_preset,
                    validate_assumptions)
from .oracle import build_space_grid, exact_scheme_solve, snell_cole_hopf
from .regress import BasisSpec
from .scheme import estimate_Mz_auto, solve_backward

SCHEMA_VERSION = 1
ARTIFACT_VERSION = "1"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_FLAGS = 4

EXPERIMENTS = ("solve", "converge", "reflect-sweep", "stability",
               "diagnose", "oracle", "validate")


class ConfigError(ValueError):
    """Configuration rejected; message carries a JSON-pointer path."""


# ---------------------------------------------------------------------------
# config schema: nested dict of allowed keys -> accepted types (or sub-schema)

_BASIS_SCHEMA = {
    "kind": str,
    "degree": int,
    "cells": int,
    "ridge": (int, float),
    "domain": list,
}

_SCHEMA = {
    "problem": {"preset": str, "overrides": dict},
    "grid": {"N": int, "T": (int, float), "reflection": (str, dict, list)},
    "mc": {"paths": int, "seed": int, "basis": _BASIS_SCHEMA},
    "truncation": {"M_z": (str, int, float)},
    "experiment": {
        "kind": str,
        "Ns": list,
        "N": int,
        "kappas": list,
        "oracle": str,
        "engine": str,
        "perturbation": str,
        "levels": list,
    },
    "output": {"directory": str, "formats": list},
}


def _check_keys(obj, schema, pointer):
    if not isinstance(obj, dict):
        raise ConfigError(f"{pointer or '/'}: expected an object")
    for key, val in obj.items():
        if key not in schema:
            raise ConfigError(f"{pointer}/{key}: unknown key {key!r}")
        want = schema[key]
        if isinstance(want, dict):
            _check_keys(val, want, f"{pointer}/{key}")
        elif not isinstance(val, want) or isinstance(val, bool):
            raise ConfigError(f"{pointer}/{key}: bad type {type(val).__name__}")


_DEFAULTS = {
    "problem": {"preset": "P1-pure-quadratic", "overrides": {}},
    "grid": {"N": 64, "reflection": "all"},
    "mc": {"paths": 50_000, "seed": 42,
           "basis": {"kind": "polynomial", "degree": 6, "ridge": 1e-8}},
    "truncation": {"M_z": "auto"},
    "experiment": {"kind": "solve"},
    "output": {"formats": ["json", "csv"]},
}


def _merge_defaults(user, defaults):
    out = {}
    for k, v in defaults.items():
        if k in user and isinstance(v, dict):
            out[k] = _merge_defaults(user[k], v)
        elif k in user:
            out[k] = user[k]
        else:
            out[k] = json.loads(json.dumps(v))  # deep copy
    for k, v in user.items():
        if k not in out:
            out[k] = v
    return out


@dataclass(frozen=True)
class RunConfig:
    spec: ProblemSpec
    preset: str
    N: int
    reflection: object
    paths: int
    seed: int
    basis: BasisSpec
    M_z: Optional[float]          # None means auto-estimate
    experiment: dict              # kind + per-experiment parameters
    out_dir: Optional[str]
    formats: tuple
    normalized: dict              # fully-defaulted config dict (hashable form)

    @property
    def kind(self) -> str:
        return self.experiment["kind"]


def config_hash(normalized: dict) -> str:
    """Hash of the canonical JSON form; stable under key reordering."""
    blob = json.dumps(normalized, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def parse_config(source) -> RunConfig:
    """Parse a config from a dict, a JSON string, or a file path.

    Strict: unknown keys are fatal and reported with their JSON-pointer
    paths.  Defaults: N=64, paths=5*10^4, seed=42, polynomial degree-6
    basis, reflection at every grid time, M_z auto-estimated.
    """
    if isinstance(source, dict):
        raw = source
    else:
        text = str(source)
        if os.path.exists(text):
            with open(text) as fh:
                text = fh.read()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    _check_keys(raw, _SCHEMA, "")
    cfg = _merge_defaults(raw, _DEFAULTS)

    preset = cfg["problem"]["preset"]
    overrides = dict(cfg["problem"].get("overrides", {}))
    if "T" in cfg["grid"]:
        overrides["T"] = cfg["grid"]["T"]
    try:
        spec = build_preset(preset, overrides)
    except ValueError as exc:
        raise ConfigError(f"/problem: {exc}") from exc

    N = int(cfg["grid"]["N"])
    if N < 1:
        raise ConfigError("/grid/N: must be >= 1")
    if spec.L * spec.T / N >= 1.0:
        raise ConfigError(
            f"/grid/N: L*T/N = {spec.L * spec.T / N:.3g} >= 1; the implicit "
            "driver step is a contraction only for L*dt < 1")

    reflection = cfg["grid"]["reflection"]
    if isinstance(reflection, dict):
        if set(reflection) != {"every"}:
            raise ConfigError('/grid/reflection: object form must be {"every": k}')
        reflection = ("every", int(reflection["every"]))

    b = cfg["mc"]["basis"]
    try:
        basis = BasisSpec(
            kind=b.get("kind", "polynomial"),
            degree=int(b.get("degree", 6)),
            cells=int(b.get("cells", 50)),
            domain=tuple(b["domain"]) if b.get("domain") is not None else None,
            ridge=float(b.get("ridge", 1e-8)),
        )
    except ValueError as exc:
        raise ConfigError(f"/mc/basis: {exc}") from exc

    paths = int(cfg["mc"]["paths"])
    if paths < 10 * basis.dimension:
        raise ConfigError(
            f"/mc/paths: {paths} < 10 * basis dimension ({10 * basis.dimension})")
    seed = int(cfg["mc"]["seed"])
    if seed < 0:
        raise ConfigError("/mc/seed: must be nonnegative")

    mz = cfg["truncation"]["M_z"]
    if isinstance(mz, str):
        if mz != "auto":
            raise ConfigError('/truncation/M_z: must be a number or "auto"')
        M_z = None
    else:
        M_z = float(mz)
        if M_z <= 0:
            raise ConfigError("/truncation/M_z: must be positive")

    experiment = dict(cfg["experiment"])
    if experiment.get("kind") not in EXPERIMENTS:
        raise ConfigError(
            f"/experiment/kind: choose from {', '.join(EXPERIMENTS)}")

    return RunConfig(
        spec=spec, preset=preset, N=N, reflection=reflection,
        paths=paths, seed=seed, basis=basis, M_z=M_z,
        experiment=experiment,
        out_dir=cfg["output"].get("directory"),
        formats=tuple(cfg["output"]["formats"]),
        normalized=cfg,
    )


# ---------------------------------------------------------------------------
# experiment dispatch: each runner returns (summary, tables, flags)

def _mc_config(cfg: RunConfig) -> lab.MCConfig:
    return lab.MCConfig(n_paths=cfg.paths, seed=cfg.seed, basis=cfg.basis,
                        M_z=cfg.M_z)


def _solve_parts(cfg: RunConfig):
    spec = cfg.spec
    grid, sched = make_grid(cfg.N, spec.T, cfg.reflection)
    bundle = euler_simulate(
        spec, sample_increments(grid, cfg.paths, cfg.seed, spec.m))
    if cfg.M_z is not None:
        radius = TruncationRadius(cfg.M_z, "user-supplied")
    else:
        radius = estimate_Mz_auto(spec, grid, sched, bundle, cfg.basis)
    sol = solve_backward(spec, grid, sched, bundle, cfg.basis, radius)
    return grid, sched, bundle, sol


def _run_solve(cfg: RunConfig):
    grid, sched, bundle, sol = _solve_parts(cfg)
    sk = sol.skorokhod_flags(cfg.spec, bundle.X_euler)
    summary = sol.summary()
    summary["K_T_total_mean"] = summary["K_T_mean"]
    summary["skorokhod"] = sk
    steps = [{
        "i": i, "t": float(grid.times[i]),
        "picard_iters": int(sol.picard_counts[i]),
        "fit_cond": float(sol.fit_conds[i]),
        "fit_rmse": float(sol.fit_rmses[i]),
        "max_abs_z": float(np.max(np.abs(sol.Zbar[:, i, :]))),
        "mean_dK": float(np.mean(sol.dK[:, i])),
    } for i in range(grid.N)]
    flags = {"skorokhod": sk["all"]}
    return summary, {"steps": steps}, flags, bundle


def _run_converge(cfg: RunConfig):
    exp = cfg.experiment
    Ns = [int(n) for n in exp.get("Ns", [8, 16, 32, 64])]
    rep = lab.run_convergence(cfg.spec, Ns, _mc_config(cfg),
                              oracle=exp.get("oracle", "auto"))
    cells = rep.rows()
    mono = all(b["y0_err"] < a["y0_err"] for a, b in zip(cells, cells[1:]))
    flags = {
        "y0_err_monotone": mono,
        "slopes_fitted": all(v is not None for v in rep.slopes.values()),
    }
    return rep.to_dict(), {"convergence": cells}, flags, None


def _run_reflect_sweep(cfg: RunConfig):
    exp = cfg.experiment
    N = int(exp.get("N", 256))
    kappas = [int(k) for k in exp.get("kappas", [4, 8, 16, 32, 64])]
    rep = lab.run_discrete_reflection_sweep(cfg.spec, N, kappas,
                                            engine=exp.get("engine", "auto"))
    flags = {"monotone_nondecreasing": rep.reference["monotone_nondecreasing"]}
    return rep.to_dict(), {"reflection_sweep": rep.rows()}, flags, None


def _run_stability(cfg: RunConfig):
    exp = cfg.experiment
    kind = exp.get("perturbation", "drift-shift")
    if kind == "drift-shift":
        levels = exp.get("levels", [0.4, 0.2, 0.1, 0.05])
    else:
        levels = exp.get("levels", [8, 16, 32, 64])
    rep = lab.run_stability(cfg.spec, kind, levels, _mc_config(cfg), N=cfg.N)
    cells = rep.rows()

    def decreasing(key):
        return all(b[key] < a[key] for a, b in zip(cells, cells[1:]))

    # cells are ordered from the largest perturbation to the smallest for
    # drift-shift, and from the coarsest grid to the finest for euler-vs-exact
    flags = {f"{k}_decreasing": decreasing(k) for k in ("D_Y", "D_Z", "D_K")}
    ratios = [c["ratio_Y"] for c in cells]
    flags["ratio_bounded"] = max(ratios) <= 2.0 * ratios[0]
    return rep.to_dict(), {"stability": cells}, flags, None


def _run_diagnose(cfg: RunConfig):
    grid, sched, bundle, sol = _solve_parts(cfg)
    rep = lab.run_diagnostics(cfg.spec, cfg.N, _mc_config(cfg),
                              sol=sol, bundle=bundle)
    rows = [{"quantity": q, "p": p, "value": v}
            for q, d in rep.moments.items() for p, v in d.items()]
    rows.append({"quantity": "tail_sum_max", "p": "", "value": rep.tail_sum_max})
    rows.append({"quantity": "bound_value", "p": "", "value": rep.bound_value})
    flags = {"within_bound": rep.passed,
             "skorokhod": sol.skorokhod_flags(cfg.spec, bundle.X_euler)["all"]}
    return rep.to_dict(), {"diagnostics": rows}, flags, None


def _run_oracle(cfg: RunConfig):
    spec = cfg.spec
    grid, sched = make_grid(cfg.N, spec.T, cfg.reflection)
    space = build_space_grid(spec)
    exact = exact_scheme_solve(spec, grid, sched, space)
    summary = {"exact_scheme_y0": exact.y0, "N": cfg.N,
               "space_nodes": space.J, "quad_order": space.quad_order}
    flags = {}
    if spec.pure_quadratic:
        snell = snell_cole_hopf(spec, grid, sched, space)
        gap = abs(exact.y0 - snell.y0)
        summary.update(snell_y0=snell.y0, cross_gap=gap)
        flags["cross_agreement"] = gap <= 1e-3
    rows = [{"x": float(x),
             "y0_exact_scheme": float(exact.y_at(0, x)),
             **({"y0_snell": float(snell.y_at(0, x))}
                if spec.pure_quadratic else {})}
            for x in space.nodes]
    return summary, {"oracle_slice": rows}, flags, None


def _run_validate(cfg: RunConfig):
    rep = validate_assumptions(cfg.spec)
    rows = [{"check": name, "passed": r.passed, "worst_ratio": r.worst_ratio}
            for name, r in sorted(rep.checks.items())]
    summary = {
        "cloud": rep.cloud_description,
        "groups": {g: rep.passes(g) for g in rep._GROUPS},
        "checks": {name: {"passed": r.passed, "worst_ratio": r.worst_ratio,
                          "witness": list(r.witness)}
                   for name, r in sorted(rep.checks.items())},
    }
    # report-only: regularity groups (H1)/(H2) legitimately fail for kinked
    # obstacles, so no flag here gates the exit code
    return summary, {"assumptions": rows}, {}, None


_RUNNERS = {
    "solve": _run_solve,
    "converge": _run_converge,
    "reflect-sweep": _run_reflect_sweep,
    "stability": _run_stability,
    "diagnose": _run_diagnose,
    "oracle": _run_oracle,
    "validate": _run_validate,
}


# ---------------------------------------------------------------------------
# artifact writing

def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_csv(path, rows):
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in cols})


def resolve_out_dir(cfg: RunConfig, cli_out: Optional[str]) -> str:
    if cli_out:
        return cli_out
    if cfg.out_dir:
        return cfg.out_dir
    root = os.environ.get("QRBSDE_OUT", "runs")
    return os.path.join(root, cfg.kind)


def run(cfg: RunConfig, out_dir: str, dump_paths: bool = False,
        threads: int = 1) -> dict:
    """Execute the configured experiment and write artifacts under out_dir.

    Returns the manifest.  ``threads`` is recorded for bookkeeping only; no
    stage parallelizes internally, so results never depend on it.
    """
    os.makedirs(out_dir, exist_ok=True)
    t_start = time.time()
    timings = {}
    outputs = []

    def _emit(name, writer, *args):
        path = os.path.join(out_dir, name)
        writer(path, *args)
        outputs.append(name)

    status = "ok"
    error = None
    flags = {}
    try:
        t0 = time.time()
        summary, tables, flags, bundle = _RUNNERS[cfg.kind](cfg)
        timings["experiment"] = time.time() - t0
    except (FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        status = "failed"
        error = f"{type(exc).__name__}: {exc}"
        summary, tables, bundle = {"error": error}, {}, None
    except ValueError as exc:
        # precondition violations from experiment parameters (bad kappa,
        # non-monotone level lists, ...) are configuration mistakes
        status = "config-error"
        error = f"{type(exc).__name__}: {exc}"
        summary, tables, bundle = {"error": error}, {}, None

    t0 = time.time()
    payload = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg.kind,
        "problem": cfg.preset,
        "config": cfg.normalized,
        "results": summary,
        "flags": flags,
        "pass": bool(status == "ok" and all(flags.values())),
    }
    if "json" in cfg.formats:
        _emit("summary.json", _write_json, payload)
    if "csv" in cfg.formats:
        for name, rows in tables.items():
            _emit(f"{name}.csv", _write_csv, rows)
    if dump_paths and bundle is not None and bundle.X_euler is not None:
        _emit("paths.csv",
              lambda p, arr: np.savetxt(
                  p, arr, delimiter=",", comments="",
                  header=",".join(f"t{i}" for i in range(arr.shape[1]))),
              bundle.X_euler)
    timings["write"] = time.time() - t0

    manifest = {
        "artifact_version": ARTIFACT_VERSION,
        "config_hash": config_hash(cfg.normalized),
        "status": status,
        "error": error,
        "wall_clock_s": time.time() - t_start,
        "timings_s": timings,
        "seeds": [cfg.seed],
        "threads": threads,
        "pass": payload["pass"],
        "outputs": outputs + ["manifest.json"],
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


# ---------------------------------------------------------------------------
# argument surface

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qrbsde",
        description="Discrete-time solver lab for quadratic reflected BSDEs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON config file or inline JSON")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="worker hint; affects speed only, never results")
        p.add_argument("--dump-paths", action="store_true",
                       help="also write the simulated paths as CSV")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = {} if args.config is None else args.config
        cfg = parse_config(raw)
        # the subcommand pins the experiment kind; config may only refine it
        exp = dict(cfg.experiment)
        exp["kind"] = args.command
        normalized = dict(cfg.normalized)
        normalized["experiment"] = exp
        cfg = dataclasses.replace(cfg, experiment=exp, normalized=normalized)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be nonnegative")
            normalized = dict(cfg.normalized)
            normalized["mc"] = dict(normalized["mc"], seed=args.seed)
            cfg = dataclasses.replace(cfg, seed=args.seed, normalized=normalized)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir = resolve_out_dir(cfg, args.out)
    manifest = run(cfg, out_dir, dump_paths=args.dump_paths,
                   threads=args.threads)
    if manifest["status"] == "config-error":
        print(f"config error: {manifest['error']}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest["status"] != "ok":
        print(f"numeric failure: {manifest['error']}", file=sys.stderr)
        return EXIT_NUMERIC

    if not manifest["pass"] and cfg.kind != "validate":
        print("experiment pass flags failed; see summary.json", file=sys.stderr)
        return EXIT_FLAGS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
