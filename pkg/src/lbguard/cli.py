"""Experiment grids from a YAML config, CSV results with a JSON sidecar.

Usage::

    lbguard run --config configs/fig4_bp.yaml --out results/fig4.csv
    lbguard bounds --config configs/bounds.yaml --out results/bounds.csv

The results CSV has one row per grid cell with columns ``RESULT_COLUMNS``.
Floats are written with ``repr`` so ``read_results_csv`` reproduces the
in-memory rows exactly.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .analytic import BoundInputs, DivergentBound, mean_guarded_prio_bound, mean_mg1_response
from .netsim import DelaySpec
from .policy import PolicySpec
from .server import Discipline
from .simcore import RunStats, SimConfig, SimulationAborted, run_experiment
from .sizedist import LoadSpec, SizeDistribution, from_config

log = logging.getLogger("lbguard")

RESULT_COLUMNS = ("rho", "k", "dist", "policy", "guarded", "g", "c", "scheduling",
                  "dispatchers", "trials", "jobs_per_trial", "mean_T", "ci95_halfwidth",
                  "completed", "violations")
_COLUMN_TYPES = {"rho": float, "k": int, "dist": str, "policy": str, "guarded": bool, "g": float,
                 "c": float, "scheduling": str, "dispatchers": int, "trials": int,
                 "jobs_per_trial": int, "mean_T": float, "ci95_halfwidth": float,
                 "completed": int, "violations": int}

BOUND_COLUMNS = ("rho", "k", "g", "c", "bound_mean", "srpt_mean", "psjf_mean", "prio_mean",
                 "fcfs_mean", "sim_mean_T", "sim_ci95")
UNSTABLE = "unstable"


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def dist_label(dist: SizeDistribution) -> str:
    params = {k: v for k, v in dist.describe().items() if k != "name"}
    inner = ",".join(f"{k}={v!r}" if not isinstance(v, (list, tuple)) else
                     f"{k}=[{' '.join(repr(float(u)) for u in v)}]" for k, v in params.items())
    return f"{dist.describe()['name']}({inner})"


# ---------------------------------------------------------------------------
# Grid


def _as_list(v) -> list:
    if v is None:
        return []
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _policy(v) -> PolicySpec:
    if isinstance(v, PolicySpec):
        return v
    if isinstance(v, dict):
        cut = v.get("cutoffs")
        return PolicySpec(v["name"], int(v.get("d", 2)), tuple(float(x) for x in cut) if cut else None)
    s = str(v)
    low = s.lower().replace("-", "")
    if low.startswith("jsq") and low[3:].isdigit():
        return PolicySpec("JSQd", int(low[3:]))
    return PolicySpec(s)


def _floats(v) -> tuple[float, ...] | None:
    return None if v is None else tuple(float(x) for x in v)


@dataclass
class ExperimentGrid:
    """A base configuration plus sweep axes; every combination is one cell."""
    base: dict
    rhos: list[float] = field(default_factory=list)
    policies: list[Any] = field(default_factory=list)
    guarded: list[bool] = field(default_factory=list)
    gs: list[float] = field(default_factory=list)
    schedulings: list[str] = field(default_factory=list)
    out: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentGrid":
        raw = dict(raw)
        axes = {}
        for key, axis in (("rho", "rhos"), ("policy", "policies"), ("guarded", "guarded"),
                          ("g", "gs"), ("scheduling", "schedulings")):
            axes[axis] = _as_list(raw.pop(key, None))
        out = raw.pop("out", None)
        raw.pop("bound_report", None)
        return cls(base=raw, out=out, **axes)

    @classmethod
    def load(cls, path) -> "ExperimentGrid":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        return cls.from_dict(raw)

    def axes(self) -> list[tuple[str, list]]:
        return [("rho", self.rhos or [self.base.get("rho")]),
                ("policy", self.policies or [self.base.get("policy", "Random")]),
                ("guarded", self.guarded or [self.base.get("guarded", False)]),
                ("g", self.gs or [self.base.get("g", 1.0)]),
                ("scheduling", self.schedulings or [self.base.get("scheduling", "SRPT")])]

    def cell_params(self) -> list[dict]:
        names, values = zip(*self.axes())
        return [dict(self.base, **dict(zip(names, combo))) for combo in itertools.product(*values)]

    def cells(self) -> list[SimConfig | ConfigError]:
        return [_build_config(p) for p in self.cell_params()]


_SIM_KEYS = {"k", "dist", "rho", "policy", "guarded", "g", "scheduling", "trials",
             "jobs_per_trial", "warmup_fraction", "seed", "dispatchers", "reset_delay",
             "resets", "speeds", "c", "class_boundaries", "check_invariants",
             "renormalize_every", "max_in_system", "engine"}


def _build_config(p: dict) -> SimConfig | ConfigError:
    unknown = set(p) - _SIM_KEYS
    if unknown:
        return ConfigError(sorted(unknown)[0], "unknown configuration key")
    conv = {
        "k": int, "rho": float, "g": float, "trials": int, "jobs_per_trial": lambda v: int(float(v)),
        "warmup_fraction": float, "seed": int, "dispatchers": int, "resets": bool,
        "c": lambda v: None if v is None else float(v), "speeds": _floats,
        "class_boundaries": _floats, "check_invariants": bool,
        "renormalize_every": int, "max_in_system": lambda v: int(float(v)),
        "guarded": bool, "policy": _policy, "engine": str,
        "scheduling": Discipline.parse, "reset_delay": DelaySpec.from_config,
        "dist": lambda v: v if isinstance(v, SizeDistribution) else from_config(
            {kk: (float(vv) if kk != "name" and isinstance(vv, str) else vv) for kk, vv in v.items()}),
    }
    kw = {}
    for key in ("k", "dist", "rho"):
        if p.get(key) is None:
            return ConfigError(key, "required")
    for key, value in p.items():
        try:
            kw[key] = conv[key](value)
        except (TypeError, ValueError, KeyError) as exc:
            return ConfigError(key, str(exc))
    try:
        return SimConfig(**kw)
    except ValueError as exc:
        msg = str(exc)
        guess = next((k for k in sorted(_SIM_KEYS, key=len, reverse=True) if msg.startswith(k)
                      or f" {k} " in f" {msg} "), "config")
        return ConfigError(guess, msg)


# ---------------------------------------------------------------------------
# Running


@dataclass
class CellResult:
    index: int
    row: dict
    config: dict
    status: str               # ok | unstable | invalid
    detail: str = ""
    stats: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)


def _row(cfg: SimConfig, st: RunStats | None) -> dict:
    return {
        "rho": cfg.rho, "k": cfg.k, "dist": dist_label(cfg.dist), "policy": cfg.policy.label,
        "guarded": cfg.guarded, "g": cfg.g, "c": cfg.rank_width, "scheduling": cfg.scheduling.value,
        "dispatchers": cfg.dispatchers, "trials": cfg.trials, "jobs_per_trial": cfg.jobs_per_trial,
        "mean_T": st.mean_T if st else math.nan,
        "ci95_halfwidth": st.ci_halfwidth_95 if st else math.nan,
        "completed": st.completed if st else 0, "violations": st.violations if st else 0,
    }


def run_cell(index: int, cfg: SimConfig) -> CellResult:
    try:
        st = run_experiment(cfg)
    except SimulationAborted as exc:
        log.warning("cell %d aborted: %s", index, exc)
        return CellResult(index, _row(cfg, None), cfg.to_dict(), "unstable", str(exc),
                          seeds=[exc.seed])
    return CellResult(index, _row(cfg, st), cfg.to_dict(), "ok", stats=st.summary(), seeds=st.seeds)


def run_grid(grid: ExperimentGrid, parallelism: int = 1) -> list[CellResult]:
    """Run every cell; results come back in cell order regardless of parallelism."""
    cells = grid.cells()
    results: list[CellResult | None] = [None] * len(cells)
    todo = []
    for i, cell in enumerate(cells):
        if isinstance(cell, ConfigError):
            results[i] = CellResult(i, {}, {}, "invalid", str(cell))
        else:
            todo.append((i, cell))
    if parallelism > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as ex:
            futs = [ex.submit(run_cell, i, cfg) for i, cfg in todo]
            for f in futs:
                res = f.result()
                results[res.index] = res
    else:
        for i, cfg in todo:
            results[i] = run_cell(i, cfg)
            log.info("cell %d/%d %s rho=%s mean_T=%s", i + 1, len(cells), cfg.label(), cfg.rho,
                     results[i].row["mean_T"])
    return results  # type: ignore[return-value]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results_csv(path, results: Sequence[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for res in results:
            if res.status == "invalid":
                continue
            row = dict(res.row)
            if res.status == "unstable":
                row["mean_T"] = UNSTABLE
                row["ci95_halfwidth"] = UNSTABLE
            w.writerow([_fmt(row[c]) for c in RESULT_COLUMNS])


def _parse(col: str, text: str):
    typ = _COLUMN_TYPES[col]
    if typ is bool:
        return text == "true"
    if typ is float:
        return math.nan if text == UNSTABLE else float(text)
    return typ(text)


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != RESULT_COLUMNS:
            raise ValueError(f"unexpected CSV header {header}")
        return [{c: _parse(c, v) for c, v in zip(header, line)} for line in rd]


def _versions() -> dict:
    import numba
    import scipy
    from importlib import metadata
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "lbguard": pkg}


def write_sidecar(path, grid: ExperimentGrid, results: Sequence[CellResult]) -> None:
    doc = {
        "versions": _versions(),
        "columns": list(RESULT_COLUMNS),
        "cells": [{"index": r.index, "status": r.status, "detail": r.detail,
                   "config": r.config, "seeds": r.seeds, "invariants": r.stats}
                  for r in results],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=str)


def grid_failed(results: Sequence[CellResult]) -> bool:
    """True if any cell was invalid or any invariant check fired."""
    return any(r.status == "invalid" or r.row.get("violations", 0) > 0 for r in results)


# ---------------------------------------------------------------------------
# Bound report


def emit_bound_report(dist: SizeDistribution, k: int, g: float, rhos: Sequence[float],
                      sim: dict[float, tuple[float, float]] | None = None) -> list[dict]:
    """Per-load mean bound and single-server (speed 1) baselines.

    ``sim`` maps rho to a simulated (mean_T, ci95) pair to place alongside.
    Divergent quantities read ``"unstable"``.
    """
    rows = []
    for rho in rhos:
        load = LoadSpec.from_rho(dist, rho)
        inp = BoundInputs.from_rho(dist, rho, k, g)
        row: dict[str, Any] = {"rho": rho, "k": k, "g": g, "c": inp.c}
        try:
            row["bound_mean"] = mean_guarded_prio_bound(inp)
        except DivergentBound:
            row["bound_mean"] = UNSTABLE
        for name, d in (("srpt_mean", "SRPT"), ("psjf_mean", "PSJF"), ("prio_mean", "Prio"),
                        ("fcfs_mean", "FCFS")):
            try:
                row[name] = mean_mg1_response(dist, load.arrival_rate, d, inp.c)
            except DivergentBound:
                row[name] = UNSTABLE
        s = (sim or {}).get(rho)
        row["sim_mean_T"] = s[0] if s else ""
        row["sim_ci95"] = s[1] if s else ""
        rows.append(row)
    return rows


def write_bound_report(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUND_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in BOUND_COLUMNS])


# ---------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lbguard", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command")
    for name in ("run", "bounds"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="YAML experiment config")
        s.add_argument("--out", help="output CSV (overrides the config)")
        s.add_argument("--seed", type=int)
        s.add_argument("--trials", type=int)
        s.add_argument("--jobs", type=lambda v: int(float(v)), help="jobs per trial")
        s.add_argument("--assert-invariants", choices=("on", "off"))
        s.add_argument("--parallelism", type=int, default=1)
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(grid: ExperimentGrid, args) -> None:
    if args.seed is not None:
        grid.base["seed"] = args.seed
    if args.trials is not None:
        grid.base["trials"] = args.trials
    if args.jobs is not None:
        grid.base["jobs_per_trial"] = args.jobs
    if args.assert_invariants is not None:
        grid.base["check_invariants"] = args.assert_invariants == "on"
    if args.out:
        grid.out = args.out


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] not in ("run", "bounds", "-h", "--help"):
        argv.insert(0, "run")
    args = build_parser().parse_args(argv)
    if args.command is None:
        build_parser().print_help()
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        grid = ExperimentGrid.load(args.config)
    except (OSError, yaml.YAMLError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _apply_overrides(grid, args)
    out = Path(grid.out or "results.csv")
    out.parent.mkdir(parents=True, exist_ok=True)

    if args.command == "bounds":
        cells = grid.cells()
        bad = [c for c in cells if isinstance(c, ConfigError)]
        if bad:
            print(f"error: {bad[0]}", file=sys.stderr)
            return 2
        first = cells[0]
        rows = emit_bound_report(first.dist, first.k, first.g,
                                 sorted({c.rho for c in cells}))  # type: ignore[union-attr]
        write_bound_report(out, rows)
        print(f"wrote {out}")
        return 0

    results = run_grid(grid, args.parallelism)
    write_results_csv(out, results)
    write_sidecar(out.with_suffix(".json"), grid, results)
    for r in results:
        if r.status == "invalid":
            print(f"invalid cell {r.index}: {r.detail}", file=sys.stderr)
        elif r.status == "unstable":
            print(f"unstable cell {r.index}: {r.detail}", file=sys.stderr)
    print(f"wrote {out} ({len(results)} cells)")
    return 1 if grid_failed(results) else 0


if __name__ == "__main__":
    sys.exit(main())
