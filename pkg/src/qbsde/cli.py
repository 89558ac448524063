"""Config-driven experiment runner.

Usage::

    qbsde run experiment.ini [--seed S] [--out DIR] [--format csv|jsonl]
                             [--threads K] [--node-budget B]

The config is an INI file.  Unknown sections or keys are errors.  Each run
writes ``<id>.csv`` or ``<id>.jsonl`` with one row per check, plus
``<id>.bundle.json`` (config echo, rows and summaries) and
``<id>.timing.json`` (wall clock only, so the bundle itself is reproducible).
Numbers are written with 17 significant digits; ``inf`` and ``nan`` are
written as strings.  Exit status is 0 iff every row passes, 1 if some check
fails and 2 on configuration or runtime errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import experiments
from .coefficients import coefficient_from_name, parse_call
from .lattice import DEFAULT_NODE_BUDGET, LatticeError, build_model, driver
from .solver import BSDESpec, SolverError
from .transforms import StructureParams

OUTPUT_ENV = "QBSDE_OUTPUT_DIR"
KINDS = ("solve", "ladder", "qv", "inequalities", "classify", "band", "dual")
COLUMNS = ("experiment_id", "check_name", "n_or_p", "left", "right", "margin", "pass")

SCHEMA = {
    "experiment": {"kind": str, "id": str, "seed": int},
    "model": {"T": float, "N": int, "branching": int, "recombining": bool},
    "coefficient": {"name": str},
    "terminal": {"name": str},
    "structure": {"l": float, "c": float, "delta": float},
    "scheme": {"method": str, "tol": float},
    "ladder": {"levels": "floats"},
    "estimates": {"p": "floats"},
    "battery": {"count": int, "steps": int, "points": int, "hitting": int, "spaces": int},
    "output": {"dir": str, "format": str},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    kind: str
    id: str
    seed: int = 0
    T: float = 1.0
    N: int = 10
    branching: int = 2
    recombining: bool = False
    coefficient: str = "q"
    terminal: str = "linear-W(1)"
    structure: dict | None = None
    scheme: str = "implicit"
    tol: float = 1e-12
    levels: tuple = (1.0, 2.0, 4.0, 8.0, 16.0, 32.0)
    p_values: tuple = (1.0, 1.5, 2.0)
    battery: dict = field(default_factory=dict)
    out_dir: str | None = None
    format: str = "csv"

    def echo(self) -> dict:
        d = dict(self.__dict__)
        d["levels"] = list(self.levels)
        d["p_values"] = list(self.p_values)
        d.pop("out_dir")
        return d


def _key_lines(text: str) -> dict:
    lines = {}
    section = None
    for no, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"^\[(.+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
        elif section is not None:
            key = re.split(r"[=:]", s, 1)[0].strip()
            lines[(section, key)] = no
    return lines


def _convert(kind, raw: str, where: str):
    try:
        if kind == "floats":
            vals = tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())
            if not vals or not all(math.isfinite(v) for v in vals):
                raise ValueError
            return vals
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            return low in ("true", "yes", "1")
        return kind(raw.strip())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{source}:{lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            where = f"{source}:{lines.get((section, key), '?')}"
            if key not in SCHEMA[section]:
                raise ConfigError(f"{where}: unknown key {key!r} in [{section}]")
            values[(section, key)] = _convert(SCHEMA[section][key], raw, f"{where}: {section}.{key}")

    def get(section, key, default=None):
        return values.get((section, key), default)

    kind = get("experiment", "kind")
    if kind not in KINDS:
        raise ConfigError(f"{source}: experiment.kind must be one of {', '.join(KINDS)}")
    cfg = ExperimentConfig(kind=kind, id=get("experiment", "id", kind))
    if not re.match(r"^[\w.\-]+$", cfg.id):
        raise ConfigError(f"{source}: experiment.id may only use letters, digits, '.', '_' and '-'")
    cfg.seed = get("experiment", "seed", 0)
    cfg.T = get("model", "T", 1.0)
    cfg.N = get("model", "N", 10)
    cfg.branching = get("model", "branching", 2)
    cfg.recombining = get("model", "recombining", False)
    if not (cfg.T > 0 and cfg.N >= 1 and cfg.branching >= 2):
        raise ConfigError(f"{source}: model needs T > 0, N >= 1 and branching >= 2")
    cfg.coefficient = get("coefficient", "name", cfg.coefficient)
    cfg.terminal = get("terminal", "name", cfg.terminal)
    if any(s == "structure" for s, _ in values):
        cfg.structure = {"l": get("structure", "l", 0.0), "c": get("structure", "c", 0.0),
                         "delta": get("structure", "delta", 1.0)}
    cfg.scheme = get("scheme", "method", cfg.scheme)
    if cfg.scheme not in ("implicit", "explicit", "picard"):
        raise ConfigError(f"{source}: scheme.method must be implicit, explicit or picard")
    cfg.tol = get("scheme", "tol", cfg.tol)
    cfg.levels = get("ladder", "levels", cfg.levels)
    cfg.p_values = get("estimates", "p", cfg.p_values)
    cfg.battery = {k: v for (s, k), v in values.items() if s == "battery"}
    if any(v < 1 for v in cfg.battery.values()):
        raise ConfigError(f"{source}: battery sizes must be positive")
    cfg.out_dir = get("output", "dir")
    cfg.format = get("output", "format", cfg.format)
    if cfg.format not in ("csv", "jsonl"):
        raise ConfigError(f"{source}: output.format must be csv or jsonl")
    return cfg


TERMINALS = {
    "linear-W": lambda w, a: a * w,
    "abs-W": lambda w, a: a * np.abs(w),
    "constant": lambda w, a: np.full_like(w, a),
    "bounded-clip": lambda w, a: np.clip(w, -a, a),
}


def terminal_from_name(model, text: str) -> np.ndarray:
    name, args = parse_call(text)
    if name not in TERMINALS:
        raise ConfigError(f"unknown terminal {name!r}; known: {', '.join(TERMINALS)}")
    if len(args) != 1:
        raise ConfigError(f"{name} takes one argument")
    if name == "bounded-clip" and args[0] < 0:
        raise ConfigError("bounded-clip needs B >= 0")
    return TERMINALS[name](driver(model).terminal, args[0])


def build_spec(cfg: ExperimentConfig, node_budget: int) -> BSDESpec:
    model = build_model(cfg.T, cfg.N, cfg.branching, cfg.recombining, node_budget=node_budget)
    try:
        g = coefficient_from_name(cfg.coefficient)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    xi = terminal_from_name(model, cfg.terminal)
    params = None
    if cfg.structure is not None:
        params = StructureParams.linear(model, cfg.structure["l"], cfg.structure["c"], cfg.structure["delta"])
    return BSDESpec(model, g, xi, params)


def run_experiment(cfg: ExperimentConfig, threads: int = 1, node_budget: int = DEFAULT_NODE_BUDGET):
    """Return ``(rows, bundle)`` for one experiment."""
    b = cfg.battery
    if cfg.kind == "solve":
        reports, summary = experiments.solve_workload(build_spec(cfg, node_budget), cfg.scheme, cfg.tol)
    elif cfg.kind == "ladder":
        reports, summary = experiments.ladder_workload(build_spec(cfg, node_budget), cfg.levels, cfg.scheme)
    elif cfg.kind == "qv":
        reports, summary = experiments.qv_workload(build_spec(cfg, node_budget), cfg.scheme, cfg.p_values)
    elif cfg.kind == "inequalities":
        reports, summary = experiments.inequalities_workload(
            cfg.seed, b.get("count", 1000), b.get("steps", 4), cfg.p_values, threads)
    elif cfg.kind == "classify":
        reports, summary = experiments.classify_workload(cfg.seed, b.get("count", 200), b.get("steps", 10), threads)
    elif cfg.kind == "band":
        reports, summary = experiments.band_workload(
            cfg.seed, b.get("count", 20), b.get("steps", 10), b.get("hitting", 8), threads)
    else:
        reports, summary = experiments.dual_workload(
            cfg.seed, b.get("count", 1000), b.get("points", 8), b.get("spaces", 1))
    rows = [report_row(cfg.id, r) for r in reports]
    bundle = {"config": cfg.echo(), "rows": rows, "summary": summary}
    return rows, bundle


def _n_or_p(descriptor: dict) -> str:
    for key in ("pair", "p", "instance", "N", "step", "space"):
        if key in descriptor:
            return fmt(descriptor[key])
    return ""


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return format(x, ".17g") if math.isfinite(x) else str(x)
    return str(x)


def report_row(exp_id: str, r) -> dict:
    return {
        "experiment_id": exp_id,
        "check_name": r.name,
        "n_or_p": _n_or_p(r.descriptor),
        "left": r.left,
        "right": r.right,
        "margin": r.margin,
        "pass": bool(r.passed),
    }


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(format(v, ".17g")) if math.isfinite(v) else str(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, dict):
        return {str(k): _json_value(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_value(x) for x in v]
    return v


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def rows_to_jsonl(rows) -> str:
    return "".join(json.dumps(_json_value(row), separators=(",", ":")) + "\n" for row in rows)


def emit_report(rows, bundle, out_dir: Path, exp_id: str, fmt_name: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    body = rows_to_csv(rows) if fmt_name == "csv" else rows_to_jsonl(rows)
    paths = [out_dir / f"{exp_id}.{fmt_name}", out_dir / f"{exp_id}.bundle.json"]
    paths[0].write_text(body)
    paths[1].write_text(json.dumps(_json_value(bundle), indent=1, sort_keys=True) + "\n")
    return paths


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbsde", description="Run lattice quadratic-BSDE experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", help="path to an INI experiment file")
    run.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    run.add_argument("--out", default=None, help=f"output directory (default: ${OUTPUT_ENV} or .)")
    run.add_argument("--format", choices=("csv", "jsonl"), default=None)
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--node-budget", type=int, default=DEFAULT_NODE_BUDGET)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        cfg = parse_config(text, str(path))
        if args.seed is not None:
            cfg.seed = args.seed
        if args.format is not None:
            cfg.format = args.format
        if args.threads < 1 or args.node_budget < 1:
            raise ConfigError("--threads and --node-budget must be positive")
        out = Path(args.out or cfg.out_dir or os.environ.get(OUTPUT_ENV) or ".")
        start = time.perf_counter()
        rows, bundle = run_experiment(cfg, args.threads, args.node_budget)
        elapsed = time.perf_counter() - start
        try:
            paths = emit_report(rows, bundle, out, cfg.id, cfg.format)
            (out / f"{cfg.id}.timing.json").write_text(json.dumps({"seconds": elapsed}) + "\n")
        except OSError as exc:
            raise ConfigError(f"cannot write to {out}: {exc.strerror}") from None
    except (ConfigError, LatticeError, SolverError, ValueError, OverflowError) as exc:
        print(f"qbsde: error: {exc}", file=sys.stderr)
        return 2
    failed = [r for r in rows if not r["pass"]]
    print(f"{cfg.id}: {len(rows) - len(failed)}/{len(rows)} checks passed -> {paths[0]}")
    if failed:
        for r in failed[:10]:
            print(f"  FAIL {r['check_name']} [{r['n_or_p']}] left={fmt(r['left'])} right={fmt(r['right'])}",
                  file=sys.stderr)
        return 1
    return 0
