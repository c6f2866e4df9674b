"""``relent-lab`` command line: config parsing, dispatch and output files."""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import io
import csv
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from . import __version__
from .errors import ConfigError, RelentError
from .experiments import ExperimentConfig, ExperimentReport, run
from .hypotheses import worker_count
from .systems import SYSTEM_KINDS

log = logging.getLogger("relent_lab")

COMMANDS = ("audit", "solve", "identity", "stability", "convergence", "weakstrong")
EXIT_CODES = {"pass": 0, "fail": 1, "inconclusive": 2, "error": 3}

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_VEC = {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}, "minItems": 1}]}

_SYSTEM = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": list(SYSTEM_KINDS)},
        "kappa": _POS,
        "gamma": {"type": "number", "exclusiveMinimum": 1},
        "rho_min": _POS,
        "a_profile": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["constant", "sin"]}, "amplitude": _NUM,
                           "mean": _POS}},
        "kernel": {
            "type": "object", "additionalProperties": False,
            "properties": {"kind": {"enum": ["exp"]}, "rate": _POS}},
        "kernel_T": _POS,
        "kernel_dt": _POS,
        "flux": {"enum": ["burgers", "linear"]},
        "base": {"$ref": "#/$defs/system"},
        "amplitude": _NUM,
        "t_amplitude": _NUM,
    },
}

_PRESET = {
    "type": "object", "additionalProperties": False, "required": ["kind"],
    "properties": {
        "kind": {"enum": ["constant", "sine", "gaussian-bump", "two-state-smooth", "phased_sine"]},
        "value": _VEC, "base": _VEC, "amplitude": _VEC, "phase": _VEC, "k": {"type": "integer"},
        "center": _NUM, "width": _POS, "left": _VEC, "right": _VEC, "speed": _NUM,
    },
}

SCHEMA = {
    "$defs": {"system": _SYSTEM},
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "version": {"type": ["integer", "string"]},
        "command": {"enum": list(COMMANDS)},
        "system": {"$ref": "#/$defs/system"},
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "grid": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "N": {"type": "array", "minItems": 1,
                      "items": {"type": "integer", "minimum": 8}},
                "L": _POS}},
        "solver": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "array", "minItems": 1, "items": _NONNEG},
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "scheme": {"enum": ["central", "llf"]},
                "integrator": {"enum": ["ssp-rk2", "rk4"]},
                "t_end": _NONNEG,
                "newton_tol": _POS,
                "newton_iters": {"type": "integer", "minimum": 1},
                "n_snapshots": {"type": "integer", "minimum": 2},
                "dt_factor": _POS,
                "snapshot_every": {"type": "integer", "minimum": 1},
                "dt_cap": _POS}},
        "experiment": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "initial": _PRESET, "target": _PRESET,
                "perturbation": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"center": _NUM, "width": _POS,
                                   "component": {"type": "integer", "minimum": 0}}},
                "delta": _NONNEG, "n_states": {"type": "integer", "minimum": 1},
                "n_points": {"type": "integer", "minimum": 1}, "T": _NONNEG, "p": _POS,
                "h2_tol": _POS, "M": _POS,
                "box": {"type": "array", "minItems": 2, "maxItems": 2,
                        "items": {"type": "array", "items": _NUM}},
                "shell_radii": {"type": "array", "minItems": 4, "items": _POS},
                "ratio_cap": _POS, "gronwall_tol": _NONNEG, "min_order": _NUM,
                "d_tol": _NONNEG,
                "slope_window": {"type": "array", "minItems": 2, "maxItems": 2, "items": _NUM},
                "grid_tol": _POS, "max_N": {"type": "integer", "minimum": 8},
                "mismatch": _NUM, "plateau_tol": _POS,
                "reference_factor": {"type": "integer", "minimum": 2},
                "tol_factor": _POS, "shock_growth": _POS}},
    },
}

@dataclass
class RunConfig:
    version: object
    command: Optional[str]
    system: dict
    solver: dict
    grid: dict
    experiment: dict
    seed: int = 0
    output: Optional[str] = None
    duplicates: list = field(default_factory=list, compare=False)

    def to_dict(self):
        out = {"version": self.version, "command": self.command, "system": self.system,
               "solver": self.solver, "grid": self.grid, "experiment": self.experiment,
               "seed": self.seed}
        if out["command"] is None:
            del out["command"]
        if self.output is not None:
            out["output"] = self.output
        return out

    def echo(self):
        d = self.to_dict()
        d["duplicate_keys"] = list(self.duplicates)
        return d

    def experiment_config(self):
        return ExperimentConfig(kind=self.command, system=self.system, grid=self.grid,
                                solver=self.solver, experiment=self.experiment, seed=self.seed)


def _json_path(parts):
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out or "."


def _load_json(text):
    """Parse JSON, keeping the last value of duplicated keys and recording
    their paths."""
    dups = []

    def hook(pairs):
        seen = {}
        for k, v in pairs:
            if k in seen:
                dups.append(k)
            seen[k] = v
        return seen

    try:
        data = json.loads(text, object_pairs_hook=hook)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})",
                          ".") from None
    return data, dups


def serialize(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2)


def _fill_defaults(data, command):
    filled = ExperimentConfig(kind=command, system=data["system"], grid=data.get("grid", {}),
                              solver=data.get("solver", {}),
                              experiment=data.get("experiment", {})).filled()
    return filled.solver, filled.grid, filled.experiment


def parse_config(text: str, command: Optional[str] = None,
                 overrides: Optional[dict] = None) -> RunConfig:
    """Validate a JSON run configuration and fill defaults.

    Raises :class:`ConfigError` whose path names the offending key, e.g.
    ``.solver.epsilon[0]``.
    """
    data, dups = _load_json(text)
    if not isinstance(data, dict):
        raise ConfigError("top level must be a JSON object", ".")
    for key, value in (overrides or {}).items():
        _set_path(data, key, value)
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data),
                    key=lambda e: (len(e.absolute_path), [str(p) for p in e.absolute_path]))
    if errors:
        err = errors[0]
        path = _json_path(list(err.absolute_path))
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            if extra:
                path = _json_path(list(err.absolute_path) + [extra[0]])
                raise ConfigError(f"unknown key '{extra[0]}'", path)
        raise ConfigError(err.message, path)
    cmd = command or data.get("command")
    if command and data.get("command") and data["command"] != command:
        log.info("command line selects %r over config command %r", command, data["command"])
    solver, grid, experiment = _fill_defaults(data, cmd)
    if cmd == "convergence" and len(solver.get("epsilon", [])) < 3:
        raise ConfigError("convergence needs at least 3 epsilon values", ".solver.epsilon")
    return RunConfig(version=data.get("version", 1), command=cmd, system=data["system"],
                     solver=solver, grid=grid, experiment=experiment,
                     seed=int(data.get("seed", 0)), output=data.get("output"),
                     duplicates=dups)


def _set_path(data, dotted, value):
    keys = dotted.split(".")
    cur = data
    for k in keys[:-1]:
        nxt = cur.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            cur[k] = nxt
        cur = nxt
    cur[keys[-1]] = value


def parse_overrides(items):
    """``key=value`` strings; values are JSON when they parse, else strings."""
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", ".")
        k, v = item.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v
    return out


# ---------------------------------------------------------------------------
# outputs

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def csv_text(rows, columns=None):
    """CSV with a header row; floats use the shortest round-trip repr."""
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


_PLOT_TEMPLATE = '''"""Plot {name} from {csv}. Requires matplotlib."""
import csv
import matplotlib.pyplot as plt

with open("{csv}") as fh:
    rows = list(csv.DictReader(fh))
x = [float(r["{x}"]) for r in rows]
fig, ax = plt.subplots()
for col in {ys!r}:
    ax.plot(x, [abs(float(r[col])) if {log} else float(r[col]) for r in rows], "o-", label=col)
if {log}:
    ax.set_xscale("log")
    ax.set_yscale("log")
ax.set_xlabel("{x}")
ax.legend()
fig.savefig("{name}.png", dpi=150)
'''


def _sha256(data: bytes):
    return hashlib.sha256(data).hexdigest()


def emit_outputs(report: ExperimentReport, outdir, config_echo=None, metadata=None):
    """Write report.json, one CSV per series, plot scripts and manifest.json.

    Returns the manifest (list of ``{path, sha256, bytes}``).
    """
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RelentError(f"cannot create output directory {out}: {exc}") from exc
    files = {}
    series_files = []
    for name in sorted(report.series):
        fname = f"{name}.csv"
        data = report.series[name]
        if isinstance(data, dict):  # {"columns": [...], "rows": [...]}
            files[fname] = csv_text(data.get("rows", []), data.get("columns")).encode()
        else:
            files[fname] = csv_text(data).encode()
        series_files.append(fname)
    for fig in report.figures:
        if fig["series"] not in report.series:
            continue
        fname = f"plot_{fig['name']}.py"
        files[fname] = _PLOT_TEMPLATE.format(name=fig["name"], csv=f"{fig['series']}.csv",
                                             x=fig["x"], ys=list(fig["y"]),
                                             log=bool(fig["log"])).encode()
    body = {
        "command": report.kind,
        "verdict": report.verdict,
        "exit_code": EXIT_CODES.get(report.verdict, 3),
        "config": config_echo if config_echo is not None else report.inputs,
        "results": report.results,
        "notes": report.notes,
        "series_files": series_files,
        "plot_scripts": sorted(f for f in files if f.startswith("plot_")),
    }
    files["report.json"] = (json.dumps(_clean(body), indent=2) + "\n").encode()
    if metadata is not None:
        files["metadata.json"] = (json.dumps(_clean(metadata), indent=2) + "\n").encode()
    manifest = []
    for fname in sorted(files):
        try:
            (out / fname).write_bytes(files[fname])
        except OSError as exc:
            raise RelentError(f"cannot write {out / fname}: {exc}") from exc
        manifest.append({"path": fname, "sha256": _sha256(files[fname]),
                         "bytes": len(files[fname])})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    report.artifacts = [m["path"] for m in manifest]
    return manifest


# ---------------------------------------------------------------------------
# dispatch

def dispatch(config: RunConfig, outdir=None) -> int:
    """Run the configured command, write outputs, return the exit status."""
    outdir = outdir or config.output or os.path.join("relent-out", config.command or "run")
    started = time.time()
    meta = {"timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "version": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "threads": worker_count()}
    try:
        report = run(config.experiment_config())
    except ConfigError:
        raise
    except Exception as exc:  # runtime failure after computation started
        log.error("runtime error: %s", exc)
        report = ExperimentReport(config.command or "run", config.echo(), verdict="error",
                                  notes=[f"{type(exc).__name__}: {exc}"])
        meta["wall_seconds"] = time.time() - started
        emit_outputs(report, outdir, config.echo(), meta)
        return 3
    meta["wall_seconds"] = time.time() - started
    emit_outputs(report, outdir, config.echo(), meta)
    log.info("%s: %s -> %s", config.command, report.verdict, outdir)
    return EXIT_CODES.get(report.verdict, 3)


def build_parser():
    p = argparse.ArgumentParser(prog="relent-lab",
                                description="Relative entropy experiments for balance laws.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="path to a JSON run configuration")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config entry, e.g. solver.cfl=0.3")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        overrides = parse_overrides(args.set)
        if args.seed is not None:
            overrides["seed"] = args.seed
        cfg = parse_config(text, command=args.command, overrides=overrides)
        code = dispatch(cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 3
    except (OSError, RelentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    verdict = {v: k for k, v in EXIT_CODES.items()}.get(code, "error")
    print(f"{args.command}: {verdict} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
