"""Command-line runner: ``gibbslimit run <config.json>`` and ``gibbslimit list``.

A config is one flat JSON object: ``experiment``, optional ``seed`` and
``out``, plus that experiment's parameters.  Every run writes
``manifest.json`` next to its outputs, also when the run fails.

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 config error,
3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
import traceback
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__, rng
from .errors import ConfigError, IOFailure
from .experiments import REGISTRY

OUT_ENV = "GIBBSLIMIT_OUT"
DEFAULT_OUT = "gibbslimit-out"
RESERVED = ("experiment", "seed", "out")


# ---------------------------------------------------------------- serialization


def fmt_float(x: float) -> str:
    """17 significant digits; non-finite values as ``inf``/``-inf``/``nan``."""
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _plain(obj: Any) -> Any:
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    return obj


def dumps(obj: Any, indent: int = 0) -> str:
    """JSON with every float written to 17 significant digits.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
    """
    obj = _plain(obj)
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        s = fmt_float(obj)
        return s if math.isfinite(obj) else json.dumps(s)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(_plain(v), (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _cell(v: Any) -> str:
    v = _plain(v)
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


class Sink:
    """Writes experiment outputs into one directory and remembers them."""

    def __init__(self, out: Path):
        self.out = out
        self.files: list[str] = []

    def _write(self, name: str, text: str) -> None:
        path = self.out / name
        try:
            path.write_text(text, encoding="utf-8")
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc
        if name not in self.files:
            self.files.append(name)

    def json(self, name: str, obj: Any) -> None:
        self._write(name, dumps(obj) + "\n")

    def csv_rows(self, name: str, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in rows:
            w.writerow([_cell(v) for v in r])
        self._write(name, buf.getvalue())

    def csv(self, name: str, columns: dict[str, Any]) -> None:
        names = list(columns)
        cols = [np.asarray(columns[k]) for k in names]
        n = len(cols[0])
        if any(len(c) != n for c in cols):
            raise ValueError("CSV columns differ in length")
        self.csv_rows(name, [names, *([c[i] for c in cols] for i in range(n))])


# ---------------------------------------------------------------- config


def _type_ok(value: Any, kind) -> bool:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    for k in kinds:
        if k is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return True
        if k is int and isinstance(value, int) and not isinstance(value, bool):
            return True
        if k is type(None) and value is None:
            return True
        if k in (str, bool, list) and isinstance(value, k):
            return True
    return False


def resolve_config(raw: dict[str, Any], seed: int | None = None) -> dict[str, Any]:
    """Validate a config against its experiment schema and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    name = raw.get("experiment")
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; choose one of {sorted(REGISTRY)}")
    exp = REGISTRY[name]
    unknown = sorted(set(raw) - set(exp.params) - set(RESERVED))
    if unknown:
        raise ConfigError(f"unknown keys for {name}: {unknown}")
    resolved: dict[str, Any] = {"experiment": name}
    s = raw.get("seed", 0) if seed is None else seed
    if not (isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {s!r}")
    resolved["seed"] = s
    params = {}
    for key, spec in exp.params.items():
        value = raw.get(key, spec.default)
        if not _type_ok(value, spec.kind):
            raise ConfigError(f"{name}.{key} has the wrong type: {value!r}")
        if (spec.kind is float or spec.kind == (float,)) and isinstance(value, int):
            value = float(value)
        params[key] = value
    resolved["params"] = params
    return resolved


def run(
    config: dict[str, Any], out: str | os.PathLike | None = None, seed: int | None = None, workers: int = 1
) -> tuple[int, dict]:
    """Run one experiment; returns (exit code, manifest)."""
    t0 = time.perf_counter()
    out_dir = Path(out or (config.get("out") if isinstance(config, dict) else None) or os.environ.get(OUT_ENV, DEFAULT_OUT))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOFailure(f"cannot create output directory {out_dir}: {exc}") from exc
    sink = Sink(out_dir)
    manifest: dict[str, Any] = {
        "version": __version__,
        "rng": rng.ALGORITHM,
        "config": config,
        "workers": workers,
        "outputs": [],
        "assertions": [],
        "status": "error",
        "error": None,
    }
    code = 3
    try:
        resolved = resolve_config(config, seed)
        manifest["config"] = resolved
        exp = REGISTRY[resolved["experiment"]]
        checks = exp.run(resolved["params"], resolved["seed"], workers, sink)
        manifest["assertions"] = [{"name": n, "passed": ok, "detail": d} for n, ok, d in checks]
        passed = all(ok for _, ok, _ in checks)
        manifest["status"] = "pass" if passed else "fail"
        code = 0 if passed else 1
    except ConfigError as exc:
        manifest["error"] = {"type": "ConfigError", "message": str(exc)}
        code = 2
    except Exception as exc:  # surfaced in the manifest with its class name
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
        code = 3
    manifest["outputs"] = list(sink.files)
    manifest["wall_clock_s"] = time.perf_counter() - t0
    try:
        (out_dir / "manifest.json").write_text(dumps(manifest) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IOFailure(f"cannot write manifest: {exc}") from exc
    return code, manifest


def list_experiments() -> list[dict[str, Any]]:
    rows = []
    for name, exp in REGISTRY.items():
        rows.append(
            {
                "experiment": name,
                "anchor": exp.anchor,
                "params": {
                    k: {"default": p.default, "doc": p.doc} for k, p in exp.params.items()
                },
            }
        )
    return rows


def _table(rows) -> str:
    lines = []
    width = max(len(r["experiment"]) for r in rows)
    for r in rows:
        keys = ", ".join(f"{k}={v['default']!r}" for k, v in r["params"].items())
        lines.append(f"{r['experiment']:<{width}}  {r['anchor']}")
        lines.append(f"{'':<{width}}    {keys}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="gibbslimit", description="Run conditional-limit experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="path to the JSON config")
    p_run.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    p_run.add_argument("--seed", type=int, help="override the config seed")
    p_run.add_argument("--workers", type=int, default=1, help="worker processes for replica-level work")
    p_list = sub.add_parser("list", help="list experiments and their parameters")
    p_list.add_argument("--json", action="store_true", help="emit JSON")
    args = parser.parse_args(argv)

    if args.command == "list":
        rows = list_experiments()
        print(dumps(rows) if args.json else _table(rows))
        return 0

    try:
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        config = {"unreadable": str(args.config)}
        out_dir = Path(args.out or os.environ.get(OUT_ENV, DEFAULT_OUT))
        out_dir.mkdir(parents=True, exist_ok=True)
        manifest = {
            "version": __version__, "rng": rng.ALGORITHM, "config": config, "outputs": [], "assertions": [],
            "status": "error", "error": {"type": "ConfigError", "message": str(exc)},
        }
        (out_dir / "manifest.json").write_text(dumps(manifest) + "\n", encoding="utf-8")
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        code, manifest = run(config, args.out, args.seed, max(1, args.workers))
    except IOFailure as exc:
        print(f"IOFailure: {exc}", file=sys.stderr)
        return 3
    for a in manifest["assertions"]:
        print(f"{'PASS' if a['passed'] else 'FAIL'}  {a['name']}: {a['detail']}")
    if manifest["error"]:
        print(f"{manifest['error']['type']}: {manifest['error']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
