"""Command line entry point: ``pathweaver <command> [--config PATH] [--key value ...]``.

Configs are flat ``key = value`` files (``#`` starts a comment). Lists are
comma separated. Command line ``--key value`` pairs override the file. Every
run writes ``<command>.csv`` and ``manifest.txt`` to ``--out``.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from pathlib import Path

from . import __version__
from .experiments import COLUMNS, COMMANDS, DEFAULTS, SCHEMA_VERSIONS, SYSTEMS, cmd_generate_data
from .parallel import ENV_WORKERS, resolve_workers

COMMON = ("seed", "workers", "out")


class ConfigError(ValueError):
    def __init__(self, message, line=None, source=None):
        where = f"{source or '<config>'}:{line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


def parse_config_text(text: str, source: str | None = None) -> dict:
    """``key = value`` lines to a dict of raw strings; errors carry line numbers."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not key.replace("_", "").isalnum():
            raise ConfigError(f"invalid key {key!r}", lineno, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        out[key] = (value, lineno)
    return out


def _convert(key, raw, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if not items:
            raise ValueError(f"{key}: empty list")
        kind = type(default[0]) if default else str
        return tuple(_convert(key, s, kind()) for s in items)
    if isinstance(default, int):
        return int(raw, 0)
    if isinstance(default, float):
        value = float(raw)
        if not math.isfinite(value):
            raise ValueError(f"{key}: expected a finite number, got {raw!r}")
        return value
    return raw


def resolve_config(command: str, file_values: dict | None = None, overrides: dict | None = None, source=None) -> dict:
    """Defaults, then the config file, then command line overrides, all type checked."""
    defaults = dict(DEFAULTS[command], seed=0, workers=resolve_workers(None), out=f"runs/{command}")
    config = dict(defaults)
    for key, (raw, lineno) in (file_values or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown key {key!r} for {command}", lineno, source)
        try:
            config[key] = _convert(key, raw, defaults[key])
        except ValueError as exc:
            raise ConfigError(str(exc), lineno, source) from None
    for key, raw in (overrides or {}).items():
        if key not in defaults:
            raise ConfigError(f"unknown option --{key} for {command}")
        try:
            config[key] = _convert(key, raw, defaults[key])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    if not 0 <= config["seed"] < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    if config["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if command == "generate-data" and config["system"] not in SYSTEMS:
        line = (file_values or {}).get("system", (None, None))[1] if "system" not in (overrides or {}) else None
        raise ConfigError(f"unknown system {config['system']!r}; choose from {', '.join(sorted(SYSTEMS))}", line, source)
    return config


def _format(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    return str(value)


def write_csv(path, columns, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row[c]) for c in columns])


def write_manifest(path, command, config, summary=None, elapsed=None):
    """``key = value`` text; the config part can be fed back with ``--config``."""
    lines = [
        f"# pathweaver {__version__}",
        f"# command = {command}",
        f"# schema_version = {SCHEMA_VERSIONS[command]}",
        f"# columns = {','.join(COLUMNS[command])}",
    ]
    if elapsed is not None:
        lines.append(f"# elapsed_seconds = {elapsed:.3f}")
    for key, value in sorted((summary or {}).items()):
        lines.append(f"# summary.{key} = {_format(value)}")
    for key in sorted(config):
        if key != "out":
            lines.append(f"{key} = {_format(config[key])}")
    Path(path).write_text("\n".join(lines) + "\n")


def _split_overrides(extra):
    overrides, i = {}, 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError(f"option --{key} needs a value")
        overrides[key] = value
    return overrides


def build_parser():
    parser = argparse.ArgumentParser(prog="pathweaver", description="Path-space importance sampling experiments.")
    parser.add_argument("--version", action="version", version=f"pathweaver {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", type=Path, help="key = value file")
        p.add_argument("--seed", help="64-bit unsigned seed")
        p.add_argument("--workers", help=f"worker threads (default ${ENV_WORKERS} or 1)")
        p.add_argument("--out", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        overrides = _split_overrides(extra)
        for key in COMMON:
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        file_values, source = {}, None
        if args.config is not None:
            source = str(args.config)
            file_values = parse_config_text(args.config.read_text(), source)
        config = resolve_config(args.command, file_values, overrides, source)
    except (ConfigError, OSError) as exc:
        print(f"pathweaver: error: {exc}", file=sys.stderr)
        return 2
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    if args.command == "generate-data":
        report = cmd_generate_data(config, out)
    else:
        report = COMMANDS[args.command](config)
    elapsed = time.perf_counter() - start
    write_csv(out / f"{args.command}.csv", report.columns, report.rows)
    write_manifest(out / "manifest.txt", args.command, config, report.summary, elapsed)
    for key, value in sorted(report.summary.items()):
        print(f"{key} = {_format(value)}")
    print(f"wrote {out / (args.command + '.csv')} ({len(report.rows)} rows)")
    return 0
