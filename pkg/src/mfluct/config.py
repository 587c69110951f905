"""Run configuration files and bit-stable output.

A run is described by an INI document::

    [run]
    command = theory          ; theory | simulate | equilibrium | spectral | volterra | compare
    out = results

    [kernel]
    preset = one_plus_cos     ; one_plus_cos | constant | modes | gaussian
    ; modes = 0:6.283185307179586; 1:3.141592653589793; -1:3.141592653589793
    ; dim = 1, amplitude = 1, width = 1   (modes / gaussian presets)

    [experiment]
    beta = 2
    sign = 1
    ...

Wavevectors in ``modes`` are comma-separated integers (``1,0:2.5`` in 2-d);
``-k`` partners are added automatically.  Unknown sections or keys are
rejected.  Every accepted key and its default is listed in :data:`FIELDS`.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields
from pathlib import Path

COMMANDS = ("theory", "simulate", "equilibrium", "spectral", "volterra", "compare")
PRESETS = ("one_plus_cos", "constant", "modes", "gaussian")
POTENTIALS = ("zero", "harmonic")


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class ValidationError(ValueError):
    def __init__(self, field_name: str, reason: str, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field_name}: {reason}{where}")
        self.field = field_name
        self.reason = reason
        self.line = line


class OutputError(OSError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str = "theory"
    out: str = "results"
    # kernel
    preset: str = "one_plus_cos"
    dim: int = 1
    modes: tuple[tuple[tuple[int, ...], float], ...] = ()
    amplitude: float = 1.0
    width: float = 1.0
    # experiment
    beta: float = 2.0
    sign: int = 1
    particles: int = 2000
    dt: float = 1e-3
    t_final: float = 1.0
    record_times: tuple[float, ...] = (0.0, 1.0)
    domain: str = "torus"
    potential: str = "zero"
    stiffness: float = 1.0
    grid: int = 256
    half_width: float = 8.0
    truncation: int = 3
    damping: float = 0.5
    tol: float = 1e-10
    max_iter: int = 10_000
    replicas: int = 20
    seed: int = 0
    threads: int = 1
    block_size: int = 50
    paths: int = 200
    z_threshold: float = 3.0
    rel_tol: float | None = None

    def with_overrides(self, **kw) -> RunConfig:
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in kw.items() if v is not None})
        return validate(RunConfig(**values))


# section -> key -> field name
FIELDS: dict[str, tuple[str, ...]] = {
    "run": ("command", "out"),
    "kernel": ("preset", "dim", "modes", "amplitude", "width"),
    "experiment": (
        "beta", "sign", "particles", "dt", "t_final", "record_times", "domain", "potential",
        "stiffness", "grid", "half_width", "truncation", "damping", "tol", "max_iter",
        "replicas", "seed", "threads", "block_size", "paths", "z_threshold", "rel_tol",
    ),
}

_INT_FIELDS = {"dim", "sign", "particles", "grid", "truncation", "max_iter", "replicas", "seed", "threads",
               "block_size", "paths"}
_FLOAT_FIELDS = {"amplitude", "width", "beta", "dt", "t_final", "stiffness", "half_width", "damping", "tol",
                 "z_threshold", "rel_tol"}


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """``(section, key) -> 1-based line`` for locating validation errors."""
    out: dict[tuple[str, str], int] = {}
    section = ""
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
        elif line and line[0] not in "#;":
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
            out.setdefault((section, key), n)
    return out


def _parse_int(name: str, s: str) -> int:
    try:
        return int(s.strip())
    except ValueError:
        raise ValidationError(name, f"expected an integer, got {s!r}") from None


def _parse_float(name: str, s: str) -> float:
    try:
        return float(s.strip())
    except ValueError:
        raise ValidationError(name, f"expected a number, got {s!r}") from None


def _parse_modes(s: str, dim: int) -> tuple[tuple[tuple[int, ...], float], ...]:
    out = []
    for item in filter(None, (p.strip() for p in s.split(";"))):
        if ":" not in item:
            raise ValidationError("modes", f"entry {item!r} is not of the form k:weight")
        k, w = item.split(":", 1)
        try:
            kv = tuple(int(c) for c in k.split(","))
        except ValueError:
            raise ValidationError("modes", f"bad wavevector {k.strip()!r}") from None
        if len(kv) != dim:
            raise ValidationError("modes", f"wavevector {k.strip()!r} does not have dimension {dim}")
        out.append((kv, _parse_float("modes", w)))
    return tuple(out)


def _convert(name: str, raw: str, dim: int):
    if name == "rel_tol" and raw.strip().lower() in ("", "none"):
        return None
    if name in _INT_FIELDS:
        return _parse_int(name, raw)
    if name in _FLOAT_FIELDS:
        return _parse_float(name, raw)
    if name == "record_times":
        return tuple(_parse_float(name, p) for p in raw.split(",") if p.strip())
    if name == "modes":
        return _parse_modes(raw, dim)
    return raw.strip()


def _positive(cfg: RunConfig, names: Sequence[str]):
    for n in names:
        v = getattr(cfg, n)
        if not (v > 0 and math.isfinite(v)):
            raise ValidationError(n, "must be positive")


def validate(cfg: RunConfig, lines: Mapping[str, int] | None = None) -> RunConfig:
    """Raise :class:`ValidationError` for the first invalid field."""
    lines = lines or {}
    try:
        if cfg.command not in COMMANDS:
            raise ValidationError("command", f"must be one of {', '.join(COMMANDS)}")
        if cfg.preset not in PRESETS:
            raise ValidationError("preset", f"must be one of {', '.join(PRESETS)}")
        if cfg.dim < 1:
            raise ValidationError("dim", "must be positive")
        if cfg.preset == "modes" and not cfg.modes:
            raise ValidationError("modes", "preset 'modes' needs at least one mode")
        if cfg.preset != "modes" and cfg.modes:
            raise ValidationError("modes", "only allowed with preset = modes")
        _positive(cfg, ("amplitude", "width", "beta", "dt", "t_final", "stiffness", "half_width", "tol",
                        "z_threshold"))
        if cfg.sign not in (-1, 0, 1):
            raise ValidationError("sign", "must be +1, -1, or 0")
        for n in ("particles", "grid", "truncation", "max_iter", "replicas", "threads", "block_size", "paths"):
            if getattr(cfg, n) < 1:
                raise ValidationError(n, "must be positive")
        if cfg.particles < 2:
            raise ValidationError("particles", "need at least two particles")
        if cfg.replicas < 2:
            raise ValidationError("replicas", "need at least two replicas")
        if cfg.seed < 0 or cfg.seed >= 2**64:
            raise ValidationError("seed", "must be an unsigned 64-bit integer")
        if cfg.domain not in ("torus", "line"):
            raise ValidationError("domain", "must be 'torus' or 'line'")
        if cfg.potential not in POTENTIALS:
            raise ValidationError("potential", f"must be one of {', '.join(POTENTIALS)}")
        if not 0 < cfg.damping <= 1:
            raise ValidationError("damping", "must lie in (0, 1]")
        if cfg.rel_tol is not None and not cfg.rel_tol > 0:
            raise ValidationError("rel_tol", "must be positive")
        if cfg.dt > cfg.t_final:
            raise ValidationError("dt", "must not exceed t_final")
        rt = cfg.record_times
        if not rt or any(not math.isfinite(t) or t < 0 or t > cfg.t_final for t in rt):
            raise ValidationError("record_times", "need values in [0, t_final]")
        if any(b <= a for a, b in zip(rt, rt[1:])):
            raise ValidationError("record_times", "must be strictly increasing")
    except ValidationError as exc:
        if exc.line is None and exc.field in lines:
            raise ValidationError(exc.field, exc.reason, lines[exc.field]) from None
        raise
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate an INI run description; missing keys take defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("content before the first [section]", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(str(exc).split(": ", 1)[-1], exc.lineno) from None
    except configparser.ParsingError as exc:
        line = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", line) from None

    index = _line_index(text)
    lines: dict[str, int] = {}
    raw: dict[str, str] = {}
    for section in parser.sections():
        sec = section.lower()
        if sec not in FIELDS:
            line = next((n for n, s in enumerate(text.splitlines(), 1) if s.strip().lower() == f"[{sec}]"), None)
            raise ParseError(f"unknown section [{section}]", line)
        for key, value in parser.items(section):
            if key not in FIELDS[sec]:
                raise ParseError(f"unknown key {key!r} in [{sec}]", index.get((sec, key)))
            raw[key] = value
            lines[key] = index.get((sec, key))

    values = {}
    dim = _parse_int("dim", raw["dim"]) if "dim" in raw else RunConfig.dim
    for key, value in raw.items():
        try:
            values[key] = _convert(key, value, dim)
        except ValidationError as exc:
            raise ValidationError(exc.field, exc.reason, lines.get(key)) from None
    return validate(RunConfig(**values), lines)


def _fmt(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def serialize(cfg: RunConfig) -> str:
    """Canonical INI text; ``parse_config(serialize(c)) == c``."""
    buf = io.StringIO()
    for section, names in FIELDS.items():
        buf.write(f"[{section}]\n")
        for n in names:
            v = getattr(cfg, n)
            if n == "modes":
                if not v:
                    continue
                v = "; ".join(",".join(str(c) for c in k) + ":" + _fmt(w) for k, w in v)
            elif n == "record_times":
                v = ", ".join(_fmt(t) for t in v)
            elif v is None:
                v = "none"
            buf.write(f"{n} = {_fmt(v)}\n")
        buf.write("\n")
    return buf.getvalue()


def config_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "modes":
            v = [[list(k), w] for k, w in v]
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def blob_hash(data: bytes) -> str:
    """Git-style object id: ``sha1(b"blob <len>\\0" + data)``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[Sequence] = field(default_factory=list)


@dataclass
class Results:
    """Tables keyed by CSV file stem plus a JSON-ready summary."""

    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _csv_cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    if math.isnan(f):
        return "nan"
    if math.isinf(f):
        return "inf" if f > 0 else "-inf"
    return format(f, ".17g")


def _json_clean(v):
    """Plain JSON types; non-finite floats become ``null``."""
    if isinstance(v, Mapping):
        return {str(k): _json_clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_clean(x) for x in v]
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return v
    if isinstance(v, int):
        return v
    if hasattr(v, "tolist"):
        return _json_clean(v.tolist())
    f = float(v)
    return f if math.isfinite(f) else None


def _write_bytes(path: Path, data: bytes):
    try:
        path.write_bytes(data)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_outputs(results: Results, directory: str | os.PathLike, cfg: RunConfig) -> list[str]:
    """Write one CSV per table and ``summary.json``; return the file names.

    CSV numbers carry 17 significant digits with ``\\n`` line endings.  The
    summary echoes the config and its git-style blob hash; nothing depends on
    the clock or the environment, so equal inputs give equal bytes.
    """
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create {out}: {exc.strerror or exc}") from exc
    manifest = []
    files = {}
    for name in sorted(results.tables):
        table = results.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_csv_cell(v) for v in row])
        data = buf.getvalue().encode("utf-8")
        fname = f"{name}.csv"
        _write_bytes(out / fname, data)
        files[fname] = blob_hash(data)
        manifest.append(fname)
    text = serialize(cfg)
    summary = {
        "command": cfg.command,
        "config": config_dict(cfg),
        "config_text": text,
        "input_hash": blob_hash(text.encode("utf-8")),
        "files": files,
        "results": results.summary,
    }
    data = (json.dumps(_json_clean(summary), indent=2, sort_keys=True, allow_nan=False) + "\n").encode("utf-8")
    _write_bytes(out / "summary.json", data)
    manifest.append("summary.json")
    return manifest
