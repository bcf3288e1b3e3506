"""Run configuration files, binary field snapshots and CSV/JSON outputs.

Configuration files are INI documents with the sections ``grid``,
``params``, ``potential``, ``initial``, ``evolve`` and ``experiment``.
Unknown keys are errors.  Every error carries the line and key it refers
to.  :func:`serialize_config` writes every key, defaults included, so
``parse -> serialize -> parse`` is a fixed point.

Snapshot layout (little endian)::

    "PSWF"  u32 version  u8 kind (0 wave, 1 density)  u32 nx  u32 np
    f64 x_min  f64 x_max  f64 p_min  f64 p_max  f64 time
    payload, x outer, p inner (wave: interleaved re/im)
"""

from __future__ import annotations

import configparser
import csv
import difflib
import io as _io
import math
import os
import re
import struct
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ConfigWavefunction,
    DensityField,
    NumericalError,
    PhaseGrid,
    PhysicalParams,
    PotentialSpec,
    PotentialTerm,
    ValidationError,
    WaveField,
    tabulated,
)
from .evolvers import SCHEMES, EvolveSpec
from .experiments import INITIAL_KINDS, KINDS, ExperimentConfig, InitialState, Knobs

__all__ = [
    "ConfigError",
    "ConfigErrors",
    "FormatError",
    "parse_config",
    "parse_config_with_defaults",
    "serialize_config",
    "load_config",
    "Snapshot",
    "write_field",
    "read_field",
    "read_snapshot",
    "encode_field",
    "decode_snapshot",
    "write_csv",
    "write_text",
    "atomic_write",
    "csv_text",
    "write_wavefunction_csv",
    "read_wavefunction_csv",
    "MAGIC",
    "FORMAT_VERSION",
]

MAGIC = b"PSWF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIBII5d")
_KIND_TAGS = {0: "wave", 1: "density"}


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConfigError:
    line: Optional[int]
    section: str
    key: Optional[str]
    reason: str

    def __str__(self):
        where = f"line {self.line}" if self.line else "config"
        loc = f"[{self.section}]" + (f" {self.key}" if self.key else "")
        return f"{where}: {loc}: {self.reason}"


class ConfigErrors(ValidationError):
    """All problems found in one configuration document."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(str(e) for e in self.errors))


class FormatError(ValidationError):
    """Malformed snapshot file."""


REQUIRED = object()


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _floats(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    return tuple(float(p) for p in parts)


def _components(text: str) -> tuple:
    out = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        n, _, c = part.partition(":")
        if not c:
            raise ValueError(f"component {part!r} must look like n:amplitude")
        out.append((int(n), float(c)))
    return tuple(out)


_TERM = re.compile(r"^\s*([a-z_]+)\s*(?:\((.*)\))?\s*$", re.S)


def _term(text: str, base_dir: Optional[Path] = None) -> Optional[PotentialTerm]:
    m = _TERM.match(text)
    if not m:
        raise ValueError(f"cannot read potential term {text!r}; expected kind(c1, c2, ...)")
    kind, args = m.group(1), (m.group(2) or "").strip()
    if kind == "none":
        return None
    if kind == "tabulated":
        try:
            values = _floats(args)
        except ValueError:
            path = Path(args)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            values = np.loadtxt(path, ndmin=1)
        return tabulated(values)
    coeffs = _floats(args) if args else ()
    return PotentialTerm(kind, coeffs)


def _fmt_float(v: float) -> str:
    return repr(float(v))


def _fmt_term(term: Optional[PotentialTerm]) -> str:
    if term is None:
        return "none"
    if term.kind == "tabulated":
        return "tabulated(" + ", ".join(_fmt_float(v) for v in term.table) + ")"
    if not term.coeffs:
        return term.kind
    return f"{term.kind}(" + ", ".join(_fmt_float(c) for c in term.coeffs) + ")"


def _nonneg(v):
    return None if v >= 0 else "must be >= 0"


def _pos(v):
    return None if v > 0 else "must be > 0"


def _posint(v):
    return None if v >= 1 else "must be >= 1"


def _one_of(options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"
    return check


def _finite(v):
    return None if math.isfinite(v) else "must be finite"


def _all(check):
    def inner(vals):
        for v in vals:
            msg = check(v)
            if msg:
                return "entries " + msg
        return None
    return inner


# section -> key -> (parser, formatter, default, check)
_F = (float, _fmt_float)
_I = (int, str)
_B = (_bool, lambda v: "true" if v else "false")
_S = (str.strip, str)
_FL = (_floats, lambda vs: ", ".join(_fmt_float(v) for v in vs))

SCHEMA = {
    "grid": {
        "nx": (*_I, REQUIRED, _posint),
        "np": (*_I, REQUIRED, _posint),
        "x_min": (*_F, REQUIRED, _finite),
        "x_max": (*_F, REQUIRED, _finite),
        "p_min": (*_F, REQUIRED, _finite),
        "p_max": (*_F, REQUIRED, _finite),
    },
    "params": {
        "hbar": (*_F, 1.0, _pos),
        "mass": (*_F, 1.0, _pos),
        "kT": (*_F, 1.0, _nonneg),
        "gamma": (*_F, 0.0, _nonneg),
        "rest_energy": (*_F, 0.0, _nonneg),
        "a": (*_F, 0.0, _nonneg),
        "b": (*_F, 0.0, _nonneg),
        "include_rest_phase": (*_B, False, None),
    },
    "potential": {
        "base": (_term, _fmt_term, PotentialTerm("zero"), None),
        "drive": (_term, _fmt_term, None, None),
        "omega": (*_F, 0.0, _nonneg),
    },
    "initial": {
        "kind": (*_S, "gaussian", _one_of(INITIAL_KINDS)),
        "x0": (*_F, 0.0, _finite),
        "p0": (*_F, 0.0, _finite),
        "sigma": (*_F, 1.0, _pos),
        "n": (*_I, 0, _nonneg),
        "components": (_components, lambda cs: ", ".join(f"{n}:{_fmt_float(c)}" for n, c in cs), (), None),
        "path": (*_S, "", None),
    },
    "evolve": {
        "dt": (*_F, REQUIRED, _pos),
        "t_final": (*_F, REQUIRED, _nonneg),
        "scheme": (*_S, "strang", _one_of(SCHEMES)),
        "snapshot_stride": (*_I, 1, _posint),
        "renormalize": (*_B, False, None),
    },
    "experiment": {
        "kind": (*_S, "evolve", _one_of(("evolve",) + KINDS)),
        "model": (*_S, "modified", _one_of(("modified", "legacy"))),
        "gamma_sweep": (*_FL, (5.0, 10.0, 20.0), _all(_pos)),
        "ab_factors": (*_FL, (1.0, 2.0), _all(_pos)),
        "perturbation": (*_F, 0.3, _finite),
        "fit_window": (*_F, 3.0, _pos),
        "fit_samples": (*_I, 60, lambda v: None if v >= 4 else "must be >= 4"),
        "gamma_factor": (*_F, 2.0, lambda v: None if v > 1 else "must be > 1"),
        "sigma_fit": (*_FL, (0.0, 0.1, 0.2, 0.3), _all(_nonneg)),
        "agreement_tol": (*_F, 0.05, _pos),
        "u": (*_F, 1.0, _finite),
        "galileo_refine": (*_B, False, None),
        "gauge_seed": (*_I, 0, _nonneg),
        "gauge_count": (*_I, 3, _posint),
        "omega_sweep": (*_FL, (0.0, 5.0, 20.0, 80.0), _all(_nonneg)),
        "eigen_sigma": (*_F, 0.0, _nonneg),
        "controls": (*_B, True, None),
    },
}

_SECTION_LINE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_LINE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _locate(text: str) -> dict:
    """Map ``section`` and ``(section, key)`` to 1-based line numbers."""
    where, section = {}, None
    for i, line in enumerate(text.splitlines(), 1):
        if line.lstrip().startswith(("#", ";")):
            continue
        m = _SECTION_LINE.match(line)
        if m:
            section = m.group(1).strip()
            where.setdefault(section, i)
            continue
        m = _KEY_LINE.match(line)
        if m and section is not None and not line[:1].isspace():
            where.setdefault((section, m.group(1).strip()), i)
    return where


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="__defaults__",
                                   inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (kT)
    return cp


def parse_config_with_defaults(text: str, base_dir=None) -> tuple[ExperimentConfig, list[str]]:
    """Parse and validate; also return ``section.key`` for every defaulted key."""
    base_dir = Path(base_dir) if base_dir is not None else None
    where = _locate(text)
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigErrors([ConfigError(line, getattr(exc, "section", "?") or "?", None,
                                        exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc))])
    errors, values, defaulted = [], {}, []
    for section in cp.sections():
        if section not in SCHEMA:
            errors.append(ConfigError(where.get(section), section, None,
                                      f"unknown section; expected one of {', '.join(SCHEMA)}"))
    for section, schema in SCHEMA.items():
        got = cp[section] if cp.has_section(section) else {}
        for key in got:
            if key not in schema:
                hint = difflib.get_close_matches(key, list(schema), n=1, cutoff=0.7)
                extra = f" (did you mean {hint[0]!r}?)" if hint else ""
                errors.append(ConfigError(where.get((section, key)), section, key, f"unknown key{extra}"))
        vals = values.setdefault(section, {})
        for key, (parse, _, default, check) in schema.items():
            line = where.get((section, key), where.get(section))
            if key not in got:
                if default is REQUIRED:
                    errors.append(ConfigError(where.get(section), section, key, "missing required key"))
                else:
                    vals[key] = default
                    defaulted.append(f"{section}.{key}")
                continue
            raw = got[key]
            try:
                v = parse(raw, base_dir) if parse is _term else parse(raw)
            except (ValueError, ValidationError, OSError) as exc:
                errors.append(ConfigError(line, section, key, f"invalid value {raw!r}: {exc}"))
                continue
            msg = check(v) if check else None
            if msg:
                errors.append(ConfigError(line, section, key, f"{key} {msg}"))
                continue
            vals[key] = v
    if errors:
        raise ConfigErrors(errors)
    cfg = _build(values, where)
    return cfg, defaulted


def _build(values: dict, where: dict) -> ExperimentConfig:
    def attempt(section, fn):
        try:
            return fn()
        except ValidationError as exc:
            raise ConfigErrors([ConfigError(where.get(section), section, None, str(exc))]) from None

    g = values["grid"]
    grid = attempt("grid", lambda: PhaseGrid(g["nx"], g["np"], g["x_min"], g["x_max"], g["p_min"], g["p_max"]))
    params = attempt("params", lambda: PhysicalParams(**values["params"]))
    pv = values["potential"]
    potential = attempt("potential", lambda: PotentialSpec(pv["base"], pv["drive"], pv["omega"]))
    iv = dict(values["initial"])
    iv["path"] = iv["path"] or None
    initial = attempt("initial", lambda: InitialState(**iv))
    evolve = attempt("evolve", lambda: EvolveSpec(**values["evolve"]))
    kv = dict(values["experiment"])
    kind = kv.pop("kind")
    knobs = attempt("experiment", lambda: Knobs(**kv))
    return attempt("experiment", lambda: ExperimentConfig(kind, grid, params, potential, initial, evolve, knobs))


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Parse a configuration document; raises :class:`ConfigErrors` listing every problem."""
    return parse_config_with_defaults(text, base_dir)[0]


def load_config(path) -> tuple[ExperimentConfig, list[str]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigErrors([ConfigError(None, "file", None, f"cannot read {path}: {exc.strerror}")])
    return parse_config_with_defaults(text, path.parent)


def serialize_config(cfg: ExperimentConfig, defaulted=()) -> str:
    """Every key of every section; keys listed in ``defaulted`` get a ``# default`` comment."""
    init = cfg.initial
    sections = {
        "grid": dict(nx=cfg.grid.n_x, np=cfg.grid.n_p, x_min=cfg.grid.x_min, x_max=cfg.grid.x_max,
                     p_min=cfg.grid.p_min, p_max=cfg.grid.p_max),
        "params": {f.name: getattr(cfg.params, f.name) for f in fields(cfg.params)},
        "potential": dict(base=cfg.potential.base, drive=cfg.potential.drive, omega=cfg.potential.omega),
        "initial": dict(kind=init.kind, x0=init.x0, p0=init.p0, sigma=init.sigma, n=init.n,
                        components=init.components, path=init.path or ""),
        "evolve": {f.name: getattr(cfg.evolve, f.name) for f in fields(cfg.evolve)},
        "experiment": dict(kind=cfg.kind, **{f.name: getattr(cfg.knobs, f.name) for f in fields(cfg.knobs)}),
    }
    marks = set(defaulted)
    out = []
    for section, vals in sections.items():
        out.append(f"[{section}]")
        for key, (_, fmt, _, _) in SCHEMA[section].items():
            line = f"{key} = {fmt(vals[key])}"
            if f"{section}.{key}" in marks:
                line += "  # default"
            out.append(line)
        out.append("")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    """Raw file content; ``flags`` lists diagnostics such as ``nonfinite_payload``."""

    kind: str
    grid: PhaseGrid
    time: float
    values: np.ndarray
    flags: list = field(default_factory=list)

    def to_field(self):
        if "nonfinite_payload" in self.flags:
            raise NumericalError("snapshot payload contains non-finite values")
        cls = WaveField if self.kind == "wave" else DensityField
        return cls(self.grid, self.values, self.time)


def encode_field(f) -> bytes:
    if isinstance(f, WaveField):
        tag, payload = 0, np.ascontiguousarray(f.values, dtype="<c16")
    elif isinstance(f, DensityField):
        tag, payload = 1, np.ascontiguousarray(f.values, dtype="<f8")
    else:
        raise ValidationError(f"cannot store {type(f).__name__}")
    g = f.grid
    head = _HEADER.pack(MAGIC, FORMAT_VERSION, tag, g.n_x, g.n_p, g.x_min, g.x_max, g.p_min, g.p_max, f.time)
    return head + payload.tobytes()


def write_field(path, f) -> None:
    """Write a wave or density field atomically."""
    atomic_write(path, encode_field(f))


def decode_snapshot(data: bytes, source: str = "<bytes>") -> Snapshot:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated header: expected {_HEADER.size} bytes, got {len(data)}")
    magic, version, tag, nx, np_, x0, x1, p0, p1, t = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{source}: unsupported format version {version} (reader handles {FORMAT_VERSION})")
    if tag not in _KIND_TAGS:
        raise FormatError(f"{source}: unknown kind tag {tag}")
    width = 2 if tag == 0 else 1
    expected = _HEADER.size + nx * np_ * width * 8
    if len(data) != expected:
        raise FormatError(f"{source}: payload size mismatch: expected {expected} bytes, got {len(data)}")
    grid = PhaseGrid(nx, np_, x0, x1, p0, p1)
    dtype = "<c16" if tag == 0 else "<f8"
    values = np.frombuffer(data, dtype=dtype, offset=_HEADER.size).reshape(nx, np_)
    values = values.astype(complex if tag == 0 else float)
    flags = [] if np.all(np.isfinite(values)) else ["nonfinite_payload"]
    return Snapshot(_KIND_TAGS[tag], grid, t, values, flags)


def read_snapshot(path) -> Snapshot:
    """Read a snapshot without validating the payload values."""
    return decode_snapshot(Path(path).read_bytes(), str(path))


def read_field(path):
    """Read a snapshot as a :class:`WaveField` or :class:`DensityField`."""
    return read_snapshot(path).to_field()


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def csv_text(header, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    """Header row then data rows; floats are written with full precision."""
    write_text(path, csv_text(header, rows))


def write_wavefunction_csv(path, psi: ConfigWavefunction) -> None:
    rows = zip(psi.x, psi.values.real, psi.values.imag)
    write_text(path, f"# x_min={psi.x_min!r} x_max={psi.x_max!r} time={psi.time!r}\n"
               + csv_text(["x", "re", "im"], rows))


def read_wavefunction_csv(path, grid: PhaseGrid) -> ConfigWavefunction:
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    if data.shape[1] != 3:
        raise ValidationError(f"{path}: expected columns x, re, im")
    if data.shape[0] != grid.n_x or not np.allclose(data[:, 0], grid.x, rtol=0, atol=1e-9 * grid.x_length):
        raise ValidationError(f"{path}: x samples do not match the grid")
    return ConfigWavefunction.on(grid, data[:, 1] + 1j * data[:, 2])
