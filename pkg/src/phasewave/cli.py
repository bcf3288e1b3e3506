"""Command-line entry point.

Exit codes: 0 success, 1 invalid input (configuration, files, arguments),
2 numerical failure during a run.  Diagnostics go to standard error and data
products only to files.  Products are assembled in memory and written at the
end, so nothing is written when the exit code is nonzero.

The optional environment variable ``PHASEWAVE_THREADS`` sets the FFT worker
count.  Results do not depend on it.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from . import _spectral
from .core import NumericalError, ResolutionWarning, ValidationError
from .evolvers import evolve, evolve_legacy
from .experiments import run_experiment
from .io import (
    atomic_write,
    csv_text,
    encode_field,
    load_config,
    read_field,
    read_wavefunction_csv,
    serialize_config,
)
from .transforms import galileo_boost, husimi, lift_to_phase_space, project_stationary, wigner

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
THREADS_ENV = "PHASEWAVE_THREADS"


class _UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="phasewave", description="Phase-space wave dynamics with momentum diffusion.")
    ap.add_argument("--version", action="version", version=f"phasewave {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="parse a configuration and echo the resolved values")
    p.add_argument("config")

    p = sub.add_parser("evolve", help="run an evolution, write snapshots and a diagnostics CSV")
    p.add_argument("config")
    p.add_argument("-o", "--out", default="run", help="output directory (default: ./run)")

    p = sub.add_parser("experiment", help="run the experiment named in the configuration")
    p.add_argument("config")
    p.add_argument("-o", "--out", default="report.json", help="report path (default: report.json)")

    p = sub.add_parser("transform", help="one-shot transforms between files")
    tsub = p.add_subparsers(dest="transform", required=True, parser_class=_Parser)
    for name, help_ in (("wigner", "Wigner distribution of a wave function"),
                        ("husimi", "Husimi distribution of a wave function"),
                        ("lift", "lift a wave function into phase space")):
        t = tsub.add_parser(name, help=help_)
        t.add_argument("--config", required=True, help="supplies grid, parameters and default state")
        t.add_argument("--psi", help="wave function CSV (x,re,im); default: the configured initial state")
        t.add_argument("-o", "--out", required=True)
        if name == "husimi":
            t.add_argument("--sigma-x", type=float, default=None)
    t = tsub.add_parser("project", help="project a wave field onto the stationary subspace")
    t.add_argument("field")
    t.add_argument("--config", required=True)
    t.add_argument("-o", "--out", required=True, help="wave function CSV")
    t = tsub.add_parser("boost", help="Galileo boost of a wave field")
    t.add_argument("field")
    t.add_argument("--config", required=True)
    t.add_argument("--u", type=float, default=None, help="velocity (default: experiment.u)")
    t.add_argument("--t", type=float, default=None, help="time (default: the field's time stamp)")
    t.add_argument("-o", "--out", required=True)
    return ap


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _threads_from_env():
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


# each command returns {path: bytes}; main writes them only on success


def _cmd_validate(args):
    cfg, defaulted = load_config(args.config)
    _log(serialize_config(cfg, defaulted))
    _log(f"ok: {args.config} ({len(defaulted)} default(s) applied)")
    return {}


def _cmd_evolve(args):
    cfg, defaulted = load_config(args.config)
    model = cfg.knobs.model
    if model == "legacy":
        cfg.params.require_legacy()
    f0 = cfg.initial.field(cfg.grid, cfg.params, cfg.potential,
                           cfg.params.hbar * cfg.params.b / cfg.params.a if model == "legacy" else None)
    if model == "legacy":
        tr = evolve_legacy(f0, cfg.params, cfg.potential, cfg.evolve, observers=["energy"])
    else:
        tr = evolve(f0, cfg.params, cfg.potential, cfg.evolve, observers=["energy"])
    out = Path(args.out)
    products = {out / f"snapshot_{i:05d}.pswf": encode_field(f) for i, f in enumerate(tr.snapshots)}
    header, rows = tr.diagnostics_table()
    products[out / "diagnostics.csv"] = csv_text(header, rows).encode()
    products[out / "config.ini"] = serialize_config(cfg, defaulted).encode()
    _log(f"{model} model: {cfg.evolve.n_steps} steps, {len(tr.snapshots)} snapshots, "
         f"final norm {tr.final.norm():.12g}")
    return products


def _cmd_experiment(args):
    cfg, _ = load_config(args.config)
    report = run_experiment(cfg)
    for name, f in report.flags.items():
        tag = "control " if f["control"] else ""
        _log(f"{tag}{name}: {'PASS' if f['passed'] else 'FAIL'} (value {f['value']}, tolerance {f['tolerance']})")
    for note in report.notes:
        _log(f"note: {note}")
    return {Path(args.out): report.to_json().encode()}


def _psi(args, cfg):
    if args.psi:
        return read_wavefunction_csv(args.psi, cfg.grid)
    return cfg.initial.psi(cfg.grid, cfg.params, cfg.potential)


def _cmd_transform(args):
    from .core import DensityField

    cfg, _ = load_config(args.config)
    out = Path(args.out)
    kind = args.transform
    if kind == "wigner":
        w = wigner(_psi(args, cfg), cfg.params, cfg.grid)
        return {out: encode_field(DensityField(cfg.grid, w))}
    if kind == "husimi":
        return {out: encode_field(husimi(_psi(args, cfg), cfg.params, args.sigma_x, cfg.grid))}
    if kind == "lift":
        return {out: encode_field(lift_to_phase_space(_psi(args, cfg), cfg.params, cfg.grid))}
    field = read_field(args.field)
    if field.grid != cfg.grid:
        raise ValidationError(f"{args.field}: grid does not match the configuration")
    if kind == "project":
        pj = project_stationary(field, cfg.params)
        _log(f"projection residual {pj.residual:.6g}")
        psi = pj.psi
        text = (f"# x_min={psi.x_min!r} x_max={psi.x_max!r} time={psi.time!r}\n"
                + csv_text(["x", "re", "im"], zip(psi.x, psi.values.real, psi.values.imag)))
        return {out: text.encode()}
    u = cfg.knobs.u if args.u is None else args.u
    t = field.time if args.t is None else args.t
    return {out: encode_field(galileo_boost(field, u, cfg.params, t))}


_COMMANDS = {
    "validate": _cmd_validate,
    "evolve": _cmd_evolve,
    "experiment": _cmd_experiment,
    "transform": _cmd_transform,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ValidationError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    try:
        _spectral.set_workers(_threads_from_env())
        with warnings.catch_warnings():
            warnings.simplefilter("always", ResolutionWarning)
            warnings.showwarning = lambda m, c, *a, **k: _log(f"warning: {m}")
            products = _COMMANDS[args.command](args)
    except ValidationError as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except (OSError, UnicodeDecodeError) as exc:
        _log(f"error: {exc}")
        return EXIT_INVALID
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        _log(f"numerical error: {exc}")
        return EXIT_NUMERICAL
    try:
        for path, data in products.items():
            atomic_write(path, data)
    except OSError as exc:
        _log(f"error: cannot write output: {exc}")
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
