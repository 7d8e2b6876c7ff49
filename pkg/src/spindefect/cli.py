"""Command-line front end: spectra, pulse sweeps, and curve fits to CSV.

Every subcommand resolves its flags to SI units, runs the corresponding
simulation, and writes a CSV whose leading comment lines record a hash of
the resolved configuration, the random seed, and the package version, so
reruns with the same inputs are byte-identical. Exit codes: 0 on success
(including fits that report converged=false), 2 for configuration and
input errors, 3 for numerical-contract failures (the message names the
failing module).

Quantities accept SI suffixes: frequencies GHz/MHz/kHz/Hz, times s/ms/us/ns,
fields T/mT/uT. A bare number is taken in the base unit (Hz, s, T). Fields
may be a single z component ("62.5mT") or a comma-separated 3-vector
("0,0,62.5mT").

The SPINDEFECT_WORKERS environment variable sets the thread count used to
chunk frequency and field sweeps. Results are assembled in sweep order and
each point is solved independently, so the output does not depend on the
worker count.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import pathlib
import re
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, analysis, modelio, photodynamics, sequences
from .errors import (
    ConfigurationError,
    NumericalContractError,
    SpinDefectError,
)

# Seed used when --seed is not given. Fixed (rather than drawn from the
# clock) so that default invocations are reproducible end to end.
DEFAULT_SEED = 2024

_UNIT_SCALES = {
    "frequency": {"": 1.0, "hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9},
    "time": {"": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "field": {"": 1.0, "t": 1.0, "mt": 1e-3, "ut": 1e-6},
}

_QUANTITY_RE = re.compile(r"^\s*([-+]?[0-9.]*(?:[eE][-+]?[0-9]+)?)\s*([A-Za-z]*)\s*$")


def parse_quantity(text: str, kind: str) -> float:
    """Parse "62.5mT" / "1.5GHz" / "300ns" / bare numbers into SI units."""
    match = _QUANTITY_RE.match(str(text))
    scales = _UNIT_SCALES[kind]
    if match is None:
        raise ConfigurationError(f"cannot parse {text!r} as a {kind}")
    number, suffix = match.group(1), match.group(2).lower()
    try:
        value = float(number)
    except ValueError:
        raise ConfigurationError(
            f"cannot parse {text!r} as a {kind}"
        ) from None
    if suffix not in scales:
        allowed = ", ".join(sorted(u for u in scales if u))
        raise ConfigurationError(
            f"unknown {kind} unit {suffix!r} in {text!r} (use one of {allowed})"
        )
    return value * scales[suffix]


def parse_field(text: str):
    """Parse a magnetic field flag: scalar z component or x,y,z vector."""
    parts = [p for p in str(text).split(",") if p.strip() != ""]
    values = [parse_quantity(p, "field") for p in parts]
    if len(values) == 1:
        return values[0]
    if len(values) == 3:
        return np.array(values)
    raise ConfigurationError(
        f"field must be a scalar or an x,y,z triple, got {text!r}"
    )


def _frequency_arg(text: str) -> float:
    return parse_quantity(text, "frequency")


def _time_arg(text: str) -> float:
    return parse_quantity(text, "time")


# --------------------------------------------------------------------------
# Deterministic CSV output.


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    return repr(float(value))


def _config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _hash_payload(args, command: str, extra: dict, model_path=None) -> dict:
    payload = {"command": command, "seed": int(args.seed)}
    if model_path is not None:
        digest = hashlib.sha256(pathlib.Path(model_path).read_bytes())
        payload["model_sha"] = digest.hexdigest()[:12]
    for key, value in extra.items():
        if isinstance(value, np.ndarray):
            value = [float(v) for v in value.ravel()]
        payload[key] = value
    return payload


def _write_csv(path, header, rows, payload, seed) -> None:
    lines = [
        f"# config_hash: {_config_hash(payload)}",
        f"# seed: {int(seed)}",
        f"# version: {__version__}",
        ",".join(header),
    ]
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def _apply_noise(values: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Additive Gaussian noise scaled to the signal span (level = fraction)."""
    if level <= 0.0:
        return values
    rng = np.random.default_rng(seed)
    span = float(np.max(values) - np.min(values))
    sigma = level * (span if span > 0.0 else 1.0)
    return values + sigma * rng.standard_normal(values.size)


# --------------------------------------------------------------------------
# Worker pool for embarrassingly parallel sweeps.


def _worker_count() -> int:
    raw = os.environ.get("SPINDEFECT_WORKERS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise ConfigurationError(
            f"SPINDEFECT_WORKERS must be a positive integer, got {raw!r}"
        ) from None
    if count < 1:
        raise ConfigurationError(
            f"SPINDEFECT_WORKERS must be a positive integer, got {raw!r}"
        )
    return count


def _map_chunks(fn, values: np.ndarray) -> np.ndarray:
    """Apply fn to contiguous chunks of values, preserving order.

    Each chunk is solved independently of the others, so the concatenated
    result is identical for every worker count.
    """
    workers = min(_worker_count(), max(1, values.size))
    chunks = np.array_split(values, workers)
    if workers == 1:
        parts = [fn(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, chunks))
    return np.concatenate([np.asarray(p) for p in parts])


def _load_model(spec: str):
    path = modelio.find_model_file(spec)
    return modelio.load_model(path), path


def _field_list(b_field) -> list:
    return [float(v) for v in np.atleast_1d(np.asarray(b_field)).ravel()]


# --------------------------------------------------------------------------
# Spectrum subcommands.


def _cmd_odmr(args) -> int:
    model, path = _load_model(args.model)
    if args.points < 2:
        raise ConfigurationError("--points must be at least 2")
    freqs = np.linspace(args.start, args.stop, args.points)

    def solve(chunk):
        result = photodynamics.cw_odmr(
            model,
            chunk,
            args.b_field,
            mw_amplitude_hz=args.amplitude,
            laser_power=args.power,
        )
        return result.values

    contrast = _map_chunks(solve, freqs)
    contrast = _apply_noise(contrast, args.noise, args.seed)
    payload = _hash_payload(
        args,
        "odmr",
        {
            "start_hz": args.start,
            "stop_hz": args.stop,
            "points": args.points,
            "b_field_t": _field_list(args.b_field),
            "amplitude_hz": args.amplitude,
            "power": args.power,
            "noise": args.noise,
        },
        model_path=path,
    )
    rows = list(zip(freqs, contrast))
    _write_csv(args.out, ("frequency_hz", "contrast"), rows, payload, args.seed)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_odnmr(args) -> int:
    model, path = _load_model(args.model)
    if args.points < 2:
        raise ConfigurationError("--points must be at least 2")
    freqs = np.linspace(args.start, args.stop, args.points)

    def solve(chunk):
        result = photodynamics.odnmr_spectrum(
            model,
            chunk,
            args.b_field,
            mw_transition=args.mw_line,
            rf_amplitude_hz=args.rf_amplitude,
            mw_amplitude_hz=args.mw_amplitude,
            laser_power=args.power,
        )
        return result.values

    contrast = _map_chunks(solve, freqs)
    contrast = _apply_noise(contrast, args.noise, args.seed)
    payload = _hash_payload(
        args,
        "odnmr",
        {
            "start_hz": args.start,
            "stop_hz": args.stop,
            "points": args.points,
            "b_field_t": _field_list(args.b_field),
            "mw_line": args.mw_line,
            "rf_amplitude_hz": args.rf_amplitude,
            "mw_amplitude_hz": args.mw_amplitude,
            "power": args.power,
            "noise": args.noise,
        },
        model_path=path,
    )
    rows = list(zip(freqs, contrast))
    _write_csv(args.out, ("frequency_hz", "contrast"), rows, payload, args.seed)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_fieldmap(args) -> int:
    model, path = _load_model(args.model)
    if args.points < 2:
        raise ConfigurationError("--points must be at least 2")
    fields = np.linspace(args.start, args.stop, args.points)

    def solve(chunk):
        rows = []
        for bz in chunk:
            for stick in photodynamics.stick_odmr(model, float(bz)):
                rows.append((float(bz), stick.frequency_hz, stick.intensity))
        return np.array(rows, dtype=float).reshape(-1, 3)

    workers = min(_worker_count(), max(1, fields.size))
    chunks = np.array_split(fields, workers)
    if workers == 1:
        parts = [solve(chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(solve, chunks))
    rows = [tuple(row) for part in parts for row in part]
    payload = _hash_payload(
        args,
        "fieldmap",
        {
            "start_t": args.start,
            "stop_t": args.stop,
            "points": args.points,
        },
        model_path=path,
    )
    _write_csv(
        args.out, ("field_t", "frequency_hz", "intensity"), rows, payload,
        args.seed,
    )
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# --------------------------------------------------------------------------
# Pulse-sweep subcommands. Each builds a small pulse program around one
# swept delay and records the photon count of the final readout window.


def _us(seconds: float) -> str:
    return f"{seconds * 1e6!r}us"


def _pulse_source(model, label: str) -> str:
    """Pick mw or rf for a transition from the site group that owns it."""
    specs = {s.label: s for s in model.transition_specs}
    spec = specs.get(label)
    if spec is None:
        raise ConfigurationError(f"model defines no transition {label!r}")
    qualified = f"{spec.manifold}.{spec.flip}"
    if qualified in model.rf_sites and qualified not in model.mw_sites:
        return "rf"
    return "mw"


def _run_tau_sweep(model, args, body_lines, carrier_shift=None):
    """Run laser-init / body / laser-read with tau swept over the grid."""
    if args.points < 2:
        raise ConfigurationError("--points must be at least 2")
    if args.start < 0.0 or args.stop <= args.start:
        raise ConfigurationError(
            "sweep needs 0 <= start < stop, got "
            f"{args.start!r}..{args.stop!r} s"
        )
    text_lines = [f"laser {_us(args.init)} power {args.power!r}"]
    text_lines.extend(body_lines)
    text_lines.append(f"laser {_us(args.read)} power {args.power!r}")
    text_lines.append(
        f"sweep tau {_us(args.start)}..{_us(args.stop)} {args.points}"
    )
    seq = sequences.parse_sequence("\n".join(text_lines))
    results = sequences.run_sweep(
        model, seq, args.b_field, carrier_shift_hz=carrier_shift
    )
    taus = [point["tau"] for point in sequences.sweep_points(seq)]
    photons = np.array([result.readout_photons for result in results])
    return np.array(taus), photons


def _sweep_payload(args, command: str, extra: dict, path) -> dict:
    base = {
        "start_s": args.start,
        "stop_s": args.stop,
        "points": args.points,
        "b_field_t": _field_list(args.b_field),
        "init_s": args.init,
        "read_s": args.read,
        "power": args.power,
        "noise": args.noise,
    }
    base.update(extra)
    return _hash_payload(args, command, base, model_path=path)


def _finish_tau_sweep(args, taus, photons, payload) -> int:
    photons = _apply_noise(photons, args.noise, args.seed)
    rows = list(zip(taus, photons))
    _write_csv(args.out, ("tau_s", "photons"), rows, payload, args.seed)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_rabi(args) -> int:
    model, path = _load_model(args.model)
    source = _pulse_source(model, args.line)
    taus, photons = _run_tau_sweep(
        model, args, [f"{source} tau @ {args.line}"]
    )
    payload = _sweep_payload(args, "rabi", {"line": args.line}, path)
    return _finish_tau_sweep(args, taus, photons, payload)


def _cmd_ramsey(args) -> int:
    model, path = _load_model(args.model)
    source = _pulse_source(model, args.line)
    body = [
        f"{source} pi/2 @ {args.line}",
        "wait tau",
        f"{source} pi/2 @ {args.line}",
    ]
    shift = {args.line: args.detuning} if args.detuning else None
    taus, photons = _run_tau_sweep(model, args, body, carrier_shift=shift)
    payload = _sweep_payload(
        args, "ramsey", {"line": args.line, "detuning_hz": args.detuning},
        path,
    )
    return _finish_tau_sweep(args, taus, photons, payload)


def _cmd_echo(args) -> int:
    model, path = _load_model(args.model)
    source = _pulse_source(model, args.line)
    body = [
        f"{source} pi/2 @ {args.line}",
        "wait tau",
        f"{source} pi @ {args.line}",
        "wait tau",
        f"{source} pi/2 @ {args.line}",
    ]
    taus, photons = _run_tau_sweep(model, args, body)
    payload = _sweep_payload(args, "echo", {"line": args.line}, path)
    return _finish_tau_sweep(args, taus, photons, payload)


def _cmd_t1(args) -> int:
    model, path = _load_model(args.model)
    taus, photons = _run_tau_sweep(model, args, ["wait tau"])
    payload = _sweep_payload(args, "t1", {}, path)
    return _finish_tau_sweep(args, taus, photons, payload)


# --------------------------------------------------------------------------
# Polarization transfer.


def _cmd_swap_polarize(args) -> int:
    model, path = _load_model(args.model)
    e_lines = tuple(p.strip() for p in args.e_lines.split(",") if p.strip())
    if len(e_lines) != 2:
        raise ConfigurationError(
            f"--e-lines needs two comma-separated labels, got {args.e_lines!r}"
        )
    sequences.validate_swap_labels(model, e_lines, args.n_line)
    specs = {s.label: s for s in model.transition_specs}
    manifold = specs[e_lines[0]].manifold
    electron_site = specs[e_lines[0]].flip
    nuclear_site = specs[args.n_line].flip
    initial = sequences.pinned_block_state(
        model, manifold, {electron_site: 0.5}
    )

    rows = []
    for ordering in (e_lines, (e_lines[1], e_lines[0])):
        seq = sequences.swap_gate(ordering, args.n_line)
        program = sequences.compile_sequence(
            seq, model, args.b_field, closed=True
        )
        result = sequences.run_program(model, program, initial)
        rows.append(
            (
                "/".join(ordering),
                sequences.site_polarization(
                    model, result.final, f"{manifold}.{electron_site}"
                ),
                sequences.site_polarization(
                    model, result.final, f"{manifold}.{nuclear_site}"
                ),
            )
        )
    payload = _hash_payload(
        args,
        "swap-polarize",
        {
            "e_lines": list(e_lines),
            "n_line": args.n_line,
            "b_field_t": _field_list(args.b_field),
        },
        model_path=path,
    )
    _write_csv(
        args.out,
        ("ordering", "electron_polarization", "nuclear_polarization"),
        rows,
        payload,
        args.seed,
    )
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


# --------------------------------------------------------------------------
# Fitting.


def _read_trace_csv(path) -> analysis.Trace:
    source = pathlib.Path(path)
    if not source.exists():
        raise ConfigurationError(f"input CSV not found: {path}")
    rows = []
    for raw in source.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c.strip() for c in line.split(",") if c.strip() != ""]
        try:
            values = [float(c) for c in cells]
        except ValueError:
            if rows:
                raise ConfigurationError(
                    f"malformed CSV row {line!r} in {path}"
                ) from None
            continue  # header row
        if len(values) < 2:
            raise ConfigurationError(
                f"CSV rows need x,y[,y_err] columns, got {line!r} in {path}"
            )
        rows.append(values[:3])
    if not rows:
        raise ConfigurationError(f"input CSV has no data rows: {path}")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ConfigurationError(
            f"CSV rows mix column counts {sorted(widths)} in {path}"
        )
    data = np.array(rows, dtype=float)
    y_err = data[:, 2] if data.shape[1] == 3 else None
    return analysis.Trace(data[:, 0], data[:, 1], y_err)


def _cmd_fit(args) -> int:
    trace = _read_trace_csv(args.input)
    derived = {}
    if args.kind == "rabi":
        result = analysis.fit_damped_sinusoid(trace, model="sin")
        derived["gate_fidelity"] = analysis.gate_fidelity(
            result.params["t_pi_s"], result.params["t_decay_s"]
        )
    elif args.kind == "ramsey":
        result = analysis.fit_damped_sinusoid(trace, model="cos")
        derived["t2_star_s"] = result.params["t_decay_s"]
    else:
        result = analysis.fit_exp_decay(trace)
        derived["t_decay_s"] = result.params["t_decay_s"]

    payload = _hash_payload(
        args,
        "fit",
        {
            "kind": args.kind,
            "input_sha": hashlib.sha256(
                pathlib.Path(args.input).read_bytes()
            ).hexdigest()[:12],
        },
    )
    sigmas = result.param_sigmas()
    rows = [
        (name, value, sigmas.get(name, float("nan")))
        for name, value in result.params.items()
    ]
    for name, value in derived.items():
        rows.append((name, value, ""))
    rows.append(("r_squared", result.r_squared, ""))
    rows.append(("converged", "true" if result.converged else "false", ""))
    _write_csv(
        args.out, ("parameter", "value", "sigma"), rows, payload, args.seed
    )
    print(result.summary())
    for name, value in derived.items():
        print(f"{name}: {value!r}")
    print(f"wrote {args.out}")
    return 0


# --------------------------------------------------------------------------
# Argument wiring.


def _add_common(sub, default_out, default_model=None):
    if default_model is not None:
        sub.add_argument(
            "--model",
            default=default_model,
            help="model TOML path or bundled model name "
            f"(default {default_model})",
        )
    sub.add_argument("--out", default=default_out, help="output CSV path")
    sub.add_argument(
        "--seed", type=int, default=DEFAULT_SEED,
        help=f"random seed recorded in the output (default {DEFAULT_SEED})",
    )


def _add_field(sub, default="62.5mT"):
    sub.add_argument(
        "--B", dest="b_field", type=parse_field, default=parse_field(default),
        help=f"static field, scalar z or x,y,z with T/mT/uT (default {default})",
    )


def _add_noise(sub):
    sub.add_argument(
        "--noise", type=float, default=0.0,
        help="additive Gaussian noise as a fraction of the signal span",
    )


def _add_tau_sweep(sub, default_start, default_stop, default_points):
    sub.add_argument(
        "--from", dest="start", type=_time_arg, default=default_start,
        help=f"first delay (default {_us(default_start)})",
    )
    sub.add_argument(
        "--to", dest="stop", type=_time_arg, default=default_stop,
        help=f"last delay (default {_us(default_stop)})",
    )
    sub.add_argument(
        "--points", type=int, default=default_points,
        help=f"sweep points (default {default_points})",
    )
    sub.add_argument(
        "--init", type=_time_arg, default=10e-6,
        help="initialization laser window (default 10us)",
    )
    sub.add_argument(
        "--read", type=_time_arg, default=5e-6,
        help="readout laser window (default 5us)",
    )
    sub.add_argument(
        "--power", type=float, default=1.0,
        help="laser power relative to the model pump rate (default 1)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spindefect",
        description="Spin-defect spectra, pulse sweeps, and fits.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    odmr = commands.add_parser(
        "odmr", help="CW optically detected magnetic resonance spectrum"
    )
    _add_common(odmr, "odmr.csv", default_model="group3")
    _add_field(odmr)
    _add_noise(odmr)
    odmr.add_argument(
        "--from", dest="start", type=_frequency_arg, default=1.5e9,
        help="sweep start (default 1.5GHz)",
    )
    odmr.add_argument(
        "--to", dest="stop", type=_frequency_arg, default=2.5e9,
        help="sweep stop (default 2.5GHz)",
    )
    odmr.add_argument(
        "--points", type=int, default=501, help="sweep points (default 501)"
    )
    odmr.add_argument(
        "--amp", dest="amplitude", type=_frequency_arg, default=2e6,
        help="microwave drive amplitude (default 2MHz)",
    )
    odmr.add_argument(
        "--power", type=float, default=1.0,
        help="laser power relative to the model pump rate (default 1)",
    )
    odmr.set_defaults(handler=_cmd_odmr)

    odnmr = commands.add_parser(
        "odnmr", help="optically detected NMR: RF sweep with the MW parked"
    )
    _add_common(odnmr, "odnmr.csv", default_model="group2")
    _add_field(odnmr)
    _add_noise(odnmr)
    odnmr.add_argument(
        "--from", dest="start", type=_frequency_arg, default=63e6,
        help="RF sweep start (default 63MHz)",
    )
    odnmr.add_argument(
        "--to", dest="stop", type=_frequency_arg, default=67e6,
        help="RF sweep stop (default 67MHz)",
    )
    odnmr.add_argument(
        "--points", type=int, default=241, help="sweep points (default 241)"
    )
    odnmr.add_argument(
        "--mw-line", default="e_low",
        help="transition label the MW carrier parks on (default e_low)",
    )
    odnmr.add_argument(
        "--rf-amp", dest="rf_amplitude", type=_frequency_arg, default=25e3,
        help="RF drive amplitude (default 25kHz)",
    )
    odnmr.add_argument(
        "--mw-amp", dest="mw_amplitude", type=_frequency_arg, default=20e3,
        help="MW carrier amplitude (default 20kHz)",
    )
    odnmr.add_argument(
        "--power", type=float, default=1.0,
        help="laser power relative to the model pump rate (default 1)",
    )
    odnmr.set_defaults(handler=_cmd_odnmr)

    fieldmap = commands.add_parser(
        "fieldmap", help="stick transition frequencies versus z field"
    )
    _add_common(fieldmap, "fieldmap.csv", default_model="group1")
    fieldmap.add_argument(
        "--from", dest="start", type=lambda t: parse_quantity(t, "field"),
        default=0.0, help="first z field (default 0mT)",
    )
    fieldmap.add_argument(
        "--to", dest="stop", type=lambda t: parse_quantity(t, "field"),
        default=80e-3, help="last z field (default 80mT)",
    )
    fieldmap.add_argument(
        "--steps", "--points", dest="points", type=int, default=161,
        help="field points (default 161)",
    )
    fieldmap.set_defaults(handler=_cmd_fieldmap)

    rabi = commands.add_parser(
        "rabi", help="drive-duration sweep with laser init and readout"
    )
    _add_common(rabi, "rabi.csv", default_model="group3")
    _add_field(rabi)
    _add_noise(rabi)
    rabi.add_argument(
        "--line", default="e_low", help="transition label (default e_low)"
    )
    _add_tau_sweep(rabi, 0.0, 4e-6, 81)
    rabi.set_defaults(handler=_cmd_rabi)

    ramsey = commands.add_parser(
        "ramsey", help="pi/2 - tau - pi/2 free-precession sweep"
    )
    _add_common(ramsey, "ramsey.csv", default_model="group3")
    _add_field(ramsey)
    _add_noise(ramsey)
    ramsey.add_argument(
        "--line", default="e_low", help="transition label (default e_low)"
    )
    ramsey.add_argument(
        "--detuning", type=_frequency_arg, default=0.0,
        help="deliberate carrier detuning from the line (default 0)",
    )
    _add_tau_sweep(ramsey, 0.0, 20e-6, 101)
    ramsey.set_defaults(handler=_cmd_ramsey)

    echo = commands.add_parser(
        "echo", help="pi/2 - tau - pi - tau - pi/2 echo sweep"
    )
    _add_common(echo, "echo.csv", default_model="group3")
    _add_field(echo)
    _add_noise(echo)
    echo.add_argument(
        "--line", default="e_low", help="transition label (default e_low)"
    )
    _add_tau_sweep(echo, 0.0, 40e-6, 81)
    echo.set_defaults(handler=_cmd_echo)

    t1 = commands.add_parser(
        "t1", help="init - wait tau - readout relaxation sweep"
    )
    _add_common(t1, "t1.csv", default_model="group3")
    _add_field(t1)
    _add_noise(t1)
    _add_tau_sweep(t1, 0.0, 600e-6, 61)
    t1.set_defaults(handler=_cmd_t1)

    swap = commands.add_parser(
        "swap-polarize",
        help="closed-system polarization transfer in both line orders",
    )
    _add_common(swap, "swap.csv", default_model="group3")
    _add_field(swap)
    swap.add_argument(
        "--e-lines", default="e_low,e_high",
        help="two electron lines, comma separated (default e_low,e_high)",
    )
    swap.add_argument(
        "--n-line", default="n_low",
        help="nuclear line flipped between them (default n_low)",
    )
    swap.set_defaults(handler=_cmd_swap_polarize)

    fit = commands.add_parser(
        "fit", help="fit a CSV trace and write parameter estimates"
    )
    fit.add_argument("--input", required=True, help="CSV with x,y[,y_err]")
    fit.add_argument(
        "--kind", choices=("rabi", "ramsey", "decay"), required=True,
        help="rabi: damped sine; ramsey: damped cosine; decay: exponential",
    )
    _add_common(fit, "fit.csv")
    fit.set_defaults(handler=_cmd_fit)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NumericalContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SpinDefectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
