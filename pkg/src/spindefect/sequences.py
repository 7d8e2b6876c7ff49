"""Pulse-program language: parsing, sweep expansion, and compilation.

Programs are line-oriented (semicolons also separate statements) with one
statement per line::

    laser 10us
    mw pi @ e_low
    rf tau @ n_down amp 2e4
    wait 5us
    sweep tau 0us..30us 61

Statement forms: ``laser <duration> [power <x>]``, ``mw/rf <angle|duration>
@ <label> [phase <x>] [amp <x>]``, ``wait <duration>``, and ``sweep <var>
<start>..<stop> <steps>``. Angles are ``pi``, ``pi/2``, or ``<x> rad``;
durations carry an ``ns``/``us``/``ms`` suffix or name a swept variable.
Comments start with ``#``.

Compilation lowers each statement onto a level model resolved at a static
field. Pulses are selective: the drive couples only the eigenpairs of the
addressed transition, and the carrier rotating frame makes every segment
time-independent. Each carrier group (one microwave source, one radio
source) keeps its frequency across wait and laser statements, so phase
coherence within a group is exact as long as the group stays on one line
(Ramsey, echo). When a group hops between lines (the polarization-transfer
gate), populations remain exact but coherences straddling the hop lose
their relative phase, as they would under a source without phase memory.

Angle-to-duration calibration uses the transition's configured Rabi rate:
``duration = angle / (2 pi rabi_hz)``, so ``pi`` at 0.833 MHz lasts 0.6 us.
An explicit ``amp`` option recalibrates through the addressed matrix
element instead.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import lindblad
from .errors import CompileError, ConfigurationError, SequenceSyntaxError
from .photodynamics import LevelModel, ResolvedModel, resolve

_TIME_UNITS = {"ns": 1e-9, "us": 1e-6, "ms": 1e-3}


# --------------------------------------------------------------------------
# Abstract syntax.


@dataclass(frozen=True)
class TimeLiteral:
    """A duration as written: value in the given unit (ns/us/ms)."""

    value: float
    unit: str

    def seconds(self) -> float:
        return self.value * _TIME_UNITS[self.unit]

    def text(self) -> str:
        return f"{self.value!r}{self.unit}"


@dataclass(frozen=True)
class VarRef:
    """A duration naming a swept variable."""

    name: str

    def text(self) -> str:
        return self.name


@dataclass(frozen=True)
class Angle:
    """A rotation angle: kind is 'pi', 'pi/2', or 'rad' (value in radians)."""

    kind: str
    value: float

    def text(self) -> str:
        if self.kind == "rad":
            return f"{self.value!r} rad"
        return self.kind


@dataclass(frozen=True)
class Laser:
    duration: object
    power: float = 1.0


@dataclass(frozen=True)
class Pulse:
    """A selective mw or rf pulse on a named transition."""

    source: str  # "mw" or "rf"
    label: str
    angle: Angle | None = None
    duration: object = None
    phase_rad: float = 0.0
    amplitude_hz: float | None = None


@dataclass(frozen=True)
class Wait:
    duration: object


@dataclass(frozen=True)
class Sweep:
    variable: str
    start: TimeLiteral
    stop: TimeLiteral
    steps: int


@dataclass(frozen=True)
class PulseSequence:
    statements: tuple = ()
    sweeps: tuple = ()

    @property
    def variables(self) -> tuple:
        return tuple(sw.variable for sw in self.sweeps)


# --------------------------------------------------------------------------
# Lexer / parser.

_TOKEN_RE = re.compile(
    r"""
    (?P<time>[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?(?:ns|us|ms)(?![A-Za-z0-9_]))
  | (?P<number>-?[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)
  | (?P<pihalf>pi/2(?![A-Za-z0-9_]))
  | (?P<word>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<dotdot>\.\.)
  | (?P<at>@)
  | (?P<space>[ \t]+)
    """,
    re.VERBOSE,
)

_TIME_SPLIT_RE = re.compile(r"^(.*?)(ns|us|ms)$")


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int
    column: int


def _tokenize(chunk: str, line_no: int, col_offset: int):
    tokens = []
    pos = 0
    while pos < len(chunk):
        match = _TOKEN_RE.match(chunk, pos)
        if match is None:
            raise SequenceSyntaxError(
                f"unexpected character {chunk[pos]!r}",
                line_no,
                col_offset + pos + 1,
            )
        kind = match.lastgroup
        if kind != "space":
            tokens.append(
                _Token(kind, match.group(), line_no, col_offset + pos + 1)
            )
        pos = match.end()
    return tokens


class _StatementParser:
    def __init__(self, tokens, line_no: int):
        self.tokens = tokens
        self.line = line_no
        self.pos = 0

    def _error(self, message: str):
        column = (
            self.tokens[self.pos].column
            if self.pos < len(self.tokens)
            else (self.tokens[-1].column + len(self.tokens[-1].text)
                  if self.tokens else 1)
        )
        raise SequenceSyntaxError(message, self.line, column)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind=None):
        tok = self.peek()
        if tok is None or (kind is not None and tok.kind != kind):
            want = kind or "token"
            self._error(f"expected {want}")
        self.pos += 1
        return tok

    def done(self):
        if self.pos != len(self.tokens):
            self._error(f"unexpected {self.tokens[self.pos].text!r}")

    def number(self, what: str, nonnegative: bool = True) -> float:
        tok = self.take("number")
        value = float(tok.text)
        if nonnegative and value < 0.0:
            raise SequenceSyntaxError(
                f"{what} must be nonnegative", tok.line, tok.column
            )
        return value

    def time_literal(self, what: str) -> TimeLiteral:
        tok = self.peek()
        if tok is not None and tok.kind == "time":
            self.take()
            raw, unit = _TIME_SPLIT_RE.match(tok.text).groups()
            return TimeLiteral(float(raw), unit)
        if tok is not None and tok.kind == "number":
            # "10 us" with a space: number token then unit word.
            value = self.number(what)
            unit_tok = self.peek()
            if unit_tok is not None and unit_tok.text in _TIME_UNITS:
                self.take()
                return TimeLiteral(value, unit_tok.text)
            self._error(f"{what} needs an ns/us/ms unit")
        self._error(f"expected {what}")

    def duration(self, what: str):
        tok = self.peek()
        if tok is not None and tok.kind == "word" and tok.text not in (
            "power", "phase", "amp", "rad"
        ):
            self.take()
            return VarRef(tok.text)
        return self.time_literal(what)

    def angle_or_duration(self):
        tok = self.peek()
        if tok is None:
            self._error("expected an angle or duration")
        if tok.kind == "pihalf":
            self.take()
            return Angle("pi/2", math.pi / 2.0), None
        if tok.kind == "word" and tok.text == "pi":
            self.take()
            return Angle("pi", math.pi), None
        if tok.kind == "number":
            # Distinguish "<x> rad" from "<x> <unit>" and bare sweep vars.
            save = self.pos
            value = self.number("angle or duration")
            nxt = self.peek()
            if nxt is not None and nxt.kind == "word" and nxt.text == "rad":
                self.take()
                return Angle("rad", value), None
            self.pos = save
            return None, self.duration("duration")
        return None, self.duration("duration")

    def options(self):
        phase = 0.0
        amplitude = None
        while self.peek() is not None:
            tok = self.take("word")
            if tok.text == "phase":
                phase = self.number("phase", nonnegative=False)
            elif tok.text == "amp":
                amplitude = self.number("amp")
            else:
                raise SequenceSyntaxError(
                    f"unknown option {tok.text!r}", tok.line, tok.column
                )
        return phase, amplitude


def _parse_statement(parser: _StatementParser):
    head = parser.take("word")
    if head.text == "laser":
        duration = parser.duration("laser duration")
        power = 1.0
        tok = parser.peek()
        if tok is not None and tok.kind == "word" and tok.text == "power":
            parser.take()
            power = parser.number("power")
        parser.done()
        return Laser(duration, power)
    if head.text in ("mw", "rf"):
        angle, duration = parser.angle_or_duration()
        parser.take("at")
        label = parser.take("word").text
        phase, amplitude = parser.options()
        parser.done()
        return Pulse(head.text, label, angle, duration, phase, amplitude)
    if head.text == "wait":
        duration = parser.duration("wait duration")
        parser.done()
        return Wait(duration)
    if head.text == "sweep":
        var = parser.take("word").text
        start = parser.time_literal("sweep start")
        parser.take("dotdot")
        stop = parser.time_literal("sweep stop")
        steps_tok = parser.take("number")
        steps = float(steps_tok.text)
        if steps != int(steps) or int(steps) < 1:
            raise SequenceSyntaxError(
                "sweep steps must be a positive integer",
                steps_tok.line,
                steps_tok.column,
            )
        parser.done()
        return Sweep(var, start, stop, int(steps))
    raise SequenceSyntaxError(
        f"unknown statement {head.text!r}", head.line, head.column
    )


def parse_sequence(text: str) -> PulseSequence:
    """Parse pulse-program text into a :class:`PulseSequence`."""
    statements = []
    sweeps = []
    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0]
        col = 0
        for chunk in line.split(";"):
            tokens = _tokenize(chunk, line_no, col)
            col += len(chunk) + 1
            if not tokens:
                continue
            stmt = _parse_statement(_StatementParser(tokens, line_no))
            if isinstance(stmt, Sweep):
                sweeps.append(stmt)
            else:
                statements.append(stmt)

    seen = set()
    for sw in sweeps:
        if sw.variable in seen:
            raise SequenceSyntaxError(
                f"variable {sw.variable!r} is swept more than once", 0, 0
            )
        seen.add(sw.variable)
    for stmt in statements:
        duration = getattr(stmt, "duration", None)
        if isinstance(duration, VarRef) and duration.name not in seen:
            raise SequenceSyntaxError(
                f"variable {duration.name!r} is not declared by any sweep",
                0,
                0,
            )
    return PulseSequence(tuple(statements), tuple(sweeps))


def format_sequence(seq: PulseSequence) -> str:
    """Canonical text of a sequence; parse(format(seq)) reproduces seq."""
    lines = []
    for stmt in seq.statements:
        if isinstance(stmt, Laser):
            line = f"laser {stmt.duration.text()}"
            if stmt.power != 1.0:
                line += f" power {stmt.power!r}"
        elif isinstance(stmt, Pulse):
            body = (
                stmt.angle.text()
                if stmt.angle is not None
                else stmt.duration.text()
            )
            line = f"{stmt.source} {body} @ {stmt.label}"
            if stmt.phase_rad != 0.0:
                line += f" phase {stmt.phase_rad!r}"
            if stmt.amplitude_hz is not None:
                line += f" amp {stmt.amplitude_hz!r}"
        elif isinstance(stmt, Wait):
            line = f"wait {stmt.duration.text()}"
        else:
            raise ConfigurationError(f"cannot print statement {stmt!r}")
        lines.append(line)
    for sw in seq.sweeps:
        lines.append(
            f"sweep {sw.variable} {sw.start.text()}..{sw.stop.text()} "
            f"{sw.steps}"
        )
    return "\n".join(lines) + "\n"


def sweep_points(seq: PulseSequence) -> list[dict]:
    """Substitution dictionaries, one per sweep point (variable -> seconds).

    Multiple sweeps expand to their cartesian product, last declared
    fastest. A sweep-free sequence yields one empty point.
    """
    points = [{}]
    for sw in seq.sweeps:
        values = np.linspace(sw.start.seconds(), sw.stop.seconds(), sw.steps)
        points = [
            {**pt, sw.variable: float(v)} for pt in points for v in values
        ]
    return points


# --------------------------------------------------------------------------
# Compilation.


@dataclass(frozen=True)
class CompiledProgram:
    """Piecewise-constant realization of one sweep point of a sequence."""

    segments: tuple
    readout_segments: tuple
    total_duration_s: float
    carriers_hz: dict = field(compare=False, default_factory=dict)


def _resolve_duration(duration, sweep_point, what: str) -> float:
    if isinstance(duration, TimeLiteral):
        return duration.seconds()
    if isinstance(duration, VarRef):
        try:
            value = float(sweep_point[duration.name])
        except KeyError:
            raise CompileError(
                f"{what}: sweep point does not bind {duration.name!r}"
            ) from None
        if value < 0.0:
            raise CompileError(
                f"{what}: duration {duration.name} = {value} is negative"
            )
        return value
    raise CompileError(f"{what}: bad duration {duration!r}")


def _pulse_calibration(resolved, pulse: Pulse):
    """Resolve amplitude (Hz) and population Rabi rate (Hz) of a pulse."""
    line = resolved.transition(pulse.label)
    element = max(abs(el) for _, _, el in line.pairs)
    if pulse.amplitude_hz is not None:
        amplitude = float(pulse.amplitude_hz)
    else:
        amplitude = line.drive_amplitude_hz
    rabi = 2.0 * amplitude * element
    return line, amplitude, rabi


def _pair_coupling(model, resolved, line, amplitude_hz, phase_rad):
    """Selective drive operator: the addressed eigenpairs only."""
    block = resolved.blocks[line.manifold]
    op = np.zeros((model.dimension, model.dimension), dtype=complex)
    sl = slice(block.offset, block.offset + block.dim)
    local = np.zeros((block.dim, block.dim), dtype=complex)
    for lo, hi, element in line.pairs:
        raised = element * np.exp(-1j * phase_rad) * np.outer(
            block.vectors[:, hi], block.vectors[:, lo].conj()
        )
        local += raised + raised.conj().T
    op[sl, sl] = amplitude_hz * local
    return op


class _FramePlan:
    """Carrier bookkeeping for one source group (mw or rf)."""

    def __init__(self, model: LevelModel, source: str, shift_hz: float):
        sites = model.mw_sites if source == "mw" else model.rf_sites
        self.source = source
        self.sites = tuple(sites)
        self.shift_hz = float(shift_hz)
        self.counts = (
            model.count_vector(self.sites) if self.sites else None
        )
        self.frequency_hz = None  # set when the first pulse appears

    def carrier_for(self, line) -> float:
        nu = line.signed_frequency_hz + self.shift_hz
        if self.frequency_hz is None:
            self.frequency_hz = nu
        return nu


def compile_sequence(
    seq: PulseSequence,
    model: LevelModel,
    b_field_t,
    sweep_point: dict | None = None,
    *,
    closed: bool = False,
    carrier_shift_hz: dict | None = None,
    resolved: ResolvedModel | None = None,
) -> CompiledProgram:
    """Lower one sweep point of a sequence onto a model.

    ``closed`` drops every incoherent channel (unitary segments) and
    forbids laser statements. ``carrier_shift_hz`` maps transition labels
    to a deliberate carrier detuning in Hz (the pulse stays on the shifted
    carrier; its addressed pair picks up the opposite detuning in frame).
    """
    sweep_point = dict(sweep_point or {})
    shifts = dict(carrier_shift_hz or {})
    unknown = sorted(set(shifts) - {s.label for s in model.transition_specs})
    if unknown:
        raise CompileError(
            "carrier shift names unknown transitions: " + ", ".join(unknown)
        )
    if resolved is None:
        resolved = resolve(model, b_field_t)

    # Frame frequencies per source group; a group's shift applies to every
    # line it pulses (one synthesizer per group).
    group_shift = {"mw": 0.0, "rf": 0.0}
    for stmt in seq.statements:
        if isinstance(stmt, Pulse) and stmt.label in shifts:
            group_shift[stmt.source] = float(shifts[stmt.label])
    plans = {
        source: _FramePlan(model, source, group_shift[source])
        for source in ("mw", "rf")
    }

    # Pre-scan so waits before the first pulse already rotate at its
    # carrier; within a group the frame then only changes on a line hop.
    for stmt in seq.statements:
        if isinstance(stmt, Pulse):
            plan = plans[stmt.source]
            if plan.frequency_hz is None:
                plan.carrier_for(resolved.transition(stmt.label))

    masks = [
        plan.counts for plan in plans.values() if plan.counts is not None
    ]
    h_static = _mask_by_counts_local(resolved.exact_hamiltonian, masks)

    dark_channels = tuple(
        lindblad.LindbladChannel(ch.operator, ch.rate_per_s, ch.kind)
        for ch in model.channels
        if ch.kind != "pump"
    )
    pump_channels = tuple(
        ch for ch in model.channels if ch.kind == "pump"
    )

    def frame_hamiltonian():
        h = h_static.copy()
        for plan in plans.values():
            if plan.counts is not None and plan.frequency_hz is not None:
                h -= plan.frequency_hz * np.diag(plan.counts.astype(float))
        return h

    segments = []
    readout = []
    total = 0.0
    for k, stmt in enumerate(seq.statements):
        context = f"statement {k + 1}"
        if isinstance(stmt, Laser):
            if closed:
                raise CompileError(
                    f"{context}: laser statements have no closed-system "
                    "meaning"
                )
            duration = _resolve_duration(stmt.duration, sweep_point, context)
            total += duration
            if duration == 0.0:
                continue
            channels = dark_channels + tuple(
                lindblad.LindbladChannel(
                    ch.operator, ch.rate_per_s * stmt.power, ch.kind
                )
                for ch in pump_channels
            )
            readout.append(len(segments))
            segments.append(
                lindblad.Segment(duration, frame_hamiltonian(), channels)
            )
            continue
        if isinstance(stmt, Wait):
            duration = _resolve_duration(stmt.duration, sweep_point, context)
            total += duration
            if duration == 0.0:
                continue
            channels = () if closed else dark_channels
            segments.append(
                lindblad.Segment(duration, frame_hamiltonian(), channels)
            )
            continue
        if isinstance(stmt, Pulse):
            plan = plans[stmt.source]
            if plan.counts is None:
                raise CompileError(
                    f"{context}: the model declares no {stmt.source} sites"
                )
            line, amplitude, rabi = _pulse_calibration(resolved, stmt)
            group_names = {q.split(".", 1)[1] for q in plan.sites}
            if line.drive_site.split(".", 1)[1] not in group_names:
                raise CompileError(
                    f"{context}: transition {stmt.label!r} drives "
                    f"{line.drive_site}, which is not among the "
                    f"{stmt.source} sites {plan.sites}"
                )
            if stmt.angle is not None:
                if rabi <= 0.0:
                    raise CompileError(
                        f"{context}: transition {stmt.label!r} has no "
                        "calibrated Rabi rate; give an amp option"
                    )
                duration = stmt.angle.value / (2.0 * math.pi * rabi)
            else:
                duration = _resolve_duration(
                    stmt.duration, sweep_point, context
                )
            plan.frequency_hz = plan.carrier_for(line)
            total += duration
            if duration == 0.0:
                continue
            drive = _pair_coupling(
                model, resolved, line, amplitude, stmt.phase_rad
            )
            channels = () if closed else dark_channels
            segments.append(
                lindblad.Segment(
                    duration, frame_hamiltonian() + drive, channels
                )
            )
            continue
        raise CompileError(f"{context}: cannot compile {stmt!r}")

    carriers = {
        source: plan.frequency_hz
        for source, plan in plans.items()
        if plan.frequency_hz is not None
    }
    return CompiledProgram(
        tuple(segments), tuple(readout), total, carriers
    )


def _mask_by_counts_local(h: np.ndarray, counts_list) -> np.ndarray:
    out = np.asarray(h, dtype=complex).copy()
    for counts in counts_list:
        dn = np.subtract.outer(counts, counts)
        out = np.where(dn == 0, out, 0.0)
    return out


# --------------------------------------------------------------------------
# Execution.


@dataclass(frozen=True)
class ProgramResult:
    """States at segment boundaries plus photons per readout segment."""

    states: tuple
    photons: tuple  # (segment index, expected photon count) pairs

    @property
    def final(self):
        return self.states[-1]

    @property
    def readout_photons(self) -> float:
        """Photon count of the last readout segment (the readout window)."""
        if not self.photons:
            raise ConfigurationError("program has no readout segment")
        return self.photons[-1][1]


def ground_state(model: LevelModel) -> lindblad.DensityMatrix:
    """Laser-off relaxed state: optical ground level, nuclei unpolarized."""
    weights = np.array(
        [
            1.0 if label[0] == "eg" and label[1] == -0.5 else 0.0
            for label in model.basis_labels
        ]
    )
    return lindblad.DensityMatrix(
        np.diag(weights / weights.sum()), model.basis_labels
    )


def pinned_block_state(
    model: LevelModel, manifold: str, pins: dict
) -> lindblad.DensityMatrix:
    """Uniform state over one manifold's basis states matching the pins.

    ``pins`` maps site names to projections; unpinned sites are left
    maximally mixed. Useful as an idealized initial state for closed-system
    gate checks.
    """
    mf = model.manifold(manifold)
    slots = {model.site_slot(manifold, site): m for site, m in pins.items()}
    offset = model.block_slice(manifold).start
    weights = np.zeros(model.dimension)
    for k, local in enumerate(mf.basis_labels()):
        if all(abs(local[slot] - m) < 1e-9 for slot, m in slots.items()):
            weights[offset + k] = 1.0
    if weights.sum() == 0.0:
        raise ConfigurationError(
            f"no basis state of {manifold!r} matches the pins {pins!r}"
        )
    return lindblad.DensityMatrix(
        np.diag(weights / weights.sum()), model.basis_labels
    )


def site_polarization(model: LevelModel, state, qualified: str) -> float:
    """Polarization of one site, normalized to [-1, 1] within its manifold.

    Computes <S_z>/(S * population of the manifold block); an empty block
    raises, because the polarization is then undefined.
    """
    rho = state.entries if hasattr(state, "entries") else np.asarray(state)
    block_label, site = qualified.split(".", 1)
    mf = model.manifold(block_label)
    slot = model.site_slot(block_label, site)
    spin = mf.electron.spin if slot == 0 else mf.nuclei[slot - 1].species.spin
    sl = model.block_slice(block_label)
    block = rho[sl, sl]
    population = float(np.real(np.trace(block)))
    if population <= 1e-12:
        raise ConfigurationError(
            f"manifold {block_label!r} holds no population; polarization "
            "is undefined"
        )
    sz = mf.site_operators(slot)[2]
    return float(np.real(np.trace(sz @ block))) / (spin * population)


class _PropagatorCache:
    """Memoized per-segment propagators, shared across sweep points."""

    def __init__(self):
        self.entries: dict = {}

    def key(self, segment: lindblad.Segment, c_row: np.ndarray):
        chans = tuple(
            (ch.label, ch.rate_per_s, ch.jump_operator.tobytes())
            for ch in segment.channels
        )
        return (
            segment.duration_s,
            segment.hamiltonian_hz.tobytes(),
            chans,
            c_row.tobytes(),
        )


def _segment_propagator(
    segment: lindblad.Segment, c_row: np.ndarray, cache: _PropagatorCache
):
    key = cache.key(segment, c_row)
    hit = cache.entries.get(key)
    if hit is not None:
        return hit
    if segment.channels:
        # One extra quadrature row turns the photon-rate integral into a
        # component of the propagated vector, with no quadrature error.
        gen = lindblad.liouvillian(segment.hamiltonian_hz, segment.channels)
        size = gen.shape[0]
        aug = np.zeros((size + 1, size + 1), dtype=complex)
        aug[:size, :size] = gen
        aug[size, :size] = c_row
        entry = ("open", scipy.linalg.expm(aug * segment.duration_s))
    else:
        u = scipy.linalg.expm(
            -2j * math.pi * segment.hamiltonian_hz * segment.duration_s
        )
        entry = ("closed", u)
    cache.entries[key] = entry
    return entry


def run_program(
    model: LevelModel,
    program: CompiledProgram,
    initial_state=None,
    *,
    cache: _PropagatorCache | None = None,
) -> ProgramResult:
    """Execute a compiled program and integrate readout photons.

    Every boundary state is validated (unit trace, Hermitian, positive).
    Photon counts integrate the collection rate over each readout segment
    exactly through an augmented propagator.
    """
    if initial_state is None:
        initial_state = ground_state(model)
    rho = (
        initial_state.entries
        if hasattr(initial_state, "entries")
        else np.asarray(initial_state, dtype=complex)
    )
    if rho.shape != (model.dimension, model.dimension):
        raise ConfigurationError(
            f"initial state shape {rho.shape} does not match model "
            f"dimension {model.dimension}"
        )
    cache = cache or _PropagatorCache()
    collection = model.collection_operator()
    c_row = collection.T.flatten(order="F")
    dim = model.dimension

    states = [lindblad.DensityMatrix(rho, model.basis_labels)]
    photons = []
    for index, segment in enumerate(program.segments):
        kind, op = _segment_propagator(segment, c_row, cache)
        if kind == "closed":
            rho = op @ rho @ op.conj().T
        else:
            x = np.append(rho.flatten(order="F"), 0.0)
            moved = op @ x
            rho = moved[: dim * dim].reshape((dim, dim), order="F")
            if index in program.readout_segments:
                photons.append((index, float(np.real(moved[dim * dim]))))
        rho = (rho + rho.conj().T) / 2.0
        states.append(lindblad.DensityMatrix(rho, model.basis_labels))
    return ProgramResult(tuple(states), tuple(photons))


def run_sweep(
    model: LevelModel,
    seq: PulseSequence,
    b_field_t,
    *,
    closed: bool = False,
    carrier_shift_hz: dict | None = None,
    initial_state=None,
) -> list[ProgramResult]:
    """Compile and execute every sweep point, reusing propagators.

    Identical segments (the init and readout pulses of a sweep, typically)
    are exponentiated once, so the cost is dominated by the segments that
    actually change between points.
    """
    resolved = resolve(model, b_field_t)
    cache = _PropagatorCache()
    results = []
    for point in sweep_points(seq):
        program = compile_sequence(
            seq,
            model,
            b_field_t,
            point,
            closed=closed,
            carrier_shift_hz=carrier_shift_hz,
            resolved=resolved,
        )
        results.append(
            run_program(model, program, initial_state, cache=cache)
        )
    return results


# --------------------------------------------------------------------------
# Polarization-transfer gate.


def swap_gate(
    electron_transitions: tuple,
    nuclear_transition: str,
) -> PulseSequence:
    """Three-conditional-pi polarization transfer between the pair spins.

    The fragment is ``mw pi @ a; rf pi @ n; mw pi @ a`` where ``a`` is the
    first electron line: an electron flip conditioned on the nuclear state,
    a nuclear flip conditioned on the electron state, and the electron flip
    again. On product states this exchanges the two spins exactly. Passing
    the electron lines in the other order conditions on the complementary
    nuclear projection, which transfers the polarization with the opposite
    sign. The second line is required so the pair can be checked for
    complementarity at compile time (see :func:`validate_swap_labels`).
    """
    line_a, line_b = electron_transitions
    if line_a == line_b:
        raise ConfigurationError(
            "the two electron lines must differ; got "
            f"{line_a!r} twice"
        )
    statements = (
        Pulse("mw", line_a, Angle("pi", math.pi)),
        Pulse("rf", nuclear_transition, Angle("pi", math.pi)),
        Pulse("mw", line_a, Angle("pi", math.pi)),
    )
    return PulseSequence(statements, ())


def validate_swap_labels(
    model: LevelModel, electron_transitions: tuple, nuclear_transition: str
):
    """Check that the labels form a usable polarization-transfer set.

    The two electron lines must flip the same electron site and pin the
    same nuclear site to complementary projections; the nuclear line must
    flip that nuclear site conditioned on the electron site.
    """
    specs = {s.label: s for s in model.transition_specs}
    try:
        spec_a = specs[electron_transitions[0]]
        spec_b = specs[electron_transitions[1]]
        spec_n = specs[nuclear_transition]
    except KeyError as exc:
        raise ConfigurationError(
            f"model defines no transition {exc.args[0]!r}"
        ) from None
    if spec_a.manifold != spec_b.manifold or spec_a.flip != spec_b.flip:
        raise ConfigurationError(
            "electron lines must flip the same site of the same manifold"
        )
    pins_a = dict(spec_a.select)
    pins_b = dict(spec_b.select)
    if set(pins_a) != set(pins_b) or spec_n.flip not in pins_a:
        raise ConfigurationError(
            "electron lines must pin the nuclear site the nuclear line "
            "flips"
        )
    site = spec_n.flip
    if pins_a[site] == pins_b[site]:
        raise ConfigurationError(
            "electron lines pin the nuclear site to the same projection; "
            "they must be complementary"
        )
    if spec_a.flip not in dict(spec_n.select):
        raise ConfigurationError(
            "the nuclear line must pin the electron site the electron "
            "lines flip"
        )
