"""Open-system evolution: Liouvillians, piecewise-constant propagation, steady states.

Everything here works on dense numpy arrays. Hamiltonians are linear-frequency
Hz and pick up their factor of 2*pi only inside the superoperator, so a drive
amplitude of a Hz on a spin-1/2 flip operator inverts the population after
1/(2a) seconds. Lindblad rates are plain s^-1: a two-level decay channel at
rate G empties the excited state as exp(-G t).

Density matrices are vectorized by column stacking, so
vec(A @ X @ B) = kron(B.T, A) @ vec(X), and the master equation

    drho/dt = -i 2 pi [H, rho] + sum_k G_k (L rho Ld - (Ld L rho + rho Ld L)/2)

becomes a single constant matrix per segment, exponentiated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    ConfigurationError,
    NumericalContractError,
    SegmentError,
    SteadyStateAmbiguityError,
)

# Numerical contracts enforced on every state a trajectory emits.
TRACE_TOLERANCE = 1e-9
HERMITICITY_TOLERANCE = 1e-9
EIGENVALUE_FLOOR = -1e-8
# Kernel membership threshold for steady states, relative to sigma_max.
KERNEL_RELATIVE_THRESHOLD = 1e-10
RESIDUAL_RELATIVE_TOLERANCE = 1e-8


def _as_matrix(obj) -> np.ndarray:
    """Accept a bare ndarray or anything carrying .matrix / .entries."""
    if hasattr(obj, "matrix"):
        obj = obj.matrix
    elif hasattr(obj, "entries"):
        obj = obj.entries
    arr = np.asarray(obj, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigurationError(f"expected a square matrix, got shape {arr.shape}")
    return arr


def vectorize(rho) -> np.ndarray:
    """Column-stack a matrix into a vector (Fortran order)."""
    return _as_matrix(rho).reshape(-1, order="F")


def unvectorize(vec) -> np.ndarray:
    """Inverse of vectorize."""
    flat = np.asarray(vec, dtype=complex).reshape(-1)
    dim = math.isqrt(flat.size)
    if dim * dim != flat.size:
        raise ConfigurationError(
            f"vector of length {flat.size} is not a stacked square matrix"
        )
    return flat.reshape((dim, dim), order="F")


@dataclass(frozen=True)
class LindbladChannel:
    """One incoherent channel: jump operator L_k applied at rate_per_s."""

    jump_operator: np.ndarray
    rate_per_s: float
    label: str = ""

    def __post_init__(self):
        op = np.asarray(self.jump_operator, dtype=complex)
        if op.ndim != 2 or op.shape[0] != op.shape[1]:
            raise ConfigurationError(
                f"jump operator must be square, got shape {op.shape}"
            )
        op.setflags(write=False)
        object.__setattr__(self, "jump_operator", op)
        rate = float(self.rate_per_s)
        if not math.isfinite(rate) or rate < 0.0:
            raise ConfigurationError(f"channel rate must be >= 0, got {rate}")
        object.__setattr__(self, "rate_per_s", rate)

    @property
    def dimension(self) -> int:
        return self.jump_operator.shape[0]


@dataclass(frozen=True)
class DensityMatrix:
    """A validated quantum state.

    Construction enforces the integrity contract: Hermitian within 1e-9,
    trace within 1e-9 of one, smallest eigenvalue above -1e-8. Violations
    raise NumericalContractError so silent decay of a simulation into an
    unphysical state is impossible.
    """

    entries: np.ndarray
    basis_labels: tuple = ()

    def __post_init__(self):
        arr = np.array(_as_matrix(self.entries), copy=True)
        scale = max(1.0, float(np.linalg.norm(arr)))
        drift = np.linalg.norm(arr - arr.conj().T)
        if drift > HERMITICITY_TOLERANCE * scale:
            raise NumericalContractError(
                f"density matrix is not Hermitian (deviation {drift:.3e})"
            )
        trace = arr.trace()
        if abs(trace - 1.0) > TRACE_TOLERANCE:
            raise NumericalContractError(
                f"density matrix trace {trace:.12g} deviates from 1 by "
                f"{abs(trace - 1.0):.3e}"
            )
        lowest = float(np.linalg.eigvalsh(0.5 * (arr + arr.conj().T))[0])
        if lowest <= EIGENVALUE_FLOOR:
            raise NumericalContractError(
                f"density matrix has eigenvalue {lowest:.3e} below the "
                f"{EIGENVALUE_FLOOR:g} floor"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        labels = tuple(self.basis_labels)
        if labels and len(labels) != arr.shape[0]:
            raise ConfigurationError(
                f"{len(labels)} basis labels for dimension {arr.shape[0]}"
            )
        object.__setattr__(self, "basis_labels", labels)

    @property
    def dimension(self) -> int:
        return self.entries.shape[0]

    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()

    def purity(self) -> float:
        return float(np.real(np.trace(self.entries @ self.entries)))

    def expectation(self, operator) -> complex:
        op = _as_matrix(operator)
        return complex(np.trace(op @ self.entries))


def pure_state(amplitudes, basis_labels=()) -> DensityMatrix:
    """Density matrix of a ket, normalizing the amplitude vector."""
    vec = np.asarray(amplitudes, dtype=complex).reshape(-1)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ConfigurationError("cannot normalize a zero state vector")
    vec = vec / norm
    return DensityMatrix(np.outer(vec, vec.conj()), basis_labels)


def basis_state(dimension: int, index: int, basis_labels=()) -> DensityMatrix:
    vec = np.zeros(dimension)
    vec[index] = 1.0
    return pure_state(vec, basis_labels)


def maximally_mixed(dimension: int, basis_labels=()) -> DensityMatrix:
    return DensityMatrix(np.eye(dimension) / dimension, basis_labels)


@dataclass(frozen=True)
class Segment:
    """A stretch of evolution under one constant Hamiltonian and channel set."""

    duration_s: float
    hamiltonian_hz: np.ndarray
    channels: tuple = ()

    def __post_init__(self):
        duration = float(self.duration_s)
        if not math.isfinite(duration) or duration <= 0.0:
            raise SegmentError(f"segment duration must be > 0 s, got {duration}")
        object.__setattr__(self, "duration_s", duration)
        ham = _as_matrix(self.hamiltonian_hz)
        ham.setflags(write=False)
        object.__setattr__(self, "hamiltonian_hz", ham)
        chans = tuple(self.channels)
        for chan in chans:
            if not isinstance(chan, LindbladChannel):
                raise ConfigurationError(
                    f"segment channels must be LindbladChannel, got {type(chan)!r}"
                )
        object.__setattr__(self, "channels", chans)

    @property
    def dimension(self) -> int:
        return self.hamiltonian_hz.shape[0]


def liouvillian(hamiltonian_hz, channels=()) -> np.ndarray:
    """Dense superoperator generating drho/dt on column-stacked states.

    The Hamiltonian enters as -i 2 pi (I (x) H - H^T (x) I); each channel adds
    rate * (conj(L) (x) L - (I (x) LdL + (LdL)^T (x) I) / 2) with the rate in
    plain s^-1.
    """
    ham = _as_matrix(hamiltonian_hz)
    dim = ham.shape[0]
    norm = float(np.linalg.norm(ham))
    if norm > 0.0 and np.linalg.norm(ham - ham.conj().T) > 1e-9 * norm:
        raise ConfigurationError("Hamiltonian must be Hermitian")
    ident = np.eye(dim)
    sup = -2j * np.pi * (np.kron(ident, ham) - np.kron(ham.T, ident))
    for chan in channels:
        if chan.dimension != dim:
            raise ConfigurationError(
                f"channel {chan.label!r} has dimension {chan.dimension}, "
                f"Hamiltonian has {dim}"
            )
        if chan.rate_per_s == 0.0:
            continue
        op = chan.jump_operator
        opdag_op = op.conj().T @ op
        sup = sup + chan.rate_per_s * (
            np.kron(op.conj(), op)
            - 0.5 * np.kron(ident, opdag_op)
            - 0.5 * np.kron(opdag_op.T, ident)
        )
    return sup


def propagator(superoperator: np.ndarray, duration_s: float) -> np.ndarray:
    """exp(superoperator * duration) by scaling-and-squaring."""
    return scipy.linalg.expm(np.asarray(superoperator, dtype=complex) * duration_s)


@dataclass(frozen=True)
class Trajectory:
    """Evolution samples: one validated state per requested time."""

    times_s: np.ndarray
    states: tuple

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]

    def populations(self) -> np.ndarray:
        """Real diagonal of every sample, shape (n_times, dimension)."""
        return np.array([state.populations() for state in self.states])

    def expectation(self, operator) -> np.ndarray:
        op = _as_matrix(operator)
        return np.array([state.expectation(op) for state in self.states])


def _resymmetrized(matrix: np.ndarray, where: str) -> np.ndarray:
    """(rho + rho^dagger) / 2 with the correction magnitude checked.

    The exact exponential keeps states Hermitian up to roundoff; the halves
    cancel that drift, and a drift past 1e-9 means the propagation itself went
    wrong, so it raises instead of papering over.
    """
    drift = np.linalg.norm(matrix - matrix.conj().T) / 2.0
    if drift > HERMITICITY_TOLERANCE * max(1.0, np.linalg.norm(matrix)):
        raise NumericalContractError(
            f"Hermiticity drift {drift:.3e} at {where} exceeds the "
            f"{HERMITICITY_TOLERANCE:g} bound"
        )
    return 0.5 * (matrix + matrix.conj().T)


def _coerce_density(state, labels=()) -> DensityMatrix:
    if isinstance(state, DensityMatrix):
        return state
    return DensityMatrix(state, labels)


def evolve(rho0, segments, sample_times=None) -> Trajectory:
    """Propagate rho0 through piecewise-constant segments exactly.

    Emits the state at t = 0, at every segment boundary, and at every
    requested sample time (which must lie inside the program). Each emitted
    state passes the DensityMatrix contract, so trace and positivity are
    enforced throughout the trajectory.
    """
    state = _coerce_density(rho0)
    segments = list(segments)
    if not segments:
        raise SegmentError("evolve requires at least one segment")
    for seg in segments:
        if not isinstance(seg, Segment):
            raise ConfigurationError(f"expected Segment, got {type(seg)!r}")
        if seg.dimension != state.dimension:
            raise ConfigurationError(
                f"segment dimension {seg.dimension} does not match state "
                f"dimension {state.dimension}"
            )

    boundaries = np.cumsum([seg.duration_s for seg in segments])
    total = float(boundaries[-1])
    extra = np.asarray([] if sample_times is None else sample_times, dtype=float)
    if extra.size:
        if np.any(extra < 0.0) or np.any(extra > total * (1.0 + 1e-12)):
            raise SegmentError(
                f"sample times must lie within [0, {total:g}] s"
            )
    times = np.unique(np.concatenate([[0.0], boundaries, extra]))

    labels = state.basis_labels
    emitted = [(0.0, state)]
    current = vectorize(state.entries)
    cursor = 0.0
    seg_start = 0.0
    for seg, seg_end in zip(segments, boundaries):
        sup = liouvillian(seg.hamiltonian_hz, seg.channels)
        inside = times[(times > seg_start) & (times <= seg_end)]
        for t_sample in inside:
            current = propagator(sup, t_sample - cursor) @ current
            cursor = float(t_sample)
            matrix = _resymmetrized(unvectorize(current), f"t = {cursor:g} s")
            emitted.append((cursor, DensityMatrix(matrix, labels)))
        # Continue the next segment from the cleaned state.
        current = vectorize(emitted[-1][1].entries)
        seg_start = float(seg_end)

    out_times = np.array([t for t, _ in emitted])
    out_states = tuple(state for _, state in emitted)
    return Trajectory(out_times, out_states)


def steady_state(superoperator, basis_labels=()) -> DensityMatrix:
    """Unique trace-one kernel element of a Liouvillian.

    The kernel is read off the SVD at threshold 1e-10 * sigma_max. Anything
    other than a one-dimensional kernel raises SteadyStateAmbiguityError
    carrying the kernel dimension; an unphysical kernel element (traceless or
    negative) raises NumericalContractError.
    """
    sup = np.asarray(superoperator, dtype=complex)
    if sup.ndim != 2 or sup.shape[0] != sup.shape[1]:
        raise ConfigurationError(f"superoperator must be square, got {sup.shape}")
    dim = math.isqrt(sup.shape[0])
    if dim * dim != sup.shape[0]:
        raise ConfigurationError(
            f"superoperator side {sup.shape[0]} is not a perfect square"
        )
    _, singulars, vh = np.linalg.svd(sup)
    sigma_max = float(singulars[0]) if singulars.size else 0.0
    threshold = KERNEL_RELATIVE_THRESHOLD * max(sigma_max, np.finfo(float).tiny)
    kernel_dim = int(np.count_nonzero(singulars < threshold))
    if kernel_dim != 1:
        raise SteadyStateAmbiguityError(kernel_dim)

    rho = unvectorize(vh[-1].conj())
    trace = rho.trace()
    if abs(trace) < 1e-12 * np.linalg.norm(rho):
        raise NumericalContractError(
            "steady-state kernel element is traceless; no physical state"
        )
    rho = _resymmetrized(rho / trace, "steady state")

    residual = np.linalg.norm(sup @ vectorize(rho))
    if residual > RESIDUAL_RELATIVE_TOLERANCE * max(sigma_max, 1.0):
        raise NumericalContractError(
            f"steady-state residual {residual:.3e} exceeds tolerance "
            f"relative to sigma_max = {sigma_max:.3e}"
        )
    return DensityMatrix(rho, basis_labels)


def trace_distance(state_a, state_b) -> float:
    """0.5 * trace norm of the difference; metric on density matrices."""
    diff = _as_matrix(state_a) - _as_matrix(state_b)
    return float(0.5 * np.sum(np.linalg.svd(diff, compute_uv=False)))
