"""Spin operators, manifold Hamiltonians, and stick spectra.

Conventions used throughout the package:

- Every Hamiltonian is expressed in linear-frequency units (Hz). The angular
  conversion (a factor 2*pi) happens exactly once, inside propagators built by
  :mod:`spindefect.lindblad`.
- Gyromagnetic ratios are linear-frequency ratios in Hz/T, signed.
- Single-spin operator bases are ordered by descending magnetic quantum
  number, ``m = S, S-1, ..., -S``.
- Product bases place the electron slowest (leftmost Kronecker factor), then
  the nuclei in declaration order.
- Eigenvalues are reported ascending; within degenerate clusters eigenvectors
  are ordered by the index of their maximal basis overlap and given a
  deterministic phase.

A *manifold* is one electronic spin system plus the nuclear spins coupled to
it. Independent manifolds (distinct electronic configurations of the same
defect complex) compose as a direct sum: there is no coherent coupling between
manifolds, only incoherent channels added at the master-equation level.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigurationError,
    InvalidSpeciesError,
    ModelTooLargeError,
    NumericalContractError,
)

# Default electron gyromagnetic ratio, linear frequency per field [Hz/T].
GAMMA_ELECTRON_HZ_PER_T = 2.8025e10

# Bohr magneton over Planck constant [Hz/T]; converts a g-factor to Hz/T.
MU_B_OVER_H_HZ_PER_T = 1.3996245e10

# Hilbert-space dimension cap for a single composition request.
DEFAULT_MAX_DIMENSION = 4096

# Sticks closer than this are reported as one line with summed intensity [Hz].
MERGE_TOLERANCE_HZ = 1.0

# Relative Frobenius tolerance for hermiticity contracts.
HERMITICITY_RTOL = 1e-9


@dataclass(frozen=True)
class SpinSpecies:
    """One kind of spin-carrying particle.

    Args:
        spin: total spin quantum number; a positive multiple of 1/2.
        gyromagnetic_hz_per_t: signed linear-frequency gyromagnetic ratio.
            Zero is allowed and marks a level pair that no magnetic drive
            addresses (used for purely orbital two-level systems).
        label: short human-readable name such as ``"13C"``.
    """

    spin: float
    gyromagnetic_hz_per_t: float
    label: str

    def __post_init__(self):
        twice = 2.0 * self.spin
        if (
            not math.isfinite(self.spin)
            or self.spin <= 0
            or abs(twice - round(twice)) > 1e-9
        ):
            raise InvalidSpeciesError(
                f"spin quantum number must be a positive multiple of 1/2, "
                f"got {self.spin!r} for species {self.label!r}"
            )

    @property
    def multiplicity(self) -> int:
        return int(round(2.0 * self.spin)) + 1

    def projections(self) -> tuple[float, ...]:
        """Magnetic quantum numbers in basis order (descending)."""
        return tuple(self.spin - k for k in range(self.multiplicity))


# Registry of the species this defect family cares about. Gyromagnetic
# ratios are linear-frequency values [Hz/T].
SPECIES_REGISTRY: dict[str, SpinSpecies] = {
    "e": SpinSpecies(0.5, GAMMA_ELECTRON_HZ_PER_T, "e"),
    "13C": SpinSpecies(0.5, 1.0705e7, "13C"),
    "11B": SpinSpecies(1.5, 1.3663e7, "11B"),
    "14N": SpinSpecies(1.0, 3.077e6, "14N"),
}


def species(name: str) -> SpinSpecies:
    """Look up a registered species by label."""
    try:
        return SPECIES_REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(SPECIES_REGISTRY))
        raise InvalidSpeciesError(
            f"unknown species {name!r}; registered species: {known}"
        ) from None


def spin_operators(spin: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return the (Sx, Sy, Sz) matrices for a given spin quantum number.

    Built from ladder operators in the descending-m basis, so ``Sz`` is
    diagonal with entries ``S, S-1, ..., -S`` and the trio satisfies
    ``[Sx, Sy] = i Sz``.

    Args:
        spin: positive multiple of 1/2.

    Returns:
        Tuple of three complex ``(2S+1, 2S+1)`` arrays.
    """
    # Validation is shared with SpinSpecies.
    probe = SpinSpecies(spin, 0.0, "probe")
    dim = probe.multiplicity
    m = np.array(probe.projections())
    sz = np.diag(m).astype(complex)
    s_plus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        # <m+1| S+ |m> with m = spin - k; the raised state sits one row up.
        mk = spin - k
        s_plus[k - 1, k] = math.sqrt(spin * (spin + 1) - mk * (mk + 1))
    sx = (s_plus + s_plus.conj().T) / 2.0
    sy = (s_plus - s_plus.conj().T) / 2.0j
    return sx, sy, sz


def _euler_zyz(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Active ZYZ rotation matrix R = Rz(alpha) @ Ry(beta) @ Rz(gamma)."""

    def rz(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def ry(t):
        c, s = math.cos(t), math.sin(t)
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])

    return rz(alpha) @ ry(beta) @ rz(gamma)


@dataclass(frozen=True)
class HyperfineTensor:
    """Symmetric 3x3 coupling tensor in Hz.

    Construct either from an explicit matrix (:meth:`from_matrix`) or from
    principal values plus ZYZ Euler angles (:meth:`from_principal`). The
    stored matrix is always the laboratory-frame tensor.
    """

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=float)
        if mat.shape != (3, 3):
            raise ConfigurationError(
                f"coupling tensor must be 3x3, got shape {mat.shape}"
            )
        scale = max(1.0, float(np.abs(mat).max()))
        if np.abs(mat - mat.T).max() > 1e-9 * scale:
            raise NumericalContractError("coupling tensor must be symmetric")
        object.__setattr__(self, "matrix", (mat + mat.T) / 2.0)

    @classmethod
    def from_matrix(cls, matrix) -> "HyperfineTensor":
        return cls(np.asarray(matrix, dtype=float))

    @classmethod
    def from_principal(
        cls,
        axx_hz: float,
        ayy_hz: float,
        azz_hz: float,
        euler_rad: tuple[float, float, float] = (0.0, 0.0, 0.0),
    ) -> "HyperfineTensor":
        """Rotate principal values into the lab frame.

        With all Euler angles zero the lab tensor is the principal diagonal,
        so ``matrix[2, 2]`` recovers ``azz_hz`` exactly.
        """
        rot = _euler_zyz(*euler_rad)
        return cls(rot @ np.diag([axx_hz, ayy_hz, azz_hz]) @ rot.T)

    @classmethod
    def zero(cls) -> "HyperfineTensor":
        return cls(np.zeros((3, 3)))

    @property
    def azz_hz(self) -> float:
        return float(self.matrix[2, 2])

    def is_secular(self, rtol: float = 1e-12) -> bool:
        """True when only the zz element is nonzero."""
        off = self.matrix.copy()
        off[2, 2] = 0.0
        scale = max(1.0, abs(self.azz_hz))
        return bool(np.abs(off).max() <= rtol * scale)


@dataclass(frozen=True)
class NuclearSite:
    """One nuclear (or secondary electronic) spin attached to a manifold."""

    species: SpinSpecies
    hyperfine: HyperfineTensor
    quadrupole_hz: np.ndarray | None = None

    def __post_init__(self):
        if self.quadrupole_hz is not None:
            q = np.asarray(self.quadrupole_hz, dtype=float)
            if q.shape != (3, 3):
                raise ConfigurationError("quadrupole tensor must be 3x3")
            scale = max(1.0, float(np.abs(q).max()))
            if np.abs(q - q.T).max() > 1e-9 * scale:
                raise NumericalContractError(
                    "quadrupole tensor must be symmetric"
                )
            object.__setattr__(self, "quadrupole_hz", (q + q.T) / 2.0)


@dataclass(frozen=True)
class SpinManifold:
    """One electronic spin system plus its coupled nuclear sites.

    Args:
        label: manifold name used in basis labels and config files.
        electron: the electronic spin species (its gyromagnetic ratio may be
            zero for orbital level pairs).
        d_hz: axial zero-field splitting, the ``D Sz^2`` coefficient.
        e_hz: transverse zero-field splitting, the ``E (Sx^2 - Sy^2)``
            coefficient.
        nuclei: nuclear sites in declaration order.
    """

    label: str
    electron: SpinSpecies
    d_hz: float = 0.0
    e_hz: float = 0.0
    nuclei: tuple[NuclearSite, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        if self.electron.spin < 1.0 and (self.d_hz != 0.0 or self.e_hz != 0.0):
            raise ConfigurationError(
                f"manifold {self.label!r}: zero-field splitting requires "
                f"electron spin >= 1, got S={self.electron.spin}"
            )

    @property
    def dimension(self) -> int:
        dim = self.electron.multiplicity
        for site in self.nuclei:
            dim *= site.species.multiplicity
        return dim

    def basis_labels(self) -> tuple[tuple[float, ...], ...]:
        """Product-basis labels ``(m_s, m_i1, m_i2, ...)``, electron slowest."""
        labels: list[tuple[float, ...]] = [()]
        for spc in (self.electron, *(site.species for site in self.nuclei)):
            labels = [
                prev + (m,) for prev in labels for m in spc.projections()
            ]
        return tuple(labels)

    def site_operators(self, slot: int) -> tuple[np.ndarray, ...]:
        """(Sx, Sy, Sz) of one spin embedded in the manifold product space.

        Slot 0 is the electron; slot ``k >= 1`` is ``nuclei[k-1]``.
        """
        spins = [self.electron] + [site.species for site in self.nuclei]
        if not 0 <= slot < len(spins):
            raise ConfigurationError(
                f"manifold {self.label!r} has no spin slot {slot}"
            )
        pre = int(np.prod([s.multiplicity for s in spins[:slot]], initial=1))
        post = int(np.prod([s.multiplicity for s in spins[slot + 1:]], initial=1))
        ops = spin_operators(spins[slot].spin)
        eye_pre = np.eye(pre, dtype=complex)
        eye_post = np.eye(post, dtype=complex)
        return tuple(np.kron(np.kron(eye_pre, op), eye_post) for op in ops)


@dataclass
class HamiltonianMatrix:
    """A Hermitian matrix in Hz together with its product-basis labels."""

    matrix: np.ndarray
    basis_labels: tuple[tuple, ...]

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _check_dimension(dim: int, max_dimension: int):
    if dim > max_dimension:
        raise ModelTooLargeError(
            f"requested Hilbert space has dimension {dim}, "
            f"cap is {max_dimension}"
        )


def build_manifold_hamiltonian(
    manifold: SpinManifold,
    b_field_t,
    max_dimension: int = DEFAULT_MAX_DIMENSION,
) -> HamiltonianMatrix:
    """Assemble the static Hamiltonian of one manifold at a given field.

    Terms, all in Hz:

    ``D Sz^2 + E (Sx^2 - Sy^2) + gamma_e B.S
    + sum_i [ S.A_i.I_i + gamma_n,i B.I_i + I_i.Q_i.I_i ]``

    Args:
        manifold: the spin system.
        b_field_t: static magnetic field, 3-vector in tesla.
        max_dimension: Hilbert-space cap; exceeding it raises
            :class:`ModelTooLargeError`.

    Returns:
        :class:`HamiltonianMatrix` with labels ``(m_s, m_i1, ...)``.
    """
    b = np.asarray(b_field_t, dtype=float).reshape(3)
    _check_dimension(manifold.dimension, max_dimension)

    s_ops = manifold.site_operators(0)
    sx, sy, sz = s_ops
    h = manifold.d_hz * (sz @ sz)
    h = h + manifold.e_hz * (sx @ sx - sy @ sy)
    h = h + manifold.electron.gyromagnetic_hz_per_t * (
        b[0] * sx + b[1] * sy + b[2] * sz
    )
    for k, site in enumerate(manifold.nuclei, start=1):
        i_ops = manifold.site_operators(k)
        a = site.hyperfine.matrix
        for row in range(3):
            for col in range(3):
                if a[row, col] != 0.0:
                    h = h + a[row, col] * (s_ops[row] @ i_ops[col])
        gamma_n = site.species.gyromagnetic_hz_per_t
        if gamma_n != 0.0:
            h = h + gamma_n * (b[0] * i_ops[0] + b[1] * i_ops[1] + b[2] * i_ops[2])
        if site.quadrupole_hz is not None:
            q = site.quadrupole_hz
            for row in range(3):
                for col in range(3):
                    if q[row, col] != 0.0:
                        h = h + q[row, col] * (i_ops[row] @ i_ops[col])
    return HamiltonianMatrix(h, manifold.basis_labels())


def compose_full_hamiltonian(
    manifolds,
    b_field_t,
    max_dimension: int = DEFAULT_MAX_DIMENSION,
) -> HamiltonianMatrix:
    """Direct-sum the Hamiltonians of several manifolds at one field.

    The composite basis is block-ordered as given; labels are the manifold
    label prepended to each manifold's own product label. There is no coherent
    coupling between blocks: any physical connection between manifolds is
    incoherent and belongs in the master-equation channels.

    Args:
        manifolds: non-empty sequence of :class:`SpinManifold`.
        b_field_t: shared static field, 3-vector in tesla.
        max_dimension: cap on the composite dimension.
    """
    manifolds = list(manifolds)
    if not manifolds:
        raise ConfigurationError("cannot compose an empty list of manifolds")
    seen = set()
    for mf in manifolds:
        if mf.label in seen:
            raise ConfigurationError(
                f"duplicate manifold label {mf.label!r} in composition"
            )
        seen.add(mf.label)
    total = sum(mf.dimension for mf in manifolds)
    _check_dimension(total, max_dimension)

    blocks = []
    labels: list[tuple] = []
    for mf in manifolds:
        ham = build_manifold_hamiltonian(mf, b_field_t, max_dimension)
        blocks.append(ham.matrix)
        labels.extend((mf.label, *lab) for lab in ham.basis_labels)
    full = np.zeros((total, total), dtype=complex)
    offset = 0
    for blk in blocks:
        d = blk.shape[0]
        full[offset:offset + d, offset:offset + d] = blk
        offset += d
    return HamiltonianMatrix(full, tuple(labels))


def require_hermitian(matrix: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Raise :class:`NumericalContractError` unless the matrix is Hermitian."""
    mat = np.asarray(matrix)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NumericalContractError(f"{what} must be square")
    scale = max(1.0, float(np.linalg.norm(mat)))
    if np.linalg.norm(mat - mat.conj().T) > HERMITICITY_RTOL * scale:
        raise NumericalContractError(f"{what} is not Hermitian")
    return mat


def ordered_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian eigensystem with a deterministic ordering convention.

    Eigenvalues ascend. Within a degenerate cluster the eigenvectors are
    re-derived from the cluster projector so they align with the basis states
    they overlap most, ordered by ascending index of that maximal overlap,
    and each vector's phase is fixed by making its largest component real
    positive.

    Returns:
        ``(eigenvalues, eigenvectors)`` with eigenvectors in columns.
    """
    mat = require_hermitian(matrix)
    vals, vecs = np.linalg.eigh(mat)
    scale = max(1.0, float(np.abs(vals).max()))
    tol = 1e-10 * scale

    start = 0
    n = len(vals)
    while start < n:
        stop = start + 1
        while stop < n and vals[stop] - vals[stop - 1] <= tol:
            stop += 1
        if stop - start > 1:
            # Re-span the degenerate cluster deterministically: project the
            # dominant basis vectors into the cluster and orthonormalize.
            sub = vecs[:, start:stop]
            proj = sub @ sub.conj().T
            weights = np.abs(np.diagonal(proj))
            order = np.argsort(-weights, kind="stable")[: stop - start]
            order = np.sort(order)
            basis_cols = proj[:, order]
            q, _ = np.linalg.qr(basis_cols)
            vecs[:, start:stop] = q
        start = stop

    # Deterministic phase: largest-magnitude component real positive.
    for j in range(n):
        col = vecs[:, j]
        k = int(np.argmax(np.abs(col)))
        piv = col[k]
        if abs(piv) > 0:
            vecs[:, j] = col * (piv.conjugate() / abs(piv))
    return vals, vecs


@dataclass(frozen=True)
class TransitionStick:
    """One line of a stick spectrum."""

    frequency_hz: float
    intensity: float


def transitions(
    hamiltonian: HamiltonianMatrix | np.ndarray,
    drive_operator: np.ndarray,
    intensity_threshold: float = 1e-8,
) -> list[TransitionStick]:
    """Stick spectrum of a Hamiltonian under a given drive operator.

    For every eigenpair ``i < j`` the line frequency is ``|E_j - E_i|`` and
    the intensity is ``|<i| drive |j>|^2``. Lines below the intensity
    threshold are omitted; survivors are sorted ascending in frequency and
    lines within 1 Hz of each other are merged (intensity-weighted mean
    frequency, summed intensity).

    Args:
        hamiltonian: Hermitian matrix in Hz (plain array accepted).
        drive_operator: operator whose matrix elements weight the lines.
        intensity_threshold: minimum ``|<i|drive|j>|^2`` to keep a line.

    Returns:
        Merged sticks, ascending in frequency.
    """
    mat = hamiltonian.matrix if isinstance(hamiltonian, HamiltonianMatrix) else hamiltonian
    mat = require_hermitian(mat, "hamiltonian")
    drive = np.asarray(drive_operator, dtype=complex)
    if drive.shape != mat.shape:
        raise ConfigurationError(
            f"drive operator shape {drive.shape} does not match "
            f"hamiltonian shape {mat.shape}"
        )
    vals, vecs = ordered_eigh(mat)
    overlap = vecs.conj().T @ drive @ vecs
    raw: list[tuple[float, float]] = []
    n = len(vals)
    for i in range(n):
        for j in range(i + 1, n):
            weight = abs(overlap[i, j]) ** 2
            if weight >= intensity_threshold:
                raw.append((abs(vals[j] - vals[i]), weight))
    raw.sort(key=lambda item: item[0])

    merged: list[TransitionStick] = []
    for freq, weight in raw:
        if merged and freq - merged[-1].frequency_hz <= MERGE_TOLERANCE_HZ:
            prev = merged[-1]
            tot = prev.intensity + weight
            mean = (prev.frequency_hz * prev.intensity + freq * weight) / tot
            merged[-1] = TransitionStick(mean, tot)
        else:
            merged.append(TransitionStick(freq, weight))
    return merged
