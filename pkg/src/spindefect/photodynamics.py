"""Optical-cycle photodynamics of spin-pair defect models.

The level scheme couples three manifolds of one defect complex:

- ``"eg"``: the optical ground/excited singlet pair, a pseudo-spin-1/2
  doublet with zero gyromagnetic ratio (``m = -1/2`` is the ground level
  ``g``, ``m = +1/2`` the excited level ``e``).
- ``"triplet"``: the metastable S = 1 manifold carrying the zero-field
  splitting.
- ``"pair"``: the metastable weakly coupled charge-separated configuration,
  two spin-1/2 electrons. ``electron_a`` is the manifold electron and holds
  the nuclear hyperfine coupling; ``electron_b`` only sees the Zeeman field.

The same nuclear sites appear in every manifold so that the incoherent
channels connecting the manifolds conserve the nuclear state; per-manifold
hyperfine tensors may differ (and are typically zero outside the pair
block).

All incoherent channels are elementary jump operators between product-basis
configurations, summed over the nuclear register. Rotating-frame generators
are diagonal in the product basis, which keeps every dissipator exactly
frame-invariant; only the Hamiltonian is masked to the frame sectors
(generalized rotating-wave approximation, exact for secular tensors).

Steady states are computed on the block-diagonal subspace of the density
matrix (coherences between manifolds are never sourced), which keeps CW
sweeps cheap even for larger nuclear registers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import lindblad
from .analysis import SpectrumResult
from .errors import (
    ConfigurationError,
    ModelTooLargeError,
    NumericalContractError,
    SteadyStateAmbiguityError,
)
from .spincore import (
    DEFAULT_MAX_DIMENSION,
    HyperfineTensor,
    NuclearSite,
    SpinManifold,
    SpinSpecies,
    TransitionStick,
    build_manifold_hamiltonian,
    ordered_eigh,
    species,
)
from .spincore import transitions as _stick_transitions

# Rates every spin-pair model must specify, in s^-1. The ms1 values apply to
# both m = +1 and m = -1 unless an explicit msm1 override is given.
REQUIRED_RATE_KEYS = (
    "pump",
    "radiative",
    "isc_in_ms0",
    "isc_in_ms1",
    "isc_out_ms0",
    "isc_out_ms1",
    "hop_ms0",
    "hop_ms1",
)

# Optional keys and their defaults; None means "copy the ms1 value".
_OPTIONAL_RATE_DEFAULTS = {
    "isc_in_msm1": None,
    "isc_out_msm1": None,
    "hop_msm1": None,
    "recombine": 1.0e6,
    "dark_recombine_factor": 0.05,
    "electron_t1_s": 144e-6,
    "nuclear_t1_s": 10e-3,
}

_TIME_KEYS = ("electron_t1_s", "nuclear_t1_s")

# Matching eigenpairs addressed by one named transition must agree to this.
TRANSITION_GROUP_TOLERANCE_HZ = 1.0

# Minimum |<hi| Sx |lo>| for a transition to count as drivable.
DRIVE_ELEMENT_FLOOR = 1e-6

# Steady-state solve: relative residual bound and kernel detection threshold
# (matching the conventions of the lindblad module).
RESIDUAL_RELATIVE_TOLERANCE = 1e-8
KERNEL_RELATIVE_THRESHOLD = 1e-10


def default_rates() -> dict[str, float]:
    """Baseline rate set for the spin-pair optical cycle, in s^-1.

    Pumping at 10 MHz, radiative decay at 50 MHz, intersystem crossing
    preferring m = 0 ten-to-one in both directions, charge hopping at
    5 MHz / 0.5 MHz for the m = 0 / m = +-1 sectors, and recombination at
    1 MHz from the bright pair sector.
    """
    return {
        "pump": 10e6,
        "radiative": 50e6,
        "isc_in_ms0": 10e6,
        "isc_in_ms1": 1e6,
        "isc_out_ms0": 10e6,
        "isc_out_ms1": 1e6,
        "hop_ms0": 5e6,
        "hop_ms1": 0.5e6,
        "recombine": 1e6,
        "dark_recombine_factor": 0.05,
        "electron_t1_s": 144e-6,
        "nuclear_t1_s": 10e-3,
    }


@dataclass(frozen=True)
class TransitionSpec:
    """A named addressable line of the model.

    ``flip`` is the site whose projection changes ``between`` the two given
    values; ``select`` pins spectator sites. Spectators left unpinned must
    be degenerate (the line then addresses every matching eigenpair at
    once).
    """

    label: str
    manifold: str
    flip: str
    between: tuple[float, float]
    select: tuple[tuple[str, float], ...]
    rabi_hz: float


@dataclass(frozen=True)
class ModelChannel:
    """One incoherent process: an elementary jump summed over the nuclei."""

    kind: str
    operator: np.ndarray
    rate_per_s: float


def _site_names(manifold: SpinManifold) -> tuple[str, ...]:
    if manifold.label == "pair":
        names = ["electron_a"]
    elif manifold.label == "eg":
        names = ["level"]
    else:
        names = ["electron"]
    extra_electrons = 0
    nucleus_count = 0
    for site in manifold.nuclei:
        if site.species.label == "e":
            extra_electrons += 1
            names.append("electron_" + "bcdefg"[extra_electrons - 1])
        else:
            nucleus_count += 1
            names.append(f"nucleus{nucleus_count}")
    return tuple(names)


class LevelModel:
    """A complete spin-pair optical-cycle model.

    Build instances with :func:`build_spin_pair_model`; everything here is
    derived data. Attributes of interest:

    - ``manifolds``: the (pair, triplet, eg) :class:`SpinManifold` trio.
    - ``block_table``: ``(label, offset, dimension)`` rows of the composite
      direct-sum space.
    - ``basis_labels``: full-space product labels, block label first.
    - ``channels``: the incoherent :class:`ModelChannel` processes.
    - ``rates``: the validated rate dictionary (s^-1 and seconds).
    """

    def __init__(
        self,
        name: str,
        bright_config: str,
        manifolds: tuple[SpinManifold, ...],
        rates: dict[str, float],
        collection_efficiency: float,
        mw_sites: tuple[str, ...],
        rf_sites: tuple[str, ...],
        transition_specs: tuple[TransitionSpec, ...],
    ):
        self.name = name
        self.bright_config = bright_config
        self.manifolds = tuple(manifolds)
        self.rates = dict(rates)
        self.collection_efficiency = float(collection_efficiency)
        self.mw_sites = tuple(mw_sites)
        self.rf_sites = tuple(rf_sites)
        self.transition_specs = tuple(transition_specs)

        table = []
        labels: list[tuple] = []
        offset = 0
        for mf in self.manifolds:
            table.append((mf.label, offset, mf.dimension))
            labels.extend((mf.label, *lab) for lab in mf.basis_labels())
            offset += mf.dimension
        self.block_table = tuple(table)
        self.basis_labels = tuple(labels)
        self._index = {label: k for k, label in enumerate(labels)}
        self._slots = {}
        for mf in self.manifolds:
            for slot, site_name in enumerate(_site_names(mf)):
                self._slots[(mf.label, site_name)] = slot

        self.channels = _build_channels(self)

    @property
    def dimension(self) -> int:
        return len(self.basis_labels)

    def manifold(self, label: str) -> SpinManifold:
        for mf in self.manifolds:
            if mf.label == label:
                return mf
        raise ConfigurationError(f"model has no manifold {label!r}")

    def block_slice(self, label: str) -> slice:
        for blk, offset, dim in self.block_table:
            if blk == label:
                return slice(offset, offset + dim)
        raise ConfigurationError(f"model has no manifold {label!r}")

    def basis_index(self, label: tuple) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ConfigurationError(
                f"no basis state labelled {label!r}"
            ) from None

    def site_slot(self, manifold_label: str, site_name: str) -> int:
        try:
            return self._slots[(manifold_label, site_name)]
        except KeyError:
            known = ", ".join(
                name for blk, name in self._slots if blk == manifold_label
            )
            raise ConfigurationError(
                f"manifold {manifold_label!r} has no site {site_name!r}"
                + (f"; sites: {known}" if known else "")
            ) from None

    def _split_qualified(self, qualified: str) -> tuple[str, int]:
        if "." not in qualified:
            raise ConfigurationError(
                f"site name {qualified!r} must look like 'manifold.site'"
            )
        block, site_name = qualified.split(".", 1)
        return block, self.site_slot(block, site_name)

    def site_operator(self, qualified: str, axis: int) -> np.ndarray:
        """One spin component of a site, embedded in the full space."""
        block, slot = self._split_qualified(qualified)
        mf = self.manifold(block)
        local = mf.site_operators(slot)[axis]
        out = np.zeros((self.dimension, self.dimension), dtype=complex)
        sl = self.block_slice(block)
        out[sl, sl] = local
        return out

    def flip_operator(self, sites) -> np.ndarray:
        """Sum of the Sx operators of the given qualified sites."""
        out = np.zeros((self.dimension, self.dimension), dtype=complex)
        for qualified in sites:
            out += self.site_operator(qualified, 0)
        return out

    def count_vector(self, sites) -> np.ndarray:
        """Integer excitation count (S + m summed over sites) per basis state.

        This is the rotating-frame generator for a carrier driving the given
        sites: it is diagonal in the product basis, steps by one across
        every single-quantum drive element, and increases with m so that
        transitions whose upper level has the larger projection come into
        resonance at positive carrier frequency. A site name is counted in
        every manifold that carries it, because incoherent channels that
        move population between manifolds preserve that site's projection;
        the all-manifold count keeps every such channel single-phased in the
        rotating frame, which is what makes the frame exact.
        """
        n = np.zeros(self.dimension, dtype=float)
        seen = set()
        for qualified in sites:
            self._split_qualified(qualified)
            site_name = qualified.split(".", 1)[1]
            for mf in self.manifolds:
                key = (mf.label, site_name)
                if key not in self._slots or key in seen:
                    continue
                seen.add(key)
                slot = self._slots[key]
                spin = (
                    mf.electron.spin
                    if slot == 0
                    else mf.nuclei[slot - 1].species.spin
                )
                offset = self.block_slice(mf.label).start
                for k, lab in enumerate(mf.basis_labels()):
                    n[offset + k] += spin + lab[slot]
        rounded = np.rint(n)
        if np.abs(n - rounded).max() > 1e-9:
            raise NumericalContractError("frame counts are not integers")
        return rounded.astype(int)

    def collection_operator(self) -> np.ndarray:
        """Photon collection operator: efficiency x radiative rate x |e><e|."""
        out = np.zeros((self.dimension, self.dimension), dtype=complex)
        weight = self.collection_efficiency * self.rates["radiative"]
        for k, label in enumerate(self.basis_labels):
            if label[0] == "eg" and label[1] == 0.5:
                out[k, k] = weight
        return out


def _as_rate(value, key) -> float:
    try:
        rate = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"rate {key!r} must be a number") from None
    if key in _TIME_KEYS:
        if not rate > 0.0:
            raise ConfigurationError(f"rate {key!r} must be a positive time")
    elif not (math.isfinite(rate) and rate >= 0.0):
        raise ConfigurationError(f"rate {key!r} must be finite and >= 0")
    return rate


def _validated_rates(raw: dict) -> dict[str, float]:
    missing = [key for key in REQUIRED_RATE_KEYS if key not in raw]
    if missing:
        raise ConfigurationError(
            "missing rate keys: " + ", ".join(sorted(missing))
        )
    known = set(REQUIRED_RATE_KEYS) | set(_OPTIONAL_RATE_DEFAULTS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError("unknown rate keys: " + ", ".join(unknown))
    rates = {key: _as_rate(raw[key], key) for key in raw}
    for key, default in _OPTIONAL_RATE_DEFAULTS.items():
        if key not in rates:
            if default is None:
                rates[key] = rates[key.replace("msm1", "ms1")]
            else:
                rates[key] = default
    return rates


def _hyperfine_from(entry: dict, prefix: str) -> HyperfineTensor:
    principal = entry.get(f"{prefix}_a_hz")
    if principal is None:
        return HyperfineTensor.zero()
    arr = np.asarray(principal, dtype=float)
    if arr.shape == (3, 3):
        return HyperfineTensor.from_matrix(arr)
    if arr.shape != (3,):
        raise ConfigurationError(
            f"{prefix}_a_hz must be three principal values or a 3x3 matrix"
        )
    euler = entry.get(f"{prefix}_euler_rad", (0.0, 0.0, 0.0))
    return HyperfineTensor.from_principal(*arr, euler_rad=euler)


def _quadrupole_from(entry: dict):
    q = entry.get("quadrupole_hz")
    if q is None:
        return None
    arr = np.asarray(q, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigurationError(
        "quadrupole_hz must be three principal values or a 3x3 matrix"
    )


_NUCLEUS_KEYS = {
    "species",
    "pair_a_hz",
    "pair_euler_rad",
    "triplet_a_hz",
    "triplet_euler_rad",
    "quadrupole_hz",
}

_MODEL_KEYS = {
    "name",
    "bright_config",
    "triplet",
    "nuclei",
    "rates",
    "collection_efficiency",
    "mw_sites",
    "rf_sites",
    "transitions",
    "max_dimension",
}


def build_spin_pair_model(params: dict) -> LevelModel:
    """Assemble a :class:`LevelModel` from a parameter dictionary.

    The dictionary mirrors the model-file layout: ``name``,
    ``bright_config`` (``"singlet"`` or ``"triplet"``: which pair sector
    recombines fast), ``triplet`` (``d_hz``/``e_hz``), ``nuclei`` (list of
    per-site entries), ``rates``, ``collection_efficiency``, ``mw_sites``,
    ``rf_sites``, and ``transitions``.

    Raises :class:`ConfigurationError` for unknown keys, missing required
    rates (all absent keys are listed), or inconsistent transition specs.
    """
    unknown = sorted(set(params) - _MODEL_KEYS)
    if unknown:
        raise ConfigurationError(
            "unknown model keys: " + ", ".join(unknown)
        )
    name = str(params.get("name", "spinpair"))
    bright = params.get("bright_config", "singlet")
    if bright not in ("singlet", "triplet"):
        raise ConfigurationError(
            f"bright_config must be 'singlet' or 'triplet', got {bright!r}"
        )
    triplet_cfg = dict(params.get("triplet", {}))
    unknown = sorted(set(triplet_cfg) - {"d_hz", "e_hz"})
    if unknown:
        raise ConfigurationError(
            "unknown triplet keys: " + ", ".join(unknown)
        )
    d_hz = float(triplet_cfg.get("d_hz", 0.0))
    e_hz = float(triplet_cfg.get("e_hz", 0.0))

    rates = _validated_rates(dict(params.get("rates", {})))

    efficiency = float(params.get("collection_efficiency", 0.1))
    if not 0.0 <= efficiency <= 1.0:
        raise ConfigurationError(
            f"collection_efficiency must be within [0, 1], got {efficiency}"
        )

    pair_sites = []
    triplet_sites = []
    eg_sites = []
    for entry in params.get("nuclei", ()):
        entry = dict(entry)
        unknown = sorted(set(entry) - _NUCLEUS_KEYS)
        if unknown:
            raise ConfigurationError(
                "unknown nucleus keys: " + ", ".join(unknown)
            )
        if "species" not in entry:
            raise ConfigurationError("each nucleus needs a species")
        spc = species(str(entry["species"]))
        quad = _quadrupole_from(entry)
        pair_sites.append(
            NuclearSite(spc, _hyperfine_from(entry, "pair"), quad)
        )
        triplet_sites.append(
            NuclearSite(spc, _hyperfine_from(entry, "triplet"), quad)
        )
        eg_sites.append(NuclearSite(spc, HyperfineTensor.zero(), quad))

    electron = species("e")
    pair = SpinManifold(
        "pair",
        electron,
        nuclei=(NuclearSite(electron, HyperfineTensor.zero()), *pair_sites),
    )
    triplet = SpinManifold(
        "triplet",
        SpinSpecies(1.0, electron.gyromagnetic_hz_per_t, "e"),
        d_hz=d_hz,
        e_hz=e_hz,
        nuclei=tuple(triplet_sites),
    )
    eg = SpinManifold(
        "eg",
        SpinSpecies(0.5, 0.0, "level"),
        nuclei=tuple(eg_sites),
    )
    manifolds = (pair, triplet, eg)

    total = sum(mf.dimension for mf in manifolds)
    cap = int(params.get("max_dimension", DEFAULT_MAX_DIMENSION))
    if total > cap:
        raise ModelTooLargeError(
            f"composite model dimension {total} exceeds the cap {cap}"
        )

    has_nuclei = bool(pair_sites)
    mw_sites = tuple(
        params.get("mw_sites", ("pair.electron_a", "triplet.electron"))
    )
    rf_sites = tuple(
        params.get("rf_sites", ("pair.nucleus1",) if has_nuclei else ())
    )

    specs = []
    for label, raw in dict(params.get("transitions", {})).items():
        raw = dict(raw)
        unknown = sorted(
            set(raw) - {"manifold", "flip", "between", "select", "rabi_hz"}
        )
        if unknown:
            raise ConfigurationError(
                f"transition {label!r}: unknown keys: " + ", ".join(unknown)
            )
        for key in ("manifold", "flip", "between", "rabi_hz"):
            if key not in raw:
                raise ConfigurationError(
                    f"transition {label!r}: missing {key!r}"
                )
        between = tuple(float(v) for v in raw["between"])
        if len(between) != 2 or between[0] == between[1]:
            raise ConfigurationError(
                f"transition {label!r}: between needs two distinct levels"
            )
        select = tuple(
            (str(site), float(m))
            for site, m in dict(raw.get("select", {})).items()
        )
        rabi = float(raw["rabi_hz"])
        if not rabi > 0.0:
            raise ConfigurationError(
                f"transition {label!r}: rabi_hz must be positive"
            )
        specs.append(
            TransitionSpec(
                label=str(label),
                manifold=str(raw["manifold"]),
                flip=str(raw["flip"]),
                between=between,
                select=select,
                rabi_hz=rabi,
            )
        )

    model = LevelModel(
        name=name,
        bright_config=bright,
        manifolds=manifolds,
        rates=rates,
        collection_efficiency=efficiency,
        mw_sites=mw_sites,
        rf_sites=rf_sites,
        transition_specs=tuple(specs),
    )
    _validate_sites_and_specs(model)
    return model


def _validate_sites_and_specs(model: LevelModel):
    for qualified in (*model.mw_sites, *model.rf_sites):
        block, slot = model._split_qualified(qualified)
        if block == "eg" and slot == 0:
            raise ConfigurationError(
                "the optical doublet carries no magnetic moment and cannot "
                "be a drive site"
            )
    for spec in model.transition_specs:
        mf = model.manifold(spec.manifold)
        flip_slot = model.site_slot(spec.manifold, spec.flip)
        spins = [mf.electron, *(site.species for site in mf.nuclei)]
        allowed = spins[flip_slot].projections()
        for m in spec.between:
            if not any(abs(m - p) < 1e-9 for p in allowed):
                raise ConfigurationError(
                    f"transition {spec.label!r}: level {m} is not a "
                    f"projection of site {spec.flip!r}"
                )
        for site_name, m in spec.select:
            if site_name == spec.flip:
                raise ConfigurationError(
                    f"transition {spec.label!r}: select may not pin the "
                    f"flipped site"
                )
            slot = model.site_slot(spec.manifold, site_name)
            if not any(
                abs(m - p) < 1e-9 for p in spins[slot].projections()
            ):
                raise ConfigurationError(
                    f"transition {spec.label!r}: {m} is not a projection "
                    f"of site {site_name!r}"
                )


def _build_channels(model: LevelModel) -> tuple[ModelChannel, ...]:
    dim = model.dimension
    index = model._index
    rates = model.rates

    nuclear_species = [
        site.species
        for site in model.manifold("triplet").nuclei
    ]
    combos: list[tuple] = [()]
    for spc in nuclear_species:
        combos = [prev + (m,) for prev in combos for m in spc.projections()]

    def jump(pairs) -> np.ndarray:
        op = np.zeros((dim, dim), dtype=complex)
        for to_label, from_label in pairs:
            op[index[to_label], index[from_label]] = 1.0
        return op

    def over_combos(to_stub, from_stub):
        return [
            (to_stub + combo, from_stub + combo) for combo in combos
        ]

    channels: list[ModelChannel] = []

    def add(kind, pairs, rate):
        if pairs and rate > 0.0:
            channels.append(ModelChannel(kind, jump(pairs), float(rate)))

    g = ("eg", -0.5)
    e = ("eg", 0.5)
    add("pump", over_combos(e, g), rates["pump"])
    add("radiative", over_combos(g, e), rates["radiative"])

    iscmap = (
        (1.0, "isc_in_ms1", "isc_out_ms1"),
        (0.0, "isc_in_ms0", "isc_out_ms0"),
        (-1.0, "isc_in_msm1", "isc_out_msm1"),
    )
    for m, key_in, key_out in iscmap:
        t = ("triplet", m)
        add("isc_in", over_combos(t, e), rates[key_in])
        add("isc_out", over_combos(g, t), rates[key_out])

    uu = ("pair", 0.5, 0.5)
    dd = ("pair", -0.5, -0.5)
    ud = ("pair", 0.5, -0.5)
    du = ("pair", -0.5, 0.5)
    t_up = ("triplet", 1.0)
    t_zero = ("triplet", 0.0)
    t_down = ("triplet", -1.0)

    add("hop", over_combos(uu, t_up), rates["hop_ms1"])
    add("hop", over_combos(t_up, uu), rates["hop_ms1"])
    add("hop", over_combos(dd, t_down), rates["hop_msm1"])
    add("hop", over_combos(t_down, dd), rates["hop_msm1"])
    for p in (ud, du):
        add("hop", over_combos(p, t_zero), rates["hop_ms0"] / 2.0)
        add("hop", over_combos(t_zero, p), rates["hop_ms0"] / 2.0)

    recombine = rates["recombine"]
    dark = recombine * rates["dark_recombine_factor"]
    if model.bright_config == "singlet":
        rate_m0, rate_m1 = recombine, dark
    else:
        rate_m0, rate_m1 = dark, recombine
    add("recombine", over_combos(g, uu), rate_m1)
    add("recombine", over_combos(g, dd), rate_m1)
    add("recombine", over_combos(g, ud), rate_m0 / 2.0)
    add("recombine", over_combos(g, du), rate_m0 / 2.0)

    if math.isfinite(rates["electron_t1_s"]):
        flip = 1.0 / (2.0 * rates["electron_t1_s"])
        # electron_a flips (first pair slot), both directions.
        for mb in (0.5, -0.5):
            add(
                "electron_t1",
                over_combos(("pair", -0.5, mb), ("pair", 0.5, mb)),
                flip,
            )
            add(
                "electron_t1",
                over_combos(("pair", 0.5, mb), ("pair", -0.5, mb)),
                flip,
            )
        # electron_b flips (second pair slot).
        for ma in (0.5, -0.5):
            add(
                "electron_t1",
                over_combos(("pair", ma, -0.5), ("pair", ma, 0.5)),
                flip,
            )
            add(
                "electron_t1",
                over_combos(("pair", ma, 0.5), ("pair", ma, -0.5)),
                flip,
            )

    if math.isfinite(rates["nuclear_t1_s"]) and nuclear_species:
        flip = 1.0 / (2.0 * rates["nuclear_t1_s"])
        for block_label, _, _ in model.block_table:
            block_labels = [
                lab for lab in model.basis_labels if lab[0] == block_label
            ]
            mf = model.manifold(block_label)
            electron_slots = 1 + sum(
                1 for site in mf.nuclei if site.species.label == "e"
            )
            for k, spc in enumerate(nuclear_species):
                pos = 1 + electron_slots + k
                projections = spc.projections()
                for hi, lo in zip(projections[:-1], projections[1:]):
                    down = [
                        (lab[:pos] + (lo,) + lab[pos + 1:], lab)
                        for lab in block_labels
                        if abs(lab[pos] - hi) < 1e-9
                    ]
                    up = [(b, a) for a, b in down]
                    add("nuclear_t1", down, flip)
                    add("nuclear_t1", up, flip)

    return tuple(channels)


# --------------------------------------------------------------------------
# Field resolution: eigensystems, named transitions, frame bookkeeping.


def _field_vector(b_field_t) -> np.ndarray:
    arr = np.asarray(b_field_t, dtype=float).ravel()
    if arr.size == 1:
        return np.array([0.0, 0.0, float(arr[0])])
    if arr.size == 3:
        return arr.copy()
    raise ConfigurationError(
        "b_field_t must be a scalar (z field) or a 3-vector in tesla"
    )


def _mask_by_counts(matrix: np.ndarray, counts) -> np.ndarray:
    keep = np.ones(matrix.shape, dtype=bool)
    for n in counts:
        keep &= np.equal.outer(n, n)
    return np.where(keep, matrix, 0.0)


@dataclass(frozen=True)
class ResolvedBlock:
    """Eigensystem of one manifold block at a fixed field."""

    label: str
    offset: int
    dim: int
    energies_hz: np.ndarray
    vectors: np.ndarray
    basis_labels: tuple[tuple, ...]
    dominant: dict


@dataclass(frozen=True)
class ResolvedTransition:
    """A named line resolved to eigenpairs at a fixed field.

    ``frequency_hz`` is the (positive) level splitting a swept linear drive
    resonates with. ``signed_frequency_hz`` divides the splitting by the
    frame-count step toward the upper level; a parked carrier must use it,
    because it selects the circular drive component that co-rotates with
    this line.
    """

    label: str
    manifold: str
    frequency_hz: float
    signed_frequency_hz: float
    rabi_hz: float
    # One entry per addressed eigenpair: (low index, high index, element).
    pairs: tuple[tuple[int, int, complex], ...]
    drive_site: str

    @property
    def drive_amplitude_hz(self) -> float:
        """Carrier amplitude realizing ``rabi_hz`` population oscillations."""
        element = max(abs(el) for _, _, el in self.pairs)
        return self.rabi_hz / (2.0 * element)


class ResolvedModel:
    """A :class:`LevelModel` diagonalized at one static field."""

    def __init__(self, model: LevelModel, b_field_t):
        self.model = model
        self.b_field_t = _field_vector(b_field_t)

        blocks = {}
        full = np.zeros((model.dimension, model.dimension), dtype=complex)
        for mf in model.manifolds:
            sl = model.block_slice(mf.label)
            ham = build_manifold_hamiltonian(mf, self.b_field_t)
            full[sl, sl] = ham.matrix
        self.exact_hamiltonian = full

        counts = [model.count_vector(model.mw_sites)]
        if model.rf_sites:
            counts.append(model.count_vector(model.rf_sites))
        self.masked_hamiltonian = _mask_by_counts(full, counts)

        for mf in model.manifolds:
            sl = model.block_slice(mf.label)
            vals, vecs = ordered_eigh(self.masked_hamiltonian[sl, sl])
            local_labels = mf.basis_labels()
            dominant: dict = {}
            for j in range(len(vals)):
                lab = local_labels[int(np.argmax(np.abs(vecs[:, j])))]
                dominant.setdefault(lab, []).append(j)
            blocks[mf.label] = ResolvedBlock(
                label=mf.label,
                offset=sl.start,
                dim=mf.dimension,
                energies_hz=vals,
                vectors=vecs,
                basis_labels=local_labels,
                dominant=dominant,
            )
        self.blocks = blocks
        self.transitions = {
            spec.label: self._resolve_transition(spec)
            for spec in model.transition_specs
        }

    def transition(self, label: str) -> ResolvedTransition:
        try:
            return self.transitions[label]
        except KeyError:
            known = ", ".join(sorted(self.transitions)) or "none"
            raise ConfigurationError(
                f"unknown transition {label!r}; defined transitions: {known}"
            ) from None

    def _eigenindex(self, block: ResolvedBlock, local_label, context: str):
        hits = block.dominant.get(local_label, [])
        if len(hits) != 1:
            state = "no eigenstate" if not hits else "several eigenstates"
            raise ConfigurationError(
                f"{context}: {state} of manifold {block.label!r} have "
                f"dominant character {local_label!r}"
            )
        return hits[0]

    def _resolve_transition(self, spec: TransitionSpec) -> ResolvedTransition:
        model = self.model
        block = self.blocks[spec.manifold]
        mf = model.manifold(spec.manifold)
        flip_slot = model.site_slot(spec.manifold, spec.flip)
        pins = {
            model.site_slot(spec.manifold, site): m for site, m in spec.select
        }
        context = f"transition {spec.label!r}"

        sx_local = mf.site_operators(flip_slot)[0]
        m_one, m_two = spec.between
        pairs = []
        freqs = []
        step_to_upper = 0.0
        for lab in block.basis_labels:
            if abs(lab[flip_slot] - m_one) > 1e-9:
                continue
            if any(abs(lab[slot] - m) > 1e-9 for slot, m in pins.items()):
                continue
            partner = tuple(
                m_two if k == flip_slot else v for k, v in enumerate(lab)
            )
            if partner not in block.dominant:
                continue
            i = self._eigenindex(block, lab, context)
            j = self._eigenindex(block, partner, context)
            lo, hi = (i, j) if block.energies_hz[i] <= block.energies_hz[j] else (j, i)
            element = complex(
                block.vectors[:, hi].conj() @ sx_local @ block.vectors[:, lo]
            )
            pairs.append((lo, hi, element))
            freqs.append(block.energies_hz[hi] - block.energies_hz[lo])
            step_to_upper = (m_two - m_one) if hi == j else (m_one - m_two)

        if not pairs:
            raise ConfigurationError(
                f"{context}: no basis states match the selection"
            )
        if max(freqs) - min(freqs) > TRANSITION_GROUP_TOLERANCE_HZ:
            raise ConfigurationError(
                f"{context}: addressed lines are not degenerate "
                f"({min(freqs):.3f} Hz vs {max(freqs):.3f} Hz); pin more "
                f"spectator sites"
            )
        if max(abs(el) for _, _, el in pairs) < DRIVE_ELEMENT_FLOOR:
            raise ConfigurationError(
                f"{context}: the drive matrix element vanishes"
            )
        frequency = float(np.mean(freqs))
        return ResolvedTransition(
            label=spec.label,
            manifold=spec.manifold,
            frequency_hz=frequency,
            signed_frequency_hz=frequency / step_to_upper,
            rabi_hz=spec.rabi_hz,
            pairs=tuple(pairs),
            drive_site=f"{spec.manifold}.{spec.flip}",
        )


def resolve(model: LevelModel, b_field_t) -> ResolvedModel:
    """Diagonalize the model at a static field and resolve its transitions."""
    return ResolvedModel(model, b_field_t)


# --------------------------------------------------------------------------
# Restricted (block-diagonal) superoperators and steady states.


class BlockSpace:
    """The direct sum of per-block density-matrix sectors.

    Coherences between manifolds are never sourced by the model's channels,
    so the full Liouvillian leaves this subspace invariant and the steady
    state lives inside it. Vectors concatenate the column-stacked per-block
    density matrices.
    """

    def __init__(self, block_table):
        parts = []
        start = 0
        for label, offset, dim in block_table:
            parts.append((label, offset, dim, start))
            start += dim * dim
        self.parts = tuple(parts)
        self.size = start

    def restrict(self, rho_full: np.ndarray, check: bool = True) -> np.ndarray:
        rho = np.asarray(rho_full, dtype=complex)
        x = np.zeros(self.size, dtype=complex)
        mask = np.zeros(rho.shape, dtype=bool)
        for _, offset, dim, start in self.parts:
            blk = rho[offset:offset + dim, offset:offset + dim]
            x[start:start + dim * dim] = blk.flatten(order="F")
            mask[offset:offset + dim, offset:offset + dim] = True
        if check:
            spill = np.abs(np.where(mask, 0.0, rho)).max()
            scale = max(1.0, float(np.abs(rho).max()))
            if spill > 1e-9 * scale:
                raise NumericalContractError(
                    "state has coherences between manifold blocks "
                    f"(magnitude {spill:.3e}); the block-diagonal fast path "
                    "cannot represent it"
                )
        return x

    def expand(self, x: np.ndarray) -> np.ndarray:
        total = self.parts[-1][1] + self.parts[-1][2]
        rho = np.zeros((total, total), dtype=complex)
        for _, offset, dim, start in self.parts:
            rho[offset:offset + dim, offset:offset + dim] = (
                x[start:start + dim * dim].reshape((dim, dim), order="F")
            )
        return rho

    def trace_vector(self) -> np.ndarray:
        t = np.zeros(self.size, dtype=complex)
        for _, _, dim, start in self.parts:
            t[start:start + dim * dim] = np.eye(dim).flatten(order="F")
        return t

    def collection_row(self, operator: np.ndarray) -> np.ndarray:
        """Row vector c with c @ x == tr(operator @ rho)."""
        c = np.zeros(self.size, dtype=complex)
        for _, offset, dim, start in self.parts:
            blk = operator[offset:offset + dim, offset:offset + dim]
            c[start:start + dim * dim] = blk.T.flatten(order="F")
        return c


def _hamiltonian_superop(space: BlockSpace, h_full: np.ndarray) -> np.ndarray:
    out = np.zeros((space.size, space.size), dtype=complex)
    for _, offset, dim, start in space.parts:
        hb = h_full[offset:offset + dim, offset:offset + dim]
        eye = np.eye(dim)
        sl = slice(start, start + dim * dim)
        out[sl, sl] = -1j * 2.0 * np.pi * (
            np.kron(eye, hb) - np.kron(hb.T, eye)
        )
    return out


def _part_of(space: BlockSpace, indices: np.ndarray, what: str):
    hits = [
        part
        for part in space.parts
        if np.any((indices >= part[1]) & (indices < part[1] + part[2]))
    ]
    if len(hits) != 1:
        raise NumericalContractError(
            f"channel {what} does not connect exactly one block pair"
        )
    return hits[0]


def _dissipator_superop(
    space: BlockSpace, operator: np.ndarray, rate: float
) -> np.ndarray:
    rows, cols = np.nonzero(operator)
    out = np.zeros((space.size, space.size), dtype=complex)
    if rows.size == 0:
        return out
    _, to_off, to_dim, to_start = _part_of(space, rows, "target")
    _, fr_off, fr_dim, fr_start = _part_of(space, cols, "source")
    sub = operator[to_off:to_off + to_dim, fr_off:fr_off + fr_dim]
    to_sl = slice(to_start, to_start + to_dim * to_dim)
    fr_sl = slice(fr_start, fr_start + fr_dim * fr_dim)
    out[to_sl, fr_sl] += rate * np.kron(sub.conj(), sub)
    k = sub.conj().T @ sub
    eye = np.eye(fr_dim)
    out[fr_sl, fr_sl] -= 0.5 * rate * (np.kron(eye, k) + np.kron(k.T, eye))
    return out


def _restricted_generator(
    space: BlockSpace,
    h_full: np.ndarray,
    channels,
    laser_power: float = 1.0,
    closed: bool = False,
) -> np.ndarray:
    gen = _hamiltonian_superop(space, h_full)
    if closed:
        return gen
    for channel in channels:
        rate = channel.rate_per_s
        if channel.kind == "pump":
            rate *= laser_power
        if rate > 0.0:
            gen += _dissipator_superop(space, channel.operator, rate)
    return gen


class _SteadyStateProblem:
    """Steady states of the affine family A(nu) = m0 - nu * m_sweep.

    Uniqueness is a structural property (it depends on which sectors the
    channels connect, not on the carrier frequency), so it is established
    once by a singular-value decomposition at a representative frequency.
    Individual sweep points then use an LU solve with trace-row replacement
    and iterative refinement, falling back to the decomposition when the
    residual contract fails.
    """

    def __init__(
        self,
        space: BlockSpace,
        m0: np.ndarray,
        m_sweep=None,
        probe_nu: float = 0.0,
    ):
        self.space = space
        self.m0 = m0
        self.m_sweep = m_sweep
        self.trace = space.trace_vector()
        self.scale = max(1.0, float(np.linalg.norm(m0)) / space.size)
        probe = self._matrix(float(probe_nu))
        svals = np.linalg.svd(probe, compute_uv=False)
        top = max(float(svals[0]), np.finfo(float).tiny)
        kernel_dim = int(np.sum(svals < KERNEL_RELATIVE_THRESHOLD * top))
        if kernel_dim != 1:
            raise SteadyStateAmbiguityError(kernel_dim)

    def _matrix(self, nu: float) -> np.ndarray:
        if self.m_sweep is None or nu == 0.0:
            return self.m0
        return self.m0 - nu * self.m_sweep

    def _sigma_floor(self, a: np.ndarray) -> float:
        return max(float(np.linalg.norm(a)) / math.sqrt(self.space.size), 1.0)

    def _residual_ok(self, a: np.ndarray, x: np.ndarray) -> bool:
        residual = float(np.linalg.norm(a @ x))
        bound = RESIDUAL_RELATIVE_TOLERANCE * self._sigma_floor(a) * max(
            float(np.linalg.norm(x)), np.finfo(float).tiny
        )
        return residual <= bound

    def solve(self, nu: float = 0.0) -> np.ndarray:
        a = self._matrix(float(nu))
        x = self._solve_by_lu(a)
        if x is None:
            x = self._solve_by_svd(a)
        return x

    def _solve_by_lu(self, a: np.ndarray):
        mod = a.copy()
        mod[0, :] = self.trace * self.scale
        rhs = np.zeros(self.space.size, dtype=complex)
        rhs[0] = self.scale
        try:
            factors = scipy.linalg.lu_factor(mod)
            x = scipy.linalg.lu_solve(factors, rhs)
            # Refinement recovers the digits lost to the spread between
            # Hamiltonian and relaxation scales.
            for _ in range(2):
                if not np.all(np.isfinite(x)):
                    return None
                x = x + scipy.linalg.lu_solve(factors, rhs - mod @ x)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            return None
        if not np.all(np.isfinite(x)):
            return None
        return x if self._residual_ok(a, x) else None

    def _solve_by_svd(self, a: np.ndarray) -> np.ndarray:
        _, svals, vh = np.linalg.svd(a)
        top = max(float(svals[0]), np.finfo(float).tiny)
        kernel_dim = int(np.sum(svals < KERNEL_RELATIVE_THRESHOLD * top))
        if kernel_dim != 1:
            raise SteadyStateAmbiguityError(kernel_dim)
        x = vh[-1].conj()
        tr = complex(self.trace @ x)
        if abs(tr) < 1e-12 * float(np.linalg.norm(x)):
            raise NumericalContractError(
                "steady-state kernel vector is traceless"
            )
        x = x / tr
        if not self._residual_ok(a, x):
            raise NumericalContractError(
                "steady-state residual exceeds its tolerance"
            )
        return x


def _as_density(rho: np.ndarray, labels) -> lindblad.DensityMatrix:
    # The generator preserves Hermiticity, so any anti-Hermitian residue is
    # solver noise; a large one means a structural bug upstream.
    drift = float(np.abs(rho - rho.conj().T).max())
    scale = max(1.0, float(np.abs(rho).max()))
    if drift > 1e-6 * scale:
        raise NumericalContractError(
            f"steady state drifted from Hermiticity by {drift:.3e}"
        )
    return lindblad.DensityMatrix((rho + rho.conj().T) / 2.0, labels)


# --------------------------------------------------------------------------
# Public operations.


def _masked_drive(model: LevelModel, sites):
    if not sites:
        raise ConfigurationError("no drive sites were given")
    x = model.flip_operator(sites)
    n = model.count_vector(sites)
    dn = np.subtract.outer(n, n)
    return np.where(np.abs(dn) == 1, x, 0.0), n


def steady_state(
    model: LevelModel, b_field_t, *, laser_power: float = 1.0
) -> lindblad.DensityMatrix:
    """CW steady state with the laser on and no resonant drives."""
    resolved = resolve(model, b_field_t)
    space = BlockSpace(model.block_table)
    m0 = _restricted_generator(
        space, resolved.exact_hamiltonian, model.channels, laser_power
    )
    x = _SteadyStateProblem(space, m0).solve()
    return _as_density(space.expand(x), model.basis_labels)


def driven_steady_state(
    model: LevelModel,
    b_field_t,
    *,
    mw_frequency_hz=None,
    mw_amplitude_hz: float = 0.0,
    drive_sites=None,
    rf_frequency_hz=None,
    rf_amplitude_hz: float = 0.0,
    rf_sites=None,
    laser_power: float = 1.0,
) -> lindblad.DensityMatrix:
    """CW steady state under parked microwave and/or radio carriers.

    Each active carrier contributes a rotating frame; the Hamiltonian is
    masked to the frame sectors and the drive keeps its single-quantum
    elements. For secular models this is exact.
    """
    resolved = resolve(model, b_field_t)
    space = BlockSpace(model.block_table)
    h = resolved.exact_hamiltonian
    counts = []
    extra = np.zeros_like(h)
    if mw_frequency_hz is not None:
        x, n = _masked_drive(model, tuple(drive_sites or model.mw_sites))
        counts.append(n)
        extra = extra + mw_amplitude_hz * x
        extra -= float(mw_frequency_hz) * np.diag(n.astype(float))
    if rf_frequency_hz is not None:
        x, n = _masked_drive(model, tuple(rf_sites or model.rf_sites))
        counts.append(n)
        extra = extra + rf_amplitude_hz * x
        extra -= float(rf_frequency_hz) * np.diag(n.astype(float))
    h_rot = _mask_by_counts(h, counts) + extra
    m0 = _restricted_generator(space, h_rot, model.channels, laser_power)
    x_vec = _SteadyStateProblem(space, m0).solve()
    return _as_density(space.expand(x_vec), model.basis_labels)


def _photon_rate(c_row: np.ndarray, x: np.ndarray) -> float:
    return float(np.real(c_row @ x))


def cw_odmr(
    model: LevelModel,
    mw_frequencies_hz,
    b_field_t,
    *,
    mw_amplitude_hz: float,
    drive_sites=None,
    laser_power: float = 1.0,
) -> SpectrumResult:
    """Continuous-wave ODMR: contrast of the photon rate vs drive frequency.

    Contrast is ``rate(on)/rate(off) - 1`` against the drive-free steady
    state at the same laser power. A linear drive carries both circular
    components, so the response sums the two carrier helicities; lines
    whose upper level has the lower frame count answer the negative
    component.
    """
    freqs = np.asarray(mw_frequencies_hz, dtype=float).ravel()
    if freqs.size == 0:
        raise ConfigurationError("mw_frequencies_hz is empty")
    resolved = resolve(model, b_field_t)
    space = BlockSpace(model.block_table)
    sites = tuple(drive_sites or model.mw_sites)
    x_drive, n = _masked_drive(model, sites)
    h = _mask_by_counts(resolved.exact_hamiltonian, [n])

    c_row = space.collection_row(model.collection_operator())
    m_off = _restricted_generator(space, h, model.channels, laser_power)
    off = _SteadyStateProblem(space, m_off).solve()
    rate_off = _photon_rate(c_row, off)
    if rate_off <= 0.0:
        raise NumericalContractError(
            "the drive-free photon rate is not positive; check pump and "
            "collection settings"
        )

    m0 = _restricted_generator(
        space,
        h + mw_amplitude_hz * x_drive,
        model.channels,
        laser_power,
    )
    m_sweep = _hamiltonian_superop(space, np.diag(n.astype(float)))
    problem = _SteadyStateProblem(space, m0, m_sweep, probe_nu=freqs[0])

    contrast = np.empty(freqs.size, dtype=float)
    for k, nu in enumerate(freqs):
        total = 0.0
        for helicity in (1.0, -1.0):
            x = problem.solve(helicity * float(nu))
            _as_density(space.expand(x), model.basis_labels)
            total += _photon_rate(c_row, x) / rate_off - 1.0
        contrast[k] = total

    metadata = {
        "kind": "odmr",
        "model": model.name,
        "baseline_photon_rate_per_s": rate_off,
        "b_field_t": tuple(resolved.b_field_t),
        "mw_amplitude_hz": float(mw_amplitude_hz),
        "drive_sites": sites,
        "laser_power": float(laser_power),
    }
    return SpectrumResult(freqs, contrast, metadata)


def odnmr_spectrum(
    model: LevelModel,
    rf_frequencies_hz,
    b_field_t,
    *,
    mw_transition: str,
    rf_amplitude_hz: float,
    mw_amplitude_hz=None,
    rf_sites=None,
    drive_sites=None,
    laser_power: float = 1.0,
) -> SpectrumResult:
    """Optically detected NMR: RF sweep with the microwave carrier parked.

    The microwave carrier sits on the named transition (using its
    co-rotating signed frequency); its amplitude defaults to the
    transition's calibrated Rabi amplitude (CW work usually wants less,
    pass ``mw_amplitude_hz`` explicitly). The swept RF drive is linear, so
    both carrier helicities are summed: nuclear lines in electron sectors
    where the hyperfine field opposes the Zeeman field answer the negative
    component. Contrast is relative to the RF-off, microwave-on steady
    state.
    """
    freqs = np.asarray(rf_frequencies_hz, dtype=float).ravel()
    if freqs.size == 0:
        raise ConfigurationError("rf_frequencies_hz is empty")
    resolved = resolve(model, b_field_t)
    line = resolved.transition(mw_transition)
    nu_mw = line.signed_frequency_hz
    amp_mw = (
        line.drive_amplitude_hz
        if mw_amplitude_hz is None
        else float(mw_amplitude_hz)
    )

    space = BlockSpace(model.block_table)
    x_mw, n_mw = _masked_drive(model, tuple(drive_sites or model.mw_sites))
    x_rf, n_rf = _masked_drive(model, tuple(rf_sites or model.rf_sites))
    h = _mask_by_counts(resolved.exact_hamiltonian, [n_mw, n_rf])
    h_mw = h + amp_mw * x_mw - nu_mw * np.diag(n_mw.astype(float))

    c_row = space.collection_row(model.collection_operator())
    m_off = _restricted_generator(space, h_mw, model.channels, laser_power)
    off = _SteadyStateProblem(space, m_off).solve()
    rate_off = _photon_rate(c_row, off)
    if rate_off <= 0.0:
        raise NumericalContractError(
            "the RF-off photon rate is not positive; check pump and "
            "collection settings"
        )

    m0 = _restricted_generator(
        space, h_mw + rf_amplitude_hz * x_rf, model.channels, laser_power
    )
    m_sweep = _hamiltonian_superop(space, np.diag(n_rf.astype(float)))
    problem = _SteadyStateProblem(space, m0, m_sweep, probe_nu=freqs[0])

    contrast = np.empty(freqs.size, dtype=float)
    for k, nu in enumerate(freqs):
        total = 0.0
        for helicity in (1.0, -1.0):
            x = problem.solve(helicity * float(nu))
            _as_density(space.expand(x), model.basis_labels)
            total += _photon_rate(c_row, x) / rate_off - 1.0
        contrast[k] = total

    metadata = {
        "kind": "odnmr",
        "model": model.name,
        "baseline_photon_rate_per_s": rate_off,
        "b_field_t": tuple(resolved.b_field_t),
        "mw_transition": mw_transition,
        "mw_frequency_hz": line.frequency_hz,
        "mw_amplitude_hz": amp_mw,
        "rf_amplitude_hz": float(rf_amplitude_hz),
        "laser_power": float(laser_power),
    }
    return SpectrumResult(freqs, contrast, metadata)


def propagate_with_photons(
    generator: np.ndarray,
    collection_row: np.ndarray,
    x0: np.ndarray,
    duration_s: float,
) -> tuple[np.ndarray, float]:
    """Propagate a restricted state and integrate the photon rate exactly.

    Augments the generator with one quadrature row so a single matrix
    exponential yields both the final state and the time integral of
    ``collection_row @ x``.
    """
    r = generator.shape[0]
    aug = np.zeros((r + 1, r + 1), dtype=complex)
    aug[:r, :r] = generator
    aug[r, :r] = collection_row
    moved = scipy.linalg.expm(aug * duration_s) @ np.append(x0, 0.0)
    return moved[:r], float(np.real(moved[r]))


def pl_readout(
    model: LevelModel,
    state,
    duration_s: float,
    b_field_t,
    *,
    laser_power: float = 1.0,
) -> float:
    """Expected photon count from a laser readout window.

    Evolves the input state under the laser-on generator (no resonant
    drives) and integrates the collection rate over the window.
    """
    if not duration_s > 0.0:
        raise ConfigurationError("readout duration must be positive")
    rho = state.entries if hasattr(state, "entries") else state
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dimension, model.dimension):
        raise ConfigurationError(
            f"state shape {rho.shape} does not match model dimension "
            f"{model.dimension}"
        )
    resolved = resolve(model, b_field_t)
    space = BlockSpace(model.block_table)
    generator = _restricted_generator(
        space, resolved.exact_hamiltonian, model.channels, laser_power
    )
    c_row = space.collection_row(model.collection_operator())
    x0 = space.restrict(rho)
    _, photons = propagate_with_photons(generator, c_row, x0, duration_s)
    return photons


def stick_odmr(
    model: LevelModel, b_field_t, drive_sites=None
) -> list[TransitionStick]:
    """Stick spectrum of the full model under the given drive sites.

    Uses exact eigenvalues (no rotating-frame masking); manifold blocks are
    uncoupled, so only intra-manifold lines carry intensity.
    """
    resolved = resolve(model, b_field_t)
    x = model.flip_operator(tuple(drive_sites or model.mw_sites))
    return _stick_transitions(resolved.exact_hamiltonian, x)
