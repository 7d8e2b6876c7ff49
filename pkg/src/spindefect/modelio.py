"""Defect model files: TOML loading, validation, and bundled models.

A model file describes the three-block level scheme declaratively::

    name = "group3"
    bright_config = "singlet"

    [manifold.pair]
    S = 0.5
    g_factor = 2.0

    [manifold.triplet]
    S = 1.0
    D_Hz = 1.04e9
    E_Hz = 0.0

    [[manifold.pair.nucleus]]
    species = "13C"
    A_principal_Hz = [0.0, 0.0, 3.0e8]
    euler_rad = [0.0, 0.0, 0.0]

    [[manifold.triplet.nucleus]]
    species = "13C"
    A_principal_Hz = [0.0, 0.0, 0.0]

    [rates]
    pump = 1.0e7
    # ... see photodynamics.REQUIRED_RATE_KEYS

    [collection]
    efficiency = 0.1

    [drive]
    mw_sites = ["pair.electron_a", "triplet.electron"]
    rf_sites = ["pair.nucleus1"]

    [transitions.e_low]
    manifold = "pair"
    flip = "electron_a"
    between = [0.5, -0.5]
    rabi_Hz = 1.0e6
    [transitions.e_low.select]
    nucleus1 = -0.5

The level scheme itself is fixed (spin-1/2 pair block, S=1 triplet block,
spinless optical doublet); the manifold tables exist so a file is
self-describing and so contradictions are caught: an S or g_factor that
disagrees with the engine's scheme is a configuration error, not a silent
reinterpretation. Nuclei are matched across manifolds by list position and
must agree in species; a manifold that omits the nucleus array couples to
the listed nuclei with zero hyperfine tensors.

Files for a few reference defects ship inside the package; see
:func:`bundled_model_path` and :func:`available_models`.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigurationError
from .photodynamics import LevelModel, build_spin_pair_model

_TOP_KEYS = {
    "name",
    "bright_config",
    "max_dimension",
    "manifold",
    "rates",
    "collection",
    "drive",
    "transitions",
}

_MANIFOLD_LABELS = ("pair", "triplet", "eg")

# Keys allowed in a [manifold.<label>] table (nucleus arrays aside).
_MANIFOLD_KEYS = {"S", "D_Hz", "E_Hz", "g_factor", "nucleus"}

_NUCLEUS_FILE_KEYS = {"species", "A_principal_Hz", "euler_rad", "quadrupole_Hz"}

# The engine's fixed scheme, used to reject contradictory files.
_EXPECTED_SPIN = {"pair": 0.5, "triplet": 1.0, "eg": 0.5}
_EXPECTED_G = {"pair": 2.0, "triplet": 2.0, "eg": 0.0}


def read_model_document(path) -> dict:
    """Read and parse a model file, without interpreting its contents."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigurationError(
            f"model file not found: {path}"
        ) from None
    except OSError as exc:
        raise ConfigurationError(
            f"model file {path} is unreadable: {exc}"
        ) from None
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(
            f"model file {path} does not parse: {exc}"
        ) from None


def _require_table(value, context: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigurationError(f"{context} must be a table")
    return value


def _tensor_or_none(entry: dict, key: str, context: str):
    if key not in entry:
        return None
    arr = np.asarray(entry[key], dtype=float)
    if arr.shape not in ((3,), (3, 3)):
        raise ConfigurationError(
            f"{context}: {key} must be three principal values or a "
            f"3x3 matrix, got shape {arr.shape}"
        )
    return arr.tolist()


def _manifold_nuclei(table: dict, label: str) -> list[dict]:
    raw = table.get("nucleus", [])
    if not isinstance(raw, list):
        raise ConfigurationError(
            f"manifold.{label}.nucleus must be an array of tables"
        )
    entries = []
    for k, item in enumerate(raw):
        context = f"manifold.{label}.nucleus[{k}]"
        item = _require_table(item, context)
        unknown = sorted(set(item) - _NUCLEUS_FILE_KEYS)
        if unknown:
            raise ConfigurationError(
                f"{context}: unknown keys: " + ", ".join(unknown)
            )
        if "species" not in item:
            raise ConfigurationError(f"{context}: missing species")
        species = str(item["species"])
        if species == "e":
            raise ConfigurationError(
                f"{context}: the pair's partner electron is built in; "
                "nucleus entries must name nuclear species"
            )
        entry = {"species": species}
        a = _tensor_or_none(item, "A_principal_Hz", context)
        if a is not None:
            if label == "eg":
                raise ConfigurationError(
                    f"{context}: the optical doublet carries no hyperfine "
                    "coupling"
                )
            entry["a_hz"] = a
            if "euler_rad" in item:
                euler = np.asarray(item["euler_rad"], dtype=float)
                if euler.shape != (3,):
                    raise ConfigurationError(
                        f"{context}: euler_rad must be three angles"
                    )
                entry["euler_rad"] = euler.tolist()
        elif "euler_rad" in item:
            raise ConfigurationError(
                f"{context}: euler_rad without A_principal_Hz"
            )
        q = _tensor_or_none(item, "quadrupole_Hz", context)
        if q is not None:
            entry["quadrupole_hz"] = q
        entries.append(entry)
    return entries


def _check_manifold_header(label: str, table: dict):
    unknown = sorted(set(table) - _MANIFOLD_KEYS)
    if unknown:
        raise ConfigurationError(
            f"manifold.{label}: unknown keys: " + ", ".join(unknown)
        )
    if "S" in table:
        spin = float(table["S"])
        if abs(spin - _EXPECTED_SPIN[label]) > 1e-9:
            raise ConfigurationError(
                f"manifold.{label}: S = {spin} contradicts the level "
                f"scheme, which fixes S = {_EXPECTED_SPIN[label]}"
            )
    if "g_factor" in table:
        g = float(table["g_factor"])
        if abs(g - _EXPECTED_G[label]) > 1e-2:
            raise ConfigurationError(
                f"manifold.{label}: g_factor = {g} is not supported; the "
                f"level scheme fixes it at {_EXPECTED_G[label]}"
            )
    if label != "triplet":
        for key in ("D_Hz", "E_Hz"):
            if key in table:
                raise ConfigurationError(
                    f"manifold.{label}: {key} is only meaningful for the "
                    "S=1 triplet block"
                )


def _merge_nuclei(per_manifold: dict) -> list[dict]:
    """Combine per-manifold nucleus lists into builder entries by position."""
    lists = {lab: lst for lab, lst in per_manifold.items() if lst}
    if not lists:
        return []
    lengths = {lab: len(lst) for lab, lst in lists.items()}
    if len(set(lengths.values())) != 1:
        raise ConfigurationError(
            "manifolds disagree on the number of nuclei: "
            + ", ".join(f"{lab} lists {n}" for lab, n in lengths.items())
        )
    count = next(iter(lengths.values()))
    merged = []
    for k in range(count):
        species = {lab: lst[k]["species"] for lab, lst in lists.items()}
        if len(set(species.values())) != 1:
            raise ConfigurationError(
                f"nucleus {k + 1}: species differ between manifolds: "
                + ", ".join(f"{lab}={s!r}" for lab, s in species.items())
            )
        entry = {"species": next(iter(species.values()))}
        for lab, prefix in (("pair", "pair"), ("triplet", "triplet")):
            item = lists.get(lab, [None] * count)[k]
            if item and "a_hz" in item:
                entry[f"{prefix}_a_hz"] = item["a_hz"]
                if "euler_rad" in item:
                    entry[f"{prefix}_euler_rad"] = item["euler_rad"]
        quads = [
            (lab, lst[k]["quadrupole_hz"])
            for lab, lst in lists.items()
            if "quadrupole_hz" in lst[k]
        ]
        if quads:
            first = np.asarray(quads[0][1], dtype=float)
            for lab, q in quads[1:]:
                if not np.array_equal(np.asarray(q, dtype=float), first):
                    raise ConfigurationError(
                        f"nucleus {k + 1}: quadrupole_Hz differs between "
                        f"manifolds {quads[0][0]} and {lab}"
                    )
            entry["quadrupole_hz"] = quads[0][1]
        merged.append(entry)
    return merged


def model_params_from_document(doc: dict) -> dict:
    """Translate a parsed model document into builder parameters."""
    doc = _require_table(doc, "model document")
    unknown = sorted(set(doc) - _TOP_KEYS)
    if unknown:
        raise ConfigurationError(
            "unknown top-level keys: " + ", ".join(unknown)
        )

    params: dict = {}
    if "name" in doc:
        params["name"] = str(doc["name"])
    if "bright_config" in doc:
        params["bright_config"] = str(doc["bright_config"])
    if "max_dimension" in doc:
        params["max_dimension"] = int(doc["max_dimension"])

    manifold = _require_table(doc.get("manifold", {}), "manifold")
    unknown = sorted(set(manifold) - set(_MANIFOLD_LABELS))
    if unknown:
        raise ConfigurationError(
            "unknown manifolds: " + ", ".join(unknown)
            + " (the level scheme has pair, triplet, eg)"
        )
    per_manifold = {}
    for label in _MANIFOLD_LABELS:
        table = _require_table(
            manifold.get(label, {}), f"manifold.{label}"
        )
        _check_manifold_header(label, table)
        per_manifold[label] = _manifold_nuclei(table, label)
    triplet_table = manifold.get("triplet", {})
    params["triplet"] = {
        "d_hz": float(triplet_table.get("D_Hz", 0.0)),
        "e_hz": float(triplet_table.get("E_Hz", 0.0)),
    }
    params["nuclei"] = _merge_nuclei(per_manifold)

    if "rates" in doc:
        params["rates"] = dict(_require_table(doc["rates"], "rates"))

    if "collection" in doc:
        collection = _require_table(doc["collection"], "collection")
        unknown = sorted(set(collection) - {"efficiency"})
        if unknown:
            raise ConfigurationError(
                "unknown collection keys: " + ", ".join(unknown)
            )
        if "efficiency" in collection:
            params["collection_efficiency"] = float(
                collection["efficiency"]
            )

    if "drive" in doc:
        drive = _require_table(doc["drive"], "drive")
        unknown = sorted(set(drive) - {"mw_sites", "rf_sites"})
        if unknown:
            raise ConfigurationError(
                "unknown drive keys: " + ", ".join(unknown)
            )
        for key in ("mw_sites", "rf_sites"):
            if key in drive:
                sites = drive[key]
                if not isinstance(sites, list) or not all(
                    isinstance(s, str) for s in sites
                ):
                    raise ConfigurationError(
                        f"drive.{key} must be an array of site names"
                    )
                params[key] = tuple(sites)

    if "transitions" in doc:
        table = _require_table(doc["transitions"], "transitions")
        transitions = {}
        for label, raw in table.items():
            context = f"transitions.{label}"
            raw = dict(_require_table(raw, context))
            if "rabi_Hz" in raw:
                raw["rabi_hz"] = float(raw.pop("rabi_Hz"))
            if "between" in raw:
                between = raw["between"]
                if not isinstance(between, list) or len(between) != 2:
                    raise ConfigurationError(
                        f"{context}: between must be [upper, lower]"
                    )
                raw["between"] = tuple(float(v) for v in between)
            if "select" in raw:
                select = _require_table(raw["select"], f"{context}.select")
                raw["select"] = {
                    str(site): float(m) for site, m in select.items()
                }
            transitions[str(label)] = raw
        params["transitions"] = transitions

    return params


def load_model_params(path) -> dict:
    """Read a model file into builder parameters (no model construction)."""
    return model_params_from_document(read_model_document(path))


def load_model(path) -> LevelModel:
    """Read a model file and build the :class:`LevelModel` it describes."""
    return build_spin_pair_model(load_model_params(path))


def bundled_model_path(name: str) -> Path:
    """Path of a model file shipped with the package.

    ``name`` may be a bare model name or a ``.toml`` filename. Raises
    :class:`ConfigurationError` if no such model is bundled.
    """
    stem = Path(str(name)).name
    if stem.endswith(".toml"):
        stem = stem[: -len(".toml")]
    root = importlib.resources.files(__package__) / "models"
    candidate = Path(str(root / f"{stem}.toml"))
    if not candidate.is_file():
        known = ", ".join(available_models()) or "none"
        raise ConfigurationError(
            f"no bundled model named {name!r}; bundled models: {known}"
        )
    return candidate


def available_models() -> tuple[str, ...]:
    """Names of the model files shipped with the package."""
    root = Path(str(importlib.resources.files(__package__) / "models"))
    if not root.is_dir():
        return ()
    return tuple(sorted(p.stem for p in root.glob("*.toml")))


def find_model_file(spec: str) -> Path:
    """Resolve a CLI model argument: a real path first, bundled name second.

    A value that names neither an existing file nor a bundled model raises
    :class:`ConfigurationError` naming the missing path.
    """
    path = Path(str(spec))
    if path.is_file():
        return path
    looks_like_path = path.is_absolute() or len(path.parts) > 1
    if not looks_like_path:
        try:
            return bundled_model_path(str(spec))
        except ConfigurationError:
            pass
    raise ConfigurationError(f"model file not found: {spec}")
