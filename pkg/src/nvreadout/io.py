"""Device profiles, experiment files and CSV tables.

Profile fields are objects ``{"value": ..., "unit": ..., "note": ...}``. Units
are checked on load: a unit of the same dimension is converted, anything else
is an input error. Numbers are written with 9 significant digits.
"""

import csv
from dataclasses import dataclass, field
from importlib import resources
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .charge import ChargePopulation, DestructivityMatrix, MultiphotonRateModel, NirRatePolynomial
from .metrics import TechniqueRecord
from .montecarlo import PulseSegment
from .photon import PoissonMixture
from .protocol import CountRateModel
from .scc import SccEfficiency, SccParams
from ._validation import DomainError

__all__ = [
    "SCHEMA_VERSION",
    "DeviceProfile",
    "load_profile",
    "load_experiment",
    "convert_unit",
    "fmt",
    "write_csv",
    "read_csv",
    "read_histogram",
    "HEADERS",
]

SCHEMA_VERSION = 1

HEADERS = {
    "histogram_probability": ("photon_count", "probability"),
    "histogram_occurrences": ("photon_count", "occurrences"),
    "steady_state": ("r_mw", "p_minus"),
    "nir_equilibrium": ("r_mw", "p_minus", "p_minus_lower", "p_minus_upper"),
    "speedup": ("tau_op_us", "tau_read_opt_us", "snr_ss", "total_time_s", "speedup"),
}

# unit -> (dimension, factor to the dimension's base unit)
_UNITS = {
    "": ("1", 1.0),
    "photons": ("photons", 1.0),
    "s": ("time", 1.0), "ms": ("time", 1e-3), "us": ("time", 1e-6), "ns": ("time", 1e-9),
    "Hz": ("rate", 1.0), "kHz": ("rate", 1e3), "MHz": ("rate", 1e6),
    "cps": ("rate", 1.0), "kcps": ("rate", 1e3), "Mcps": ("rate", 1e6),
    "nW": ("power", 1e-9), "uW": ("power", 1e-6), "mW": ("power", 1e-3), "W": ("power", 1.0),
}


def convert_unit(value, unit, target):
    """Convert ``value`` from ``unit`` to ``target``; compound units must match exactly."""
    if unit == target:
        return value
    a, b = _UNITS.get(unit), _UNITS.get(target)
    if a is None or b is None or a[0] != b[0]:
        raise DomainError(f"unit mismatch: got '{unit}', expected '{target}'")
    return value * a[1] / b[1]


def _get(section, key, unit, path):
    try:
        entry = section[key]
    except KeyError:
        raise DomainError(f"profile: missing field {path}.{key}") from None
    if not isinstance(entry, dict) or "value" not in entry:
        raise DomainError(f"profile: {path}.{key} must be an object with 'value' and 'unit'")
    got = entry.get("unit", "")
    value = entry["value"]
    if isinstance(value, str):
        return value
    try:
        return convert_unit(value if isinstance(value, list) else float(value), got, unit)
    except DomainError as exc:
        raise DomainError(f"profile: {path}.{key}: {exc}") from None


def _sigma(section, key):
    return float(section[key].get("uncertainty", 0.0))


@dataclass
class DeviceProfile:
    """Every device constant needed by the CLI, validated on construction."""

    name: str
    count_rate_model: CountRateModel
    readout: PoissonMixture
    tau_read_ms: float
    readout_power_uw: float
    threshold: int
    measured_fidelity: float
    rate_model: MultiphotonRateModel
    green_power_uw: float
    nir_ionization: NirRatePolynomial
    nir_recombination: NirRatePolynomial
    nir_ionization_sigma: NirRatePolynomial
    nir_recombination_sigma: NirRatePolynomial
    destructivity: DestructivityMatrix
    interaction_time_ms: float
    scc: SccParams
    scc_sigma: dict
    singlet_lifetime_ns: float
    scc_cycles: int
    efficiencies: dict
    pl_reference: dict
    post_selection: dict
    techniques: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, doc):
        version = doc.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DomainError(f"profile: unsupported schema_version {version!r}")
        try:
            return cls._parse(doc)
        except KeyError as exc:
            raise DomainError(f"profile: missing section {exc}") from None

    @classmethod
    def _parse(cls, doc):
        crm = doc["count_rate_model"]
        model = CountRateModel(
            collection_efficiency=_get(crm, "collection_efficiency", "", "count_rate_model"),
            gamma_sat=_get(crm, "gamma_sat", "MHz", "count_rate_model"),
            bg_slope=_get(crm, "bg_slope", "kcps", "count_rate_model"),
            dark_rate=_get(crm, "dark_rate", "Hz", "count_rate_model"),
            tau_r0=_get(crm, "tau_r0", "ns", "count_rate_model"),
            saturation_form=crm.get("saturation_form", {"value": "standard"})["value"],
        )
        cr = doc["charge_readout"]
        readout = PoissonMixture(_get(cr, "eta_zero", "photons", "charge_readout"),
                                 _get(cr, "eta_minus", "photons", "charge_readout"))
        rm = doc["rate_model"]
        rate_units = {"c20": "kHz/uW^2", "c11": "kHz/(uW*mW)", "c12": "kHz/(uW*mW^2)",
                      "d20": "kHz/uW^2", "d11": "kHz/(uW*mW)"}
        rate_model = MultiphotonRateModel(**{k: _get(rm, k, u, "rate_model")
                                             for k, u in rate_units.items()})
        poly_units = {"a": "kHz/mW^3", "b": "kHz/mW^2", "c": "kHz"}

        def poly(name):
            sec = doc[name]
            return (NirRatePolynomial(**{k: _get(sec, k, u, name) for k, u in poly_units.items()}),
                    NirRatePolynomial(*(_sigma(sec, k) for k in poly_units)))

        ion, ion_sigma = poly("nir_ionization")
        rec, rec_sigma = poly("nir_recombination")
        de = doc["destructivity"]
        sc = doc["scc"]
        scc_names = ("p_ion", "k35", "k45", "p_sing", "k51_over_k52", "spin_init",
                     "charge_init_nv0")
        scc = SccParams(**{k: _get(sc, k, "", "scc") for k in scc_names})
        effs = {name: SccEfficiency(_get(e, "beta0", "", name), _get(e, "beta1", "", name))
                for name, e in doc["efficiencies"].items()}
        pl = doc["pl_reference"]
        ps = doc["post_selection"]
        return cls(
            name=doc.get("name", ""),
            count_rate_model=model,
            readout=readout,
            tau_read_ms=_get(cr, "tau_read", "ms", "charge_readout"),
            readout_power_uw=_get(cr, "readout_power", "uW", "charge_readout"),
            threshold=int(_get(cr, "threshold", "photons", "charge_readout")),
            measured_fidelity=_get(cr, "measured_fidelity", "", "charge_readout"),
            rate_model=rate_model,
            green_power_uw=_get(rm, "green_power", "uW", "rate_model"),
            nir_ionization=ion,
            nir_recombination=rec,
            nir_ionization_sigma=ion_sigma,
            nir_recombination_sigma=rec_sigma,
            destructivity=DestructivityMatrix(np.array(_get(de, "matrix", "", "destructivity"))),
            interaction_time_ms=_get(de, "interaction_time", "ms", "destructivity"),
            scc=scc,
            scc_sigma={k: _sigma(sc, k) for k in scc_names},
            singlet_lifetime_ns=_get(sc, "singlet_lifetime", "ns", "scc"),
            scc_cycles=int(_get(sc, "cycles", "", "scc")),
            efficiencies=effs,
            pl_reference={
                "alpha0": _get(pl, "alpha0", "photons", "pl_reference"),
                "alpha1": _get(pl, "alpha1", "photons", "pl_reference"),
                "tau_read_us": _get(pl, "tau_read", "us", "pl_reference"),
                "tau_init_us": _get(pl, "tau_init", "us", "pl_reference"),
            },
            post_selection={
                "prior_p_minus": _get(ps, "prior_p_minus", "", "post_selection"),
                "verify_window_ms": _get(ps, "verify_window", "ms", "post_selection"),
                "ionization_prob": _get(ps, "ionization_prob", "", "post_selection"),
            },
            techniques=[TechniqueRecord.from_dict(t) for t in doc.get("techniques", [])],
        )


def load_profile(path=None):
    """Load a device profile.

    ``None`` loads the bundled reference device. A bare file name that does
    not exist on disk but matches a bundled profile loads the bundled copy.
    """
    bundled = resources.files("nvreadout").joinpath("data")
    if path is None:
        path = "paper.json"
    if not Path(path).exists() and Path(path).name == str(path) and bundled.joinpath(path).is_file():
        text = bundled.joinpath(path).read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise DomainError(f"cannot read profile: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"profile is not valid JSON: {exc}") from None
    return DeviceProfile.from_dict(doc)


_SEGMENT_UNITS = {"duration": "ms", "gamma_ion": "kHz", "gamma_rec": "kHz",
                  "emit_rate_minus": "kcps", "emit_rate_zero": "kcps"}


def load_experiment(path_or_doc):
    """Read a pulse-sequence experiment: ``(segments, initial ChargePopulation)``.

    Document layout::

        {"schema_version": 1,
         "initial_p_minus": 0.77,
         "segments": [{"duration": {"value": 3, "unit": "ms"},
                       "emit_rate_minus": {"value": 3.36, "unit": "kcps"},
                       "record_photons": true}, ...]}
    """
    doc = path_or_doc
    if not isinstance(doc, dict):
        try:
            doc = json.loads(Path(path_or_doc).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read experiment: {exc}") from None
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DomainError(f"experiment: unsupported schema_version {doc.get('schema_version')!r}")
    segments = []
    for i, seg in enumerate(doc.get("segments", [])):
        kwargs = {k: _get(seg, k, u, f"segments[{i}]") for k, u in _SEGMENT_UNITS.items()
                  if k in seg}
        if "duration" not in kwargs:
            raise DomainError(f"experiment: segments[{i}] has no duration")
        kwargs["record_photons"] = bool(seg.get("record_photons", False))
        kwargs["flip_probability"] = float(seg.get("flip_probability", 0.0))
        segments.append(PulseSegment(**kwargs))
    if not segments:
        raise DomainError("experiment: no segments")
    return segments, ChargePopulation.from_minus(doc.get("initial_p_minus", 1.0))


def fmt(x):
    """9 significant digits; integers stay integers."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    x = float(x)
    if math.isnan(x):
        return "nan"
    return format(x, ".9g")


def write_csv(target, header, rows):
    """Write ``rows`` under ``header`` to a path or text stream."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="") as fh:
            return write_csv(fh, header, rows)
    w = csv.writer(target, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return None


def read_csv(source):
    """Return ``(header, float array)`` from a path or text."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        try:
            source = Path(source).read_text()
        except OSError as exc:
            raise DomainError(f"cannot read CSV: {exc}") from None
    reader = csv.reader(_io.StringIO(source))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise DomainError("empty CSV") from None
    try:
        rows = [[float(v) for v in row] for row in reader if row]
    except ValueError as exc:
        raise DomainError(f"non-numeric CSV value: {exc}") from None
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data


def read_histogram(source):
    """Occurrences (or probabilities) indexed by photon count from a histogram CSV."""
    header, data = read_csv(source)
    if header not in (HEADERS["histogram_occurrences"], HEADERS["histogram_probability"]):
        raise DomainError(f"not a histogram CSV: header {','.join(header)}")
    n = data[:, 0]
    if np.any(n < 0) or np.any(n % 1):
        raise DomainError("photon_count must be non-negative integers")
    out = np.zeros(int(n.max()) + 1 if n.size else 0)
    np.add.at(out, n.astype(int), data[:, 1])
    return out
