"""Parametric compute / communication / leakage cost model.

Per-MAC latency and energy constants stand in for full circuit simulation;
they are calibrated per PIM flavour so that the qualitative trade-offs hold:
ADC-less crossbars burn the least energy per MAC, shared-ADC ones are the
fastest, standard crossbars sit in the middle, and accumulator chiplets pay
for their memory density with the slowest, hungriest MACs.

Communication follows the fabric: energy is per bit per hop, latency is a
fixed per-hop term plus flit serialization at the link clock.  Links may
override latency / energy per bit in the topology file; pair costs then sum
along the deterministic route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import yaml

from .arch import PimType, SystemGraph
from .errors import ConfigError, FormatError

CALIBRATION_FORMAT = "pimsched-calibration"
CALIBRATION_VERSION = 1


@dataclass(frozen=True)
class PimCostProfile:
    """Per-chiplet compute constants for one PIM flavour."""

    mac_latency_s: float
    mac_energy_j: float
    leakage_w: float
    peak_dynamic_w: float

    def validate(self, name=""):
        for f in ("mac_latency_s", "mac_energy_j", "leakage_w", "peak_dynamic_w"):
            v = getattr(self, f)
            if not (v > 0) or not math.isfinite(v):
                raise ConfigError(f"profile {name}: {f} must be finite and > 0, got {v}")


@dataclass(frozen=True)
class LinkProfile:
    """Fabric link constants (defaults: 64-bit flits at 1 GHz, 0.5 pJ/bit/hop)."""

    width_bits: int = 64
    energy_j_per_bit_per_hop: float = 0.5e-12
    link_clock_hz: float = 1e9
    per_hop_latency_s: float = 1e-9

    def validate(self):
        if self.width_bits < 1:
            raise ConfigError(f"link width_bits must be >= 1, got {self.width_bits}")
        for f in ("energy_j_per_bit_per_hop", "link_clock_hz", "per_hop_latency_s"):
            v = getattr(self, f)
            if v < 0 or not math.isfinite(v):
                raise ConfigError(f"link profile {f} must be finite and >= 0, got {v}")
        if self.link_clock_hz <= 0:
            raise ConfigError("link_clock_hz must be > 0")


#: Default calibration.  Busy power = mac_energy / mac_latency.
DEFAULT_PROFILES = {
    PimType.STANDARD: PimCostProfile(1.0e-12, 3.0e-12, 0.05, 4.0),
    PimType.SHARED_ADC: PimCostProfile(0.8e-12, 1.6e-12, 0.08, 6.0),
    PimType.ACCUMULATOR: PimCostProfile(2.0e-12, 3.6e-12, 0.06, 4.0),
    PimType.ADC_LESS: PimCostProfile(1.4e-12, 0.8e-12, 0.03, 3.0),
}


class CostModel:
    """Bundle of per-type compute profiles plus the link profile."""

    def __init__(self, profiles: dict[PimType, PimCostProfile] | None = None,
                 link: LinkProfile | None = None):
        self.profiles = dict(DEFAULT_PROFILES if profiles is None else profiles)
        self.link = link if link is not None else LinkProfile()
        for t, p in self.profiles.items():
            p.validate(t.value)
        self.link.validate()

    def profile(self, pim_type: PimType) -> PimCostProfile:
        try:
            return self.profiles[pim_type]
        except KeyError:
            raise ConfigError(f"no cost profile for PIM type {pim_type.value!r}") from None


def compute_cost(mac_ops: int, profile: PimCostProfile) -> tuple[float, float]:
    """(latency_s, energy_j) of running ``mac_ops`` MACs on one chiplet."""
    if mac_ops < 0:
        raise ConfigError(f"mac_ops must be >= 0, got {mac_ops}")
    return mac_ops * profile.mac_latency_s, mac_ops * profile.mac_energy_j


def comm_cost(bits: int, hops: int, link: LinkProfile) -> tuple[float, float]:
    """(latency_s, energy_j) of moving ``bits`` across ``hops`` uniform links.

    Zero hops means producer and consumer share a chiplet: free.
    """
    if bits < 0 or hops < 0:
        raise ConfigError(f"bits and hops must be >= 0, got {bits}, {hops}")
    if hops == 0 or bits == 0:
        return 0.0, 0.0
    flits = math.ceil(bits / link.width_bits)
    latency = hops * link.per_hop_latency_s + flits / link.link_clock_hz
    energy = bits * link.energy_j_per_bit_per_hop * hops
    return latency, energy


def pair_comm_cost(graph: SystemGraph, src: int, dst: int, bits: int,
                   link: LinkProfile) -> tuple[float, float]:
    """Transfer cost between two chiplets, honouring per-link overrides.

    With no overrides this equals ``comm_cost(bits, hop_distance(src, dst))``.
    """
    if src == dst or bits == 0:
        return 0.0, 0.0
    if not graph.has_link_overrides:
        return comm_cost(bits, graph.hop_distance(src, dst), link)
    flits = math.ceil(bits / link.width_bits)
    latency = flits / link.link_clock_hz
    energy = 0.0
    for ln in graph.route_links(src, dst):
        latency += ln.latency_s if ln.latency_s is not None else link.per_hop_latency_s
        e_bit = (
            ln.energy_pj_per_bit * 1e-12
            if ln.energy_pj_per_bit is not None
            else link.energy_j_per_bit_per_hop
        )
        energy += bits * e_bit
    return latency, energy


def leakage_energy(profile: PimCostProfile, dt_s: float) -> float:
    """Leakage burned by a chiplet that holds weights for ``dt_s`` seconds."""
    if dt_s < 0:
        raise ConfigError(f"dt_s must be >= 0, got {dt_s}")
    return profile.leakage_w * dt_s


# ---------------------------------------------------------------------------
# Calibration file round-trip
# ---------------------------------------------------------------------------

def write_calibration_file(model: CostModel, path) -> None:
    doc = {
        "format": CALIBRATION_FORMAT,
        "version": CALIBRATION_VERSION,
        "pim_types": {
            t.value: {
                "mac_latency_s": p.mac_latency_s,
                "mac_energy_j": p.mac_energy_j,
                "leakage_w": p.leakage_w,
                "peak_dynamic_w": p.peak_dynamic_w,
            }
            for t, p in model.profiles.items()
        },
        "link": {
            "width_bits": model.link.width_bits,
            "energy_j_per_bit_per_hop": model.link.energy_j_per_bit_per_hop,
            "link_clock_hz": model.link.link_clock_hz,
            "per_hop_latency_s": model.link.per_hop_latency_s,
        },
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)


def load_calibration_file(path) -> CostModel:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise FormatError(
            f"invalid YAML: {e}", path=path, line=None if mark is None else mark.line + 1
        ) from e
    except OSError as e:
        raise FormatError(str(e), path=path) from e
    if not isinstance(doc, dict) or doc.get("format") != CALIBRATION_FORMAT:
        raise FormatError(f"not a {CALIBRATION_FORMAT} file", path=path)
    if doc.get("version") != CALIBRATION_VERSION:
        raise FormatError(
            f"unsupported version {doc.get('version')!r} (expected {CALIBRATION_VERSION})",
            path=path,
        )
    try:
        profiles = {}
        for name, p in doc["pim_types"].items():
            try:
                t = PimType(name)
            except ValueError:
                raise FormatError(f"unknown pim_type {name!r}", path=path) from None
            profiles[t] = PimCostProfile(
                float(p["mac_latency_s"]),
                float(p["mac_energy_j"]),
                float(p["leakage_w"]),
                float(p["peak_dynamic_w"]),
            )
        ld = doc.get("link", {})
        link = LinkProfile(
            int(ld.get("width_bits", 64)),
            float(ld.get("energy_j_per_bit_per_hop", 0.5e-12)),
            float(ld.get("link_clock_hz", 1e9)),
            float(ld.get("per_hop_latency_s", 1e-9)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad field in calibration file: {e}", path=path) from e
    try:
        return CostModel(profiles, link)
    except ConfigError as e:
        raise FormatError(str(e), path=path) from e
