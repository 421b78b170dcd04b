"""Experiment specification: one YAML file describing a full run.

The file picks a system (built-in or topology file), cost calibration,
thermal parameters, workload pool, the schedulers to compare, the
preference vectors, the admit-rate sweep and seeds, plus training
hyperparameters for `train`.  Everything has a default, so a minimal
spec is just a couple of lines.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .arch import (
    PimType,
    SystemGraph,
    build_mesh,
    desk_mesh,
    load_topology_file,
    full_mesh,
    toy_mesh,
)
from .costs import CostModel, load_calibration_file
from .errors import ConfigError, FormatError
from .engine import SimConfig
from .thermal import ThermalConfig, load_thermal_file
from .training import PpoConfig
from .workload import ModelGraph, parse_dcg_file
from .zoo import builtin_model, builtin_names, full_pool, synthetic_pool

EXPERIMENT_FORMAT = "pimsched-experiment"
EXPERIMENT_VERSION = 1

BUILTIN_SYSTEMS = ("desk", "full", "toy2")


@dataclass
class SchedulerSpec:
    name: str
    policy_path: str | None = None
    preference: tuple[float, float] = (0.5, 0.5)

    def label(self) -> str:
        if self.name == "thermos":
            return f"thermos[{self.preference[0]:g},{self.preference[1]:g}]"
        return self.name


@dataclass
class WorkloadSpec:
    pool: str = "synthetic"        # synthetic | full | toy | desk | model names/paths
    pool_seed: int = 7
    pool_size: int = 6
    models: list[str] = field(default_factory=list)
    count: int = 200
    frame_range: tuple[int, int] = (1, 8)


@dataclass
class ExperimentSpec:
    """Parsed, validated experiment description."""

    system: str = "desk"                  # builtin name or topology file path
    calibration: str | None = None        # YAML path, None = defaults
    thermal: str | None = None            # YAML path, None = defaults
    schedulers: list[SchedulerSpec] = field(default_factory=lambda: [SchedulerSpec("simba")])
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    admit_rates: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    out_dir: str = "results"
    sim: SimConfig = field(default_factory=lambda: SimConfig(warmup_s=2.0))
    ppo: PpoConfig = field(default_factory=PpoConfig)
    base_dir: str = "."

    # -- loading -------------------------------------------------------------

    @classmethod
    def load(cls, path: str) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                doc = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            raise FormatError(
                f"invalid YAML: {e}", path=path,
                line=mark.line + 1 if mark else None,
            ) from e
        except OSError as e:
            raise ConfigError(f"cannot read experiment spec: {e}") from e
        if not isinstance(doc, dict):
            raise FormatError("experiment spec must be a mapping", path=path)
        if doc.get("format", EXPERIMENT_FORMAT) != EXPERIMENT_FORMAT:
            raise FormatError(f"not a {EXPERIMENT_FORMAT} file", path=path)
        if doc.get("version", EXPERIMENT_VERSION) != EXPERIMENT_VERSION:
            raise FormatError(f"unsupported version {doc.get('version')!r}", path=path)
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "ExperimentSpec":
        spec = cls(base_dir=base_dir)
        known = {"format", "version", "system", "calibration", "thermal",
                 "schedulers", "workload", "admit_rates", "seeds", "out",
                 "sim", "train"}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown experiment fields: {sorted(unknown)}")

        spec.system = str(doc.get("system", spec.system))
        spec.calibration = doc.get("calibration")
        spec.thermal = doc.get("thermal")
        spec.out_dir = str(doc.get("out", spec.out_dir))

        scheds = doc.get("schedulers")
        if scheds is not None:
            if not isinstance(scheds, list) or not scheds:
                raise ConfigError("schedulers must be a non-empty list")
            spec.schedulers = [_parse_scheduler(s) for s in scheds]

        wl = doc.get("workload", {})
        if not isinstance(wl, dict):
            raise ConfigError("workload must be a mapping")
        w = spec.workload
        w.pool = str(wl.get("pool", w.pool))
        w.pool_seed = int(wl.get("pool_seed", w.pool_seed))
        w.pool_size = int(wl.get("pool_size", w.pool_size))
        w.models = [str(m) for m in wl.get("models", [])]
        w.count = int(wl.get("count", w.count))
        fr = wl.get("frame_range", list(w.frame_range))
        if not (isinstance(fr, (list, tuple)) and len(fr) == 2 and 1 <= int(fr[0]) <= int(fr[1])):
            raise ConfigError(f"bad frame_range {fr!r}")
        w.frame_range = (int(fr[0]), int(fr[1]))
        if w.count < 1:
            raise ConfigError(f"workload count must be >= 1, got {w.count}")

        rates = doc.get("admit_rates", spec.admit_rates)
        if not isinstance(rates, list) or not rates or any(float(r) <= 0 for r in rates):
            raise ConfigError("admit_rates must be a non-empty list of positive rates")
        spec.admit_rates = [float(r) for r in rates]
        seeds = doc.get("seeds", spec.seeds)
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("seeds must be a non-empty list")
        spec.seeds = [int(s) for s in seeds]

        sim = doc.get("sim", {})
        if not isinstance(sim, dict):
            raise ConfigError("sim must be a mapping")
        allowed = {f.name for f in dataclasses.fields(SimConfig)}
        bad = set(sim) - allowed
        if bad:
            raise ConfigError(f"unknown sim fields: {sorted(bad)}")
        spec.sim = dataclasses.replace(spec.sim, **sim)
        if spec.sim.queue_capacity < 1:
            raise ConfigError(f"queue_capacity must be >= 1, got {spec.sim.queue_capacity}")

        tr = doc.get("train", {})
        if not isinstance(tr, dict):
            raise ConfigError("train must be a mapping")
        allowed = {f.name for f in dataclasses.fields(PpoConfig)}
        bad = set(tr) - allowed
        if bad:
            raise ConfigError(f"unknown train fields: {sorted(bad)}")
        for key in ("preferences", "admit_range", "frame_range"):
            if key in tr:
                v = tr[key]
                tr[key] = tuple(tuple(x) if isinstance(x, list) else x for x in v) \
                    if key == "preferences" else tuple(v)
        spec.ppo = dataclasses.replace(spec.ppo, **tr)
        spec.ppo.validate()
        return spec

    # -- resolution ----------------------------------------------------------

    def _resolve(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    def build_system(self) -> SystemGraph:
        if self.system == "desk":
            return desk_mesh()
        if self.system == "full":
            return full_mesh()
        if self.system == "toy2":
            return toy_mesh()
        path = self._resolve(self.system)
        if not os.path.exists(path):
            raise ConfigError(
                f"system {self.system!r} is neither a builtin "
                f"({', '.join(BUILTIN_SYSTEMS)}) nor an existing topology file"
            )
        return load_topology_file(path)

    def build_cost_model(self) -> CostModel:
        if self.calibration is None:
            return CostModel()
        path = self._resolve(self.calibration)
        if not os.path.exists(path):
            raise ConfigError(f"calibration file not found: {path}")
        return load_calibration_file(path)

    def build_thermal_config(self) -> ThermalConfig:
        if self.thermal is None:
            return ThermalConfig()
        path = self._resolve(self.thermal)
        if not os.path.exists(path):
            raise ConfigError(f"thermal file not found: {path}")
        return load_thermal_file(path)

    def build_pool(self) -> list[ModelGraph]:
        w = self.workload
        if w.models:
            pool = []
            for m in w.models:
                if m in builtin_names():
                    pool.append(builtin_model(m))
                else:
                    path = self._resolve(m)
                    if not os.path.exists(path):
                        raise ConfigError(f"model {m!r} is neither builtin nor a DCG file")
                    pool.append(parse_dcg_file(path))
            return pool
        if w.pool == "synthetic":
            return synthetic_pool(w.pool_seed, n_models=w.pool_size)
        if w.pool == "full":
            return full_pool()
        if w.pool == "toy":
            # every model fits the smallest single-chiplet cluster, so a
            # preference-pure policy is never forced off its cluster
            return synthetic_pool(w.pool_seed, n_models=w.pool_size,
                                  layer_range=(2, 4), channel_range=(16, 64),
                                  spatial_range=(4, 12),
                                  max_weight_bits=2_400_000)
        if w.pool == "desk":
            # deep, wide models sized to keep a ten-chiplet system busy:
            # most need a few chiplets' worth of weights, none overflows
            # the largest cluster
            return synthetic_pool(w.pool_seed, n_models=w.pool_size,
                                  layer_range=(5, 7), channel_range=(128, 192),
                                  spatial_range=(224, 320),
                                  max_weight_bits=10_000_000)
        raise ConfigError(f"unknown workload pool {w.pool!r}")


def _parse_scheduler(s) -> SchedulerSpec:
    if isinstance(s, str):
        s = {"name": s}
    if not isinstance(s, dict) or "name" not in s:
        raise ConfigError(f"scheduler entry must be a name or mapping with name: {s!r}")
    name = str(s["name"])
    if name not in ("simba", "biglittle", "random", "thermos"):
        raise ConfigError(f"unknown scheduler {name!r}")
    pref = s.get("preference", (0.5, 0.5))
    if not (isinstance(pref, (list, tuple)) and len(pref) == 2):
        raise ConfigError(f"preference must have 2 entries, got {pref!r}")
    pref = (float(pref[0]), float(pref[1]))
    if pref[0] < 0 or pref[1] < 0 or abs(sum(pref) - 1.0) > 1e-12:
        raise ConfigError(f"preference must be nonnegative and sum to 1, got {pref}")
    policy = s.get("policy")
    if name == "thermos" and policy is None:
        # resolved later: train writes the policy next to the eval outputs
        policy = "policy.json"
    extra = set(s) - {"name", "preference", "policy"}
    if extra:
        raise ConfigError(f"unknown scheduler fields: {sorted(extra)}")
    return SchedulerSpec(name=name, policy_path=policy, preference=pref)
