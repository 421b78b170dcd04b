"""Lumped-RC thermal network over the chiplet fabric.

One thermal node per chiplet.  Node capacitance and ambient conductance
scale with die area; lateral conductances couple chiplets whose centres sit
within a cut-off radius, with strength inversely proportional to distance.

The continuous network  C dT/dt = P - G_amb (T - T_amb) - L (T - T_amb)
is discretized exactly over the control interval ``dt`` via the matrix
exponential, so stepping at dt is bit-for-bit the same trajectory a much
finer integrator converges to under piecewise-constant power:

    x[k+1] = A x[k] + B P[k],    x = T - T_amb.

A is elementwise non-negative with spectral radius < 1 (strict stability),
which gives monotone decay to ambient at zero power and rules out
temperatures below ambient for non-negative power inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml
from scipy.linalg import expm

from .arch import PimType, SystemGraph
from .errors import ConfigError, FormatError, InvariantError

THERMAL_FORMAT = "pimsched-thermal"
THERMAL_VERSION = 1


@dataclass(frozen=True)
class ThermalConfig:
    ambient_k: float = 298.0
    cap_per_mm2: float = 0.05       # J / (K mm^2)
    g_ambient_per_mm2: float = 0.02  # W / (K mm^2)
    g_lateral: float = 0.05          # W mm / K; pairwise g = g_lateral / distance
    lateral_radius_mm: float = 8.0
    dt_s: float = 0.1

    def validate(self):
        if self.ambient_k <= 0:
            raise ConfigError(f"ambient_k must be > 0, got {self.ambient_k}")
        for f in ("cap_per_mm2", "g_ambient_per_mm2", "dt_s"):
            v = getattr(self, f)
            if not (v > 0) or not math.isfinite(v):
                raise ConfigError(f"thermal {f} must be finite and > 0, got {v}")
        for f in ("g_lateral", "lateral_radius_mm"):
            v = getattr(self, f)
            if v < 0 or not math.isfinite(v):
                raise ConfigError(f"thermal {f} must be finite and >= 0, got {v}")


class ThermalModel:
    """Discrete-time state-space model ``x' = A x + B P`` with x = T - T_amb."""

    def __init__(self, graph: SystemGraph, config: ThermalConfig | None = None):
        self.config = config or ThermalConfig()
        self.config.validate()
        n = len(graph.chiplets)
        self.n_nodes = n
        self.node_ids = [c.id for c in graph.chiplets]  # node k <-> chiplet id k
        cap = np.array([self.config.cap_per_mm2 * c.area_mm2 for c in graph.chiplets])
        g_amb = np.array([self.config.g_ambient_per_mm2 * c.area_mm2 for c in graph.chiplets])
        # lateral conductance graph (symmetric by construction)
        g_lat = np.zeros((n, n))
        if self.config.g_lateral > 0:
            for i in range(n):
                ci = graph.chiplets[i]
                for j in range(i + 1, n):
                    cj = graph.chiplets[j]
                    d = math.hypot(ci.x_mm - cj.x_mm, ci.y_mm - cj.y_mm)
                    if 0 < d <= self.config.lateral_radius_mm:
                        g = self.config.g_lateral / d
                        g_lat[i, j] = g
                        g_lat[j, i] = g
        lap = np.diag(g_lat.sum(axis=1)) - g_lat
        a_cont = -np.diag(1.0 / cap) @ (np.diag(g_amb) + lap)
        b_cont = np.diag(1.0 / cap)
        self.A = expm(a_cont * self.config.dt_s)
        # exact zero-order-hold input matrix: A_c^-1 (A_d - I) B_c
        self.B = np.linalg.solve(a_cont, (self.A - np.eye(n)) @ b_cont)
        rho = max(abs(np.linalg.eigvals(self.A)))
        if not rho < 1.0:
            raise InvariantError(f"thermal step matrix is not strictly stable (rho={rho})")
        self.spectral_radius = float(rho)
        self._a_cont = a_cont
        self._b_cont = b_cont

    @property
    def ambient_k(self) -> float:
        return self.config.ambient_k

    @property
    def dt_s(self) -> float:
        return self.config.dt_s

    def step(self, temps_k: np.ndarray, power_w: np.ndarray) -> np.ndarray:
        """Advance one control interval under constant per-node power."""
        x = np.asarray(temps_k, dtype=float) - self.ambient_k
        p = np.asarray(power_w, dtype=float)
        if x.shape != (self.n_nodes,) or p.shape != (self.n_nodes,):
            raise ConfigError(
                f"expected vectors of length {self.n_nodes}, got {x.shape} and {p.shape}"
            )
        return self.A @ x + self.B @ p + self.ambient_k

    def step_fine(self, temps_k: np.ndarray, power_w: np.ndarray, substeps: int) -> np.ndarray:
        """Forward-Euler reference integrator at dt/substeps (for validation)."""
        h = self.dt_s / substeps
        x = np.asarray(temps_k, dtype=float) - self.ambient_k
        p = np.asarray(power_w, dtype=float)
        for _ in range(substeps):
            x = x + h * (self._a_cont @ x + self._b_cont @ p)
        return x + self.ambient_k

    def steady_state(self, power_w: np.ndarray) -> np.ndarray:
        """Fixed point of the step map under constant power."""
        p = np.asarray(power_w, dtype=float)
        x = np.linalg.solve(np.eye(self.n_nodes) - self.A, self.B @ p)
        return x + self.ambient_k

    def max_step_rise(self, power_w: np.ndarray) -> float:
        """Upper bound on any node's single-step temperature rise.

        For x >= 0 (temps at or above ambient) the homogeneous part can only
        cool, so the rise is bounded by max(B @ P).
        """
        return float(np.max(self.B @ np.asarray(power_w, dtype=float)))


def throttle_update(graph: SystemGraph) -> tuple[list[int], list[int]]:
    """Set/clear throttle flags from current temperatures.

    A compute chiplet is throttled exactly when its temperature is at or
    above its flavour's limit.  Returns (newly_throttled, newly_cleared) ids.
    """
    hot, cooled = [], []
    for c in graph.chiplets:
        if c.is_io:
            continue
        should = c.temp_k >= c.t_max
        if should and not c.throttled:
            hot.append(c.id)
        elif not should and c.throttled:
            cooled.append(c.id)
        c.throttled = should
    return hot, cooled


# ---------------------------------------------------------------------------
# Config file round-trip
# ---------------------------------------------------------------------------

def write_thermal_file(config: ThermalConfig, path) -> None:
    doc = {
        "format": THERMAL_FORMAT,
        "version": THERMAL_VERSION,
        "ambient_k": config.ambient_k,
        "cap_per_mm2": config.cap_per_mm2,
        "g_ambient_per_mm2": config.g_ambient_per_mm2,
        "g_lateral": config.g_lateral,
        "lateral_radius_mm": config.lateral_radius_mm,
        "dt_s": config.dt_s,
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)


def load_thermal_file(path) -> ThermalConfig:
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
    if not isinstance(doc, dict) or doc.get("format") != THERMAL_FORMAT:
        raise FormatError(f"not a {THERMAL_FORMAT} file", path=path)
    if doc.get("version") != THERMAL_VERSION:
        raise FormatError(
            f"unsupported version {doc.get('version')!r} (expected {THERMAL_VERSION})",
            path=path,
        )
    try:
        cfg = ThermalConfig(
            ambient_k=float(doc["ambient_k"]),
            cap_per_mm2=float(doc["cap_per_mm2"]),
            g_ambient_per_mm2=float(doc["g_ambient_per_mm2"]),
            g_lateral=float(doc["g_lateral"]),
            lateral_radius_mm=float(doc["lateral_radius_mm"]),
            dt_s=float(doc["dt_s"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad field in thermal file: {e}", path=path) from e
    try:
        cfg.validate()
    except ConfigError as e:
        raise FormatError(str(e), path=path) from e
    return cfg
