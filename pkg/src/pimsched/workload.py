"""Workload model: layers, model graphs, and job streams.

A DNN inference workload is described by a directed acyclic graph whose
vertices are compute layers and whose edges carry activation traffic.  Each
layer is reduced to the three quantities the scheduler and the cost model
care about:

* ``weight_bits``  -- total weight storage the layer pins in crossbar memory,
* ``mac_ops``      -- multiply-accumulate operations per input frame,
* activation volume on each outgoing edge (bits per frame).

Layer ids are topologically ordered: every flow goes from a lower id to a
higher id.  A job is a model graph plus a frame count and an arrival time.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .errors import FormatError, GraphError

DCG_FORMAT = "pimsched-dcg"
DCG_VERSION = 1

CONV = "conv"
FC = "fc"
DEPTHWISE = "depthwise"


@dataclass(frozen=True)
class LayerShape:
    """Structural description of one compute layer.

    ``kind`` is one of ``conv``, ``depthwise`` or ``fc``.  Spatial fields are
    ignored for ``fc``.  For ``depthwise`` the channel count is ``c_in`` and
    one k_h x k_w kernel is stored per channel (c_out == c_in).
    """

    kind: str
    c_in: int
    c_out: int
    k_h: int = 1
    k_w: int = 1
    h_out: int = 1
    w_out: int = 1
    bits_per_weight: int = 8
    bits_per_activation: int = 8


def layer_stats(shape: LayerShape) -> tuple[int, int, int]:
    """Return ``(weight_bits, mac_ops, out_activation_bits)`` for a shape.

    conv:       weights = Kh*Kw*Cin*Cout, macs = weights_count*Hout*Wout
    depthwise:  one kernel per channel, Cout = Cin
    fc:         weights = Cin*Cout, macs = Cin*Cout, output = Cout
    """
    k = shape.kind
    if k == CONV:
        n_weights = shape.k_h * shape.k_w * shape.c_in * shape.c_out
        macs = n_weights * shape.h_out * shape.w_out
        out_elems = shape.c_out * shape.h_out * shape.w_out
    elif k == DEPTHWISE:
        if shape.c_out not in (0, shape.c_in):
            raise GraphError(
                f"depthwise layer must have c_out == c_in, got {shape.c_out} != {shape.c_in}"
            )
        n_weights = shape.k_h * shape.k_w * shape.c_in
        macs = n_weights * shape.h_out * shape.w_out
        out_elems = shape.c_in * shape.h_out * shape.w_out
    elif k == FC:
        n_weights = shape.c_in * shape.c_out
        macs = n_weights
        out_elems = shape.c_out
    else:
        raise GraphError(f"unknown layer kind {k!r}")
    return (
        n_weights * shape.bits_per_weight,
        macs,
        out_elems * shape.bits_per_activation,
    )


@dataclass(frozen=True)
class Layer:
    """One schedulable unit: id, pinned weight storage, per-frame MAC count."""

    id: int
    weight_bits: int
    mac_ops: int


@dataclass
class ModelGraph:
    """DAG of layers with per-frame activation volumes on the edges.

    ``flows`` maps ``(src_id, dst_id)`` to bits transferred per frame.  Layer
    ids are consecutive from 0 and topologically ordered (src < dst on every
    edge).
    """

    name: str
    layers: list[Layer]
    flows: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        ids = [l.id for l in self.layers]
        if not ids:
            raise GraphError(f"model {self.name!r}: no layers")
        if ids != list(range(len(ids))):
            raise GraphError(f"model {self.name!r}: layer ids must be 0..N-1 in order")
        for l in self.layers:
            if l.weight_bits <= 0:
                raise GraphError(f"model {self.name!r}: layer {l.id} has weight_bits <= 0")
            if l.mac_ops <= 0:
                raise GraphError(f"model {self.name!r}: layer {l.id} has mac_ops <= 0")
        n = len(ids)
        has_in = [False] * n
        has_out = [False] * n
        for (src, dst), bits in self.flows.items():
            if not (0 <= src < n and 0 <= dst < n):
                raise GraphError(f"model {self.name!r}: flow ({src},{dst}) references unknown layer")
            if src >= dst:
                raise GraphError(
                    f"model {self.name!r}: flow ({src},{dst}) violates topological order"
                )
            if bits <= 0:
                raise GraphError(f"model {self.name!r}: flow ({src},{dst}) has bits <= 0")
            has_out[src] = True
            has_in[dst] = True
        for i in range(n):
            if i > 0 and not has_in[i]:
                raise GraphError(f"model {self.name!r}: layer {i} has no incoming flow")
            if i < n - 1 and not has_out[i]:
                raise GraphError(f"model {self.name!r}: layer {i} has no outgoing flow")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def total_weight_bits(self) -> int:
        return sum(l.weight_bits for l in self.layers)

    def total_mac_ops(self) -> int:
        return sum(l.mac_ops for l in self.layers)

    def in_flows(self, layer_id: int) -> list[tuple[int, int]]:
        """Incoming edges of a layer as ``(src_id, bits)`` pairs, sorted by src."""
        out = [(s, b) for (s, d), b in self.flows.items() if d == layer_id]
        out.sort()
        return out


def build_dcg(name: str, shapes: list[LayerShape], edges: list[tuple[int, int]]) -> ModelGraph:
    """Assemble a model graph from layer shapes and connectivity.

    The activation volume on edge (i, j) is the full output of layer i; a
    producer feeding several consumers ships its output once per consumer.
    """
    stats = [layer_stats(s) for s in shapes]
    layers = [Layer(i, w, o) for i, (w, o, _) in enumerate(stats)]
    flows = {}
    for src, dst in edges:
        if not (0 <= src < len(shapes)):
            raise GraphError(f"model {name!r}: edge ({src},{dst}) references unknown layer")
        flows[(src, dst)] = stats[src][2]
    return ModelGraph(name, layers, flows)


def chain_edges(n_layers: int) -> list[tuple[int, int]]:
    """Edge list of a simple feed-forward chain."""
    return [(i, i + 1) for i in range(n_layers - 1)]


@dataclass
class Job:
    """A unit of admitted work: run ``frames`` inferences of one model."""

    id: int
    graph: ModelGraph
    frames: int
    arrival_s: float

    def __post_init__(self):
        if self.frames < 1:
            raise GraphError(f"job {self.id}: frames must be >= 1")
        if self.arrival_s < 0:
            raise GraphError(f"job {self.id}: negative arrival time")


# ---------------------------------------------------------------------------
# File round-trip
# ---------------------------------------------------------------------------

def write_dcg_file(graph: ModelGraph, path) -> None:
    doc = {
        "format": DCG_FORMAT,
        "version": DCG_VERSION,
        "name": graph.name,
        "layers": [
            {"id": l.id, "weight_mem_bits": l.weight_bits, "mac_ops": l.mac_ops}
            for l in graph.layers
        ],
        "flows": [
            {"src": s, "dst": d, "bits": b} for (s, d), b in sorted(graph.flows.items())
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def parse_dcg_file(path) -> ModelGraph:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    except OSError as e:
        raise FormatError(str(e), path=path) from e
    if not isinstance(doc, dict) or doc.get("format") != DCG_FORMAT:
        raise FormatError(f"not a {DCG_FORMAT} file", path=path)
    if doc.get("version") != DCG_VERSION:
        raise FormatError(
            f"unsupported version {doc.get('version')!r} (expected {DCG_VERSION})", path=path
        )
    try:
        layers = [
            Layer(int(e["id"]), int(e["weight_mem_bits"]), int(e["mac_ops"]))
            for e in doc["layers"]
        ]
        flows = {
            (int(e["src"]), int(e["dst"])): int(e["bits"]) for e in doc.get("flows", [])
        }
        name = str(doc["name"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad field in model file: {e}", path=path) from e
    try:
        return ModelGraph(name, layers, flows)
    except GraphError as e:
        raise FormatError(str(e), path=path) from e


# ---------------------------------------------------------------------------
# Job stream synthesis
# ---------------------------------------------------------------------------

def synth_workload_stream(
    seed: int,
    count: int,
    frame_range: tuple[int, int],
    model_pool: list[ModelGraph],
    admit_rate: float,
) -> list[Job]:
    """Draw a deterministic Poisson job stream.

    Inter-arrival gaps are exponential with mean ``1/admit_rate``; the model
    and the frame count of every job are uniform over their pools.  The same
    seed always yields the same stream.
    """
    if not model_pool:
        raise GraphError("empty model pool")
    if admit_rate <= 0:
        raise GraphError(f"admit_rate must be positive, got {admit_rate}")
    lo, hi = frame_range
    if not (1 <= lo <= hi):
        raise GraphError(f"bad frame range {frame_range}")
    rng = random.Random(seed)
    t = 0.0
    jobs = []
    for i in range(count):
        t += rng.expovariate(admit_rate)
        graph = model_pool[rng.randrange(len(model_pool))]
        frames = rng.randint(lo, hi)
        jobs.append(Job(i, graph, frames, t))
    return jobs


def mean_interarrival(jobs: list[Job]) -> float:
    """Empirical mean of the arrival gaps (includes the gap before job 0)."""
    if not jobs:
        return math.nan
    prev = 0.0
    total = 0.0
    for j in jobs:
        total += j.arrival_s - prev
        prev = j.arrival_s
    return total / len(jobs)
