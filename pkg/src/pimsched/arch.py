"""System model: heterogeneous PIM chiplets on a 2.5D interconnect.

Compute chiplets come in four crossbar flavours with different memory
density, speed, energy and thermal headroom.  SRAM-based flavours tolerate
358 K; ReRAM-based ones throttle at 330 K.  I/O chiplets sit on the fabric
boundary and move frames on/off the package; they hold no weights.

The interconnect is an undirected graph with unit-hop links.  Routing is
minimal-hop; among equal-length paths the lexicographically smallest node-id
sequence wins, which keeps every derived quantity deterministic.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace

from .errors import TopologyError

TOPOLOGY_FORMAT = "pimsched-topology"
TOPOLOGY_VERSION = 1

KIB = 1024  # memory capacities below are quoted in kibibits


class PimType(enum.Enum):
    """Crossbar flavour of a compute chiplet (cluster identity)."""

    STANDARD = "standard"
    SHARED_ADC = "shared_adc"
    ACCUMULATOR = "accumulator"
    ADC_LESS = "adc_less"


PIM_TYPES = tuple(PimType)

#: per-chiplet weight memory, bits
DEFAULT_MEM_CAP = {
    PimType.STANDARD: 9568 * KIB,
    PimType.SHARED_ADC: 9792 * KIB,
    PimType.ACCUMULATOR: 19200 * KIB,
    PimType.ADC_LESS: 2416 * KIB,
}

#: throttling thresholds, K: ReRAM crossbars cap at 330, SRAM at 358
DEFAULT_T_MAX = {
    PimType.STANDARD: 330.0,
    PimType.SHARED_ADC: 358.0,
    PimType.ACCUMULATOR: 330.0,
    PimType.ADC_LESS: 358.0,
}

#: die area, mm^2
DEFAULT_AREA = {
    PimType.STANDARD: 4.0,
    PimType.SHARED_ADC: 9.0,
    PimType.ACCUMULATOR: 4.0,
    PimType.ADC_LESS: 4.0,
}

IO_AREA = 4.0

#: the full-size reference system: (type, count) blocks in placement order
FULL_PLACEMENT = (
    (PimType.STANDARD, 25),
    (PimType.SHARED_ADC, 28),
    (PimType.ACCUMULATOR, 10),
    (PimType.ADC_LESS, 15),
)


@dataclass
class Chiplet:
    """One fabric node.  ``pim_type`` is None for I/O chiplets.

    Mutable fields (``mem_avail``, ``temp_k``, ``throttled``) belong to
    exactly one simulation instance; use :meth:`SystemGraph.clone` to fork.
    """

    id: int
    pim_type: PimType | None
    x_mm: float
    y_mm: float
    area_mm2: float
    mem_cap: int = 0
    mem_avail: int = 0
    temp_k: float = 298.0
    t_max: float = math.inf
    throttled: bool = False

    @property
    def is_io(self) -> bool:
        return self.pim_type is None

    def can_accept_weights(self) -> bool:
        return not self.is_io and not self.throttled and self.mem_avail > 0


@dataclass(frozen=True)
class Link:
    """Undirected fabric link; per-link overrides are optional."""

    a: int
    b: int
    latency_s: float | None = None
    energy_pj_per_bit: float | None = None


class SystemGraph:
    """Chiplet fabric: nodes, links, geometry, and per-chiplet state."""

    def __init__(self, chiplets: list[Chiplet], links: list[Link]):
        self.chiplets = sorted(chiplets, key=lambda c: c.id)
        if [c.id for c in self.chiplets] != list(range(len(self.chiplets))):
            raise TopologyError("chiplet ids must be consecutive from 0")
        self.links = list(links)
        n = len(self.chiplets)
        self.neighbors: list[list[int]] = [[] for _ in range(n)]
        seen = set()
        for ln in self.links:
            if not (0 <= ln.a < n and 0 <= ln.b < n):
                raise TopologyError(f"link ({ln.a},{ln.b}) references unknown chiplet")
            if ln.a == ln.b:
                raise TopologyError(f"self-link on chiplet {ln.a}")
            key = (min(ln.a, ln.b), max(ln.a, ln.b))
            if key in seen:
                raise TopologyError(f"duplicate link ({ln.a},{ln.b})")
            seen.add(key)
            self.neighbors[ln.a].append(ln.b)
            self.neighbors[ln.b].append(ln.a)
        for lst in self.neighbors:
            lst.sort()
        self._link_by_pair = {}
        for ln in self.links:
            self._link_by_pair[(ln.a, ln.b)] = ln
            self._link_by_pair[(ln.b, ln.a)] = ln
        self._check_connected()
        self._dist_cache: dict[int, list[int]] = {}
        self._route_cache: dict[tuple[int, int], tuple[int, ...]] = {}
        self.has_link_overrides = any(
            ln.latency_s is not None or ln.energy_pj_per_bit is not None for ln in self.links
        )

    # -- structure ---------------------------------------------------------

    def _check_connected(self):
        n = len(self.chiplets)
        if n == 0:
            raise TopologyError("empty system")
        if n == 1:
            return
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        if len(seen) != n:
            missing = sorted(set(range(n)) - seen)
            raise TopologyError(f"fabric is disconnected; unreachable chiplets {missing[:8]}")

    @property
    def compute_ids(self) -> list[int]:
        return [c.id for c in self.chiplets if not c.is_io]

    @property
    def io_ids(self) -> list[int]:
        return [c.id for c in self.chiplets if c.is_io]

    def members(self, pim_type: PimType) -> list[int]:
        return [c.id for c in self.chiplets if c.pim_type is pim_type]

    def present_types(self) -> list[PimType]:
        """Cluster identities present, in canonical enum order."""
        have = {c.pim_type for c in self.chiplets if not c.is_io}
        return [t for t in PIM_TYPES if t in have]

    def clone(self) -> "SystemGraph":
        """Fresh instance with copied mutable state (fabric shared structure)."""
        return SystemGraph([replace(c) for c in self.chiplets], self.links)

    # -- distances and routes ----------------------------------------------

    def hop_distances(self, src: int) -> list[int]:
        """BFS hop count from ``src`` to every node."""
        cached = self._dist_cache.get(src)
        if cached is not None:
            return cached
        n = len(self.chiplets)
        dist = [-1] * n
        dist[src] = 0
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        self._dist_cache[src] = dist
        return dist

    def hop_distance(self, src: int, dst: int) -> int:
        return self.hop_distances(src)[dst]

    def route(self, src: int, dst: int) -> tuple[int, ...]:
        """Minimal-hop path, lexicographically smallest id sequence on ties."""
        key = (src, dst)
        cached = self._route_cache.get(key)
        if cached is not None:
            return cached
        if src == dst:
            path = (src,)
        else:
            dist_to_dst = self.hop_distances(dst)
            path_list = [src]
            cur = src
            while cur != dst:
                cur = min(v for v in self.neighbors[cur] if dist_to_dst[v] == dist_to_dst[cur] - 1)
                path_list.append(cur)
            path = tuple(path_list)
        self._route_cache[key] = path
        return path

    def route_links(self, src: int, dst: int) -> list[Link]:
        path = self.route(src, dst)
        return [self._link_by_pair[(path[i], path[i + 1])] for i in range(len(path) - 1)]

    def nearest_io_distance(self, node: int) -> int:
        ios = self.io_ids
        if not ios:
            return 0
        return min(self.hop_distance(io, node) for io in ios)

    # -- aggregate state ----------------------------------------------------

    def cluster_state(self) -> dict[PimType, "ClusterState"]:
        out = {}
        for t in self.present_types():
            ids = self.members(t)
            cs = ClusterState(
                pim_type=t,
                member_ids=ids,
                mem_cap=sum(self.chiplets[i].mem_cap for i in ids),
                mem_avail=sum(self.chiplets[i].mem_avail for i in ids),
                max_temp_k=max(self.chiplets[i].temp_k for i in ids),
                any_open=any(self.chiplets[i].can_accept_weights() for i in ids),
            )
            out[t] = cs
        return out

    def total_mem_avail(self) -> int:
        return sum(c.mem_avail for c in self.chiplets if not c.is_io)

    def total_mem_cap(self) -> int:
        return sum(c.mem_cap for c in self.chiplets if not c.is_io)


@dataclass
class ClusterState:
    """Aggregated view of one PIM-type cluster at a scheduling instant."""

    pim_type: PimType
    member_ids: list[int]
    mem_cap: int
    mem_avail: int
    max_temp_k: float
    any_open: bool


def _make_chiplet(cid, pim_type, x, y, ambient_k=298.0):
    if pim_type is None:
        return Chiplet(cid, None, x, y, IO_AREA, temp_k=ambient_k)
    cap = DEFAULT_MEM_CAP[pim_type]
    return Chiplet(
        cid,
        pim_type,
        x,
        y,
        DEFAULT_AREA[pim_type],
        mem_cap=cap,
        mem_avail=cap,
        temp_k=ambient_k,
        t_max=DEFAULT_T_MAX[pim_type],
    )


def _boundary_cells(rows, cols, n_io):
    """Evenly spread I/O cells: one per side midpoint, then corners."""
    cells = [
        (0, cols // 2),
        (rows - 1, cols // 2),
        (rows // 2, 0),
        (rows // 2, cols - 1),
        (0, 0),
        (0, cols - 1),
        (rows - 1, 0),
        (rows - 1, cols - 1),
    ]
    out = []
    for c in cells:
        if c not in out:
            out.append(c)
        if len(out) == n_io:
            return out
    raise TopologyError(f"cannot place {n_io} I/O chiplets on a {rows}x{cols} boundary")


def build_mesh(
    rows: int,
    cols: int,
    placement: list[tuple[PimType, int]],
    n_io: int = 4,
    pitch_mm: float | None = None,
    ambient_k: float = 298.0,
) -> SystemGraph:
    """Regular 2D mesh.  Cluster blocks fill the grid row-major and stay
    contiguous; I/O chiplets occupy boundary cells.
    """
    total = sum(n for _, n in placement) + n_io
    if rows * cols < total:
        raise TopologyError(
            f"{rows}x{cols} grid has {rows * cols} cells but placement needs {total}"
        )
    if pitch_mm is None:
        areas = [DEFAULT_AREA[t] for t, n in placement if n > 0] or [4.0]
        pitch_mm = math.sqrt(max(areas)) + 1.0
    io_cells = set(_boundary_cells(rows, cols, n_io)) if n_io else set()
    order = [t for t, n in placement for _ in range(n)]
    chiplets = []
    cell_of = {}
    cid = 0
    filled = 0
    for r in range(rows):
        for c in range(cols):
            if (r, c) in io_cells:
                chiplets.append(_make_chiplet(cid, None, c * pitch_mm, r * pitch_mm, ambient_k))
            elif filled < len(order):
                chiplets.append(
                    _make_chiplet(cid, order[filled], c * pitch_mm, r * pitch_mm, ambient_k)
                )
                filled += 1
            else:
                continue
            cell_of[(r, c)] = cid
            cid += 1
    links = []
    for (r, c), u in cell_of.items():
        for dr, dc in ((0, 1), (1, 0)):
            v = cell_of.get((r + dr, c + dc))
            if v is not None:
                links.append(Link(u, v))
    return SystemGraph(chiplets, links)


def build_hexamesh(
    rows: int,
    cols: int,
    placement: list[tuple[PimType, int]],
    n_io: int = 4,
    pitch_mm: float | None = None,
    ambient_k: float = 298.0,
) -> SystemGraph:
    """Staggered grid where interior nodes have six neighbours."""
    total = sum(n for _, n in placement) + n_io
    if rows * cols < total:
        raise TopologyError(
            f"{rows}x{cols} grid has {rows * cols} cells but placement needs {total}"
        )
    if pitch_mm is None:
        areas = [DEFAULT_AREA[t] for t, n in placement if n > 0] or [4.0]
        pitch_mm = math.sqrt(max(areas)) + 1.0
    io_cells = set(_boundary_cells(rows, cols, n_io)) if n_io else set()
    order = [t for t, n in placement for _ in range(n)]
    chiplets = []
    cell_of = {}
    cid = 0
    filled = 0
    for r in range(rows):
        for c in range(cols):
            if cid >= total:
                break
            x = (c + 0.5 * (r % 2)) * pitch_mm
            y = r * pitch_mm * math.sqrt(3.0) / 2.0
            if (r, c) in io_cells:
                chiplets.append(_make_chiplet(cid, None, x, y, ambient_k))
            elif filled < len(order):
                chiplets.append(_make_chiplet(cid, order[filled], x, y, ambient_k))
                filled += 1
            else:
                continue
            cell_of[(r, c)] = cid
            cid += 1
    links = []
    for (r, c), u in cell_of.items():
        # odd-r offset neighbours, forward half to avoid duplicates
        shift = 1 if r % 2 else -1
        for dr, dc in ((0, 1), (1, 0), (1, shift)):
            v = cell_of.get((r + dr, c + dc))
            if v is not None:
                links.append(Link(u, v))
    return SystemGraph(chiplets, links)


def full_mesh(n_io: int = 4) -> SystemGraph:
    """The 78-chiplet reference system on a 9x10 mesh."""
    return build_mesh(9, 10, list(FULL_PLACEMENT), n_io=n_io)


def desk_mesh(n_io: int = 4) -> SystemGraph:
    """Small 4x4-mesh system used by the desk-scale experiments and tests."""
    placement = [
        (PimType.STANDARD, 3),
        (PimType.SHARED_ADC, 3),
        (PimType.ACCUMULATOR, 2),
        (PimType.ADC_LESS, 2),
    ]
    return build_mesh(4, 4, placement, n_io=n_io)


def toy_mesh(per_cluster: int = 1, n_io: int = 2) -> SystemGraph:
    """Two-cluster sanity system: one fast cluster (shared-ADC) against one
    low-power cluster (ADC-less).  Under the default calibration the first
    is strictly faster per MAC and the second strictly cheaper, so the
    preferred placement under a pure-latency or pure-energy objective is
    known in closed form."""
    placement = [
        (PimType.SHARED_ADC, per_cluster),
        (PimType.ADC_LESS, per_cluster),
    ]
    total = 2 * per_cluster + n_io
    cols = max(2, math.ceil(math.sqrt(total)))
    rows = math.ceil(total / cols)
    if rows < 2:
        rows = 2
    return build_mesh(rows, cols, placement, n_io=n_io)


# ---------------------------------------------------------------------------
# File round-trip
# ---------------------------------------------------------------------------

def write_topology_file(graph: SystemGraph, path) -> None:
    doc = {
        "format": TOPOLOGY_FORMAT,
        "version": TOPOLOGY_VERSION,
        "nodes": [
            {
                "id": c.id,
                "pim_type": "io" if c.is_io else c.pim_type.value,
                "x_mm": c.x_mm,
                "y_mm": c.y_mm,
                "area_mm2": c.area_mm2,
            }
            for c in graph.chiplets
        ],
        "edges": [_edge_doc(ln) for ln in graph.links],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _edge_doc(ln: Link) -> dict:
    d = {"a": ln.a, "b": ln.b}
    if ln.latency_s is not None:
        d["latency_s"] = ln.latency_s
    if ln.energy_pj_per_bit is not None:
        d["energy_pj_per_bit"] = ln.energy_pj_per_bit
    return d


def load_topology_file(path, ambient_k: float = 298.0) -> SystemGraph:
    from .errors import FormatError

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    except OSError as e:
        raise FormatError(str(e), path=path) from e
    if not isinstance(doc, dict) or doc.get("format") != TOPOLOGY_FORMAT:
        raise FormatError(f"not a {TOPOLOGY_FORMAT} file", path=path)
    if doc.get("version") != TOPOLOGY_VERSION:
        raise FormatError(
            f"unsupported version {doc.get('version')!r} (expected {TOPOLOGY_VERSION})",
            path=path,
        )
    chiplets = []
    try:
        for nd in doc["nodes"]:
            tname = nd["pim_type"]
            if tname == "io":
                pim_type = None
            else:
                try:
                    pim_type = PimType(tname)
                except ValueError:
                    raise FormatError(
                        f"node {nd.get('id')}: unknown pim_type {tname!r}", path=path
                    ) from None
            ch = _make_chiplet(int(nd["id"]), pim_type, float(nd["x_mm"]), float(nd["y_mm"]),
                               ambient_k)
            if "area_mm2" in nd:
                ch.area_mm2 = float(nd["area_mm2"])
            chiplets.append(ch)
        links = [
            Link(
                int(e["a"]),
                int(e["b"]),
                float(e["latency_s"]) if "latency_s" in e else None,
                float(e["energy_pj_per_bit"]) if "energy_pj_per_bit" in e else None,
            )
            for e in doc["edges"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad field in topology file: {e}", path=path) from e
    try:
        return SystemGraph(chiplets, links)
    except TopologyError as e:
        raise FormatError(str(e), path=path) from e
