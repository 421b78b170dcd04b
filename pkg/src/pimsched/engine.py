"""Discrete-event simulator for pipelined inference on a PIM chiplet fabric.

Jobs arrive on a Poisson stream into a bounded FIFO queue (the host stalls
when it is full).  The head job is handed to the scheduler only when its
whole model fits in currently free weight memory; weights are then pinned
layer by layer and execution starts once the entire model is mapped.

Execution streams frames through the layer pipeline.  One *stage* is
(layer, frame): its split portions run in parallel on the chiplets holding
that layer and the stage completes with the slowest portion, after the
activations of the previous layer's placements have been transferred.  A
chiplet serves one portion at a time, so contention between stages and
between concurrent jobs emerges from chiplet occupancy.

On the fixed thermal control grid the engine integrates per-chiplet power
(dynamic + leakage), steps the RC network, and applies throttling: a
chiplet at or above its temperature limit pauses its running portion
(progress is kept), contributes leakage only, and accepts no new weights or
portions until it cools below the limit.

Determinism: all event ties break on a monotone sequence number and every
scan runs in a fixed order, so a given (system, stream, scheduler, seed)
replays bit-for-bit.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

from .arch import SystemGraph
from .costs import CostModel, pair_comm_cost
from .errors import InvariantError
from .thermal import ThermalConfig, ThermalModel, throttle_update
from .workload import Job, ModelGraph

import numpy as np

log = logging.getLogger(__name__)

METRICS_SCHEMA = "pimsched-metrics-v1"

_ARRIVAL, _FINISH, _THERMAL = 0, 1, 2


class _Kahan:
    """Compensated accumulator: a run integrates energy over up to millions
    of small deposits, and naive summation drifts past the 1e-9 ledger
    tolerance on long scenarios."""

    __slots__ = ("total", "_c")

    def __init__(self):
        self.total = 0.0
        self._c = 0.0

    def add(self, x: float) -> None:
        y = x - self._c
        t = self.total + y
        self._c = (t - self.total) - y
        self.total = t


@dataclass
class SimConfig:
    queue_capacity: int = 20
    warmup_s: float = 60.0
    throttling_enabled: bool = True
    max_time_s: float | None = None


@dataclass
class LayerRequest:
    """Context handed to the scheduler for one placement decision."""

    graph: ModelGraph
    layer_index: int
    remaining_bits: int
    frames: int
    prev_placement: list[tuple[int, int]]
    remaining_weight_bits: int
    remaining_mac_ops: int
    remaining_flow_bits: int
    job_id: int


@dataclass
class JobRecord:
    """Per-job measurement row."""

    job_id: int
    model: str
    frames: int
    arrival_s: float
    admit_s: float = math.nan
    scheduled_s: float = math.nan
    finished_s: float = math.nan
    ideal_exec_s: float = math.nan
    exec_s: float = math.nan
    stall_s: float = math.nan
    e2e_s: float = math.nan
    ideal_energy_j: float = math.nan
    stall_energy_j: float = math.nan
    energy_j: float = math.nan
    edp_js: float = math.nan
    rejected: bool = False
    measured: bool = False


@dataclass
class RunMetrics:
    """Aggregate results for one simulation run."""

    records: list[JobRecord]
    completed: int
    rejected: int
    measured: int
    throughput_jobs_s: float
    mean_exec_s: float
    mean_e2e_s: float
    mean_energy_j: float
    mean_edp_js: float
    mean_stall_s: float
    mean_stall_energy_j: float
    compute_energy_j: float
    comm_energy_j: float
    leakage_energy_j: float
    integrated_energy_j: float
    ledger_residual_rel: float
    throttle_events: int
    throttled_chiplet_s: float
    max_temp_k: float
    max_overshoot_k: float
    end_time_s: float
    warmup_s: float


@dataclass
class _LayerPlan:
    """Per-frame timing/energy of one layer under a fixed placement."""

    portions: list[tuple[int, float, float, float, float]]
    # (chiplet_id, duration_s, compute_j, comm_j, power_w)
    stage_latency_s: float


@dataclass
class _ExecState:
    job: Job
    record: JobRecord
    assignment: list[list[tuple[int, int]]]
    cursor_layer: int = 0
    cursor_remaining: int = 0
    started: bool = False      # scheduling began (weights partially pinned)
    scheduled: bool = False    # fully mapped, executing
    plans: list[_LayerPlan] = field(default_factory=list)
    frames_done: list[int] = field(default_factory=list)
    layer_running: list[bool] = field(default_factory=list)
    portions_left: list[int] = field(default_factory=list)
    leak_sum_w: float = 0.0


@dataclass
class _Running:
    exec_state: _ExecState
    layer: int
    power_w: float
    compute_j: float
    comm_j: float
    end_s: float = 0.0
    remaining_s: float = 0.0
    paused: bool = False
    token: int = 0
    deposited_j: float = 0.0  # dynamic energy integrated so far


class Simulator:
    """One simulation instance; owns all mutable fabric state."""

    def __init__(
        self,
        system: SystemGraph,
        cost_model: CostModel,
        scheduler,
        jobs: list[Job],
        sim_config: SimConfig | None = None,
        thermal_config: ThermalConfig | None = None,
        listener=None,
    ):
        self.graph = system.clone()
        self.costs = cost_model
        self.scheduler = scheduler
        self.stream = sorted(jobs, key=lambda j: (j.arrival_s, j.id))
        self.config = sim_config or SimConfig()
        self.thermal = ThermalModel(self.graph, thermal_config)
        self.listener = listener

        self.now = 0.0
        self._events: list[tuple[float, int, int, object]] = []
        self._seq = 0
        self.queue: list[_ExecState] = []
        self._held: _ExecState | None = None
        self._next_arrival = 0
        self.active: list[_ExecState] = []
        self.records: list[JobRecord] = []

        n = len(self.graph.chiplets)
        self._slot: list[_Running | None] = [None] * n
        self._accum_j = [0.0] * n
        self._marker_s = [0.0] * n
        self._leak_w = [0.0] * n
        self._temps = np.array([c.temp_k for c in self.graph.chiplets])

        self._compute_j = _Kahan()
        self._comm_j = _Kahan()
        self._leakage_j = _Kahan()
        self._integrated_j = _Kahan()
        self.throttle_events = 0
        self.throttled_chiplet_s = 0.0
        self.max_temp_k = float(np.max(self._temps))
        self.max_overshoot_k = 0.0

        self._mem_snapshot = [c.mem_avail for c in self.graph.chiplets]
        self._profile_of = {
            c.id: (None if c.is_io else cost_model.profile(c.pim_type))
            for c in self.graph.chiplets
        }

    # ------------------------------------------------------------------
    # event plumbing
    # ------------------------------------------------------------------

    def _push(self, time_s: float, kind: int, data) -> None:
        self._seq += 1
        heapq.heappush(self._events, (time_s, self._seq, kind, data))

    # ------------------------------------------------------------------
    # power accounting
    # ------------------------------------------------------------------

    def _deposit(self, cid: int, now: float) -> None:
        """Integrate the chiplet's current power up to ``now``.

        Dynamic and leakage contributions are posted as separate terms so
        the component ledgers see bit-identical floats.  Event timestamps
        sit on a coarse float grid relative to microsecond portions, so
        the dynamic side is additionally trued up at portion finish.
        """
        dt = now - self._marker_s[cid]
        if dt > 0.0:
            leak_e = self._leak_w[cid] * dt
            if leak_e != 0.0:
                self._accum_j[cid] += leak_e
                self._integrated_j.add(leak_e)
                self._leakage_j.add(leak_e)
            run = self._slot[cid]
            if run is not None and not run.paused and run.power_w != 0.0:
                dyn_e = run.power_w * dt
                run.deposited_j += dyn_e
                self._accum_j[cid] += dyn_e
                self._integrated_j.add(dyn_e)
        self._marker_s[cid] = now

    def _refresh_leak(self, cid: int) -> None:
        c = self.graph.chiplets[cid]
        prof = self._profile_of[cid]
        self._leak_w[cid] = (
            prof.leakage_w if (prof is not None and c.mem_avail < c.mem_cap) else 0.0
        )

    # ------------------------------------------------------------------
    # admission
    # ------------------------------------------------------------------

    def admit(self, job: Job) -> bool:
        """Place a job into the FIFO queue; False means the host stalled."""
        if len(self.queue) >= self.config.queue_capacity:
            return False
        rec = JobRecord(job.id, job.graph.name, job.frames, job.arrival_s, admit_s=self.now)
        st = _ExecState(job, rec, [[] for _ in range(job.graph.n_layers)])
        self.queue.append(st)
        self.records.append(rec)
        return True

    def _on_arrival(self, idx: int) -> None:
        job = self.stream[idx]
        if self.admit(job):
            self._schedule_next_arrival()
        else:
            self._held = job  # host stalls; retried when a slot frees

    def _schedule_next_arrival(self) -> None:
        if self._next_arrival < len(self.stream):
            job = self.stream[self._next_arrival]
            self._next_arrival += 1
            self._push(max(job.arrival_s, self.now), _ARRIVAL, self._next_arrival - 1)

    def _free_slot_followup(self) -> None:
        if self._held is not None and len(self.queue) < self.config.queue_capacity:
            job, self._held = self._held, None
            ok = self.admit(job)
            assert ok, "queue slot vanished between check and admit"
            self._schedule_next_arrival()

    # ------------------------------------------------------------------
    # scheduling (weight placement)
    # ------------------------------------------------------------------

    def try_schedule_next(self) -> None:
        """Drive head-of-line scheduling as far as it can currently go."""
        while self.queue:
            st = self.queue[0]
            if not st.started:
                total = st.job.graph.total_weight_bits()
                if total > self.graph.total_mem_cap():
                    st.record.rejected = True
                    self.queue.pop(0)
                    log.warning(
                        "job %d (%s) needs %d bits but system capacity is %d; rejected",
                        st.job.id, st.job.graph.name, total, self.graph.total_mem_cap(),
                    )
                    self._free_slot_followup()
                    continue
                if total > self.graph.total_mem_avail():
                    return  # insufficient resources right now; head waits
                st.started = True
                st.cursor_layer = 0
                st.cursor_remaining = st.job.graph.layers[0].weight_bits
            if not self._map_layers(st):
                return  # blocked mid-model; keep pinned portions and retry later
            st.scheduled = True
            st.record.scheduled_s = self.now
            self.queue.pop(0)
            self._begin_execution(st)
            self._free_slot_followup()

    def _map_layers(self, st: _ExecState) -> bool:
        g = st.job.graph
        while st.cursor_layer < g.n_layers:
            i = st.cursor_layer
            placed_bits = g.layers[i].weight_bits - st.cursor_remaining
            rem_w = sum(l.weight_bits for l in g.layers[i:]) - placed_bits
            req = LayerRequest(
                graph=g,
                layer_index=i,
                remaining_bits=st.cursor_remaining,
                frames=st.job.frames,
                prev_placement=st.assignment[i - 1] if i > 0 else [],
                remaining_weight_bits=rem_w,
                remaining_mac_ops=sum(l.mac_ops for l in g.layers[i:]),
                remaining_flow_bits=sum(b for (s, d), b in g.flows.items() if d >= i),
                job_id=st.job.id,
            )
            cands = self.scheduler.select_candidates(self.graph, req)
            if cands is None:
                return False
            placements = proximity_allocate(
                self.graph, cands, st.cursor_remaining, req.prev_placement
            )
            if not placements:
                return False
            self._reserve(st, i, placements)
            if st.cursor_remaining == 0:
                st.cursor_layer += 1
                if st.cursor_layer < g.n_layers:
                    st.cursor_remaining = g.layers[st.cursor_layer].weight_bits
        return True

    def _reserve(self, st: _ExecState, i: int, placements: list[tuple[int, int]]) -> None:
        """Pin weight shares; guards against allocator misbehavior."""
        for cid, bits in placements:
            ch = self.graph.chiplets[cid]
            self._deposit(cid, self.now)
            ch.mem_avail -= bits
            if ch.mem_avail < 0:
                raise InvariantError(f"chiplet {cid} over-allocated")
            self._refresh_leak(cid)
            st.cursor_remaining -= bits
            # merge with an existing share on the same chiplet if any
            for k, (pc, pb) in enumerate(st.assignment[i]):
                if pc == cid:
                    st.assignment[i][k] = (pc, pb + bits)
                    break
            else:
                st.assignment[i].append((cid, bits))
        if st.cursor_remaining < 0:
            raise InvariantError("allocated more bits than requested")

    # ------------------------------------------------------------------
    # execution
    # ------------------------------------------------------------------

    def _begin_execution(self, st: _ExecState) -> None:
        st.plans, ideal_exec, ideal_energy = plan_execution(
            st.job.graph, st.job.frames, st.assignment, self.graph, self.costs
        )
        rec = st.record
        rec.ideal_exec_s = ideal_exec
        rec.ideal_energy_j = ideal_energy
        n_layers = st.job.graph.n_layers
        st.frames_done = [0] * n_layers
        st.layer_running = [False] * n_layers
        st.portions_left = [0] * n_layers
        seen = set()
        leak = 0.0
        for layer in st.assignment:
            for cid, _bits in layer:
                if cid not in seen:
                    seen.add(cid)
                    leak += self._profile_of[cid].leakage_w
        st.leak_sum_w = leak
        self.active.append(st)
        if self.listener is not None:
            self.listener.on_scheduled(rec, st)

    def try_start_stages(self) -> None:
        """Start every ready stage whose chiplets are all free and cool."""
        for st in self.active:
            frames = st.job.frames
            for i in range(len(st.plans)):
                if st.layer_running[i]:
                    continue
                k = st.frames_done[i]
                if k >= frames:
                    continue
                if i > 0 and st.frames_done[i - 1] <= k:
                    continue
                plan = st.plans[i]
                ok = True
                for cid, _d, _ce, _me, _p in plan.portions:
                    ch = self.graph.chiplets[cid]
                    if self._slot[cid] is not None or ch.throttled:
                        ok = False
                        break
                if not ok:
                    continue
                st.layer_running[i] = True
                st.portions_left[i] = len(plan.portions)
                for cid, dur, comp_j, comm_j, power in plan.portions:
                    self._deposit(cid, self.now)
                    run = _Running(st, i, power, comp_j, comm_j, end_s=self.now + dur)
                    self._slot[cid] = run
                    self._push(run.end_s, _FINISH, (cid, run.token))

    def _on_finish(self, cid: int, token: int) -> None:
        run = self._slot[cid]
        if run is None or run.token != token or run.paused:
            return  # stale completion from before a pause
        self._deposit(cid, self.now)
        # the clock grid quantized this portion's span; post the difference
        # so integrated power matches the planned energy exactly
        true_up = (run.compute_j + run.comm_j) - run.deposited_j
        if true_up != 0.0:
            self._accum_j[cid] += true_up
            self._integrated_j.add(true_up)
        self._compute_j.add(run.compute_j)
        self._comm_j.add(run.comm_j)
        self._slot[cid] = None
        st = run.exec_state
        i = run.layer
        st.portions_left[i] -= 1
        if st.portions_left[i] > 0:
            return
        st.layer_running[i] = False
        st.frames_done[i] += 1
        last_layer = len(st.plans) - 1
        if i == last_layer and st.frames_done[i] >= st.job.frames:
            self._finish_job(st)

    def _finish_job(self, st: _ExecState) -> None:
        rec = st.record
        rec.finished_s = self.now
        rec.exec_s = rec.finished_s - rec.scheduled_s
        rec.e2e_s = rec.finished_s - rec.admit_s
        rec.stall_s = max(0.0, rec.exec_s - rec.ideal_exec_s)
        rec.stall_energy_j = rec.stall_s * st.leak_sum_w
        rec.energy_j = rec.ideal_energy_j + rec.stall_energy_j
        rec.edp_js = rec.energy_j * rec.exec_s
        rec.measured = rec.finished_s >= self.config.warmup_s
        self.active.remove(st)
        for layer in st.assignment:
            for cid, bits in layer:
                self._deposit(cid, self.now)
                ch = self.graph.chiplets[cid]
                ch.mem_avail += bits
                if ch.mem_avail > ch.mem_cap:
                    raise InvariantError(f"chiplet {cid} freed beyond capacity")
                self._refresh_leak(cid)
        if self.listener is not None:
            self.listener.on_finished(rec)

    # ------------------------------------------------------------------
    # thermal control
    # ------------------------------------------------------------------

    def _on_thermal(self) -> None:
        dt = self.thermal.dt_s
        n = len(self.graph.chiplets)
        power = np.empty(n)
        for cid in range(n):
            self._deposit(cid, self.now)
            power[cid] = self._accum_j[cid] / dt
            self._accum_j[cid] = 0.0
        self._temps = self.thermal.step(self._temps, power)
        hottest = 0.0
        overshoot = 0.0
        throttled_now = 0
        for cid in range(n):
            c = self.graph.chiplets[cid]
            c.temp_k = float(self._temps[cid])
            hottest = max(hottest, c.temp_k)
            if not c.is_io:
                overshoot = max(overshoot, c.temp_k - c.t_max)
                if c.throttled:
                    throttled_now += 1
        self.max_temp_k = max(self.max_temp_k, hottest)
        self.max_overshoot_k = max(self.max_overshoot_k, overshoot)
        self.throttled_chiplet_s += throttled_now * dt
        if self.config.throttling_enabled:
            hot, cooled = throttle_update(self.graph)
            self.throttle_events += len(hot)
            for cid in hot:
                run = self._slot[cid]
                if run is not None and not run.paused:
                    self._deposit(cid, self.now)
                    run.remaining_s = run.end_s - self.now
                    run.paused = True
                    run.token += 1
            for cid in cooled:
                run = self._slot[cid]
                if run is not None and run.paused:
                    self._deposit(cid, self.now)
                    run.paused = False
                    run.end_s = self.now + max(run.remaining_s, 0.0)
                    run.token += 1
                    self._push(run.end_s, _FINISH, (cid, run.token))

    # ------------------------------------------------------------------
    # main loop
    # ------------------------------------------------------------------

    def _work_pending(self) -> bool:
        return bool(
            self.active
            or self.queue
            or self._held is not None
            or self._next_arrival < len(self.stream)
            or any(e[2] == _ARRIVAL for e in self._events)
        )

    def run(self) -> RunMetrics:
        self._schedule_next_arrival()
        next_thermal = self.thermal.dt_s
        self._push(next_thermal, _THERMAL, None)
        while self._events:
            time_s, _seq, kind, data = heapq.heappop(self._events)
            if self.config.max_time_s is not None and time_s > self.config.max_time_s:
                log.warning("simulation hit max_time_s=%s; stopping early", self.config.max_time_s)
                break
            self.now = time_s
            if kind == _ARRIVAL:
                self._on_arrival(data)
            elif kind == _FINISH:
                self._on_finish(*data)
            else:
                self._on_thermal()
                if self._work_pending():
                    next_thermal += self.thermal.dt_s
                    self._push(next_thermal, _THERMAL, None)
            self.try_schedule_next()
            self.try_start_stages()
        for cid in range(len(self.graph.chiplets)):
            self._deposit(cid, self.now)
        self._check_invariants()
        return self._metrics()

    def _check_invariants(self) -> None:
        for cid, snap in enumerate(self._mem_snapshot):
            c = self.graph.chiplets[cid]
            if self.active or self.queue:
                continue  # stopped early; weights may still be pinned
            if c.mem_avail != snap:
                raise InvariantError(
                    f"chiplet {cid} memory not restored: {c.mem_avail} != {snap}"
                )
        total = self._compute_j.total + self._comm_j.total + self._leakage_j.total
        resid = abs(self._integrated_j.total - total) / max(total, 1e-30)
        if total > 0 and resid > 1e-9 and not (self.active or self.queue):
            raise InvariantError(f"energy ledger residual {resid:.3e} exceeds 1e-9")

    def _metrics(self) -> RunMetrics:
        done = [r for r in self.records if not r.rejected and not math.isnan(r.finished_s)]
        measured = [r for r in done if r.measured]
        end = max((r.finished_s for r in done), default=0.0)
        span = end - self.config.warmup_s
        thr = len(measured) / span if (measured and span > 0) else 0.0

        def _mean(vals):
            vals = list(vals)
            return sum(vals) / len(vals) if vals else 0.0

        total = self._compute_j.total + self._comm_j.total + self._leakage_j.total
        return RunMetrics(
            records=self.records,
            completed=len(done),
            rejected=sum(1 for r in self.records if r.rejected),
            measured=len(measured),
            throughput_jobs_s=thr,
            mean_exec_s=_mean(r.exec_s for r in measured),
            mean_e2e_s=_mean(r.e2e_s for r in measured),
            mean_energy_j=_mean(r.energy_j for r in measured),
            mean_edp_js=_mean(r.edp_js for r in measured),
            mean_stall_s=_mean(r.stall_s for r in measured),
            mean_stall_energy_j=_mean(r.stall_energy_j for r in measured),
            compute_energy_j=self._compute_j.total,
            comm_energy_j=self._comm_j.total,
            leakage_energy_j=self._leakage_j.total,
            integrated_energy_j=self._integrated_j.total,
            ledger_residual_rel=(
                abs(self._integrated_j.total - total) / max(total, 1e-30)
            ),
            throttle_events=self.throttle_events,
            throttled_chiplet_s=self.throttled_chiplet_s,
            max_temp_k=self.max_temp_k,
            max_overshoot_k=self.max_overshoot_k,
            end_time_s=self.now,
            warmup_s=self.config.warmup_s,
        )


# ---------------------------------------------------------------------------
# placement within a candidate set
# ---------------------------------------------------------------------------

def weighted_distance(graph: SystemGraph, cid: int,
                      prev_placement: list[tuple[int, int]]) -> float:
    """Mean hop distance from the previous layer's placements, bit-weighted.

    For a first layer (no predecessor) the anchor is the nearest I/O
    chiplet, where frames enter the fabric.
    """
    if not prev_placement:
        return float(graph.nearest_io_distance(cid))
    total = 0.0
    bits = 0
    for src, b in prev_placement:
        total += b * graph.hop_distance(src, cid)
        bits += b
    return total / bits


def proximity_allocate(
    graph: SystemGraph,
    candidate_ids: list[int],
    bits_needed: int,
    prev_placement: list[tuple[int, int]],
) -> list[tuple[int, int]]:
    """Fill candidate chiplets in order of weighted distance (ties: lower id).

    Each chiplet is filled to its free capacity before moving outward.  The
    returned placement may cover less than ``bits_needed`` when the
    candidates run out of eligible memory; the caller decides what to do
    with the remainder.  The system graph is not mutated.
    """
    eligible = [
        cid for cid in candidate_ids if self_can_accept(graph, cid)
    ]
    order = sorted(eligible, key=lambda cid: (weighted_distance(graph, cid, prev_placement), cid))
    placements = []
    remaining = bits_needed
    for cid in order:
        if remaining <= 0:
            break
        take = min(remaining, graph.chiplets[cid].mem_avail)
        if take > 0:
            placements.append((cid, take))
            remaining -= take
    return placements


def self_can_accept(graph: SystemGraph, cid: int) -> bool:
    return graph.chiplets[cid].can_accept_weights()


# ---------------------------------------------------------------------------
# execution planning
# ---------------------------------------------------------------------------

def plan_execution(
    graph: ModelGraph,
    frames: int,
    assignment: list[list[tuple[int, int]]],
    system: SystemGraph,
    costs: CostModel,
) -> tuple[list[_LayerPlan], float, float]:
    """Derive per-frame stage timings and the ideal pipeline totals.

    Stage latency = activation transfer from the previous placements
    (transfers run in parallel; the slowest pair gates the stage) plus the
    compute latency of the slowest portion.  A portion's duration stretches
    if its mean power would exceed the chiplet's peak dynamic power.

    ideal_exec = sum(stage latencies) + (frames - 1) * max(stage latency);
    ideal_energy counts compute + communication for every frame.
    """
    plans = []
    energy_per_frame = 0.0
    for i, layer in enumerate(graph.layers):
        placement = assignment[i]
        total_bits = sum(b for _c, b in placement)
        if total_bits != layer.weight_bits:
            raise InvariantError(
                f"layer {i}: placed {total_bits} bits of {layer.weight_bits}"
            )
        in_edges = graph.in_flows(i)
        transfer_lat = 0.0
        comm_in: dict[int, float] = {}
        for cid, bits in placement:
            frac_dst = bits / layer.weight_bits
            acc = 0.0
            for src_layer, flow_bits in in_edges:
                for src_cid, src_bits in assignment[src_layer]:
                    frac_src = src_bits / graph.layers[src_layer].weight_bits
                    vol = flow_bits * frac_src * frac_dst
                    lat, en = pair_comm_cost(system, src_cid, cid, vol, costs.link)
                    transfer_lat = max(transfer_lat, lat)
                    acc += en
            comm_in[cid] = acc
        portions = []
        stage_lat = 0.0
        for cid, bits in placement:
            prof = costs.profile(system.chiplets[cid].pim_type)
            macs = layer.mac_ops * (bits / layer.weight_bits)
            c_lat = macs * prof.mac_latency_s
            c_en = macs * prof.mac_energy_j
            dur = transfer_lat + c_lat
            energy = c_en + comm_in[cid]
            if energy > 0 and dur > 0 and energy / dur > prof.peak_dynamic_w:
                dur = energy / prof.peak_dynamic_w
            power = energy / dur if dur > 0 else 0.0
            portions.append((cid, dur, c_en, comm_in[cid], power))
            energy_per_frame += energy
            stage_lat = max(stage_lat, dur)
        plans.append(_LayerPlan(portions, stage_lat))
    lats = [p.stage_latency_s for p in plans]
    ideal_exec = sum(lats) + (frames - 1) * max(lats)
    return plans, ideal_exec, frames * energy_per_frame
