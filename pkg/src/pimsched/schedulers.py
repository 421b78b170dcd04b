"""Layer-to-chiplet candidate selection strategies.

A scheduler answers one question per layer: which chiplets may hold the
next chunk of weights?  It returns candidate chiplet ids (the proximity
allocator then fills them nearest-first) or ``None`` to wait for
conditions to change.  All cluster-level schedulers share the convention
that a cluster is eligible only while at least one of its members can
accept weights.
"""

from __future__ import annotations

import random

import numpy as np

from .arch import PimType, SystemGraph
from .engine import LayerRequest
from .errors import ConfigError
from .policy import (
    DecisionTreePolicy,
    NormScales,
    encode_state,
    select_action,
    valid_cluster_mask,
)


def cluster_order(graph: SystemGraph) -> list[PimType]:
    """Canonical action order: enum declaration order, present types only."""
    present = {c.pim_type for c in graph.chiplets if not c.is_io}
    return [t for t in PimType if t in present]


def _open_members(graph: SystemGraph, pim_type: PimType) -> list[int]:
    return [
        c.id
        for c in graph.chiplets
        if c.pim_type is pim_type and c.can_accept_weights()
    ]


class SimbaScheduler:
    """Offer every compute chiplet; nearest-first filling does the rest.

    This reproduces the monolithic-fabric behaviour where placement is
    purely proximity-driven and type differences are ignored.
    """

    name = "simba"

    def select_candidates(self, graph: SystemGraph, req: LayerRequest):
        ids = [c.id for c in graph.chiplets if not c.is_io]
        return ids or None


class RandomScheduler:
    """Uniform draw over clusters that currently have open capacity."""

    name = "random"

    def __init__(self, seed: int = 0):
        self._rng = random.Random(seed)

    def select_candidates(self, graph: SystemGraph, req: LayerRequest):
        open_types = [t for t in cluster_order(graph) if _open_members(graph, t)]
        if not open_types:
            return None
        return _open_members(graph, self._rng.choice(open_types))


class BigLittleScheduler:
    """Heterogeneity-aware heuristic favouring fill-level balance.

    Each open cluster is scored by how full its emptiest member would be
    after taking the whole remaining chunk, min(1, (used + w) / cap); the
    lowest score wins, with ties broken toward the larger-capacity cluster
    and then enum order.
    """

    name = "biglittle"

    def select_candidates(self, graph: SystemGraph, req: LayerRequest):
        best = None
        for t in cluster_order(graph):
            members = _open_members(graph, t)
            if not members:
                continue
            cap = graph.chiplets[members[0]].mem_cap
            avail = max(graph.chiplets[m].mem_avail for m in members)
            used_target = cap - avail
            score = min(1.0, (used_target + req.remaining_bits) / cap)
            key = (score, -cap)
            if best is None or key < best[0]:
                best = (key, t)
        if best is None:
            return None
        return _open_members(graph, best[1])


class PolicyScheduler:
    """Decision-tree policy conditioned on an objective preference.

    In deploy mode actions are greedy; in training mode they are sampled
    and every decision is appended to the attached recorder.
    """

    name = "thermos"

    def __init__(self, policy: DecisionTreePolicy, scales: NormScales,
                 preference, cluster_types: list[PimType] | None = None,
                 mode: str = "argmax", rng: np.random.Generator | None = None,
                 recorder: "TrajectoryRecorder | None" = None):
        if mode not in ("argmax", "sample"):
            raise ConfigError(f"unknown policy mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ConfigError("sample mode needs an rng")
        self.policy = policy
        self.scales = scales
        self.preference = np.asarray(preference, dtype=float)
        if self.preference.shape != (2,):
            raise ConfigError("preference must have one weight per objective")
        self.cluster_types = cluster_types
        self.mode = mode
        self.rng = rng
        self.recorder = recorder

    def select_candidates(self, graph: SystemGraph, req: LayerRequest):
        types = self.cluster_types or cluster_order(graph)
        valid = valid_cluster_mask(graph, types)
        if not valid.any():
            return None
        s = encode_state(graph, req, self.scales, types)
        z = np.concatenate([s, self.preference])
        logits, _ = self.policy.forward(z[None, :])
        action, logp = select_action(logits, valid[None, :], self.mode, self.rng)
        if self.recorder is not None:
            self.recorder.record(req.job_id, z, action, logp, valid)
        return _open_members(graph, types[action])


class TrajectoryRecorder:
    """Accumulates (input, action, logp, mask) tuples plus reward slots.

    Rewards arrive later than decisions (a job's cost is known only once
    it is fully scheduled / finished), so each job remembers the index of
    its most recent decision and rewards are added onto that slot.
    """

    def __init__(self, n_objectives: int = 2):
        self.inputs: list[np.ndarray] = []
        self.actions: list[int] = []
        self.logps: list[float] = []
        self.masks: list[np.ndarray] = []
        self.rewards: list[np.ndarray] = []
        self._n_obj = n_objectives
        self._job_slot: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.actions)

    def record(self, job_id: int, z: np.ndarray, action: int, logp: float,
               valid: np.ndarray) -> None:
        self.inputs.append(z)
        self.actions.append(action)
        self.logps.append(logp)
        self.masks.append(valid.astype(bool))
        self.rewards.append(np.zeros(self._n_obj))
        self._job_slot[job_id] = len(self.actions) - 1

    def add_reward(self, job_id: int, reward: np.ndarray) -> None:
        slot = self._job_slot.get(job_id)
        if slot is not None:
            self.rewards[slot] = self.rewards[slot] + reward

    def arrays(self):
        """Stack everything into training arrays (z, a, logp, mask, r)."""
        return (
            np.array(self.inputs),
            np.array(self.actions, dtype=int),
            np.array(self.logps),
            np.array(self.masks, dtype=bool),
            np.array(self.rewards),
        )


BASELINE_NAMES = ("simba", "random", "biglittle")


def make_baseline(name: str, seed: int = 0):
    if name == "simba":
        return SimbaScheduler()
    if name == "random":
        return RandomScheduler(seed)
    if name == "biglittle":
        return BigLittleScheduler()
    raise ConfigError(f"unknown scheduler {name!r}")
