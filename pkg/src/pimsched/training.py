"""PPO training loop for the placement policy.

One training environment exists per preference vector; each environment
runs whole scheduling episodes (a fixed number of jobs at a randomly
drawn admit rate) and records every placement decision.  Rewards are
vector-valued (time, energy), split into a primary part credited when a
job is fully scheduled (its deterministic ideal cost) and a secondary
part credited when it finishes (the stall overhead actually incurred).
Trajectories from all preferences are pooled into every update.

All gradients are closed-form; optimization is hand-rolled
adaptive-moment descent on numpy arrays.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

import numpy as np

from .arch import SystemGraph
from .costs import CostModel
from .engine import SimConfig, Simulator
from .errors import ConfigError, InvariantError
from .policy import (
    DecisionTreePolicy,
    NormScales,
    ValueNet,
    masked_probs,
    state_dim,
)
from .schedulers import PolicyScheduler, TrajectoryRecorder, cluster_order
from .thermal import ThermalConfig
from .workload import ModelGraph, synth_workload_stream

log = logging.getLogger(__name__)

N_OBJECTIVES = 2


# ---------------------------------------------------------------------------
# reward construction
# ---------------------------------------------------------------------------

class RewardNormalizer:
    """Keeps per-objective cost magnitudes commensurate.

    Tracks exponential moving averages of mean and standard deviation of
    each objective's cost over completed jobs and divides raw costs by a
    scale built from them, so a 2x-cost job still earns a 2x-magnitude
    (negative) reward before clamping.
    """

    CLAMP = (-10.0, 0.0)

    def __init__(self, ema_factor: float = 0.99):
        if not 0.0 < ema_factor < 1.0:
            raise ConfigError(f"ema factor must be in (0,1), got {ema_factor}")
        self.ema_factor = ema_factor
        self.mean = None  # per-objective EMA of |cost|
        self.var = None

    def update(self, time_cost: float, energy_cost: float) -> None:
        x = np.array([abs(time_cost), abs(energy_cost)], dtype=float)
        if self.mean is None:
            self.mean = x.copy()
            self.var = np.zeros(N_OBJECTIVES)
            return
        f = self.ema_factor
        self.mean = f * self.mean + (1.0 - f) * x
        self.var = f * self.var + (1.0 - f) * (x - self.mean) ** 2

    def scales(self) -> np.ndarray:
        if self.mean is None:
            return np.ones(N_OBJECTIVES)
        return np.maximum(self.mean + np.sqrt(self.var), 1e-30)

    def normalize(self, time_cost: float, energy_cost: float) -> np.ndarray:
        r = -np.array([time_cost, energy_cost], dtype=float) / self.scales()
        return np.clip(r, *self.CLAMP)


def compute_rewards(record, normalizer: RewardNormalizer):
    """(primary, secondary) reward vectors for one job, given the
    normalizer's current state.  Primary uses the deterministic ideal
    costs; secondary the stall overheads."""
    primary = normalizer.normalize(record.ideal_exec_s, record.ideal_energy_j)
    secondary = normalizer.normalize(record.stall_s, record.stall_energy_j)
    return primary, secondary


class RewardListener:
    """Bridges simulator completion events to trajectory reward slots."""

    def __init__(self, recorder: TrajectoryRecorder, normalizer: RewardNormalizer):
        self.recorder = recorder
        self.normalizer = normalizer
        self.primary_sum = np.zeros(N_OBJECTIVES)
        self.secondary_sum = np.zeros(N_OBJECTIVES)
        self.jobs_scheduled = 0
        self.jobs_finished = 0

    def on_scheduled(self, record, _state) -> None:
        primary, _ = compute_rewards(record, self.normalizer)
        self.recorder.add_reward(record.job_id, primary)
        self.primary_sum += primary
        self.jobs_scheduled += 1

    def on_finished(self, record) -> None:
        _, secondary = compute_rewards(record, self.normalizer)
        self.recorder.add_reward(record.job_id, secondary)
        self.secondary_sum += secondary
        self.jobs_finished += 1
        self.normalizer.update(record.exec_s, record.energy_j)


# ---------------------------------------------------------------------------
# losses (closed-form gradients)
# ---------------------------------------------------------------------------

def advantage(r: np.ndarray, v_t: np.ndarray, v_next: np.ndarray,
              gamma: float, terminal: np.ndarray) -> np.ndarray:
    """One-step TD advantage per objective: r + g*V'*(1-term) - V."""
    term = np.asarray(terminal, dtype=float).reshape(-1, 1)
    return r + gamma * v_next * (1.0 - term) - v_t


def value_loss_and_grad(v: np.ndarray, target: np.ndarray):
    """Mean over the batch of the squared error summed over objectives.

    The target is a constant (no gradient flows through the bootstrap).
    """
    d = v - target
    loss = float(np.mean(np.sum(d * d, axis=1)))
    return loss, (2.0 / d.shape[0]) * d


def policy_loss_and_grad(logits: np.ndarray, valid: np.ndarray, actions: np.ndarray,
                         old_logp: np.ndarray, scalar_adv: np.ndarray,
                         clip_eps: float):
    """Clipped surrogate loss; returns (loss, d loss / d logits).

    The objective is maximized, so the returned loss is its negation and
    the gradient is ready for descent.  Gradient through the softmax uses
    d logp_a / d logit_j = 1[j=a] - p_j; masked entries have p_j = 0
    exactly, so no gradient leaks into invalid actions.
    """
    n = logits.shape[0]
    p = masked_probs(logits, valid)
    pa = p[np.arange(n), actions]
    logp = np.log(pa)
    rho = np.exp(logp - old_logp)
    unclipped = rho * scalar_adv
    clipped = np.clip(rho, 1.0 - clip_eps, 1.0 + clip_eps) * scalar_adv
    loss = -float(np.mean(np.minimum(unclipped, clipped)))
    # d obj / d logp is rho*adv where the unclipped branch is active, else 0
    g = np.where(unclipped <= clipped, rho * scalar_adv, 0.0) * (-1.0 / n)
    onehot = np.zeros_like(p)
    onehot[np.arange(n), actions] = 1.0
    d_logits = g[:, None] * (onehot - p)
    return loss, d_logits


class Adam:
    """Adaptive-moment descent over a dict of parameter arrays (in place)."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            self.params[k] -= self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)


# ---------------------------------------------------------------------------
# configuration and environments
# ---------------------------------------------------------------------------

@dataclass
class PpoConfig:
    lr: float = 5e-4
    clip_eps: float = 0.1
    gamma: float = 0.95
    steps_per_update: int = 10_000  # per environment
    total_steps: int = 600_000  # summed over all environments
    episode_jobs: int = 100
    preferences: tuple = ((1.0, 0.0), (0.0, 1.0), (0.5, 0.5))
    epochs: int = 4
    minibatch: int = 512
    tree_depth: int = 5
    admit_range: tuple = (0.5, 5.0)
    frame_range: tuple = (1, 8)

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must be in (0,1), got {self.gamma}")
        if self.clip_eps <= 0.0:
            raise ConfigError(f"clip epsilon must be positive, got {self.clip_eps}")
        if self.lr <= 0.0 or self.steps_per_update < 1 or self.episode_jobs < 1:
            raise ConfigError("lr, steps_per_update, episode_jobs must be positive")
        for w in self.preferences:
            if len(w) != N_OBJECTIVES or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-12:
                raise ConfigError(f"preference {w} must be nonnegative and sum to 1")
        lo, hi = self.admit_range
        if not 0 < lo <= hi:
            raise ConfigError(f"bad admit-rate range {self.admit_range}")


@dataclass
class EpisodeBatch:
    z: np.ndarray
    z_next: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    masks: np.ndarray
    rewards: np.ndarray
    terminal: np.ndarray
    omega: np.ndarray


class TrainingEnv:
    """One preference's stream of scheduling episodes."""

    def __init__(self, system: SystemGraph, cost_model: CostModel,
                 pool: list[ModelGraph], preference, scales: NormScales,
                 cfg: PpoConfig, seed: int,
                 thermal_config: ThermalConfig | None = None,
                 sim_config: SimConfig | None = None):
        self.system = system
        self.costs = cost_model
        self.pool = pool
        self.preference = np.asarray(preference, dtype=float)
        self.scales = scales
        self.cfg = cfg
        self.cluster_types = cluster_order(system)
        self.rng = random.Random(seed)
        self.sample_rng = np.random.default_rng(seed ^ 0x5DEECE66D)
        self.normalizer = RewardNormalizer()
        self.thermal_config = thermal_config
        base = sim_config or SimConfig()
        # training counts every job; warm-up exclusion is an evaluation concern
        self.sim_config = SimConfig(
            queue_capacity=base.queue_capacity,
            warmup_s=0.0,
            throttling_enabled=base.throttling_enabled,
            max_time_s=base.max_time_s,
        )
        self.episodes_run = 0
        self.last_primary_mean = np.zeros(N_OBJECTIVES)
        self.last_secondary_mean = np.zeros(N_OBJECTIVES)

    def run_episode(self, policy: DecisionTreePolicy):
        admit = self.rng.uniform(*self.cfg.admit_range)
        stream_seed = self.rng.randrange(2 ** 31)
        jobs = synth_workload_stream(
            seed=stream_seed,
            count=self.cfg.episode_jobs,
            frame_range=self.cfg.frame_range,
            model_pool=self.pool,
            admit_rate=admit,
        )
        recorder = TrajectoryRecorder(N_OBJECTIVES)
        listener = RewardListener(recorder, self.normalizer)
        sched = PolicyScheduler(
            policy, self.scales, self.preference, self.cluster_types,
            mode="sample", rng=self.sample_rng, recorder=recorder,
        )
        sim = Simulator(self.system, self.costs, sched, jobs,
                        self.sim_config, self.thermal_config, listener)
        sim.run()
        self.episodes_run += 1
        if listener.jobs_scheduled:
            self.last_primary_mean = listener.primary_sum / listener.jobs_scheduled
        if listener.jobs_finished:
            self.last_secondary_mean = listener.secondary_sum / listener.jobs_finished
        return recorder

    def collect(self, policy: DecisionTreePolicy, min_steps: int) -> EpisodeBatch:
        zs, z_nexts, acts, logps, masks, rews, terms = [], [], [], [], [], [], []
        n = 0
        while n < min_steps:
            rec = self.run_episode(policy)
            if len(rec) == 0:
                raise InvariantError("episode produced no decisions")
            z, a, logp, mask, r = rec.arrays()
            zs.append(z)
            z_nexts.append(np.vstack([z[1:], z[-1:]]))  # last row unused (terminal)
            acts.append(a)
            logps.append(logp)
            masks.append(mask)
            rews.append(r)
            t = np.zeros(len(a))
            t[-1] = 1.0
            terms.append(t)
            n += len(a)
        z = np.vstack(zs)
        return EpisodeBatch(
            z=z,
            z_next=np.vstack(z_nexts),
            actions=np.concatenate(acts),
            old_logp=np.concatenate(logps),
            masks=np.vstack(masks),
            rewards=np.vstack(rews),
            terminal=np.concatenate(terms),
            omega=np.tile(self.preference, (len(z), 1)),
        )


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    policy: DecisionTreePolicy
    value_net: ValueNet
    scales: NormScales
    cluster_types: list
    history: list = field(default_factory=list)  # dict rows, one per update


TRAINING_CSV_COLUMNS = [
    "update", "steps", "policy_loss", "value_loss",
]


def _pool_batches(batches: list[EpisodeBatch]) -> EpisodeBatch:
    return EpisodeBatch(
        z=np.vstack([b.z for b in batches]),
        z_next=np.vstack([b.z_next for b in batches]),
        actions=np.concatenate([b.actions for b in batches]),
        old_logp=np.concatenate([b.old_logp for b in batches]),
        masks=np.vstack([b.masks for b in batches]),
        rewards=np.vstack([b.rewards for b in batches]),
        terminal=np.concatenate([b.terminal for b in batches]),
        omega=np.vstack([b.omega for b in batches]),
    )


def train(system: SystemGraph, cost_model: CostModel, pool: list[ModelGraph],
          cfg: PpoConfig, seed: int,
          thermal_config: ThermalConfig | None = None,
          sim_config: SimConfig | None = None,
          progress=None) -> TrainResult:
    """Run preference-pooled PPO to convergence or the step budget.

    ``progress`` is an optional callable receiving each history row (used
    by the CLI to stream the training curve to disk).
    """
    cfg.validate()
    cluster_types = cluster_order(system)
    scales = NormScales.from_pool(pool, frames_max=cfg.frame_range[1])
    in_dim = state_dim(len(cluster_types)) + N_OBJECTIVES
    policy = DecisionTreePolicy(in_dim, len(cluster_types), cfg.tree_depth, seed=seed)
    value_net = ValueNet(in_dim, seed=seed + 1)
    envs = [
        TrainingEnv(system, cost_model, pool, w, scales, cfg,
                    seed=seed * 7919 + 31 * i + 1,
                    thermal_config=thermal_config, sim_config=sim_config)
        for i, w in enumerate(cfg.preferences)
    ]
    policy_opt = Adam(policy.params(), cfg.lr)
    value_opt = Adam(value_net.params(), cfg.lr)
    shuffle_rng = np.random.default_rng(seed ^ 0xA5A5A5)

    result = TrainResult(policy, value_net, scales, cluster_types)
    steps_done = 0
    update_idx = 0
    while steps_done < cfg.total_steps:
        per_env = max(1, cfg.steps_per_update)
        batch = _pool_batches([env.collect(policy, per_env) for env in envs])
        n = len(batch.actions)
        steps_done += n

        v_t, _ = value_net.forward(batch.z)
        v_next, _ = value_net.forward(batch.z_next)
        adv = advantage(batch.rewards, v_t, v_next, cfg.gamma, batch.terminal)
        scalar_adv = np.sum(batch.omega * adv, axis=1)
        target = batch.rewards + cfg.gamma * v_next * (1.0 - batch.terminal[:, None])

        p_losses, v_losses = [], []
        for _epoch in range(cfg.epochs):
            order = shuffle_rng.permutation(n)
            for lo in range(0, n, cfg.minibatch):
                mb = order[lo:lo + cfg.minibatch]
                logits, cache = policy.forward(batch.z[mb])
                ploss, d_logits = policy_loss_and_grad(
                    logits, batch.masks[mb], batch.actions[mb],
                    batch.old_logp[mb], scalar_adv[mb], cfg.clip_eps,
                )
                policy_opt.step(policy.backward(cache, d_logits))
                v, vcache = value_net.forward(batch.z[mb])
                vloss, d_v = value_loss_and_grad(v, target[mb])
                value_opt.step(value_net.backward(vcache, d_v))
                if not (np.isfinite(ploss) and np.isfinite(vloss)):
                    raise InvariantError(
                        f"training diverged at update {update_idx}: "
                        f"policy_loss={ploss} value_loss={vloss}"
                    )
                p_losses.append(ploss)
                v_losses.append(vloss)

        update_idx += 1
        row = {
            "update": update_idx,
            "steps": steps_done,
            "policy_loss": float(np.mean(p_losses)),
            "value_loss": float(np.mean(v_losses)),
        }
        for env in envs:
            tag = f"w{env.preference[0]:g}_{env.preference[1]:g}"
            row[f"primary_time_{tag}"] = float(env.last_primary_mean[0])
            row[f"primary_energy_{tag}"] = float(env.last_primary_mean[1])
            row[f"secondary_time_{tag}"] = float(env.last_secondary_mean[0])
            row[f"secondary_energy_{tag}"] = float(env.last_secondary_mean[1])
        result.history.append(row)
        if progress is not None:
            progress(row)
        log.info("update %d: steps=%d policy_loss=%.4f value_loss=%.4f",
                 update_idx, steps_done, row["policy_loss"], row["value_loss"])
    return result
