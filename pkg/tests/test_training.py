"""Training machinery: reward normalization and splitting, TD advantage,
loss values and gradients, the optimizer, and a tiny end-to-end run."""

import numpy as np
import pytest

from pimsched.arch import toy_mesh
from pimsched.costs import CostModel
from pimsched.engine import SimConfig, Simulator
from pimsched.errors import ConfigError
from pimsched.policy import DecisionTreePolicy, NormScales, masked_probs, state_dim
from pimsched.schedulers import PolicyScheduler, TrajectoryRecorder, cluster_order
from pimsched.training import (
    Adam,
    PpoConfig,
    RewardListener,
    RewardNormalizer,
    TrainingEnv,
    advantage,
    compute_rewards,
    policy_loss_and_grad,
    train,
    value_loss_and_grad,
)
from pimsched.workload import synth_workload_stream
from pimsched.zoo import synthetic_pool


def tiny_pool():
    return synthetic_pool(3, n_models=2, layer_range=(2, 3),
                          channel_range=(8, 16), spatial_range=(2, 4),
                          max_weight_bits=200_000)


# ---------------------------------------------------------------------------
# advantage
# ---------------------------------------------------------------------------

def test_advantage_hand_case():
    # componentwise: -1 + 0.95*(-2) + 3 = 0.1 and -2 + 0.95*(-1) + 3 = 0.05
    r = np.array([[-1.0, -2.0]])
    v_t = np.array([[-3.0, -3.0]])
    v_n = np.array([[-2.0, -1.0]])
    a = advantage(r, v_t, v_n, 0.95, np.array([0.0]))
    assert np.allclose(a, [[0.1, 0.05]], atol=1e-12)


def test_advantage_zero_value_zero_gamma_returns_reward():
    r = np.array([[-0.3, -0.7], [-1.0, 0.0]])
    zeros = np.zeros_like(r)
    a = advantage(r, zeros, zeros, 0.0, np.zeros(2))
    assert np.array_equal(a, r)


def test_advantage_terminal_drops_bootstrap():
    r = np.array([[-1.0, -1.0]])
    v_t = np.array([[0.5, 0.5]])
    v_n = np.array([[100.0, 100.0]])  # must not leak through the terminal
    a = advantage(r, v_t, v_n, 0.9, np.array([1.0]))
    assert np.allclose(a, [[-1.5, -1.5]])


# ---------------------------------------------------------------------------
# value loss
# ---------------------------------------------------------------------------

def test_value_loss_hand_case():
    # single sample, V=0, target (1,2): loss = 1^2 + 2^2 = 5
    v = np.zeros((1, 2))
    target = np.array([[1.0, 2.0]])
    loss, grad = value_loss_and_grad(v, target)
    assert loss == pytest.approx(5.0)
    assert np.allclose(grad, [[-2.0, -4.0]])  # 2/n * (v - target)


def test_value_loss_perfect_prediction():
    t = np.array([[0.1, -0.2], [3.0, 4.0]])
    loss, grad = value_loss_and_grad(t.copy(), t)
    assert loss == 0.0
    assert np.all(grad == 0.0)


# ---------------------------------------------------------------------------
# policy loss
# ---------------------------------------------------------------------------

def _batch(logits, actions):
    valid = np.ones_like(logits, dtype=bool)
    p = masked_probs(logits, valid)
    old_logp = np.log(p[np.arange(len(actions)), actions])
    return valid, old_logp


def test_policy_loss_on_policy_limit():
    """With rho identically 1 the clip is inactive and the loss is just
    the negated mean scalarized advantage."""
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(6, 3))
    actions = np.array([0, 1, 2, 0, 1, 2])
    valid, old_logp = _batch(logits, actions)
    adv = rng.normal(size=6)
    loss, d = policy_loss_and_grad(logits, valid, actions, old_logp, adv, 0.1)
    assert loss == pytest.approx(-float(np.mean(adv)), rel=1e-12)


def test_policy_loss_clip_activates_and_kills_gradient():
    eps = 0.1
    logits = np.array([[0.5, -0.2, 0.1]])
    actions = np.array([1])
    valid, logp_now = _batch(logits, actions)
    # old policy was less likely to pick the action: rho = 1 + 2*eps
    old_logp = logp_now - np.log(1.0 + 2 * eps)
    adv = np.array([2.0])
    loss, d = policy_loss_and_grad(logits, valid, actions, old_logp, adv, eps)
    assert loss == pytest.approx(-(1.0 + eps) * 2.0, rel=1e-9)
    assert np.all(d == 0.0)  # clipped branch: no gradient


def test_policy_loss_no_gradient_on_masked_actions():
    logits = np.array([[0.3, 0.9, -0.4]])
    valid = np.array([[True, True, False]])
    p = masked_probs(logits, valid)
    actions = np.array([1])
    old_logp = np.log(p[0, 1:2])
    loss, d = policy_loss_and_grad(logits, valid, actions, old_logp,
                                   np.array([1.0]), 0.2)
    assert d[0, 2] == 0.0
    assert d[0, 0] != 0.0 and d[0, 1] != 0.0


# ---------------------------------------------------------------------------
# reward normalization and splitting
# ---------------------------------------------------------------------------

def test_normalizer_starts_at_unit_scale_then_tracks():
    n = RewardNormalizer()
    assert np.array_equal(n.scales(), [1.0, 1.0])
    n.update(1.0, 2.0)  # first sample pins the mean, zero variance
    assert np.allclose(n.scales(), [1.0, 2.0])
    # constant costs keep the scale fixed; rewards stay proportional
    for _ in range(200):
        n.update(1.0, 2.0)
    assert np.allclose(n.scales(), [1.0, 2.0], rtol=1e-9)
    assert np.allclose(n.normalize(1.0, 2.0), [-1.0, -1.0])
    assert np.allclose(n.normalize(2.0, 4.0), [-2.0, -2.0])  # 2x cost, 2x reward


def test_normalizer_clamps_to_reward_floor():
    n = RewardNormalizer()
    n.update(1e-6, 1e-6)
    assert np.array_equal(n.normalize(5.0, 5.0), [-10.0, -10.0])
    assert np.array_equal(n.normalize(0.0, 0.0), [0.0, 0.0])


def test_normalizer_rejects_bad_ema():
    with pytest.raises(ConfigError):
        RewardNormalizer(ema_factor=1.0)


def test_compute_rewards_splits_ideal_and_stall():
    class Rec:
        ideal_exec_s = 2.0
        ideal_energy_j = 4.0
        stall_s = 0.0
        stall_energy_j = 0.0

    n = RewardNormalizer()
    n.update(2.0, 4.0)
    primary, secondary = compute_rewards(Rec(), n)
    assert np.allclose(primary, [-1.0, -1.0])
    assert np.array_equal(secondary, [0.0, 0.0])  # no stall, no penalty


def test_listener_totals_match_recorded_rewards():
    """Every unit of reward handed to the listener must land in some
    trajectory slot: the per-episode sums are conserved."""
    system = toy_mesh()
    pool = tiny_pool()
    scales = NormScales.from_pool(pool, frames_max=4)
    types = cluster_order(system)
    policy = DecisionTreePolicy(state_dim(len(types)) + 2, len(types), 2, seed=3)
    recorder = TrajectoryRecorder()
    listener = RewardListener(recorder, RewardNormalizer())
    sched = PolicyScheduler(policy, scales, (0.5, 0.5), types, mode="sample",
                            rng=np.random.default_rng(8), recorder=recorder)
    jobs = synth_workload_stream(seed=42, count=25, frame_range=(1, 4),
                                 model_pool=pool, admit_rate=1e4)
    sim = Simulator(system, CostModel(), sched, jobs,
                    SimConfig(warmup_s=0.0), listener=listener)
    sim.run()
    assert listener.jobs_scheduled == 25 and listener.jobs_finished == 25
    _z, _a, _lp, _m, r = recorder.arrays()
    assert np.allclose(r.sum(axis=0),
                       listener.primary_sum + listener.secondary_sum, rtol=1e-12)
    assert np.all(r <= 0.0)  # costs only


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def test_adam_first_step_is_signed_lr():
    params = {"w": np.array([1.0, -1.0])}
    opt = Adam(params, lr=0.01)
    opt.step({"w": np.array([100.0, -0.5])})
    # bias-corrected first step reduces to lr * g / (|g| + eps)
    assert np.allclose(params["w"], [1.0 - 0.01, -1.0 + 0.01], atol=1e-6)


def test_adam_updates_in_place_and_tracks_time():
    params = {"w": np.zeros(3)}
    opt = Adam(params, lr=0.1)
    ref = params["w"]
    for _ in range(4):
        opt.step({"w": np.ones(3)})
    assert opt.t == 4
    assert ref is params["w"]
    assert np.all(ref < 0.0)


# ---------------------------------------------------------------------------
# end-to-end smoke
# ---------------------------------------------------------------------------

def small_cfg():
    return PpoConfig(steps_per_update=60, total_steps=360, episode_jobs=10,
                     minibatch=64, tree_depth=2, frame_range=(1, 2))


def test_training_env_collect_marks_episode_ends():
    system = toy_mesh()
    pool = tiny_pool()
    cfg = small_cfg()
    scales = NormScales.from_pool(pool, frames_max=cfg.frame_range[1])
    types = cluster_order(system)
    env = TrainingEnv(system, CostModel(), pool, (1.0, 0.0), scales, cfg, seed=2)
    policy = DecisionTreePolicy(state_dim(len(types)) + 2, len(types), 2, seed=0)
    batch = env.collect(policy, cfg.steps_per_update)
    n = len(batch.actions)
    assert n >= cfg.steps_per_update
    assert batch.z.shape == (n, state_dim(2) + 2)
    assert batch.terminal.sum() == env.episodes_run
    assert np.all(batch.omega == [1.0, 0.0])
    assert np.all(batch.old_logp <= 0.0)


def test_train_smoke_is_deterministic():
    system = toy_mesh()
    pool = tiny_pool()

    def go():
        res = train(system, CostModel(), pool, small_cfg(), seed=5)
        return res

    a, b = go(), go()
    assert len(a.history) == len(b.history) >= 1
    for ra, rb in zip(a.history, b.history):
        assert ra == rb
    for k, v in a.policy.params().items():
        assert np.array_equal(v, b.policy.params()[k])
    for k, v in a.value_net.params().items():
        assert np.array_equal(v, b.value_net.params()[k])
    row = a.history[0]
    for col in ("update", "steps", "policy_loss", "value_loss"):
        assert col in row


def test_train_validates_config():
    bad = PpoConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        train(toy_mesh(), CostModel(), tiny_pool(), bad, seed=0)
