"""Preference-conditioned scheduling policy.

The actor is a soft (differentiable) binary decision tree: every internal
node computes a sigmoid gate over the concatenated [state, preference]
vector and routes probability mass to its children; every leaf holds a
logit vector over the cluster action space.  The mixed root logits are
masked (invalid clusters forced to -1e7, which underflows to exactly zero
probability) and softmaxed.

The critic is a small fully-connected network that maps the same input to
one value per objective (execution time, energy).

Both modules are plain numpy with hand-derived backward passes, so the
entire gradient path is closed-form and can be checked against finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from .arch import PimType, SystemGraph
from .errors import ConfigError, InvariantError

POLICY_FORMAT = "pimsched-policy"
POLICY_VERSION = 1

MASK_LOGIT = -1.0e7


# ---------------------------------------------------------------------------
# state encoding
# ---------------------------------------------------------------------------

@dataclass
class NormScales:
    """Fixed normalization constants; persisted with the policy.

    Every feature is divided by its scale and clamped to [0, 1].
    """

    layer_weight_bits: float
    layer_mac_ops: float
    layer_inflow_bits: float
    n_layers: float
    total_weight_bits: float
    total_mac_ops: float
    total_flow_bits: float
    frames: float

    @classmethod
    def from_pool(cls, pool, frames_max: int) -> "NormScales":
        def mx(vals):
            return float(max(max(vals), 1))

        return cls(
            layer_weight_bits=mx(l.weight_bits for g in pool for l in g.layers),
            layer_mac_ops=mx(l.mac_ops for g in pool for l in g.layers),
            layer_inflow_bits=mx(
                max((sum(b for _s, b in g.in_flows(i)) for i in range(g.n_layers)), default=1)
                for g in pool
            ),
            n_layers=mx(g.n_layers for g in pool),
            total_weight_bits=mx(g.total_weight_bits() for g in pool),
            total_mac_ops=mx(g.total_mac_ops() for g in pool),
            total_flow_bits=mx(max(sum(g.flows.values()), 1) for g in pool),
            frames=float(max(frames_max, 1)),
        )


def state_dim(n_clusters: int) -> int:
    return 8 + 3 * n_clusters


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # evaluated from the sign that keeps the exponent non-positive
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def encode_state(graph: SystemGraph, req, scales: NormScales,
                 cluster_types: list[PimType]) -> np.ndarray:
    """Normalized observation for one placement decision.

    Layout: 3 layer features, 5 workload features, then per cluster (in
    ``cluster_types`` order) memory availability, hottest-chiplet
    temperature relative to the throttle limit, and the fraction of the
    previous layer's bits it holds.
    """
    g = req.graph
    clusters = graph.cluster_state()
    inflow = sum(b for _s, b in g.in_flows(req.layer_index))
    rem_layers = g.n_layers - req.layer_index - 1
    feats = [
        req.remaining_bits / scales.layer_weight_bits,
        g.layers[req.layer_index].mac_ops / scales.layer_mac_ops,
        inflow / scales.layer_inflow_bits,
        rem_layers / scales.n_layers,
        req.remaining_weight_bits / scales.total_weight_bits,
        req.remaining_mac_ops / scales.total_mac_ops,
        req.remaining_flow_bits / scales.total_flow_bits,
        req.frames / scales.frames,
    ]
    ambient = min(c.temp_k for c in graph.chiplets)  # idle nodes sit at ambient
    prev_total = sum(b for _c, b in req.prev_placement) or 1
    prev_by_type = {}
    for cid, bits in req.prev_placement:
        t = graph.chiplets[cid].pim_type
        prev_by_type[t] = prev_by_type.get(t, 0) + bits
    mem, temp, prev = [], [], []
    for t in cluster_types:
        cs = clusters.get(t)
        if cs is None:
            raise ConfigError(f"cluster {t.value} absent from system")
        mem.append(cs.mem_avail / cs.mem_cap if cs.mem_cap else 0.0)
        t_lim = graph.chiplets[cs.member_ids[0]].t_max
        denom = max(t_lim - ambient, 1e-9)
        temp.append((cs.max_temp_k - ambient) / denom)
        prev.append(prev_by_type.get(t, 0) / prev_total)
    vec = np.array(feats + mem + temp + prev, dtype=float)
    return np.clip(vec, 0.0, 1.0)


def valid_cluster_mask(graph: SystemGraph, cluster_types: list[PimType]) -> np.ndarray:
    """True where the cluster can accept new weights right now."""
    clusters = graph.cluster_state()
    return np.array([clusters[t].any_open for t in cluster_types], dtype=bool)


# ---------------------------------------------------------------------------
# differentiable decision tree
# ---------------------------------------------------------------------------

class DecisionTreePolicy:
    """Soft binary decision tree over [state, preference] inputs.

    Nodes are heap-indexed (root 1, children 2n / 2n+1); node n gates left
    with sigmoid(alpha_n * (w_n . z + b_n)).  Leaves hold raw logits.
    """

    def __init__(self, in_dim: int, n_actions: int, depth: int = 5, seed: int = 0):
        if depth < 1:
            raise ConfigError(f"tree depth must be >= 1, got {depth}")
        self.in_dim = in_dim
        self.n_actions = n_actions
        self.depth = depth
        self.n_nodes = 2 ** depth - 1
        self.n_leaves = 2 ** depth
        rng = np.random.default_rng(seed)
        self.node_w = rng.uniform(-0.1, 0.1, size=(self.n_nodes, in_dim))
        self.node_b = np.zeros(self.n_nodes)
        self.node_alpha = np.ones(self.n_nodes)
        self.leaf_logits = np.zeros((self.n_leaves, n_actions))

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        return {
            "node_w": self.node_w,
            "node_b": self.node_b,
            "node_alpha": self.node_alpha,
            "leaf_logits": self.leaf_logits,
        }

    def set_params(self, p: dict[str, np.ndarray]) -> None:
        self.node_w = np.asarray(p["node_w"], dtype=float).reshape(self.n_nodes, self.in_dim)
        self.node_b = np.asarray(p["node_b"], dtype=float).reshape(self.n_nodes)
        self.node_alpha = np.asarray(p["node_alpha"], dtype=float).reshape(self.n_nodes)
        self.leaf_logits = np.asarray(p["leaf_logits"], dtype=float).reshape(
            self.n_leaves, self.n_actions
        )

    # -- forward / backward -------------------------------------------------

    def forward(self, z: np.ndarray):
        """Mixed leaf logits for a batch.  Returns (logits, cache)."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.in_dim:
            raise ConfigError(f"expected input dim {self.in_dim}, got {z.shape[1]}")
        b = z.shape[0]
        preact = z @ self.node_w.T + self.node_b
        gates = _sigmoid(self.node_alpha * preact)
        m = np.empty((b, 2 * self.n_leaves, self.n_actions))
        m[:, self.n_leaves:] = self.leaf_logits[None, :, :]
        for n in range(self.n_nodes, 0, -1):
            g = gates[:, n - 1][:, None]
            m[:, n] = g * m[:, 2 * n] + (1.0 - g) * m[:, 2 * n + 1]
        return m[:, 1], (z, preact, gates, m)

    def backward(self, cache, d_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients for upstream d(loss)/d(mixed logits)."""
        z, preact, gates, m = cache
        b = z.shape[0]
        u = np.zeros_like(m)
        u[:, 1] = d_logits
        d_gate = np.empty((b, self.n_nodes))
        for n in range(1, self.n_nodes + 1):
            un = u[:, n]
            d_gate[:, n - 1] = np.sum(un * (m[:, 2 * n] - m[:, 2 * n + 1]), axis=1)
            g = gates[:, n - 1][:, None]
            u[:, 2 * n] += g * un
            u[:, 2 * n + 1] += (1.0 - g) * un
        d_leaf = u[:, self.n_leaves:].sum(axis=0)
        d_pre = d_gate * gates * (1.0 - gates)  # through the sigmoid
        return {
            "node_w": (d_pre * self.node_alpha).T @ z,
            "node_b": (d_pre * self.node_alpha).sum(axis=0),
            "node_alpha": (d_pre * preact).sum(axis=0),
            "leaf_logits": d_leaf,
        }


# ---------------------------------------------------------------------------
# value network
# ---------------------------------------------------------------------------

class ValueNet:
    """Tanh MLP critic: [state, preference] -> one value per objective."""

    N_OBJECTIVES = 2

    def __init__(self, in_dim: int, hidden: int = 64, n_hidden_layers: int = 3, seed: int = 0):
        self.in_dim = in_dim
        self.hidden = hidden
        self.n_hidden_layers = n_hidden_layers
        rng = np.random.default_rng(seed)
        dims = [in_dim] + [hidden] * n_hidden_layers + [self.N_OBJECTIVES]
        self.weights = [
            rng.normal(0.0, 1.0 / np.sqrt(dims[i]), size=(dims[i], dims[i + 1]))
            for i in range(len(dims) - 1)
        ]
        self.biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{i}"] = w
            out[f"b{i}"] = b
        return out

    def set_params(self, p: dict[str, np.ndarray]) -> None:
        for i in range(len(self.weights)):
            self.weights[i] = np.asarray(p[f"w{i}"], dtype=float).reshape(self.weights[i].shape)
            self.biases[i] = np.asarray(p[f"b{i}"], dtype=float).reshape(self.biases[i].shape)

    def forward(self, z: np.ndarray):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.in_dim:
            raise ConfigError(f"expected input dim {self.in_dim}, got {z.shape[1]}")
        acts = [z]
        h = z
        for i in range(len(self.weights) - 1):
            h = np.tanh(h @ self.weights[i] + self.biases[i])
            acts.append(h)
        out = h @ self.weights[-1] + self.biases[-1]
        return out, acts

    def backward(self, cache, d_out: np.ndarray) -> dict[str, np.ndarray]:
        acts = cache
        grads = {}
        delta = d_out
        i = len(self.weights) - 1
        grads[f"w{i}"] = acts[-1].T @ delta
        grads[f"b{i}"] = delta.sum(axis=0)
        upstream = delta @ self.weights[-1].T
        for i in range(len(self.weights) - 2, -1, -1):
            delta = upstream * (1.0 - acts[i + 1] ** 2)
            grads[f"w{i}"] = acts[i].T @ delta
            grads[f"b{i}"] = delta.sum(axis=0)
            if i > 0:
                upstream = delta @ self.weights[i].T
        return grads


# ---------------------------------------------------------------------------
# masking, softmax, action selection
# ---------------------------------------------------------------------------

def mask_invalid(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Force invalid action logits to the mask constant."""
    logits = np.atleast_2d(logits)
    valid = np.atleast_2d(valid)
    if not valid.any(axis=1).all():
        raise InvariantError("mask_invalid called with an all-invalid row")
    out = np.where(valid, logits, MASK_LOGIT)
    return out


def masked_probs(logits: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Softmax after masking; invalid entries come out exactly zero."""
    ml = mask_invalid(logits, valid)
    shifted = ml - ml.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def select_action(logits: np.ndarray, valid: np.ndarray, mode: str = "argmax",
                  rng: np.random.Generator | None = None) -> tuple[int, float]:
    """Pick one action and return (action, log prob).

    ``argmax`` (deployment) takes the highest-probability action with
    lowest-index tie-break; ``sample`` (training) draws from the masked
    categorical distribution.  Zero-probability actions can never be drawn.
    """
    p = masked_probs(logits, valid)[0]
    if mode == "argmax":
        a = int(np.argmax(p))
    elif mode == "sample":
        if rng is None:
            raise ConfigError("sample mode needs an rng")
        cdf = np.cumsum(p)
        cdf[-1] = 1.0
        a = int(np.searchsorted(cdf, rng.random(), side="right"))
    else:
        raise ConfigError(f"unknown selection mode {mode!r}")
    if p[a] <= 0.0:
        raise InvariantError("selected an action with zero probability")
    return a, float(np.log(p[a]))


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_policy(path, policy: DecisionTreePolicy, value_net: ValueNet,
                scales: NormScales, cluster_types: list[PimType],
                meta: dict | None = None) -> None:
    doc = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "cluster_types": [t.value for t in cluster_types],
        "scales": asdict(scales),
        "tree": {
            "depth": policy.depth,
            "in_dim": policy.in_dim,
            "n_actions": policy.n_actions,
            "params": {k: v.tolist() for k, v in policy.params().items()},
        },
        "value_net": {
            "in_dim": value_net.in_dim,
            "hidden": value_net.hidden,
            "n_hidden_layers": value_net.n_hidden_layers,
            "params": {k: v.tolist() for k, v in value_net.params().items()},
        },
        "meta": meta or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_policy(path):
    """Returns (policy, value_net, scales, cluster_types, meta)."""
    from .errors import FormatError

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", path=path, line=e.lineno) from e
    except OSError as e:
        raise FormatError(str(e), path=path) from e
    if not isinstance(doc, dict) or doc.get("format") != POLICY_FORMAT:
        raise FormatError(f"not a {POLICY_FORMAT} file", path=path)
    if doc.get("version") != POLICY_VERSION:
        raise FormatError(
            f"unsupported version {doc.get('version')!r} (expected {POLICY_VERSION})", path=path
        )
    try:
        td = doc["tree"]
        policy = DecisionTreePolicy(int(td["in_dim"]), int(td["n_actions"]), int(td["depth"]))
        policy.set_params({k: np.array(v) for k, v in td["params"].items()})
        vd = doc["value_net"]
        value_net = ValueNet(int(vd["in_dim"]), int(vd["hidden"]), int(vd["n_hidden_layers"]))
        value_net.set_params({k: np.array(v) for k, v in vd["params"].items()})
        scales = NormScales(**{k: float(v) for k, v in doc["scales"].items()})
        cluster_types = [PimType(t) for t in doc["cluster_types"]]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad field in policy file: {e}", path=path) from e
    return policy, value_net, scales, cluster_types, doc.get("meta", {})
