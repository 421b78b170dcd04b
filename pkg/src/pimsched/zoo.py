"""Built-in workload definitions.

Six classic CNNs are expressed as layer-shape tables and lowered to model
graphs with :func:`pimsched.workload.build_dcg`.  Pooling, normalization and
activation functions carry no weights and negligible MACs relative to the
conv/fc layers, so they are folded into the spatial dimensions of the
surrounding compute layers.  Squeeze-excite blocks are likewise dropped from
the mobile networks; they contribute well under 1% of both weights and MACs.

Branch-and-concat sections (Inception modules) are modelled as a DAG: every
consumer of a concatenated tensor receives one flow from each producer, so
fan-out traffic is counted once per reader.

``synthetic_pool`` generates small random chain models used by the
desk-scale experiment configs and by ``gen-workloads``.
"""

from __future__ import annotations

import math
import random

from .workload import (
    CONV,
    DEPTHWISE,
    FC,
    LayerShape,
    ModelGraph,
    build_dcg,
    chain_edges,
    layer_stats,
)


def _conv(c_in, c_out, k, hw, bits=8):
    return LayerShape(CONV, c_in, c_out, k, k, hw, hw, bits, bits)


def _dw(c, k, hw, bits=8):
    return LayerShape(DEPTHWISE, c, c, k, k, hw, hw, bits, bits)


def _fc(c_in, c_out, bits=8):
    return LayerShape(FC, c_in, c_out, bits_per_weight=bits, bits_per_activation=bits)


# ---------------------------------------------------------------------------
# Chain models
# ---------------------------------------------------------------------------

def alexnet() -> ModelGraph:
    shapes = [
        _conv(3, 64, 11, 55),
        _conv(64, 192, 5, 27),
        _conv(192, 384, 3, 13),
        _conv(384, 256, 3, 13),
        _conv(256, 256, 3, 13),
        _fc(256 * 6 * 6, 4096),
        _fc(4096, 4096),
        _fc(4096, 1000),
    ]
    return build_dcg("alexnet", shapes, chain_edges(len(shapes)))


def mobilenet_v3_large() -> ModelGraph:
    # (kernel, expanded channels, out channels, stride); SE/activation folded.
    blocks = [
        (3, 16, 16, 1),
        (3, 64, 24, 2),
        (3, 72, 24, 1),
        (5, 72, 40, 2),
        (5, 120, 40, 1),
        (5, 120, 40, 1),
        (3, 240, 80, 2),
        (3, 200, 80, 1),
        (3, 184, 80, 1),
        (3, 184, 80, 1),
        (3, 480, 112, 1),
        (3, 672, 112, 1),
        (5, 672, 160, 2),
        (5, 960, 160, 1),
        (5, 960, 160, 1),
    ]
    shapes = [_conv(3, 16, 3, 112)]
    c, hw = 16, 112
    for k, exp, out, stride in blocks:
        hw_out = hw // stride
        if exp != c:
            shapes.append(_conv(c, exp, 1, hw))
        shapes.append(_dw(exp, k, hw_out))
        shapes.append(_conv(exp, out, 1, hw_out))
        c, hw = out, hw_out
    shapes.append(_conv(c, 960, 1, hw))
    shapes.append(_fc(960, 1280))
    shapes.append(_fc(1280, 1000))
    return build_dcg("mobilenet_v3_large", shapes, chain_edges(len(shapes)))


def _round_filters(c, width=1.2, divisor=8):
    c = c * width
    new = max(divisor, int(c + divisor / 2) // divisor * divisor)
    if new < 0.9 * c:
        new += divisor
    return new


def efficientnet_b3() -> ModelGraph:
    # B0 stage table scaled by width 1.2 / depth 1.4 at 300x300 input.
    stages = [  # kernel, expand ratio, base out channels, base repeats, stride
        (3, 1, 16, 1, 1),
        (3, 6, 24, 2, 2),
        (5, 6, 40, 2, 2),
        (3, 6, 80, 3, 2),
        (5, 6, 112, 3, 1),
        (5, 6, 192, 4, 2),
        (3, 6, 320, 1, 1),
    ]
    stem = _round_filters(32)
    shapes = [_conv(3, stem, 3, 150)]
    c, hw = stem, 150
    for k, ratio, base_out, base_rep, stride in stages:
        out = _round_filters(base_out)
        reps = math.ceil(base_rep * 1.4)
        for r in range(reps):
            s = stride if r == 0 else 1
            hw_out = math.ceil(hw / s)
            exp = c * ratio
            if ratio != 1:
                shapes.append(_conv(c, exp, 1, hw))
            shapes.append(_dw(exp, k, hw_out))
            shapes.append(_conv(exp, out, 1, hw_out))
            c, hw = out, hw_out
    shapes.append(_conv(c, 1536, 1, hw))
    shapes.append(_fc(1536, 1000))
    return build_dcg("efficientnet_b3", shapes, chain_edges(len(shapes)))


# ---------------------------------------------------------------------------
# Residual / branching models
# ---------------------------------------------------------------------------

class _DagBuilder:
    """Accumulates shapes and edges while tracking tensor producers.

    A "tensor" is the list of layer ids whose concatenated outputs form it.
    Adding a layer that reads a tensor adds one edge from every producer.
    """

    def __init__(self):
        self.shapes: list[LayerShape] = []
        self.edges: list[tuple[int, int]] = []

    def add(self, shape: LayerShape, inputs: list[int]) -> int:
        lid = len(self.shapes)
        self.shapes.append(shape)
        for src in inputs:
            self.edges.append((src, lid))
        return lid

    def seq(self, shapes: list[LayerShape], inputs: list[int]) -> list[int]:
        cur = inputs
        for s in shapes:
            cur = [self.add(s, cur)]
        return cur

    def build(self, name: str) -> ModelGraph:
        return build_dcg(name, self.shapes, self.edges)


def resnet18() -> ModelGraph:
    b = _DagBuilder()
    cur = [b.add(_conv(3, 64, 7, 112), [])]

    def basic(inputs, c_in, c_out, hw, downsample):
        # The residual sum materializes on the chiplets of the block's last
        # conv, so the skip tensor flows into that layer alongside the main
        # path.
        c1 = b.add(_conv(c_in, c_out, 3, hw), inputs)
        skip = [b.add(_conv(c_in, c_out, 1, hw), inputs)] if downsample else inputs
        c2 = b.add(_conv(c_out, c_out, 3, hw), [c1] + skip)
        return [c2]

    # stage layout: (channels, spatial, blocks); stride-2 entry except stage 1
    cur = basic(cur, 64, 64, 56, False)
    cur = basic(cur, 64, 64, 56, False)
    for c_in, c_out, hw in ((64, 128, 28), (128, 256, 14), (256, 512, 7)):
        cur = basic(cur, c_in, c_out, hw, True)
        cur = basic(cur, c_out, c_out, hw, False)
    b.seq([_fc(512, 1000)], cur)
    return b.build("resnet18")


def resnet50() -> ModelGraph:
    b = _DagBuilder()
    cur = [b.add(_conv(3, 64, 7, 112), [])]

    def bottleneck(inputs, c_in, width, c_out, hw, downsample):
        c1 = b.add(_conv(c_in, width, 1, hw), inputs)
        c2 = b.add(_conv(width, width, 3, hw), [c1])
        skip = [b.add(_conv(c_in, c_out, 1, hw), inputs)] if downsample else inputs
        c3 = b.add(_conv(width, c_out, 1, hw), [c2] + skip)
        return [c3]

    stage = [  # width, out channels, spatial, repeats
        (64, 256, 56, 3),
        (128, 512, 28, 4),
        (256, 1024, 14, 6),
        (512, 2048, 7, 3),
    ]
    c_in = 64
    for width, c_out, hw, reps in stage:
        cur = bottleneck(cur, c_in, width, c_out, hw, True)
        for _ in range(reps - 1):
            cur = bottleneck(cur, c_out, width, c_out, hw, False)
        c_in = c_out
    b.seq([_fc(2048, 1000)], cur)
    return b.build("resnet50")


def inception_v3() -> ModelGraph:
    b = _DagBuilder()
    cur = b.seq(
        [
            _conv(3, 32, 3, 149),
            _conv(32, 32, 3, 147),
            _conv(32, 64, 3, 147),
            _conv(64, 80, 1, 73),
            _conv(80, 192, 3, 71),
        ],
        [],
    )

    def module_a(inputs, c_in, pool_c):
        b1 = b.seq([_conv(c_in, 64, 1, 35)], inputs)
        b2 = b.seq([_conv(c_in, 48, 1, 35), _conv(48, 64, 5, 35)], inputs)
        b3 = b.seq(
            [_conv(c_in, 64, 1, 35), _conv(64, 96, 3, 35), _conv(96, 96, 3, 35)], inputs
        )
        b4 = b.seq([_conv(c_in, pool_c, 1, 35)], inputs)
        return b1 + b2 + b3 + b4

    cur = module_a(cur, 192, 32)   # -> 256
    cur = module_a(cur, 256, 64)   # -> 288
    cur = module_a(cur, 288, 64)   # -> 288

    # reduction to 17x17; the max-pool branch has no weights, so the input
    # frontier passes straight through into the concatenation
    b1 = b.seq([_conv(288, 384, 3, 17)], cur)
    b2 = b.seq([_conv(288, 64, 1, 35), _conv(64, 96, 3, 35), _conv(96, 96, 3, 17)], cur)
    cur = b1 + b2 + cur

    def module_c(inputs, c7):
        c_in = 768
        b1 = b.seq([_conv(c_in, 192, 1, 17)], inputs)
        b2 = b.seq(
            [
                _conv(c_in, c7, 1, 17),
                LayerShape(CONV, c7, c7, 1, 7, 17, 17),
                LayerShape(CONV, c7, 192, 7, 1, 17, 17),
            ],
            inputs,
        )
        b3 = b.seq(
            [
                _conv(c_in, c7, 1, 17),
                LayerShape(CONV, c7, c7, 7, 1, 17, 17),
                LayerShape(CONV, c7, c7, 1, 7, 17, 17),
                LayerShape(CONV, c7, c7, 7, 1, 17, 17),
                LayerShape(CONV, c7, 192, 1, 7, 17, 17),
            ],
            inputs,
        )
        b4 = b.seq([_conv(c_in, 192, 1, 17)], inputs)
        return b1 + b2 + b3 + b4

    for c7 in (128, 160, 160, 192):
        cur = module_c(cur, c7)

    # reduction to 8x8 (pool branch passes through again)
    b1 = b.seq([_conv(768, 192, 1, 17), _conv(192, 320, 3, 8)], cur)
    b2 = b.seq(
        [
            _conv(768, 192, 1, 17),
            LayerShape(CONV, 192, 192, 1, 7, 17, 17),
            LayerShape(CONV, 192, 192, 7, 1, 17, 17),
            _conv(192, 192, 3, 8),
        ],
        cur,
    )
    cur = b1 + b2 + cur

    def module_e(inputs, c_in):
        b1 = b.seq([_conv(c_in, 320, 1, 8)], inputs)
        h2 = b.seq([_conv(c_in, 384, 1, 8)], inputs)
        b2a = b.seq([LayerShape(CONV, 384, 384, 1, 3, 8, 8)], h2)
        b2b = b.seq([LayerShape(CONV, 384, 384, 3, 1, 8, 8)], h2)
        h3 = b.seq([_conv(c_in, 448, 1, 8), _conv(448, 384, 3, 8)], inputs)
        b3a = b.seq([LayerShape(CONV, 384, 384, 1, 3, 8, 8)], h3)
        b3b = b.seq([LayerShape(CONV, 384, 384, 3, 1, 8, 8)], h3)
        b4 = b.seq([_conv(c_in, 192, 1, 8)], inputs)
        return b1 + b2a + b2b + b3a + b3b + b4

    cur = module_e(cur, 1280)
    cur = module_e(cur, 2048)
    b.seq([_fc(2048, 1000)], cur)
    return b.build("inception_v3")


def full_pool() -> list[ModelGraph]:
    """The six bundled CNN workloads."""
    return [
        alexnet(),
        resnet18(),
        resnet50(),
        efficientnet_b3(),
        mobilenet_v3_large(),
        inception_v3(),
    ]


# ---------------------------------------------------------------------------
# Synthetic pools
# ---------------------------------------------------------------------------

def synthetic_pool(
    seed: int,
    n_models: int = 6,
    layer_range: tuple[int, int] = (3, 8),
    channel_range: tuple[int, int] = (32, 256),
    spatial_range: tuple[int, int] = (7, 28),
    bits: int = 8,
    max_weight_bits: int | None = None,
) -> list[ModelGraph]:
    """Random small chain CNNs for desk-scale experiments.

    Channel counts walk a random path through ``channel_range`` and the
    spatial size shrinks monotonically so later layers look like real CNN
    tails (more channels, less resolution).  With ``max_weight_bits`` set,
    candidates over the budget are redrawn, so every model is guaranteed
    to fit (say) one cluster of a small system.
    """
    rng = random.Random(seed)
    pool = []
    attempts = 0
    while len(pool) < n_models:
        attempts += 1
        if attempts > 200 * n_models:
            raise ValueError(
                f"cannot generate {n_models} models under {max_weight_bits} "
                f"weight bits with ranges {layer_range}/{channel_range}/{spatial_range}"
            )
        n_layers = rng.randint(*layer_range)
        c = rng.randint(*channel_range)
        hw = rng.randint(*spatial_range)
        shapes = []
        for i in range(n_layers - 1):
            c_out = min(channel_range[1] * 4, max(channel_range[0], int(c * rng.choice((1, 1, 2)))))
            k = rng.choice((1, 3, 3, 5))
            shapes.append(LayerShape(CONV, c, c_out, k, k, hw, hw, bits, bits))
            c = c_out
            if hw > spatial_range[0] and rng.random() < 0.4:
                hw = max(spatial_range[0], hw // 2)
        shapes.append(_fc(c, rng.choice((10, 100, 1000)), bits))
        g = build_dcg(f"synth{len(pool)}", shapes, chain_edges(n_layers))
        if max_weight_bits is not None and g.total_weight_bits() > max_weight_bits:
            continue
        pool.append(g)
    return pool


_BUILTIN = {
    "alexnet": alexnet,
    "resnet18": resnet18,
    "resnet50": resnet50,
    "efficientnet_b3": efficientnet_b3,
    "mobilenet_v3_large": mobilenet_v3_large,
    "inception_v3": inception_v3,
}


def builtin_model(name: str) -> ModelGraph:
    try:
        return _BUILTIN[name]()
    except KeyError:
        raise KeyError(f"unknown builtin model {name!r}; have {sorted(_BUILTIN)}") from None


def builtin_names() -> list[str]:
    return sorted(_BUILTIN)
