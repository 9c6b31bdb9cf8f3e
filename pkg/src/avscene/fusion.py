"""Gated fusion of the two deepest backbone maps into one refined map.

The deeper map is upsampled to the shallower map's grid and projected to its
channel count; a per-channel sigmoid gate, computed from globally pooled
statistics of both maps, convexly blends them. Saturating the gate recovers
the shallow map exactly, which makes the module easy to test.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .tensor import (
    ParamRegistry,
    Tensor,
    add,
    bilinear_upsample,
    channel_bias_add,
    channel_scale,
    concat,
    conv1x1,
    global_avg_pool,
    reshape,
    scalar_affine,
    sigmoid,
)
from .backbone import he_uniform


class AttentionFusion:
    """Blend f_m4[N,c4,H4,W4] with projected, upsampled f_m5[N,c5,H5,W5]."""

    def __init__(
        self,
        registry: ParamRegistry,
        c4: int,
        c5: int,
        rng: np.random.Generator,
        prefix: str = "afm",
    ):
        self.c4 = c4
        self.c5 = c5
        self.proj_weight = registry.register(
            f"{prefix}.proj.weight", he_uniform(rng, (c4, c5), c5)
        )
        self.proj_bias = registry.register(f"{prefix}.proj.bias", np.zeros(c4))
        self.gate_weight = registry.register(
            f"{prefix}.gate.weight", he_uniform(rng, (c4, 2 * c4), 2 * c4)
        )
        self.gate_bias = registry.register(f"{prefix}.gate.bias", np.zeros(c4))

    def forward(self, f_m4: Tensor, f_m5: Tensor) -> Tensor:
        n, c4, h4, w4 = f_m4.shape
        n5, c5, h5, w5 = f_m5.shape
        if c4 != self.c4 or c5 != self.c5 or n != n5:
            raise ConfigurationError(
                f"fusion built for channels ({self.c4}, {self.c5}), "
                f"got ({c4}, {c5}) with batches {n}/{n5}"
            )
        if h5 != (h4 + 1) // 2 or w5 != (w4 + 1) // 2:
            raise ConfigurationError(
                f"deep map {h5}x{w5} is not the ceil-half of {h4}x{w4}"
            )
        up = bilinear_upsample(f_m5, h4, w4)
        proj = conv1x1(reshape(up, (n, c5, h4 * w4)), self.proj_weight)
        proj = reshape(channel_bias_add(proj, self.proj_bias), (n, c4, h4, w4))

        pooled = global_avg_pool(concat([f_m4, proj], axis=1))
        gate = conv1x1(reshape(pooled, (n, 2 * c4, 1)), self.gate_weight)
        gate = sigmoid(reshape(channel_bias_add(gate, self.gate_bias), (n, c4)))

        blended = add(
            channel_scale(f_m4, gate),
            channel_scale(proj, scalar_affine(gate, -1.0, 1.0)),
        )
        return blended
