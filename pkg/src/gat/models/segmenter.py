"""Encoder-decoder segmenter with skip connections."""

import numpy as np

from .. import ops
from ..rng import stream
from ..tensor import no_grad
from .base import Module, Conv2d, SLOPE


class Segmenter(Module):
    """Three-level U-shaped net: 16/32/64 channels down, skip-concat up,
    1x1 head to per-pixel K_s logits at the input resolution."""

    kind = "segmenter"

    def __init__(self, num_seg_classes=5, seed=0):
        super().__init__()
        self.num_seg_classes = num_seg_classes
        self.seed = seed
        rng = stream(seed, "init", "segmenter")
        self.e1 = self.child("e1", Conv2d(3, 16, 3, rng))
        self.e2 = self.child("e2", Conv2d(16, 32, 3, rng))
        self.e3 = self.child("e3", Conv2d(32, 64, 3, rng))
        self.d2 = self.child("d2", Conv2d(64 + 32, 32, 3, rng))
        self.d1 = self.child("d1", Conv2d(32 + 16, 16, 3, rng))
        self.head = self.child("head", Conv2d(16, num_seg_classes, 1, rng, pad=0))

    def logits(self, x):
        s1 = ops.leaky_relu(self.e1(x), SLOPE)
        s2 = ops.leaky_relu(self.e2(ops.avg_pool2d(s1, 2)), SLOPE)
        deep = ops.leaky_relu(self.e3(ops.avg_pool2d(s2, 2)), SLOPE)
        u2 = ops.leaky_relu(self.d2(ops.concat([ops.nearest_upsample(deep, 2), s2],
                                               axis=1)), SLOPE)
        u1 = ops.leaky_relu(self.d1(ops.concat([ops.nearest_upsample(u2, 2), s1],
                                               axis=1)), SLOPE)
        return self.head(u1)

    def segment(self, x):
        """Per-pixel probabilities (n, K_s, h, w), off the graph."""
        with no_grad():
            z = self.logits(x)
        zt = z.data.transpose(0, 2, 3, 1)
        probs = ops.softmax_probs(zt)
        return probs.transpose(0, 3, 1, 2)

    def predict(self, x):
        with no_grad():
            z = self.logits(x)
        return np.argmax(z.data, axis=1)

    def descriptor(self):
        return {"kind": self.kind, "num_seg_classes": self.num_seg_classes,
                "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc):
        return cls(num_seg_classes=desc["num_seg_classes"], seed=desc.get("seed", 0))
