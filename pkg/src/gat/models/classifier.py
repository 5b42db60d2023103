"""Convolutional shape classifier."""

import numpy as np

from .. import ops
from ..rng import stream
from ..tensor import no_grad
from .base import Module, Conv2d, Linear, SLOPE


class Classifier(Module):
    """Three conv blocks (32/64/128 channels, each conv + instance norm +
    leaky_relu + 2x average-pool) and a dense head to K logits.  Input is
    3x32x32.  The normalization matters: without it SGD at the fixed
    pretraining schedule stalls well short of the accuracy gate."""

    kind = "classifier"

    def __init__(self, num_classes=4, image_size=32, seed=0):
        super().__init__()
        self.num_classes = num_classes
        self.image_size = image_size
        self.seed = seed
        rng = stream(seed, "init", "classifier")
        self.b1 = self.child("b1", Conv2d(3, 32, 3, rng))
        self.b2 = self.child("b2", Conv2d(32, 64, 3, rng))
        self.b3 = self.child("b3", Conv2d(64, 128, 3, rng))
        feat = 128 * (image_size // 8) ** 2
        self.head = self.child("head", Linear(feat, num_classes, rng))

    def feature_blocks(self, x):
        """Per-block activations (post-pool); also the perceptual feature set."""
        f1 = ops.avg_pool2d(
            ops.leaky_relu(ops.instance_normalize(self.b1(x)), SLOPE), 2)
        f2 = ops.avg_pool2d(
            ops.leaky_relu(ops.instance_normalize(self.b2(f1)), SLOPE), 2)
        f3 = ops.avg_pool2d(
            ops.leaky_relu(ops.instance_normalize(self.b3(f2)), SLOPE), 2)
        return [f1, f2, f3]

    def logits(self, x):
        f3 = self.feature_blocks(x)[-1]
        n = f3.shape[0]
        return self.head(ops.reshape(f3, (n, -1)))

    def classify(self, x):
        """Probability rows (ndarray, off the graph); each sums to 1."""
        with no_grad():
            z = self.logits(x)
        return ops.softmax_probs(z)

    def predict(self, x):
        return np.argmax(self.classify(x), axis=1)

    def descriptor(self):
        return {"kind": self.kind, "num_classes": self.num_classes,
                "image_size": self.image_size, "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc):
        return cls(num_classes=desc["num_classes"], image_size=desc["image_size"],
                   seed=desc.get("seed", 0))
