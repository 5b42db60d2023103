"""Layout-conditional generator with spatially adaptive normalization.

A label map (one-hot over K_s classes, background = 0) is embedded by a
shared conv; per-layer heads then produce gamma/beta modulation maps at each
trunk resolution.  The trunk mirrors the style generator's 8-layer schema:
conv -> instance norm -> x * (1 + gamma) + beta -> leaky_relu, with a small
z vector seeding the 4x4 start.  Output is tanh, 3x32x32.
"""

import numpy as np

from .. import ops
from ..errors import ShapeMismatchError
from ..rng import stream
from .base import Module, Conv2d, Linear, SLOPE
from .style_generator import LAYER_CHANNELS, LAYER_RESOLUTIONS, NUM_LAYERS

Z_DIM = 9  # matches the procedural parameter count
EMBED_CHANNELS = 24


def z_from_params(params):
    """Rendering parameters (n, Z_DIM) -> conditioning vector, float32.

    The nuisance variables a layout does not pin down (hue, brightness,
    texture amplitude, softness) ride along in z so the generator can
    reproduce a specific render rather than an arbitrary one.
    """
    params = np.asarray(params, dtype=np.float32)
    if params.ndim != 2 or params.shape[1] != Z_DIM:
        raise ShapeMismatchError("z_from_params", params.shape, (None, Z_DIM))
    return params


def one_hot_layout(label_map, num_classes):
    """(n, h, w) int labels -> (n, K_s, h, w) float32 one-hot."""
    label_map = np.asarray(label_map)
    n, h, w = label_map.shape
    out = np.zeros((n, num_classes, h, w), dtype=np.float32)
    idx = np.arange(n)[:, None, None], label_map, \
        np.arange(h)[None, :, None], np.arange(w)[None, None, :]
    out[idx[0], idx[1], idx[2], idx[3]] = 1.0
    return out


class SpadeGenerator(Module):
    kind = "spade_generator"

    def __init__(self, num_seg_classes=5, seed=0):
        super().__init__()
        self.num_seg_classes = num_seg_classes
        self.seed = seed
        rng = stream(seed, "init", "spade_generator")
        self.embed = self.child("embed", Conv2d(num_seg_classes, EMBED_CHANNELS, 3, rng))
        self.fc = self.child("fc", Linear(Z_DIM, 64 * 4 * 4, rng))
        self.mod_heads = []
        self.convs = []
        cin = 64
        for l, c in enumerate(LAYER_CHANNELS):
            self.convs.append(self.child(f"conv{l}", Conv2d(cin, c, 3, rng)))
            head = Conv2d(EMBED_CHANNELS, 2 * c, 3, rng)
            head.w.data *= 0.1  # modulation opens near identity
            self.mod_heads.append(self.child(f"mod{l}", head))
            cin = c
        self.to_rgb = self.child("to_rgb", Conv2d(LAYER_CHANNELS[-1], 3, 1, rng, pad=0))

    def spade_modulation(self, layout):
        """One-hot layout (n, K_s, 32, 32) -> per-layer (gamma, beta) Tensors."""
        layout = ops.as_tensor(layout)
        if layout.ndim != 4 or layout.shape[1] != self.num_seg_classes:
            raise ShapeMismatchError("spade_modulation", layout.shape,
                                     (None, self.num_seg_classes, None, None))
        emb = ops.leaky_relu(self.embed(layout), SLOPE)
        full = layout.shape[2]
        mods = []
        for l, c in enumerate(LAYER_CHANNELS):
            r = LAYER_RESOLUTIONS[l]
            e = emb
            k = full // r
            if k > 1:
                e = ops.avg_pool2d(e, k)
            gb = self.mod_heads[l](e)
            mods.append((ops.narrow(gb, 1, 0, c), ops.narrow(gb, 1, c, c)))
        return mods

    def spade_synthesize(self, mods, z):
        """Modulation maps plus z (n, Z_DIM) -> image (n, 3, 32, 32)."""
        z = ops.as_tensor(z)
        n = z.shape[0]
        if z.shape != (n, Z_DIM):
            raise ShapeMismatchError("spade_synthesize", z.shape, (n, Z_DIM))
        if len(mods) != NUM_LAYERS:
            raise ShapeMismatchError("spade_synthesize", (len(mods),), (NUM_LAYERS,))
        x = ops.reshape(self.fc(z), (n, 64, 4, 4))
        for l in range(NUM_LAYERS):
            c, r = LAYER_CHANNELS[l], LAYER_RESOLUTIONS[l]
            gamma, beta = mods[l]
            gamma, beta = ops.as_tensor(gamma), ops.as_tensor(beta)
            if gamma.shape[1:] != (c, r, r) or beta.shape[1:] != (c, r, r):
                raise ShapeMismatchError(f"spade_synthesize.mod[{l}]",
                                         gamma.shape, beta.shape, (n, c, r, r))
            if l > 0 and r > LAYER_RESOLUTIONS[l - 1]:
                x = ops.nearest_upsample(x, 2)
            x = self.convs[l](x)
            x = ops.instance_normalize(x)
            x = ops.add(ops.mul(x, ops.add(gamma, 1.0)), beta)
            x = ops.leaky_relu(x, SLOPE)
        return ops.tanh(self.to_rgb(x))

    def synthesize_from_layout(self, layout, z):
        return self.spade_synthesize(self.spade_modulation(layout), z)

    def descriptor(self):
        return {"kind": self.kind, "num_seg_classes": self.num_seg_classes,
                "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc):
        return cls(num_seg_classes=desc["num_seg_classes"], seed=desc.get("seed", 0))
