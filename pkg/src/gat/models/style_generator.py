"""Miniature style-based generator.

A mapping network turns a latent z into an intermediate w; per-layer affine
heads turn w into style vectors y_l (AdaIN scale and bias, length 2*C_l);
per-layer scalars B_l scale single-channel noise maps.  Synthesis starts
from a learned 4x4 constant and runs 8 conv layers at resolutions
4,4,8,8,16,16,32,32, each followed by noise addition, leaky_relu, and AdaIN,
ending in a 1x1 conv + tanh to a 3x32x32 image in [-1,1].
"""

import numpy as np

from .. import ops
from ..errors import ShapeMismatchError
from ..rng import stream
from ..tensor import no_grad
from .base import Module, Conv2d, Linear, SLOPE

LAYER_CHANNELS = (48, 48, 32, 32, 24, 24, 16, 16)
LAYER_RESOLUTIONS = (4, 4, 8, 8, 16, 16, 32, 32)
NUM_LAYERS = 8
LATENT_DIM = 64

# style vector for layer l holds C_l scales then C_l biases
STYLE_DIMS = tuple(2 * c for c in LAYER_CHANNELS)


class StyleGenerator(Module):
    kind = "style_generator"

    # shared generator interface (the procedural renderer mirrors these)
    num_layers = NUM_LAYERS
    layer_channels = LAYER_CHANNELS
    layer_resolutions = LAYER_RESOLUTIONS
    style_dims = STYLE_DIMS
    image_size = 32

    def __init__(self, seed=0, noise_scale_init=0.1):
        super().__init__()
        self.seed = seed
        rng = stream(seed, "init", "style_generator")
        self.m1 = self.child("m1", Linear(LATENT_DIM, LATENT_DIM, rng))
        self.m2 = self.child("m2", Linear(LATENT_DIM, LATENT_DIM, rng))
        self.m3 = self.child("m3", Linear(LATENT_DIM, LATENT_DIM, rng))
        self.const = self.param("const", rng.normal(0.0, 1.0, size=(1, 64, 4, 4)))
        self.convs = []
        self.affines = []
        self.noise_scales = []
        cin = 64
        for l, c in enumerate(LAYER_CHANNELS):
            self.convs.append(self.child(f"conv{l}", Conv2d(cin, c, 3, rng)))
            # scale half of the style bias starts at 1 so AdaIN opens near identity
            bias0 = np.concatenate([np.ones(c), np.zeros(c)])
            aff = Linear(LATENT_DIM, 2 * c, rng, bias=bias0)
            aff.w.data *= 0.1
            self.affines.append(self.child(f"affine{l}", aff))
            self.noise_scales.append(self.param(f"noise_scale{l}",
                                                np.asarray(noise_scale_init)))
            cin = c
        self.to_rgb = self.child("to_rgb", Conv2d(LAYER_CHANNELS[-1], 3, 1, rng, pad=0))

    # -- latent plumbing ---------------------------------------------------

    def map_latent(self, z):
        """z: (n, 64) -> w: (n, 64)."""
        if z.shape[-1] != LATENT_DIM:
            raise ShapeMismatchError("map_latent", z.shape, (LATENT_DIM,))
        h = ops.leaky_relu(self.m1(z), SLOPE)
        h = ops.leaky_relu(self.m2(h), SLOPE)
        return ops.leaky_relu(self.m3(h), SLOPE)

    def styles_from_w(self, w):
        """w: (n, 64) -> list of L style Tensors (n, 2*C_l)."""
        return [aff(w) for aff in self.affines]

    def sample_noise(self, seed, n=1):
        """L single-channel maps, unit Gaussian scaled by B_l (ndarrays)."""
        maps = []
        for l, r in enumerate(LAYER_RESOLUTIONS):
            g = stream(seed, "noise", l)
            u = g.normal(0.0, 1.0, size=(n, 1, r, r))
            maps.append((u * self.noise_scales[l].data).astype(self.const.data.dtype))
        return maps

    def scaled_noise(self, units):
        """Unit maps -> graph Tensors u * B_l, so training reaches B_l."""
        return [ops.mul(ops.as_tensor(u), self.noise_scales[l])
                for l, u in enumerate(units)]

    def draw_styles(self, rng, n=1, dtype=np.float32):
        """Mapped style rows for a caller-held Generator (plain arrays)."""
        z = rng.normal(0.0, 1.0, size=(n, LATENT_DIM)).astype(dtype)
        with no_grad():
            w = self.map_latent(ops.as_tensor(z))
            return [aff(w).data.astype(dtype) for aff in self.affines]

    def draw_noises(self, rng, n=1, dtype=np.float32):
        return [(rng.normal(size=(n, 1, r, r)) * self.noise_scales[l].data)
                .astype(dtype) for l, r in enumerate(LAYER_RESOLUTIONS)]

    # -- synthesis ---------------------------------------------------------

    def synthesize(self, styles, noises):
        """styles: L Tensors (n, 2*C_l); noises: L Tensors/arrays (n, 1, r, r)."""
        if len(styles) != NUM_LAYERS or len(noises) != NUM_LAYERS:
            raise ShapeMismatchError("synthesize", (len(styles), len(noises)),
                                     (NUM_LAYERS, NUM_LAYERS))
        n = styles[0].shape[0]
        x = ops.add(self.const, np.zeros((n, 1, 1, 1), dtype=self.const.data.dtype))
        for l in range(NUM_LAYERS):
            c, r = LAYER_CHANNELS[l], LAYER_RESOLUTIONS[l]
            if styles[l].shape != (n, 2 * c):
                raise ShapeMismatchError(f"synthesize.style[{l}]", styles[l].shape, (n, 2 * c))
            eta = ops.as_tensor(noises[l])
            if eta.shape != (n, 1, r, r):
                raise ShapeMismatchError(f"synthesize.noise[{l}]", eta.shape, (n, 1, r, r))
            if l > 0 and r > LAYER_RESOLUTIONS[l - 1]:
                x = ops.nearest_upsample(x, 2)
            x = self.convs[l](x)
            x = ops.leaky_relu(ops.add(x, eta), SLOPE)
            scl = ops.narrow(styles[l], 1, 0, c)
            bia = ops.narrow(styles[l], 1, c, c)
            x = ops.adain(x, scl, bia)
        return ops.tanh(self.to_rgb(x))

    def generate(self, seed, n=1):
        """Convenience: z, noise from seed -> (styles, noises, image Tensor)."""
        g = stream(seed, "latent")
        z = ops.as_tensor(g.normal(0.0, 1.0, size=(n, LATENT_DIM)).astype(
            self.const.data.dtype))
        styles = self.styles_from_w(self.map_latent(z))
        noises = [ops.as_tensor(m) for m in self.sample_noise(seed, n)]
        return styles, noises, self.synthesize(styles, noises)

    def descriptor(self):
        return {"kind": self.kind, "seed": self.seed}

    @classmethod
    def from_descriptor(cls, desc):
        return cls(seed=desc.get("seed", 0))
