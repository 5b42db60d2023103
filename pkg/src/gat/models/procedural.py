"""Closed-form differentiable shape renderer with a style/noise interface.

A fixed (not learned) smooth function from per-layer style vectors and noise
maps to a 3x32x32 image of one colored shape on a textured background.  It
shares the layer schema of `StyleGenerator`, so latent attacks, inversion,
and training loops run against either one unchanged, and rendering doubles
as the dataset synthesizer.

Scene parameters are decoded from the style vectors through fixed random
unit directions, grouped the way style layers act in a style-based
generator: coarse layers (0-1) hold position and size, middle layers (2-4)
hold aspect and edge softness, fine layers (5-7) hold colors and texture
amplitude.  Each parameter is center + halfrange * tanh(<u, y_group>), and
styles are sampled at STYLE_SIGMA < 1 so data occupies the central part of
each tanh range.  The margin is deliberate: a sign-gradient push can drive
decoded parameters toward the tanh extremes, well outside anything the
sampled data covers, which is the off-manifold region where latent
adversarial examples live.  Noise maps add multi-resolution texture.
Everything is built from smooth ops, so gradients exist everywhere.
"""

import numpy as np

from .. import ops
from ..errors import ShapeMismatchError
from ..rng import stream
from ..tensor import Tensor, as_tensor
from .style_generator import (LAYER_CHANNELS, LAYER_RESOLUTIONS, NUM_LAYERS,
                              STYLE_DIMS)

SHAPE_NAMES = ("circle", "square", "triangle", "cross")
IMAGE_SIZE = 32

# layer index ranges (inclusive) per style group
GROUPS = {"coarse": (0, 1), "middle": (2, 4), "fine": (5, 7)}

# name -> (group, center, halfrange); hue centers are instance config.
# Halfranges run past what sigma-0.5 sampling visits: the tanh extremes
# (tiny blurred shapes, half-out-of-frame positions, strong squash) are
# reachable by attacks but almost never by data.
_PARAM_TABLE = (
    ("cx", "coarse", 0.0, 0.55),
    ("cy", "coarse", 0.0, 0.55),
    ("size", "coarse", 0.45, 0.28),
    ("log_aspect", "middle", 0.0, 0.5),
    ("softness", "middle", 0.09, 0.08),
    ("hue_shape", "fine", None, None),
    ("hue_bg", "fine", None, None),
    ("brightness", "fine", 0.0, 0.15),
    ("tex_amp", "fine", 0.055, 0.035),
)
PARAM_NAMES = tuple(name for name, _, _, _ in _PARAM_TABLE)

_TEX_WEIGHTS = (0.25, 0.25, 0.18, 0.18, 0.12, 0.12, 0.08, 0.08)
_BLOB_WEIGHTS = (0.6, 0.6, 0.45, 0.45, 0.0, 0.0, 0.0, 0.0)
_SMOOTH_EPS = 1e-3
STYLE_SIGMA = 0.5
_SUPPORT = 2  # style coordinates per layer backing each parameter


def _directions():
    """Fixed unit projection vectors, one per scene parameter, split per layer.

    Each parameter reads a dedicated _SUPPORT-coordinate slot in every layer
    of its group, so parameters stay independent and a sign step of size eps
    moves a parameter's pre-tanh value by at most eps * sqrt(slot size).
    Keeping that l1 norm small pins the attack's per-iteration reach to a
    fraction of the parameter's sampling spread, the regime where
    adversarial search is meaningful rather than a walk to the range limits.
    """
    within = {}
    dirs = {}
    for name, group, _, _ in _PARAM_TABLE:
        k = within.get(group, 0)
        within[group] = k + 1
        lo, hi = GROUPS[group]
        mag = 1.0 / np.sqrt(_SUPPORT * (hi - lo + 1))
        per = {}
        for l in range(lo, hi + 1):
            u = np.zeros((STYLE_DIMS[l], 1))
            u[_SUPPORT * k:_SUPPORT * (k + 1), 0] = mag
            per[l] = u
        dirs[name] = per
    return dirs


_DIRS = _directions()


class ProceduralGenerator:
    """One fixed renderer per shape class."""

    kind = "procedural_generator"
    num_layers = NUM_LAYERS
    layer_channels = LAYER_CHANNELS
    layer_resolutions = LAYER_RESOLUTIONS
    style_dims = STYLE_DIMS
    image_size = IMAGE_SIZE
    style_sigma = STYLE_SIGMA

    def __init__(self, shape_class, hue_center=0.25, hue_half=0.2, texture="smooth"):
        if not 0 <= shape_class < len(SHAPE_NAMES):
            raise ValueError(f"shape_class must be in [0, {len(SHAPE_NAMES)}), "
                             f"got {shape_class}")
        if texture not in ("smooth", "blobs"):
            raise ValueError(f"unknown texture family {texture!r}")
        self.shape_class = shape_class
        self.hue_center = float(hue_center)
        self.hue_half = float(hue_half)
        self.texture = texture
        lin = np.linspace(-1.0, 1.0, IMAGE_SIZE)
        self._gx = np.broadcast_to(lin[None, None, None, :],
                                   (1, 1, IMAGE_SIZE, IMAGE_SIZE)).copy()
        self._gy = np.broadcast_to(lin[None, None, :, None],
                                   (1, 1, IMAGE_SIZE, IMAGE_SIZE)).copy()

    # -- latent sampling ---------------------------------------------------

    def sample_styles(self, seed, n=1, dtype=None):
        out = []
        for l in range(NUM_LAYERS):
            g = stream(seed, "style", l)
            out.append(g.normal(0.0, STYLE_SIGMA, size=(n, STYLE_DIMS[l]))
                       .astype(dtype or np.float32))
        return out

    def sample_noise(self, seed, n=1, dtype=None):
        out = []
        for l, r in enumerate(LAYER_RESOLUTIONS):
            g = stream(seed, "noise", l)
            out.append(g.normal(0.0, 1.0, size=(n, 1, r, r)).astype(
                dtype or np.float32))
        return out

    def draw_styles(self, rng, n=1, dtype=np.float32):
        """Like sample_styles but from a caller-held Generator."""
        return [rng.normal(0.0, STYLE_SIGMA, size=(n, d)).astype(dtype)
                for d in STYLE_DIMS]

    def draw_noises(self, rng, n=1, dtype=np.float32):
        return [rng.normal(size=(n, 1, r, r)).astype(dtype)
                for r in LAYER_RESOLUTIONS]

    # -- parameter decoding ------------------------------------------------

    def _ranges(self, name, center, half):
        if name in ("hue_shape", "hue_bg"):
            return self.hue_center, self.hue_half
        return center, half

    def params_from_styles(self, styles):
        """Decode scene parameters; returns {name: Tensor (n, 1)}."""
        dtype = styles[0].dtype if isinstance(styles[0], Tensor) else None
        params = {}
        for name, group, center, half in _PARAM_TABLE:
            lo, hi = GROUPS[group]
            raw = None
            for l in range(lo, hi + 1):
                y = as_tensor(styles[l])
                if y.shape[1] != STYLE_DIMS[l]:
                    raise ShapeMismatchError(f"styles[{l}]", y.shape, (None, STYLE_DIMS[l]))
                u = _DIRS[name][l].astype(y.dtype)
                term = ops.matmul(y, u)
                raw = term if raw is None else ops.add(raw, term)
            center, half = self._ranges(name, center, half)
            params[name] = ops.add(ops.scale(ops.tanh(raw), half), center)
        return params

    # -- rendering ---------------------------------------------------------

    def _distance(self, u, v):
        """Smooth signed distance of the class shape in normalized coords."""
        eps = _SMOOTH_EPS
        if self.shape_class == 0:  # circle
            return ops.sub(ops.sqrt(ops.add(ops.add(ops.mul(u, u), ops.mul(v, v)), eps)), 1.0)
        if self.shape_class == 1:  # square
            return ops.sub(ops.softmax2(ops.softabs(u, eps), ops.softabs(v, eps), eps), 1.0)
        if self.shape_class == 2:  # triangle (flat top, apex at the bottom)
            e1 = ops.sub(ops.scale(u, 0.866), ops.scale(v, 0.5))
            e2 = ops.sub(ops.scale(u, -0.866), ops.scale(v, 0.5))
            return ops.sub(ops.softmax2(ops.softmax2(e1, e2, eps), v, eps), 0.5)
        # cross: union of two soft bars
        au, av = ops.softabs(u, eps), ops.softabs(v, eps)
        bar1 = ops.softmax2(ops.sub(au, 1.0), ops.sub(av, 0.35), eps)
        bar2 = ops.softmax2(ops.sub(av, 1.0), ops.sub(au, 0.35), eps)
        return ops.softmin2(bar1, bar2, eps)

    def _palette(self, h):
        """Hue in (0,1) -> three bump activations, each (n,1)."""
        def bump(center, width=0.22):
            d = ops.scale(ops.sub(h, center), 1.0 / width)
            return ops.exp(ops.scale(ops.mul(d, d), -1.0))

        r = ops.add(bump(0.0), bump(1.0))
        g = bump(1.0 / 3.0)
        b = bump(2.0 / 3.0)
        return r, g, b

    def occupancy(self, params):
        """Soft shape mask in [0,1], shape (n, 1, 32, 32)."""
        n = params["cx"].shape[0]

        def spatial(p):
            return ops.reshape(p, (n, 1, 1, 1))

        aspect = ops.exp(spatial(params["log_aspect"]))
        size = spatial(params["size"])
        half_w = ops.mul(size, aspect)
        half_h = ops.div(size, aspect)
        gx = as_tensor(self._gx.astype(params["cx"].dtype))
        gy = as_tensor(self._gy.astype(params["cx"].dtype))
        u = ops.div(ops.sub(gx, spatial(params["cx"])), half_w)
        v = ops.div(ops.sub(gy, spatial(params["cy"])), half_h)
        d = self._distance(u, v)
        return ops.sigmoid(ops.div(ops.neg(d), spatial(params["softness"])))

    def texture_field(self, noises, dtype):
        weights = _TEX_WEIGHTS if self.texture == "smooth" else _BLOB_WEIGHTS
        total = None
        for l, w in enumerate(weights):
            if w == 0.0:
                continue
            eta = as_tensor(noises[l])
            r = LAYER_RESOLUTIONS[l]
            if eta.shape[1:] != (1, r, r):
                raise ShapeMismatchError(f"noises[{l}]", eta.shape, (None, 1, r, r))
            up = ops.nearest_upsample(eta, IMAGE_SIZE // r)
            term = ops.scale(up, w)
            total = term if total is None else ops.add(total, term)
        if self.texture == "blobs":
            total = ops.tanh(ops.scale(total, 3.0))
        return total

    def _compose(self, params, occ, noises):
        n = occ.shape[0]

        def col(p):
            return ops.reshape(p, (n, 1, 1, 1))

        tex = self.texture_field(noises, occ.dtype)
        rs, gs, bs = self._palette(params["hue_shape"])
        rb, gb, bb = self._palette(params["hue_bg"])
        bright = params["brightness"]
        chans = []
        for ps, pb in ((rs, rb), (gs, gb), (bs, bb)):
            shape_c = col(ops.add(ops.add(ops.scale(ps, 0.6), bright), 0.2))
            bg_c = col(ops.add(ops.add(ops.scale(pb, 0.35), bright), -0.65))
            base = ops.add(ops.mul(occ, shape_c),
                           ops.mul(ops.sub(1.0, occ), bg_c))
            chans.append(ops.add(base, ops.mul(col(params["tex_amp"]), tex)))
        img = ops.concat(chans, axis=1)
        return ops.tanh(ops.scale(img, 1.1))

    def synthesize(self, styles, noises):
        """(styles, noises) -> image Tensor (n, 3, 32, 32) in [-1, 1]."""
        if len(styles) != NUM_LAYERS or len(noises) != NUM_LAYERS:
            raise ShapeMismatchError("synthesize", (len(styles), len(noises)),
                                     (NUM_LAYERS, NUM_LAYERS))
        params = self.params_from_styles(styles)
        return self._compose(params, self.occupancy(params), noises)

    def render_with_occupancy(self, styles, noises):
        """Dataset path: image plus the hard shape mask (occ > 0.5)."""
        params = self.params_from_styles(styles)
        occ = self.occupancy(params)
        img = self._compose(params, occ, noises)
        return img, occ.data[:, 0] > 0.5, params

    def generate(self, seed, n=1, dtype=None):
        styles = [as_tensor(s) for s in self.sample_styles(seed, n, dtype)]
        noises = [as_tensor(m) for m in self.sample_noise(seed, n, dtype)]
        return styles, noises, self.synthesize(styles, noises)


def generator_family(num_classes=4, hue_center=0.25, hue_half=0.2, texture="smooth"):
    """One renderer per class, sharing nuisance distributions."""
    return [ProceduralGenerator(c, hue_center, hue_half, texture)
            for c in range(num_classes)]
