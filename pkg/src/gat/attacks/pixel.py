"""Pixel-space attacks: norm-bounded (pgd, ifgsm), flow-based (spatial),
and color-curve (recolor).

Budgets for pgd/ifgsm are quoted in pixel levels on the [0, 255] scale and
applied internally on the [-1, 1] image scale (1 level = 2/255).  All
attacks share the nontargeted success predicate of the latent attack:
maximize the loss of the true label, succeed on any misclassification.
"""

import dataclasses

import numpy as np

from .. import ops
from ..errors import ConfigError
from ..manifest import config_hash
from ..rng import stream
from ..tensor import Tensor, as_tensor, backward, no_grad

LEVEL = 2.0 / 255.0
KINDS = ("pgd", "ifgsm", "spatial", "recolor")
RECOLOR_KNOTS = 8
# knot spacing is 1/7; per-knot deviation strictly under half of it keeps
# every curve monotone
MAX_DEVIATION = 1.0 / (2 * (RECOLOR_KNOTS - 1)) - 1e-6


@dataclasses.dataclass(frozen=True)
class PixelAttackConfig:
    kind: str = "pgd"
    epsilon: float = 8.0          # pixel levels, pgd/ifgsm
    alpha: float = 2.0            # step, pixel levels
    iterations: int = 20
    flow_budget: float = 2.0      # pixels, spatial
    tau: float = 0.05             # flow smoothness weight, spatial
    deviation: float = 0.05       # recolor knot bound
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown pixel attack kind {self.kind!r}")
        if min(self.epsilon, self.alpha, self.flow_budget, self.tau,
               self.deviation) < 0:
            raise ConfigError("pixel attack bounds must be >= 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.kind == "recolor" and self.deviation > MAX_DEVIATION:
            raise ConfigError(
                f"recolor deviation {self.deviation} breaks monotonicity; "
                f"maximum is {MAX_DEVIATION:.4f}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


def _loss_grad(x_adv, labels, classifier):
    t = Tensor(x_adv, requires_grad=True)
    # summed CE keeps per-row gradients independent of batch size
    loss = ops.scale(ops.softmax_cross_entropy(classifier.logits(t), labels),
                     float(labels.shape[0]))
    return backward(loss, wrt=[t])[t].data


def pgd(x, labels, classifier, config):
    """Projected sign-gradient ascent in an L-inf ball; random start."""
    return _norm_bounded(x, labels, classifier, config, random_start=True)


def ifgsm(x, labels, classifier, config):
    """Iterative FGSM: the same loop from a zero start."""
    return _norm_bounded(x, labels, classifier, config, random_start=False)


def _norm_bounded(x, labels, classifier, config, random_start):
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.int64)
    eps = config.epsilon * LEVEL
    alpha = config.alpha * LEVEL
    if eps == 0.0:
        return x.copy()
    if random_start:
        g = stream(config.seed, "pgd-start")
        x_adv = x + g.uniform(-eps, eps, size=x.shape).astype(x.dtype)
        x_adv = np.clip(x_adv, -1.0, 1.0).astype(x.dtype)
    else:
        x_adv = x.copy()
    for _ in range(config.iterations):
        grad = _loss_grad(x_adv, labels, classifier)
        x_adv = x_adv + (alpha * np.sign(grad)).astype(x.dtype)
        x_adv = np.clip(x_adv, x - eps, x + eps)
        x_adv = np.clip(x_adv, -1.0, 1.0).astype(x.dtype)
    return x_adv


def _base_grid(n, h, w, dtype):
    ys, xs = np.meshgrid(np.linspace(-1.0, 1.0, h), np.linspace(-1.0, 1.0, w),
                         indexing="ij")
    grid = np.stack([xs, ys], axis=-1).astype(dtype)
    return np.broadcast_to(grid, (n, h, w, 2)).copy()


def _total_variation(flow):
    # smooth |.| so the subgradient is defined at zero flow
    dx = ops.softabs(ops.sub(ops.narrow(flow, 2, 1, flow.shape[2] - 1),
                             ops.narrow(flow, 2, 0, flow.shape[2] - 1)))
    dy = ops.softabs(ops.sub(ops.narrow(flow, 1, 1, flow.shape[1] - 1),
                             ops.narrow(flow, 1, 0, flow.shape[1] - 1)))
    return ops.add(ops.sum(dx), ops.sum(dy))


def spatial_attack(x, labels, classifier, config):
    """Adversarial warp: sign-ascent on a flow field, resampled bilinearly.

    The objective is the summed CE minus tau * total variation of the flow,
    so the warp stays locally coherent; flow components are clipped to the
    pixel budget each step.
    """
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.int64)
    n, _, h, w = x.shape
    if config.flow_budget == 0.0:
        return x.copy()
    budget = config.flow_budget * 2.0 / (w - 1)   # px -> normalized units
    step = budget / 5.0
    base = _base_grid(n, h, w, x.dtype)
    flow = np.zeros((n, h, w, 2), dtype=x.dtype)
    for _ in range(config.iterations):
        ft = Tensor(flow, requires_grad=True)
        warped = ops.bilinear_grid_sample(as_tensor(x), ops.add(as_tensor(base), ft))
        ce = ops.scale(ops.softmax_cross_entropy(classifier.logits(warped), labels),
                       float(n))
        obj = ops.sub(ce, ops.scale(_total_variation(ft), config.tau))
        grad = backward(obj, wrt=[ft])[ft].data
        flow = np.clip(flow + (step * np.sign(grad)).astype(x.dtype),
                       -budget, budget).astype(x.dtype)
    with no_grad():
        out = ops.bilinear_grid_sample(as_tensor(x),
                                       as_tensor(base + flow))
    return out.data


def _knot_weights(x01):
    """Hat-function weights of each knot at every pixel; (..., K) ndarray."""
    k = RECOLOR_KNOTS
    pos = np.clip(x01, 0.0, 1.0) * (k - 1)
    lo = np.clip(np.floor(pos), 0, k - 2).astype(np.int64)
    frac = (pos - lo).astype(x01.dtype)
    w = np.zeros(x01.shape + (k,), dtype=x01.dtype)
    np.put_along_axis(w, lo[..., None], (1.0 - frac)[..., None], axis=-1)
    np.put_along_axis(w, lo[..., None] + 1, frac[..., None], axis=-1)
    return w


def recolor_attack(x, labels, classifier, config):
    """Per-channel monotone intensity curves optimized by sign steps.

    Each channel's curve interpolates 8 knots k/7 + d_k with |d_k| bounded
    below half the knot spacing, which forces monotonicity.  The output is
    linear in the knot deviations, with fixed hat weights precomputed from
    the input image.
    """
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.int64)
    n, c, h, w = x.shape
    if config.deviation == 0.0:
        return x.copy()
    x01 = (x + 1.0) * 0.5
    weights = _knot_weights(x01)                      # (n, c, h, w, K)
    base = weights @ np.linspace(0.0, 1.0, RECOLOR_KNOTS).astype(x.dtype)
    dev = np.zeros((n, c, RECOLOR_KNOTS), dtype=x.dtype)
    step = config.deviation / 5.0
    wt = [as_tensor(np.ascontiguousarray(weights[..., k])) for k in range(RECOLOR_KNOTS)]
    for _ in range(config.iterations):
        dt = Tensor(dev, requires_grad=True)
        out01 = as_tensor(base)
        for k in range(RECOLOR_KNOTS):
            dk = ops.reshape(ops.narrow(ops.reshape(dt, (n * c, RECOLOR_KNOTS)),
                                        1, k, 1), (n, c, 1, 1))
            out01 = ops.add(out01, ops.mul(wt[k], dk))
        out = ops.sub(ops.scale(out01, 2.0), 1.0)
        loss = ops.scale(ops.softmax_cross_entropy(classifier.logits(out), labels),
                         float(n))
        grad = backward(loss, wrt=[dt])[dt].data
        dev = np.clip(dev + (step * np.sign(grad)).astype(x.dtype),
                      -config.deviation, config.deviation).astype(x.dtype)
    out01 = base + np.einsum("nchwk,nck->nchw", weights, dev)
    return np.clip(out01 * 2.0 - 1.0, -1.0, 1.0).astype(x.dtype)


_DISPATCH = {"pgd": pgd, "ifgsm": ifgsm, "spatial": spatial_attack,
             "recolor": recolor_attack}


def run_pixel_attack(x, labels, classifier, config):
    return _DISPATCH[config.kind](x, labels, classifier, config)
