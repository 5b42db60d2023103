"""Unrestricted segmentation attack through modulation parameters.

The conditional generator's gamma/beta maps are initialized from the layout
and then pushed by sign-gradient ascent on the segmenter's per-pixel loss
against that same layout.  The latent z and the layout are never modified;
only the selected modulation set moves.
"""

import dataclasses

import numpy as np

from .. import ops
from ..errors import AttackError, ConfigError, NonFiniteError
from ..manifest import config_hash
from ..tensor import Tensor, as_tensor, backward, no_grad

NUM_LAYERS = 8


@dataclasses.dataclass(frozen=True)
class SegAttackConfig:
    step: float = 0.001
    iterations: int = 10
    variables: str = "both"        # gamma | beta | both
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.step < 0:
            raise ConfigError("step must be >= 0")
        if self.iterations < 1 or self.record_every < 1:
            raise ConfigError("iterations and record_every must be >= 1")
        if self.variables not in ("gamma", "beta", "both"):
            raise ConfigError(f"unknown variable set {self.variables!r}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


def pixel_accuracy(pred_map, gt_map):
    """Fraction of pixels whose predicted label matches."""
    pred_map = np.asarray(pred_map)
    gt_map = np.asarray(gt_map)
    if pred_map.shape != gt_map.shape:
        raise ConfigError(f"label map shapes differ: {pred_map.shape} vs {gt_map.shape}")
    return float((pred_map == gt_map).mean())


def seg_attack_step(gammas, betas, labels, z, segmenter, spade_gen, config, it=1):
    """One ascent step; returns updated (gammas, betas) ndarray lists."""
    gammas = [g.copy() for g in gammas]
    betas = [b.copy() for b in betas]
    g_vars, b_vars = {}, {}
    mods = []
    for l in range(NUM_LAYERS):
        if config.variables in ("gamma", "both"):
            gt = Tensor(gammas[l], requires_grad=True)
            g_vars[l] = gt
        else:
            gt = as_tensor(gammas[l])
        if config.variables in ("beta", "both"):
            bt = Tensor(betas[l], requires_grad=True)
            b_vars[l] = bt
        else:
            bt = as_tensor(betas[l])
        mods.append((gt, bt))
    img = spade_gen.spade_synthesize(mods, z)
    loss = ops.pixelwise_softmax_cross_entropy(segmenter.logits(img), labels)
    wrt = list(g_vars.values()) + list(b_vars.values())
    try:
        grads = backward(loss, wrt=wrt)
    except NonFiniteError as e:
        raise AttackError(f"non-finite gradient at seg-attack iteration {it}") from e
    for l, t in g_vars.items():
        gammas[l] = gammas[l] + config.step * np.sign(grads[t].data)
    for l, t in b_vars.items():
        betas[l] = betas[l] + config.step * np.sign(grads[t].data)
    return gammas, betas


def run_seg_attack(layout_onehot, labels, z, config, segmenter, spade_gen):
    """Attack a batch of layouts; returns the trajectory of recorded steps.

    Each trajectory entry is (iteration, images, predicted maps, per-sample
    pixel accuracies).  Iteration 0 is the unattacked render.
    """
    labels = np.asarray(labels, dtype=np.int64)
    with no_grad():
        mods0 = spade_gen.spade_modulation(as_tensor(layout_onehot))
    gammas = [m[0].data.copy() for m in mods0]
    betas = [m[1].data.copy() for m in mods0]

    def snapshot(it):
        with no_grad():
            mods = [(as_tensor(g), as_tensor(b)) for g, b in zip(gammas, betas)]
            img = spade_gen.spade_synthesize(mods, z)
        pred = segmenter.predict(img)
        accs = np.array([pixel_accuracy(pred[i], labels[i])
                         for i in range(labels.shape[0])])
        return (it, img.data.copy(), pred, accs)

    trajectory = [snapshot(0)]
    for it in range(1, config.iterations + 1):
        gammas, betas = seg_attack_step(gammas, betas, labels, z, segmenter,
                                        spade_gen, config, it)
        if it % config.record_every == 0 or it == config.iterations:
            trajectory.append(snapshot(it))
    return trajectory


def trajectory_summary(trajectory):
    """Mean pixel accuracy per recorded iteration."""
    return [{"iteration": it, "pixel_accuracy": float(accs.mean())}
            for it, _, _, accs in trajectory]
