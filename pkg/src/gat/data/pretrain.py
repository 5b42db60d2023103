"""Pretraining drivers: GAN generators, classifier, segmenter, layout generator.

Each driver enforces a quality gate and raises GateError with its training
curves attached when the gate is missed.  The classifier and segmenter paths
are literally the adversarial-training loops run at a clean:adversarial ratio
of 1:0, so a later defended run with the same seed shares every clean batch.
"""

import numpy as np

from .. import ops
from ..errors import GateError
from ..models.base import Module, Conv2d, Linear, SLOPE
from ..models.classifier import Classifier
from ..models.segmenter import Segmenter
from ..models.spade import SpadeGenerator, one_hot_layout, z_from_params
from ..models.style_generator import LATENT_DIM, StyleGenerator
from ..optim import Adam
from ..rng import stream
from ..tensor import as_tensor, backward, no_grad
from ..training import TrainConfig, adversarial_train, seg_adversarial_train

R1_GAMMA = 10.0
R1_PROBE = 1e-2  # finite-difference step for the penalty surrogate


class Discriminator(Module):
    """3-block conv real/fake critic used only during GAN pretraining."""

    kind = "discriminator"

    def __init__(self, seed=0, image_size=32):
        super().__init__()
        self.seed = seed
        rng = stream(seed, "init", "discriminator")
        self.b1 = self.child("b1", Conv2d(3, 24, 3, rng))
        self.b2 = self.child("b2", Conv2d(24, 48, 3, rng))
        self.b3 = self.child("b3", Conv2d(48, 96, 3, rng))
        self.head = self.child("head",
                               Linear(96 * (image_size // 8) ** 2, 1, rng))

    def logits(self, x):
        x = as_tensor(x)
        for blk in (self.b1, self.b2, self.b3):
            x = ops.avg_pool2d(ops.leaky_relu(blk(x), SLOPE), 2)
        n = x.shape[0]
        flat = ops.reshape(x, (n, int(np.prod(x.shape[1:]))))
        return self.head(flat)


def _r1_surrogate(disc, real):
    """Theta-differentiable stand-in for the R1 gradient penalty.

    The penalty gamma/2 * E||grad_x D||^2 needs second derivatives to train
    on; a tape without double backward gets the same parameter gradient from
    gamma * mean(c_i * (D(x_i + h u_i) - D(x_i - h u_i)) / 2h) where
    u_i = g_i / ||g_i|| and c_i = ||g_i|| are held constant.  Returns
    (surrogate Tensor, penalty value as float).
    """
    xt = as_tensor(np.array(real, copy=True), requires_grad=True)
    g = backward(ops.sum(disc.logits(xt)), wrt=[xt])[xt].data
    n = g.shape[0]
    norms = np.sqrt((g.reshape(n, -1) ** 2).sum(axis=1)) + 1e-12
    u = g / norms.reshape(n, 1, 1, 1)
    d_plus = disc.logits(real + R1_PROBE * u)
    d_minus = disc.logits(real - R1_PROBE * u)
    dirderiv = ops.scale(ops.sub(d_plus, d_minus), 1.0 / (2.0 * R1_PROBE))
    weights = norms.reshape(n, 1).astype(real.dtype)
    surrogate = ops.scale(ops.mean(ops.mul(dirderiv, weights)), R1_GAMMA)
    value = 0.5 * R1_GAMMA * float((norms ** 2).mean())
    return surrogate, value


def _disc_accuracy(disc, real, fake):
    with no_grad():
        dr = disc.logits(as_tensor(real)).data.ravel()
        df = disc.logits(as_tensor(fake)).data.ravel()
    return 0.5 * (float((dr > 0).mean()) + float((df <= 0).mean()))


def pretrain_generator(shape_class, dataset, classifier, steps=600,
                       batch_size=16, seed=0, holdout=32,
                       disc_gate=0.80, class_gate=0.90):
    """Fit a style generator to one class slice with a non-saturating GAN.

    Gates: the discriminator must not separate held-out real images from
    fresh fakes above `disc_gate`, and the frozen classifier must assign
    `shape_class` to at least `class_gate` of fresh samples.
    """
    rows = np.flatnonzero(dataset.labels == shape_class)
    if rows.size <= holdout:
        raise GateError(f"class {shape_class} slice too small: {rows.size}")
    split = stream(seed, "gan-split", shape_class).permutation(rows)
    held, pool = dataset.images[split[:holdout]], dataset.images[split[holdout:]]

    gen = StyleGenerator(seed=seed * 1000 + shape_class)
    disc = Discriminator(seed=seed * 1000 + shape_class + 500)
    opt_g = Adam(gen.parameters(), lr=2e-3, betas=(0.0, 0.99))
    opt_d = Adam(disc.parameters(), lr=2e-3, betas=(0.0, 0.99))

    def sample_fake(rng_tag, n, graph):
        g = stream(seed, rng_tag, shape_class)
        z = g.normal(0.0, 1.0, size=(n, LATENT_DIM)).astype(np.float32)
        units = [g.normal(0.0, 1.0, size=(n, 1, r, r)).astype(np.float32)
                 for r in gen.layer_resolutions]
        if graph:
            styles = gen.styles_from_w(gen.map_latent(as_tensor(z)))
            return gen.synthesize(styles, gen.scaled_noise(units))
        with no_grad():
            styles = gen.styles_from_w(gen.map_latent(as_tensor(z)))
            return gen.synthesize(styles, gen.scaled_noise(units)).data

    curves = {"loss_d": [], "loss_g": [], "r1": []}
    batch_rng = stream(seed, "gan-batches", shape_class)
    for step in range(steps):
        real = pool[batch_rng.choice(pool.shape[0], size=batch_size,
                                     replace=False)]
        fake = sample_fake(("gan-z-d", step), batch_size, graph=False)
        d_real = disc.logits(as_tensor(real))
        d_fake = disc.logits(as_tensor(fake))
        r1, r1_val = _r1_surrogate(disc, real)
        loss_d = ops.add(ops.add(ops.mean(ops.softplus(ops.neg(d_real))),
                                 ops.mean(ops.softplus(d_fake))), r1)
        opt_d.zero_grad()
        backward(loss_d)
        opt_d.step()

        fake_t = sample_fake(("gan-z-g", step), batch_size, graph=True)
        loss_g = ops.mean(ops.softplus(ops.neg(disc.logits(fake_t))))
        opt_g.zero_grad()
        backward(loss_g)
        opt_g.step()

        curves["loss_d"].append(float(loss_d.data))
        curves["loss_g"].append(float(loss_g.data))
        curves["r1"].append(r1_val)

    final_fake = sample_fake("gan-eval", max(holdout, 64), graph=False)
    d_acc = _disc_accuracy(disc, held, final_fake[:holdout])
    with no_grad():
        preds = classifier.predict(as_tensor(final_fake))
    class_rate = float((preds == shape_class).mean())
    curves["disc_holdout_accuracy"] = d_acc
    curves["class_consistency"] = class_rate
    if d_acc > disc_gate:
        raise GateError(
            f"discriminator separates held-out data: {d_acc:.3f} > {disc_gate}",
            curves=curves)
    if class_rate < class_gate:
        raise GateError(
            f"class consistency gate failed: {class_rate:.3f} < {class_gate}",
            curves=curves)
    return gen, curves


def pretrain_classifier(train, test=None, epochs=30, seed=0, lr=0.01,
                        momentum=0.9, batch_size=32, gate=0.95):
    """Supervised pretraining; GateError if held-out accuracy misses `gate`."""
    model = Classifier(num_classes=train.spec.num_classes,
                       image_size=train.spec.image_size, seed=seed)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, ratio="1:0",
                      lr=lr, momentum=momentum, seed=seed)
    run = adversarial_train(model, train, cfg, test_dataset=test)
    if run.final_clean_accuracy < gate:
        raise GateError(
            f"classifier accuracy gate failed: "
            f"{run.final_clean_accuracy:.3f} < {gate}",
            curves=run.summary())
    return model, run


def pretrain_segmenter(train, test=None, epochs=12, seed=0, lr=0.01,
                       momentum=0.9, batch_size=16, gate=0.90):
    """Pixelwise supervised pretraining; gate on held-out pixel accuracy."""
    model = Segmenter(num_seg_classes=train.num_seg_classes, seed=seed)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, ratio="1:0",
                      lr=lr, momentum=momentum, seed=seed)
    run = seg_adversarial_train(model, train, cfg, spade_gen=None,
                                test_dataset=test)
    if run.final_clean_accuracy < gate:
        raise GateError(
            f"segmenter pixel-accuracy gate failed: "
            f"{run.final_clean_accuracy:.3f} < {gate}",
            curves=run.summary())
    return model, run


def pretrain_spade(train, epochs=20, seed=0, lr=2e-3, batch_size=16):
    """Fit the layout-conditional generator by regression.

    Every dataset image comes with its label map and rendering parameters, so
    the map plus the parameter vector fully determine the target render; MSE
    against it sidesteps a second adversarial game.  Returns (model, curve).
    """
    model = SpadeGenerator(num_seg_classes=train.num_seg_classes, seed=seed)
    opt = Adam(model.parameters(), lr=lr)
    zs = z_from_params(train.params)
    n = train.images.shape[0]
    curve = []
    for epoch in range(epochs):
        order = stream(seed, "spade-epoch", epoch).permutation(n)
        total, count = 0.0, 0
        for at in range(0, n - batch_size + 1, batch_size):
            rows = order[at:at + batch_size]
            layout = one_hot_layout(train.label_maps[rows],
                                    train.num_seg_classes)
            pred = model.synthesize_from_layout(layout, zs[rows])
            diff = ops.sub(pred, train.images[rows])
            loss = ops.mean(ops.mul(diff, diff))
            opt.zero_grad()
            backward(loss)
            opt.step()
            total += float(loss.data)
            count += 1
        curve.append(total / count)
    return model, curve
