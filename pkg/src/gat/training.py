"""Adversarial training loops.

The main loop mixes clean dataset batches with adversarial halves produced
on-the-fly against the current model state.  For the latent ("gat") kind the
adversarial half comes from sign-gradient attacks on generator latents,
keeping only samples that fool the model within the iteration threshold T;
the layer-group schedule rotates over consecutive pairs, alternating style
and noise variables per adversarial batch.  Pixel-space kinds (pgd, spatial,
recolor, ifgsm-capped) plug into the same loop as baseline defenses.  A
clean:adversarial ratio of "1:0" reduces the loop to standard supervised
training, which is exactly how the classifier and segmenter are pretrained.
"""

import dataclasses

import numpy as np

from . import ops
from .attacks import latent, pixel, seg
from .errors import ConfigError, GateError
from .manifest import config_hash
from .models.spade import z_from_params
from .optim import SGD
from .rng import stream
from .tensor import as_tensor, backward

PAIR_GROUPS = (latent.LayerGroup(0, 1), latent.LayerGroup(2, 3),
               latent.LayerGroup(4, 5), latent.LayerGroup(6, 7))

# Default group cycles per variable set.  Style attacks restricted to the
# fine layer pairs cannot flip labels here at any step size (the classifier
# normalizes away brightness and is trained hue-invariant), so style batches
# alternate the geometry-bearing coarse pair with a full-range pass, and
# noise batches rotate over every resolution pair plus a full-range pass.
# Training step sizes are larger than the eval-attack defaults so that the
# T-iteration training attack covers at least the total per-coordinate reach
# of the 50-iteration evaluation attack; hardening against the short attack
# then transfers to the long one.
STYLE_GROUP_CYCLE = (PAIR_GROUPS[0], latent.ALL_LAYERS)
NOISE_GROUP_CYCLE = PAIR_GROUPS + (latent.ALL_LAYERS,)

ATTACK_KINDS = ("gat", "pgd", "spatial", "recolor", "ifgsm-capped")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    ratio: str = "1:1"             # clean:adversarial parts
    threshold: int = 10            # keep a sample iff fooled within T iterations
    attack: str = "gat"
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    epsilon: float = 0.04          # latent style step while training
    delta: float = 0.4             # latent noise step while training
    pixel_epsilon: float = 4.0     # pixel levels, baseline kinds
    pixel_alpha: float = 1.0
    pixel_iterations: int = 7
    iters_cap: int = 2             # ifgsm-capped budget (2 or 5)
    flow_budget: float = 2.0
    tau: float = 0.05
    deviation: float = 0.05
    retry_factor: int = 5
    min_acceptance: float = 0.01
    acceptance_window: int = 16    # adversarial batches in the abort window

    def __post_init__(self):
        if self.threshold < 1:
            raise ConfigError("threshold must be >= 1")
        if self.attack not in ATTACK_KINDS:
            raise ConfigError(f"unknown training attack {self.attack!r}")
        self.parts()

    def parts(self):
        try:
            a, b = (int(p) for p in self.ratio.split(":"))
        except ValueError as e:
            raise ConfigError(f"cannot parse ratio {self.ratio!r}, want a:b") from e
        if a < 1 or b < 0:
            raise ConfigError("ratio needs clean part >= 1 and adversarial part >= 0")
        return a, b

    def to_dict(self):
        return dataclasses.asdict(self)

    def hash(self):
        return config_hash(self.to_dict())


@dataclasses.dataclass
class TrainRun:
    config: TrainConfig
    clean_accuracy: list
    adv_accuracy: list
    acceptance_rate: list
    final_clean_accuracy: float
    final_adv_accuracy: float | None
    checkpoint_path: str | None = None

    def summary(self):
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.hash(),
            "clean_accuracy": [round(v, 6) for v in self.clean_accuracy],
            "adv_accuracy": [None if v is None else round(v, 6)
                             for v in self.adv_accuracy],
            "acceptance_rate": [None if v is None else round(v, 6)
                                for v in self.acceptance_rate],
            "final_clean_accuracy": round(self.final_clean_accuracy, 6),
            "final_adv_accuracy": (None if self.final_adv_accuracy is None
                                   else round(self.final_adv_accuracy, 6)),
            "checkpoint_path": self.checkpoint_path,
        }


def _clean_accuracy(model, images, labels, batch=128):
    hits = 0
    for at in range(0, images.shape[0], batch):
        preds = model.predict(as_tensor(images[at:at + batch]))
        hits += int((preds == labels[at:at + batch]).sum())
    return hits / images.shape[0]


def _schedule(batch_index):
    """Adversarial-batch schedule: alternate style/noise, rotate pair groups."""
    variables = "style" if batch_index % 2 == 0 else "noise"
    cycle = STYLE_GROUP_CYCLE if variables == "style" else NOISE_GROUP_CYCLE
    group = cycle[(batch_index // 2) % len(cycle)]
    return variables, group


def generate_gat_batch(model, generators, config, n, rng, batch_index):
    """Adversarial samples that fool the current model within T iterations.

    Draws (class, latents), attacks with the scheduled variable set and layer
    group, keeps fooled samples labeled with their generator's class, and
    resamples rejects up to retry_factor * n candidates.  Returns
    (images, labels, acceptance_rate); the batch may come back short when
    the model resists, which the training loop tolerates (the sustained
    acceptance-collapse abort lives there, over a window of batches).
    """
    variables, group = _schedule(batch_index)
    attack_cfg = latent.AttackConfig(
        mode="nontargeted", variables=variables, epsilon=config.epsilon,
        delta=config.delta, max_iters=config.threshold,
        style_layers=group if variables in ("style", "both") else latent.ALL_LAYERS,
        noise_layers=group if variables in ("noise", "both") else latent.ALL_LAYERS)
    kept_images, kept_labels = [], []
    tried = 0
    kept = 0
    cap = config.retry_factor * n
    num_classes = len(generators)
    while kept < n and tried < cap:
        m = min(n, cap - tried)
        classes = rng.integers(0, num_classes, size=m)
        for c in range(num_classes):
            rows = int((classes == c).sum())
            if rows == 0:
                continue
            gen = generators[c]
            state = latent.LatentState(gen.draw_styles(rng, rows),
                                       gen.draw_noises(rng, rows))
            outs = latent.attack_states(state, [c] * rows, attack_cfg, model, gen)
            for o in outs:
                if o.fooled and kept < n:
                    kept_images.append(o.image)
                    kept_labels.append(c)
                    kept += 1
        tried += m
    acceptance = kept / tried if tried else 0.0
    if kept == 0:
        return (np.zeros((0, 3, 32, 32), dtype=np.float32),
                np.zeros(0, dtype=np.int64), acceptance)
    return np.stack(kept_images), np.asarray(kept_labels, dtype=np.int64), acceptance


def _pixel_attack_config(config, step_seed):
    kind = "ifgsm" if config.attack == "ifgsm-capped" else config.attack
    iters = config.iters_cap if config.attack == "ifgsm-capped" \
        else config.pixel_iterations
    return pixel.PixelAttackConfig(
        kind=kind, epsilon=config.pixel_epsilon, alpha=config.pixel_alpha,
        iterations=iters, flow_budget=config.flow_budget, tau=config.tau,
        deviation=config.deviation, seed=step_seed)


def _adv_probe(model, generators, config, epoch):
    """Post-epoch hardening probe: fresh latent attack, T-iteration budget."""
    rng = stream(config.seed, "probe", epoch)
    images, labels, _ = generate_gat_batch_unfiltered(
        model, generators, config, 32, rng, batch_index=epoch)
    if images.shape[0] == 0:
        return None
    return _clean_accuracy(model, images, labels)


def generate_gat_batch_unfiltered(model, generators, config, n, rng, batch_index):
    """Attack n fresh samples without the fooled-within-T filter (all results
    kept); used for measurement, not training."""
    variables, group = _schedule(batch_index)
    attack_cfg = latent.AttackConfig(
        mode="nontargeted", variables=variables, epsilon=config.epsilon,
        delta=config.delta, max_iters=config.threshold,
        style_layers=group if variables in ("style", "both") else latent.ALL_LAYERS,
        noise_layers=group if variables in ("noise", "both") else latent.ALL_LAYERS)
    num_classes = len(generators)
    classes = rng.integers(0, num_classes, size=n)
    images, labels = [], []
    for c in range(num_classes):
        rows = int((classes == c).sum())
        if rows == 0:
            continue
        gen = generators[c]
        outs = latent.attack_states(
            latent.LatentState(gen.draw_styles(rng, rows),
                               gen.draw_noises(rng, rows)),
            [c] * rows, attack_cfg, model, gen)
        for o in outs:
            images.append(o.image)
            labels.append(c)
    return np.stack(images), np.asarray(labels, dtype=np.int64), 1.0


def adversarial_train(model, dataset, config, generators=None, test_dataset=None):
    """Train `model` in place; returns a TrainRun.

    With a zero adversarial ratio part this is plain supervised training and
    never touches the generators.  Otherwise each step appends an
    adversarial half produced against the current parameters.
    """
    a, b = config.parts()
    n_adv = config.batch_size * b // (a + b)
    n_clean = config.batch_size - n_adv
    if n_adv > 0 and config.attack == "gat" and not generators:
        raise ConfigError("latent adversarial training needs per-class generators")

    opt = SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    images, labels = dataset.images, dataset.labels
    eval_images = test_dataset.images if test_dataset is not None else images
    eval_labels = test_dataset.labels if test_dataset is not None else labels

    clean_curve, adv_curve, acc_curve = [], [], []
    batch_index = 0
    recent = []
    for epoch in range(config.epochs):
        order = stream(config.seed, "epoch", epoch).permutation(images.shape[0])
        acceptances = []
        for step in range(images.shape[0] // n_clean):
            rows = order[step * n_clean:(step + 1) * n_clean]
            xb, yb = images[rows], labels[rows]
            if n_adv > 0:
                if config.attack == "gat":
                    rng = stream(config.seed, "adv", epoch, step)
                    ax, ay, rate = generate_gat_batch(
                        model, generators, config, n_adv, rng, batch_index)
                    recent = (recent + [rate])[-config.acceptance_window:]
                    if (len(recent) == config.acceptance_window
                            and float(np.mean(recent)) < config.min_acceptance):
                        raise GateError(
                            "adversarial sample acceptance collapsed: mean "
                            f"{float(np.mean(recent)):.4f} over the last "
                            f"{config.acceptance_window} batches",
                            curves={"recent_acceptance": list(recent),
                                    "epoch": epoch, "step": step})
                else:
                    arows = order[(step * n_clean + n_clean) % images.shape[0]:][:n_adv]
                    if arows.size < n_adv:
                        arows = order[:n_adv]
                    pcfg = _pixel_attack_config(
                        config, step_seed=config.seed * 100003 + epoch * 1009 + step)
                    ax = pixel.run_pixel_attack(images[arows], labels[arows],
                                                model, pcfg)
                    ay, rate = labels[arows], 1.0
                batch_index += 1
                acceptances.append(rate)
                xb = np.concatenate([xb, ax]) if ax.shape[0] else xb
                yb = np.concatenate([yb, ay]) if ax.shape[0] else yb
            loss = ops.softmax_cross_entropy(model.logits(as_tensor(xb)), yb)
            opt.zero_grad()
            backward(loss)
            opt.step()
        clean_curve.append(_clean_accuracy(model, eval_images, eval_labels))
        acc_curve.append(float(np.mean(acceptances)) if acceptances else None)
        if n_adv > 0 and config.attack == "gat":
            adv_curve.append(_adv_probe(model, generators, config, epoch))
        else:
            adv_curve.append(None)
    return TrainRun(config, clean_curve, adv_curve, acc_curve,
                    final_clean_accuracy=clean_curve[-1],
                    final_adv_accuracy=adv_curve[-1])


def baseline_adv_train(model, dataset, attack_kind, config, test_dataset=None):
    """The same loop with a pixel-space attack producing the adversarial half."""
    if attack_kind not in ("pgd", "spatial", "recolor", "ifgsm-capped"):
        raise ConfigError(f"unknown baseline attack {attack_kind!r}")
    config = dataclasses.replace(config, attack=attack_kind)
    return adversarial_train(model, dataset, config, test_dataset=test_dataset)


def seg_adversarial_train(segmenter, dataset, config, spade_gen,
                          test_dataset=None):
    """Harden the segmenter with modulation-attack trajectories.

    The adversarial pool for each starting layout is the first T attacked
    renders (iterations 1..T); every step mixes clean image/map pairs with
    one full trajectory.
    """
    a, b = config.parts()
    opt = SGD(segmenter.parameters(), lr=config.lr, momentum=config.momentum)
    images, maps = dataset.images, dataset.label_maps
    zs = z_from_params(dataset.params)
    eval_images = test_dataset.images if test_dataset is not None else images
    eval_maps = test_dataset.label_maps if test_dataset is not None else maps
    num_seg = dataset.num_seg_classes

    attack_cfg = seg.SegAttackConfig(step=0.001, iterations=config.threshold,
                                     variables="both", record_every=1)
    from .models.spade import one_hot_layout

    def eval_acc():
        hits, total = 0, 0
        for at in range(0, eval_images.shape[0], 128):
            pred = segmenter.predict(as_tensor(eval_images[at:at + 128]))
            hits += int((pred == eval_maps[at:at + 128]).sum())
            total += pred.size
        return hits / total

    clean_curve, adv_curve = [], []
    n_clean = max(1, config.batch_size // 2) if b > 0 else config.batch_size
    for epoch in range(config.epochs):
        order = stream(config.seed, "epoch", epoch).permutation(images.shape[0])
        for step in range(images.shape[0] // n_clean):
            rows = order[step * n_clean:(step + 1) * n_clean]
            xb, yb = images[rows], maps[rows]
            if b > 0:
                lay_row = order[(step + epoch) % images.shape[0]]
                layout = one_hot_layout(maps[lay_row:lay_row + 1], num_seg)
                traj = seg.run_seg_attack(layout, maps[lay_row:lay_row + 1],
                                          zs[lay_row:lay_row + 1], attack_cfg,
                                          segmenter, spade_gen)
                adv_imgs = np.concatenate([t[1] for t in traj[1:]])
                adv_maps = np.concatenate([maps[lay_row:lay_row + 1]] *
                                          (len(traj) - 1))
                xb = np.concatenate([xb, adv_imgs])
                yb = np.concatenate([yb, adv_maps])
            loss = ops.pixelwise_softmax_cross_entropy(
                segmenter.logits(as_tensor(xb)), yb)
            opt.zero_grad()
            backward(loss)
            opt.step()
        clean_curve.append(eval_acc())
        adv_curve.append(None)
    return TrainRun(config, clean_curve, adv_curve, [None] * config.epochs,
                    final_clean_accuracy=clean_curve[-1],
                    final_adv_accuracy=None)
