"""Iterative sign-gradient attacks on style and noise variables.

Both modes descend the classification loss toward a target class:

    y   <-  y - eps   * sign(dJ(F(g(y, eta)), t) / dy)      (in-group layers)
    eta <-  eta - delta * sign(dJ/deta)                     (in-group layers)

For the nontargeted mode the target t is the least-likely class of the
*initial* image (computed once and frozen); success is any misclassification.
For the targeted mode t is the configured class; success is prediction == t.
Out-of-group layers and the unselected variable set are never touched.
"""

import dataclasses
import json

import numpy as np

from .. import ops
from ..errors import AttackError, ConfigError, NonFiniteError
from ..manifest import canonical_json, config_hash
from ..rng import stream
from ..tensor import Tensor, as_tensor, backward, no_grad

NUM_LAYERS = 8


@dataclasses.dataclass(frozen=True)
class LayerGroup:
    """Contiguous range of layer indices, inclusive on both ends."""
    lo: int
    hi: int

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi < NUM_LAYERS):
            raise ConfigError(f"layer group [{self.lo}, {self.hi}] out of range")

    def __contains__(self, layer):
        return self.lo <= layer <= self.hi

    @classmethod
    def parse(cls, text):
        """'lo:hi' -> LayerGroup."""
        try:
            lo, hi = text.split(":")
            return cls(int(lo), int(hi))
        except ValueError as e:
            raise ConfigError(f"cannot parse layer group {text!r}, want lo:hi") from e


ALL_LAYERS = LayerGroup(0, NUM_LAYERS - 1)


@dataclasses.dataclass(frozen=True)
class AttackConfig:
    mode: str = "nontargeted"          # nontargeted | targeted
    target: int | None = None          # required for targeted
    variables: str = "style"           # style | noise | both
    epsilon: float = 0.004
    delta: float = 0.2
    max_iters: int = 50
    style_layers: LayerGroup = ALL_LAYERS
    noise_layers: LayerGroup = ALL_LAYERS
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("nontargeted", "targeted"):
            raise ConfigError(f"unknown attack mode {self.mode!r}")
        if self.variables not in ("style", "noise", "both"):
            raise ConfigError(f"unknown variable set {self.variables!r}")
        if self.epsilon < 0 or self.delta < 0:
            raise ConfigError("step sizes must be >= 0")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.mode == "targeted" and self.target is None:
            raise ConfigError("targeted mode needs a target class")

    def updates_style(self):
        return self.variables in ("style", "both")

    def updates_noise(self):
        return self.variables in ("noise", "both")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["style_layers"] = [self.style_layers.lo, self.style_layers.hi]
        d["noise_layers"] = [self.noise_layers.lo, self.noise_layers.hi]
        return d

    def hash(self):
        return config_hash(self.to_dict())


@dataclasses.dataclass
class LatentState:
    """Style vectors and noise maps for a batch of samples (ndarrays)."""
    styles: list
    noises: list

    def __post_init__(self):
        self.styles = [np.asarray(s) for s in self.styles]
        self.noises = [np.asarray(m) for m in self.noises]
        if len(self.styles) != NUM_LAYERS or len(self.noises) != NUM_LAYERS:
            raise ConfigError(f"latent state needs {NUM_LAYERS} style and noise layers")

    @property
    def n(self):
        return self.styles[0].shape[0]

    def copy(self):
        return LatentState([s.copy() for s in self.styles],
                           [m.copy() for m in self.noises])

    def row(self, i):
        return LatentState([s[i:i + 1].copy() for s in self.styles],
                           [m[i:i + 1].copy() for m in self.noises])

    @classmethod
    def sample(cls, generator, seed, n=1):
        return cls(generator.sample_styles(seed, n), generator.sample_noise(seed, n))


@dataclasses.dataclass
class AttackOutcome:
    state: LatentState
    image: np.ndarray
    original_prediction: int
    final_prediction: int
    fooled: bool
    iterations_used: int
    trajectory: list            # [(loss, prediction)] for iterations 0..stop
    label: int
    target: int
    seed: int | None = None


def least_likely(probs):
    """Index of the minimum-probability class; ties go to the lowest index."""
    probs = np.asarray(probs)
    if probs.ndim != 1 or probs.size == 0:
        raise ConfigError(f"least_likely wants a nonempty vector, got shape {probs.shape}")
    return int(np.argmin(probs))


def _per_sample_ce(logits, targets):
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    return lse - z[np.arange(z.shape[0]), targets]


def _synthesize_probe(generator, classifier, styles, noises, idx):
    """Forward pass off the graph for rows `idx`; returns (images, logits)."""
    with no_grad():
        sl = [as_tensor(s[idx]) for s in styles]
        nl = [as_tensor(m[idx]) for m in noises]
        img = generator.synthesize(sl, nl)
        logits = classifier.logits(img)
    return img.data, logits.data


def _gradient_step(styles, noises, idx, targets, config, classifier, generator, it):
    """One sign update on rows `idx`, in place."""
    style_vars = {}
    noise_vars = {}
    sl, nl = [], []
    for l in range(NUM_LAYERS):
        if config.updates_style() and l in config.style_layers:
            t = Tensor(styles[l][idx], requires_grad=True)
            style_vars[l] = t
            sl.append(t)
        else:
            sl.append(as_tensor(styles[l][idx]))
        if config.updates_noise() and l in config.noise_layers:
            t = Tensor(noises[l][idx], requires_grad=True)
            noise_vars[l] = t
            nl.append(t)
        else:
            nl.append(as_tensor(noises[l][idx]))
    wrt = list(style_vars.values()) + list(noise_vars.values())
    if not wrt:
        return
    img = generator.synthesize(sl, nl)
    loss = ops.softmax_cross_entropy(classifier.logits(img), targets)
    try:
        grads = backward(loss, wrt=wrt)
    except NonFiniteError as e:
        raise AttackError(f"non-finite gradient at attack iteration {it}") from e
    for l, t in style_vars.items():
        styles[l][idx] = styles[l][idx] - config.epsilon * np.sign(grads[t].data)
    for l, t in noise_vars.items():
        noises[l][idx] = noises[l][idx] - config.delta * np.sign(grads[t].data)


def attack_states(state, labels, config, classifier, generator):
    """Vectorized attack over a batch held in one LatentState.

    Returns a list of AttackOutcome, one per row.  Samples stop
    independently at their first success.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n = state.n
    if labels.shape != (n,):
        raise ConfigError(f"labels shape {labels.shape} != batch size {n}")
    if config.mode == "targeted" and np.any(labels == config.target):
        raise ConfigError("targeted attack toward the ground-truth label is ill-posed")

    styles = [s.copy() for s in state.styles]
    noises = [m.copy() for m in state.noises]

    all_idx = np.arange(n)
    images, logits = _synthesize_probe(generator, classifier, styles, noises, all_idx)
    preds = logits.argmax(axis=1)
    orig_preds = preds.copy()
    if config.mode == "nontargeted":
        targets = logits.argmin(axis=1)  # least-likely class of the initial image
    else:
        targets = np.full(n, config.target, dtype=np.int64)
    losses = _per_sample_ce(logits, targets)

    def succeeded(p):
        if config.mode == "nontargeted":
            return p != labels
        return p == targets

    fooled = succeeded(preds)
    iterations = np.zeros(n, dtype=np.int64)
    final_images = images.copy()
    final_preds = preds.copy()
    trajectories = [[(float(losses[i]), int(preds[i]))] for i in range(n)]
    active = ~fooled

    for it in range(1, config.max_iters + 1):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        _gradient_step(styles, noises, idx, targets[idx], config, classifier,
                       generator, it)
        imgs, logits = _synthesize_probe(generator, classifier, styles, noises, idx)
        preds_it = logits.argmax(axis=1)
        losses_it = _per_sample_ce(logits, targets[idx])
        final_images[idx] = imgs
        final_preds[idx] = preds_it
        ok = (preds_it != labels[idx]) if config.mode == "nontargeted" \
            else (preds_it == targets[idx])
        for k, i in enumerate(idx):
            trajectories[i].append((float(losses_it[k]), int(preds_it[k])))
        newly = idx[ok]
        fooled[newly] = True
        iterations[newly] = it
        iterations[idx[~ok]] = it
        active[newly] = False

    outcomes = []
    final_state = LatentState(styles, noises)
    for i in range(n):
        outcomes.append(AttackOutcome(
            state=final_state.row(i),
            image=final_images[i],
            original_prediction=int(orig_preds[i]),
            final_prediction=int(final_preds[i]),
            fooled=bool(fooled[i]),
            iterations_used=int(iterations[i]),
            trajectory=trajectories[i],
            label=int(labels[i]),
            target=int(targets[i]),
        ))
    return outcomes


def run_attack(state, label, config, classifier, generator):
    """Single-sample attack; see attack_states for the mechanics."""
    return attack_states(state, [label], config, classifier, generator)[0]


def batch_attack(seeds, config, classifier, generator, label=None):
    """Attack freshly sampled latents, one per seed.

    The sample's label is the generator's class index unless overridden.
    """
    if label is None:
        label = generator.shape_class
    outcomes = []
    # one shared state per call keeps the batch vectorized
    states = [LatentState.sample(generator, s, 1) for s in seeds]
    merged = LatentState(
        [np.concatenate([st.styles[l] for st in states]) for l in range(NUM_LAYERS)],
        [np.concatenate([st.noises[l] for st in states]) for l in range(NUM_LAYERS)])
    outs = attack_states(merged, [label] * len(seeds), config, classifier, generator)
    for seed, out in zip(seeds, outs):
        out.seed = seed
        outcomes.append(out)
    return outcomes


def nontargeted_step(state, config, classifier, generator, targets=None):
    """One update of the nontargeted rule; returns a new LatentState.

    The descent target is the least-likely class of the state's current
    image unless `targets` carries the frozen iteration-0 choice.
    """
    styles = [s.copy() for s in state.styles]
    noises = [m.copy() for m in state.noises]
    idx = np.arange(state.n)
    if targets is None:
        _, logits = _synthesize_probe(generator, classifier, styles, noises, idx)
        targets = logits.argmin(axis=1)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    _gradient_step(styles, noises, idx, targets, config, classifier, generator, it=1)
    return LatentState(styles, noises)


def targeted_step(state, config, classifier, generator):
    """One update of the targeted rule toward config.target."""
    if config.target is None:
        raise ConfigError("targeted_step needs config.target")
    styles = [s.copy() for s in state.styles]
    noises = [m.copy() for m in state.noises]
    idx = np.arange(state.n)
    targets = np.full(state.n, config.target, dtype=np.int64)
    _gradient_step(styles, noises, idx, targets, config, classifier, generator, it=1)
    return LatentState(styles, noises)


def attack_stats(outcomes):
    """Fooling rate plus iteration mean/std over the fooled subset."""
    total = len(outcomes)
    iters = np.array([o.iterations_used for o in outcomes if o.fooled], dtype=np.float64)
    stats = {
        "total": total,
        "fooled": int(iters.size),
        "fooling_rate": float(iters.size / total) if total else 0.0,
        "mean_iterations": None,
        "std_iterations": None,
    }
    if iters.size:
        stats["mean_iterations"] = float(iters.mean())
        stats["std_iterations"] = float(iters.std())
    return stats


def export_outcomes(path, outcomes, config):
    """JSON-lines export, one record per sample."""
    h = config.hash()
    with open(path, "w", encoding="utf-8") as f:
        for o in outcomes:
            rec = {
                "config_hash": h,
                "seed": o.seed,
                "label": o.label,
                "target": o.target,
                "fooled": o.fooled,
                "iterations": o.iterations_used,
                "original_prediction": o.original_prediction,
                "final_prediction": o.final_prediction,
                "predictions": [p for _, p in o.trajectory],
                "losses": [round(l, 8) for l, _ in o.trajectory],
            }
            f.write(canonical_json(rec) + "\n")


def step_size_sweep(generators, classifier, eps_values, delta_values, config,
                    n=50, seed=0):
    """Fooling-rate grid over (epsilon, delta); desk-scale calibration aid."""
    rows = []
    for eps in eps_values:
        for delta in delta_values:
            cfg = dataclasses.replace(config, epsilon=eps, delta=delta)
            outs = []
            for g in generators:
                seeds = [stream(seed, "sweep", g.shape_class, i).integers(2 ** 31)
                         for i in range(max(1, n // len(generators)))]
                outs.extend(batch_attack([int(s) for s in seeds], cfg, classifier, g))
            stats = attack_stats(outs)
            rows.append({"epsilon": eps, "delta": delta,
                         "fooling_rate": stats["fooling_rate"],
                         "mean_iterations": stats["mean_iterations"]})
    return rows
