"""Procedural dataset synthesis.

Images come from the same differentiable renderer the attacks run against:
one shape class per image, nuisance factors (position, size, hue, texture)
drawn from class-independent distributions.  Identical spec + seed gives a
bit-identical dataset.  The out-of-domain variant keeps the classes but
moves the hue range to a disjoint band and switches the texture family.
"""

import dataclasses

import numpy as np

from ..errors import ConfigError
from ..models.procedural import (PARAM_NAMES, ProceduralGenerator, SHAPE_NAMES)
from ..rng import stream
from ..tensor import no_grad

CHUNK = 64

# disjoint from the in-domain band (0.05, 0.45)
OOD_HUE_CENTER = 0.75


@dataclasses.dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 4
    image_size: int = 32
    hue_center: float = 0.25
    hue_half: float = 0.2
    texture: str = "smooth"
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= len(SHAPE_NAMES):
            raise ConfigError(f"num_classes must be in [1, {len(SHAPE_NAMES)}]")
        if self.image_size != 32:
            raise ConfigError("only 32x32 synthesis is supported")

    def to_dict(self):
        return dataclasses.asdict(self)

    def generators(self):
        return [ProceduralGenerator(c, self.hue_center, self.hue_half, self.texture)
                for c in range(self.num_classes)]


@dataclasses.dataclass
class Dataset:
    images: np.ndarray            # (n, 3, 32, 32) float32, [-1, 1]
    labels: np.ndarray            # (n,) int64 in [0, K)
    label_maps: np.ndarray        # (n, 32, 32) int64; 0 = background, c+1 = shape
    params: np.ndarray            # (n, P) float32 nuisance parameters
    spec: SynthSpec

    def __post_init__(self):
        if self.labels.min(initial=0) < 0 or \
                self.labels.max(initial=0) >= self.spec.num_classes:
            raise ConfigError("labels out of range")

    @property
    def n(self):
        return self.images.shape[0]

    @property
    def num_seg_classes(self):
        return self.spec.num_classes + 1

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.label_maps[idx],
                       self.params[idx], self.spec)

    def provenance_records(self):
        for i in range(self.n):
            yield {
                "index": i,
                "label": int(self.labels[i]),
                "shape": SHAPE_NAMES[self.labels[i]],
                "params": {name: round(float(self.params[i, j]), 6)
                           for j, name in enumerate(PARAM_NAMES)},
            }


def synth_dataset(spec, n):
    """Render n labeled images; class balance within +-1, order shuffled."""
    if n <= 0:
        raise ConfigError(f"dataset size must be positive, got {n}")
    k = spec.num_classes
    labels = np.arange(n, dtype=np.int64) % k
    order = stream(spec.seed, "order", spec.texture, spec.hue_center).permutation(n)
    labels = labels[order]

    images = np.empty((n, 3, 32, 32), dtype=np.float32)
    maps = np.empty((n, 32, 32), dtype=np.int64)
    params = np.empty((n, len(PARAM_NAMES)), dtype=np.float32)
    gens = spec.generators()
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        gen = gens[c]
        for chunk_no, at in enumerate(range(0, idx.size, CHUNK)):
            rows = idx[at:at + CHUNK]
            m = rows.size
            seed_tags = ("data", spec.texture, spec.hue_center, c, chunk_no)
            styles = gen.sample_styles((spec.seed, *seed_tags), m)
            noises = gen.sample_noise((spec.seed, *seed_tags), m)
            with no_grad():
                img, mask, pp = gen.render_with_occupancy(styles, noises)
            images[rows] = img.data
            maps[rows] = np.where(mask, c + 1, 0)
            params[rows] = np.stack(
                [pp[name].data[:, 0] for name in PARAM_NAMES], axis=1)
    return Dataset(images, labels, maps, params.astype(np.float32), spec)


def ood_spec(spec):
    return dataclasses.replace(spec, hue_center=OOD_HUE_CENTER, texture="blobs")


def synth_ood_dataset(spec, n):
    """Same classes, disjoint hue band, blob texture family."""
    return synth_dataset(ood_spec(spec), n)


def nearest_centroid_accuracy(train, test):
    """Raw-pixel nearest-centroid baseline; a floor any real model must beat."""
    k = train.spec.num_classes
    flat_train = train.images.reshape(train.n, -1)
    flat_test = test.images.reshape(test.n, -1)
    centroids = np.stack([flat_train[train.labels == c].mean(axis=0)
                          for c in range(k)])
    d2 = ((flat_test[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == test.labels).mean())


def label_hue_mutual_information(dataset, bins=8):
    """Plug-in MI estimate (nats) between label and binned shape hue."""
    hue_col = PARAM_NAMES.index("hue_shape")
    hue = dataset.params[:, hue_col]
    lo, hi = hue.min(), hue.max() + 1e-9
    hue_bin = np.minimum(((hue - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    joint = np.zeros((dataset.spec.num_classes, bins))
    for c, b in zip(dataset.labels, hue_bin):
        joint[c, b] += 1.0
    joint /= joint.sum()
    pc = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    nz = joint > 0
    return float((joint[nz] * np.log(joint[nz] / (pc @ pb)[nz])).sum())
