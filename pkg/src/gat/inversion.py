"""Embedding images into generator latent space.

Minimizes a perceptual distance over (styles, noises) with Adam so a real
image can be attacked through the generator.  The distance combines pixel
MSE with MSEs of the classifier's own feature blocks; using the task model
as the feature extractor keeps the package self-contained, at the cost of a
metric that is only as perceptual as that classifier.
"""

import dataclasses

import numpy as np

from . import ops
from .attacks.latent import LatentState
from .errors import ConfigError, ShapeMismatchError
from .optim import Adam
from .rng import stream
from .tensor import as_tensor, backward, no_grad


@dataclasses.dataclass(frozen=True)
class InversionConfig:
    budget: int = 500
    lr: float = 0.01
    lambda_pix: float = 1.0
    lambda_feat: float = 1.0
    rmse_threshold: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")
        if self.lambda_pix < 0 or self.lambda_feat < 0:
            raise ConfigError("loss weights must be >= 0")

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class InversionResult:
    state: LatentState
    distance: float
    rmse: float
    success: bool
    steps_run: int


def _mse(a, b):
    diff = ops.sub(a, b)
    return ops.mean(ops.mul(diff, diff))


def perceptual_distance(a, b, classifier, lambda_pix=1.0, lambda_feat=1.0):
    """lambda_pix * pixel MSE + lambda_feat * sum of feature-block MSEs.

    Returns a graph Tensor when the inputs are on-graph, so it can drive
    inversion directly.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError("perceptual_distance", a.shape, b.shape)
    total = ops.scale(_mse(a, b), lambda_pix)
    if lambda_feat > 0:
        fa = classifier.feature_blocks(a)
        fb = classifier.feature_blocks(b)
        for xa, xb in zip(fa, fb):
            total = ops.add(total, ops.scale(_mse(xa, xb), lambda_feat))
    return total


def pixel_rmse(a, b):
    a = np.asarray(a.data if hasattr(a, "data") else a, dtype=np.float64)
    b = np.asarray(b.data if hasattr(b, "data") else b, dtype=np.float64)
    return float(np.sqrt(((a - b) ** 2).mean()))


def invert(image, generator, classifier, config=InversionConfig(),
           init_state=None):
    """Fit (styles, noises) so the generator reproduces `image`.

    Runs at most `config.budget` Adam steps and returns the best state seen
    by perceptual distance (never worse than the initialization).  Success
    means best pixel RMSE at or under the threshold; running out of budget
    just returns success=False.
    """
    image = np.asarray(image.data if hasattr(image, "data") else image)
    if image.ndim == 3:
        image = image[None]
    n = image.shape[0]
    if init_state is not None:
        styles = [as_tensor(np.array(s, copy=True), requires_grad=True)
                  for s in init_state.styles]
        noises = [as_tensor(np.array(m, copy=True), requires_grad=True)
                  for m in init_state.noises]
    else:
        rng = stream(config.seed, "invert-init")
        styles = [as_tensor(s, requires_grad=True)
                  for s in generator.draw_styles(rng, n)]
        noises = [as_tensor(m, requires_grad=True)
                  for m in generator.draw_noises(rng, n)]
    opt = Adam({f"y{l}": t for l, t in enumerate(styles)} |
               {f"e{l}": t for l, t in enumerate(noises)}, lr=config.lr)

    def snapshot():
        return LatentState([t.data.copy() for t in styles],
                           [t.data.copy() for t in noises])

    def measure(state):
        with no_grad():
            img = generator.synthesize([as_tensor(s) for s in state.styles],
                                       [as_tensor(m) for m in state.noises])
            dist = perceptual_distance(img, image, classifier,
                                       config.lambda_pix, config.lambda_feat)
        return float(dist.data), pixel_rmse(img, image)

    best_state = snapshot()
    best_dist, best_rmse = measure(best_state)
    steps = 0
    if best_rmse > config.rmse_threshold:
        for step in range(config.budget):
            pred = generator.synthesize(styles, noises)
            loss = perceptual_distance(pred, image, classifier,
                                       config.lambda_pix, config.lambda_feat)
            cur = float(loss.data)
            if cur < best_dist:  # loss belongs to the pre-step parameters
                best_state = snapshot()
                best_dist = cur
            opt.zero_grad()
            backward(loss)
            opt.step()
            steps = step + 1
        final_dist, _ = measure(snapshot())
        if final_dist < best_dist:
            best_state, best_dist = snapshot(), final_dist
        _, best_rmse = measure(best_state)
    return InversionResult(best_state, best_dist, best_rmse,
                           best_rmse <= config.rmse_threshold, steps)


def reconstruction_experiment(generator, classifier, trials=50,
                              config=InversionConfig(), seed=0):
    """Invert self-generated images; returns per-trial results and the
    success fraction."""
    results = []
    for t in range(trials):
        with no_grad():
            styles = [as_tensor(s) for s in
                      generator.sample_styles((seed, "recon", t), 1)]
            noises = [as_tensor(m) for m in
                      generator.sample_noise((seed, "recon", t), 1)]
            target = generator.synthesize(styles, noises).data
        res = invert(target, generator, classifier,
                     dataclasses.replace(config, seed=seed * 1000 + t))
        results.append(res)
    rate = sum(r.success for r in results) / len(results)
    return results, rate
