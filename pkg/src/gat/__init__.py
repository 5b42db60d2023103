"""Latent-space adversarial training toolkit.

Reverse-mode tensor core, miniature generative models, latent and pixel
attacks, adversarial training loops, and a robustness evaluation harness.
"""

from .tensor import Tensor, backward, no_grad, as_tensor
from .precision import set_mode as set_precision_mode, get_mode as get_precision_mode

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "backward",
    "no_grad",
    "as_tensor",
    "set_precision_mode",
    "get_precision_mode",
    "__version__",
]
