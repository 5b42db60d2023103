from . import latent, pixel, seg

__all__ = ["latent", "pixel", "seg"]
