from .base import Module
from .classifier import Classifier
from .segmenter import Segmenter
from .spade import SpadeGenerator, one_hot_layout, z_from_params
from .style_generator import (LAYER_CHANNELS, LAYER_RESOLUTIONS, NUM_LAYERS,
                              STYLE_DIMS, StyleGenerator)
from .procedural import ProceduralGenerator, generator_family, SHAPE_NAMES
from .checkpoint import save_model, load_model

__all__ = [
    "Module", "Classifier", "Segmenter", "SpadeGenerator", "StyleGenerator",
    "ProceduralGenerator", "generator_family", "one_hot_layout", "z_from_params",
    "save_model", "load_model", "SHAPE_NAMES",
    "LAYER_CHANNELS", "LAYER_RESOLUTIONS", "NUM_LAYERS", "STYLE_DIMS",
]
