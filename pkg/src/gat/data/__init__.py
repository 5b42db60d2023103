from .synth import (Dataset, SynthSpec, label_hue_mutual_information,
                    nearest_centroid_accuracy, ood_spec, synth_dataset,
                    synth_ood_dataset)
from .io import load_dataset, save_dataset

__all__ = [
    "Dataset", "SynthSpec", "synth_dataset", "synth_ood_dataset", "ood_spec",
    "nearest_centroid_accuracy", "label_hue_mutual_information",
    "save_dataset", "load_dataset",
]
