"""Dataset container format.

Binary layout: magic "GATD", u32 version, u32 count, u16 height, u16 width,
u16 channels, u16 flags (bit 0: label maps present, bit 1: params present),
then int32 labels, optional uint8 label maps, optional float32 params, and
the float32 pixel block.  A JSON-lines sidecar `<path>.provenance.jsonl`
carries a dataset-level header line (spec, param names) followed by one
record per image.
"""

import json
import pathlib
import struct

import numpy as np

from ..errors import ConfigError
from ..manifest import canonical_json
from ..models.procedural import PARAM_NAMES
from .synth import Dataset, SynthSpec

MAGIC = b"GATD"
VERSION = 1


def sidecar_path(path):
    return pathlib.Path(str(path) + ".provenance.jsonl")


def save_dataset(path, dataset):
    n = dataset.n
    flags = 0b11  # this pipeline always carries maps and params
    header = struct.pack("<4sIIHHHH", MAGIC, VERSION, n, 32, 32, 3, flags)
    with open(path, "wb") as f:
        f.write(header)
        f.write(dataset.labels.astype("<i4").tobytes())
        f.write(dataset.label_maps.astype(np.uint8).tobytes())
        f.write(dataset.params.astype("<f4").tobytes())
        f.write(dataset.images.astype("<f4").tobytes())
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        head = {"kind": "dataset", "spec": dataset.spec.to_dict(),
                "param_names": list(PARAM_NAMES)}
        f.write(canonical_json(head) + "\n")
        for rec in dataset.provenance_records():
            f.write(canonical_json(rec) + "\n")
    return pathlib.Path(path)


def load_dataset(path):
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ConfigError("not a dataset container (bad magic)", path=str(path))
    _, version, n, h, w, c, flags = struct.unpack_from("<4sIIHHHH", raw, 0)
    if version != VERSION:
        raise ConfigError(f"unsupported dataset version {version}", path=str(path))
    at = struct.calcsize("<4sIIHHHH")
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=at).astype(np.int64)
    at += 4 * n
    if flags & 1:
        maps = np.frombuffer(raw, dtype=np.uint8, count=n * h * w, offset=at)
        maps = maps.reshape(n, h, w).astype(np.int64)
        at += n * h * w
    else:
        maps = np.zeros((n, h, w), dtype=np.int64)
    if flags & 2:
        params = np.frombuffer(raw, dtype="<f4", count=n * len(PARAM_NAMES), offset=at)
        params = params.reshape(n, len(PARAM_NAMES)).copy()
        at += 4 * n * len(PARAM_NAMES)
    else:
        params = np.zeros((n, len(PARAM_NAMES)), dtype=np.float32)
    images = np.frombuffer(raw, dtype="<f4", count=n * c * h * w, offset=at)
    images = images.reshape(n, c, h, w).copy()

    side = sidecar_path(path)
    if not side.exists():
        raise ConfigError("provenance sidecar missing", path=str(side))
    with open(side, encoding="utf-8") as f:
        head = json.loads(f.readline())
    spec = SynthSpec(**head["spec"])
    return Dataset(images, labels, maps, params, spec)
