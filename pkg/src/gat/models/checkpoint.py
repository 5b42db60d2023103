"""Model checkpoint file format.

Layout: magic "GATC", u32 format version, u32 JSON header length, JSON
header (architecture descriptor + training metadata), then the flat
float32 little-endian parameter payload in declaration order.
"""

import json
import struct

import numpy as np

from ..errors import ConfigError
from .classifier import Classifier
from .segmenter import Segmenter
from .spade import SpadeGenerator
from .style_generator import StyleGenerator

MAGIC = b"GATC"
VERSION = 1

_REGISTRY = {cls.kind: cls for cls in
             (Classifier, Segmenter, SpadeGenerator, StyleGenerator)}


def save_model(path, model, meta=None):
    header = {"arch": model.descriptor(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = model.flat_parameters().astype("<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        f.write(payload.tobytes())


def load_model(path):
    """Returns (model, meta).  Parameters land in the current precision
    dtype; payloads are stored as float32."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ConfigError(f"not a model checkpoint (bad magic)", path=str(path))
    version, blob_len = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}", path=str(path))
    header = json.loads(raw[12:12 + blob_len].decode("utf-8"))
    payload = np.frombuffer(raw[12 + blob_len:], dtype="<f4")
    arch = header["arch"]
    kind = arch.get("kind")
    if kind not in _REGISTRY:
        raise ConfigError(f"unknown model kind {kind!r}", path=str(path))
    model = _REGISTRY[kind].from_descriptor(arch)
    model.load_flat(payload)
    return model, header.get("meta", {})
