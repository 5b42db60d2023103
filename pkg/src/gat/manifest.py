"""Run manifests, canonical JSON, and content hashing.

Every CLI run writes a manifest holding the fully resolved config, the seed,
a hash of the package source, and the produced outputs, so any result can be
reproduced from the manifest alone.  Canonical JSON (sorted keys, fixed
separators, no timestamps) makes manifests byte-stable across identical runs.
"""

import hashlib
import json
import os
import pathlib


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def code_version():
    """Hash of every package source file, path-sorted."""
    root = pathlib.Path(__file__).resolve().parent
    h = hashlib.sha256()
    for path in sorted(root.rglob("*.py")) + sorted(root.rglob("*.json")):
        h.update(str(path.relative_to(root)).encode("utf-8"))
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def write_manifest(out_dir, name, payload):
    """Write `<out_dir>/<name>.manifest.json`; returns the path."""
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = dict(payload)
    record.setdefault("code_version", code_version())
    path = out_dir / f"{name}.manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        f.write(canonical_json(record))
        f.write("\n")
    return path


def resolve_out_dir(explicit=None, config_value=None):
    """--out-dir beats config, beats the GAT_OUT_DIR env var, beats cwd."""
    for candidate in (explicit, config_value, os.environ.get("GAT_OUT_DIR")):
        if candidate:
            return pathlib.Path(candidate)
    return pathlib.Path(".")
