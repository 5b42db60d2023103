"""Run-configuration loading, validation, and override plumbing."""

import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError

_SECTIONS = ("data", "models", "attack", "invert", "train", "eval")


def _schema():
    text = (resources.files("gat") / "schemas" /
            "runconfig.schema.json").read_text()
    return json.loads(text)


def load_config(path):
    """Parse and validate a JSON run config; raises ConfigError with a
    field-path diagnostic on any violation."""
    p = Path(path)
    try:
        raw = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}", path=str(path)) from e
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON at line {e.lineno} column {e.colno}: "
                          f"{e.msg}", path=str(path)) from e
    validate_config(doc, base=p.parent)
    return doc


def validate_config(doc, base=None):
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as e:
        where = "/".join(str(k) for k in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}") from e
    _check_paths(doc, base or Path("."))
    return doc


def _check_paths(doc, base):
    """Referenced checkpoints and datasets must exist up front."""
    def must_exist(value, field):
        path = Path(value)
        if not path.is_absolute():
            path = base / path
        if not path.exists():
            raise ConfigError(f"config field {field}: path does not exist: "
                              f"{value}")

    models = doc.get("models", {})
    for key in ("classifier", "segmenter", "spade"):
        if key in models:
            must_exist(models[key], f"models/{key}")
    if "generator_dir" in models:
        must_exist(models["generator_dir"], "models/generator_dir")
    for name, entry in models.get("defended", {}).items():
        must_exist(entry["checkpoint"], f"models/defended/{name}/checkpoint")
    data = doc.get("data", {})
    for key in ("train_path", "test_path", "ood_path"):
        if key in data:
            must_exist(data[key], f"data/{key}")
    if "init_from" in doc.get("train", {}):
        must_exist(doc["train"]["init_from"], "train/init_from")


def section(doc, name):
    if name not in _SECTIONS:
        raise ConfigError(f"unknown config section {name!r}")
    return dict(doc.get(name, {}))


def apply_overrides(doc, overrides):
    """Apply CLI overrides onto a parsed config; `overrides` maps dotted
    section paths ("attack.epsilon") or top-level keys to values.  Values of
    None are skipped.  Returns a new validated document."""
    out = json.loads(json.dumps(doc))
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    validate_config(out)
    return out
