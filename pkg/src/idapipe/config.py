"""Single canonical JSON config shared by every stage.

Flags override fields by dotted path (for example ``generation.k=5``);
override values parse as JSON first and fall back to plain strings.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError

DEFAULT_CONFIG: dict = {
    "dataset": {
        "name": "dataset",
        "root": "data",
        "layout": "domain_class",
        "domain": "default",
    },
    "workdir": "work",
    "prompts": {
        "catalog": "desk",
        "strategy": "M",
        "n": 3,
        "le_seed": 0,
        "textgen": "stub",
    },
    "generation": {
        "backend": "stub",
        "base_url": "",
        "mode": "sdedit",
        "k": 3,
        "base_seed": 0,
        "strength": 0.75,
        "guidance_scale": 7.5,
        "steps": 30,
    },
    "filter": {
        "fraction": 0.25,
        "embedder": "params",
        "base_url": "",
    },
    "train": {
        "epochs": 50,
        "batch_size": 64,
        "learning_rate": 0.1,
        "seed": 0,
        "image_side": 16,
        "use_augmentations": True,
    },
    "metrics": {
        "dedup_threshold": 0.9,
    },
    "service": {
        "host": "127.0.0.1",
        "port": 8000,
        "studio_dist": "frontend/dist",
    },
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None = None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        user = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def apply_overrides(config: dict, overrides: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides in order."""
    out = copy.deepcopy(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like path.to.key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        keys = dotted.split(".")
        for key in keys[:-1]:
            if not isinstance(node.get(key), dict):
                node[key] = {}
            node = node[key]
        node[keys[-1]] = value
    return out
