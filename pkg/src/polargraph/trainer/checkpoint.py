"""JSON checkpoints: config plus every named parameter, with a mandatory format version."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ConfigError, TrainConfig
from .model import Model

FORMAT = "polargraph-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: Model, path, metrics: Optional[dict] = None) -> Path:
    # json writes floats with repr, which round-trips float64 exactly
    params = {name: {"shape": list(p.shape), "data": p.data.ravel().tolist()}
              for name, p in model.named_parameters().items()}
    doc = {"format": FORMAT, "version": VERSION, "config": model.cfg.to_dict(),
           "params": params, "metrics": metrics}
    path = Path(path)
    path.write_text(json.dumps(doc) + "\n")
    return path


def load_checkpoint(path) -> Model:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if "version" not in doc:
        raise CheckpointError(f"{path}: missing version field")
    if doc["version"] != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc['version']!r}")
    try:
        cfg = TrainConfig.from_dict(doc["config"])
    except (ConfigError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad config ({exc})") from None
    model = Model(cfg, np.random.default_rng(cfg.seed))
    named = model.named_parameters()
    stored = doc.get("params", {})
    missing = sorted(set(named) - set(stored))
    extra = sorted(set(stored) - set(named))
    if missing or extra:
        raise CheckpointError(f"{path}: parameter mismatch (missing {missing}, unexpected {extra})")
    for name, p in named.items():
        entry = stored[name]
        data = np.asarray(entry["data"], dtype=np.float64)
        if tuple(entry["shape"]) != p.shape or data.size != p.data.size:
            raise CheckpointError(f"{path}: shape mismatch for {name}")
        p.data[...] = data.reshape(p.shape)
    return model
