"""Cross-attention multi-label classifier: Python front end to the C++ core."""

import json

from . import _core
from ._core import (
    Checkpoint,
    ConfigError,
    Dataset,
    DivergenceError,
    ParseError,
    ShapeError,
    attention_loss,
    auroc,
    balance_loss,
    balance_weights,
    bce_loss,
    generate,
    load_checkpoint,
    load_dataset,
    localize,
    predict,
    split,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "Dataset",
    "DivergenceError",
    "ParseError",
    "ShapeError",
    "attention_loss",
    "auroc",
    "balance_loss",
    "balance_weights",
    "bce_loss",
    "evaluate",
    "generate",
    "load_checkpoint",
    "load_dataset",
    "localize",
    "predict",
    "split",
    "train",
]


def train(config, train_set, val_set):
    """Train from a RunConfig given as a dict (or JSON string)."""
    if not isinstance(config, str):
        config = json.dumps(config)
    return _core.train(config, train_set, val_set)


def evaluate(checkpoint, dataset):
    """EvalReport as a dict: labels, auroc (None when undefined), mean, undefined."""
    return json.loads(_core.evaluate_json(checkpoint, dataset))
