"""Interleaved text/image toy model with Slide-LoRA adapters."""

import json

from ._core import (
    ConfigError,
    HarmonyError,
    IntegrityError,
    Model,
    ShapeMismatchError,
    filter_caption,
    iou,
    levenshtein,
    ned,
    pixel_mse,
    schedule,
    sha256,
    toy_fid,
)
from . import _core


def dataset(seed, size):
    """Synthetic samples as dicts, identical to `harmony gen-data` output lines."""
    return [json.loads(line) for line in _core.dataset_lines(seed, size)]


def default_config():
    return json.loads(_core.default_config())


def load_config(path):
    return json.loads(_core.load_config(str(path)))


__all__ = [
    "ConfigError",
    "HarmonyError",
    "IntegrityError",
    "Model",
    "ShapeMismatchError",
    "dataset",
    "default_config",
    "filter_caption",
    "iou",
    "levenshtein",
    "load_config",
    "ned",
    "pixel_mse",
    "schedule",
    "sha256",
    "toy_fid",
]
