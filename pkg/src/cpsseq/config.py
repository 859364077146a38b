"""Loading class catalogs, feature schemas and generalized proxy models.

The configuration file is JSON with four top-level keys::

    {
      "questions": [{"id": "hard", "text": "Is it hard?"}, ...],
      "classes":   {"key": {"hard": 0.98, ...}, ...},
      "features":  {"key": [{"name": "wear_index", "unit": "1", "sigma": 0.05,
                             "min": 0.0, "max": 1.0}, ...]},
      "models":    {"key": {"states": [...], "A": [[...]], "C": ..., "Q": ...,
                            "R": ..., "channels": [...], "prior_mean": [...],
                            "prior_cov": [[...]]}}
    }

``features`` and ``models`` may be omitted.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .identification import AttributeAnswer, ClassCatalog, FeatureSpec
from .proxy import ModelRegistry, StateSpaceModel


@dataclass(frozen=True, eq=False)
class Config:
    catalog: ClassCatalog
    schemas: dict
    models: ModelRegistry


def _data_text(name: str) -> str:
    return bundled_path(name).read_text(encoding="utf-8")


def read_json(path) -> object:
    """Parse a JSON file, turning syntax errors into line diagnostics."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror or exc}") from None
    return parse_json(text, str(path))


def parse_json(text: str, source: str = "<string>") -> object:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def config_from_dict(data: dict) -> Config:
    try:
        catalog = ClassCatalog.from_mapping(data["questions"], data["classes"])
    except KeyError as exc:
        raise ConfigurationError(f"configuration lacks {exc.args[0]!r}") from None
    schemas = {}
    for label, feats in data.get("features", {}).items():
        try:
            schemas[label] = tuple(
                FeatureSpec(f["name"], f.get("unit", "1"), float(f["sigma"]),
                            float(f.get("min", -math.inf)), float(f.get("max", math.inf)))
                for f in feats
            )
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"feature schema for {label!r}: bad entry ({exc})") from None
    models = ModelRegistry()
    for label, m in data.get("models", {}).items():
        try:
            models.register(label, StateSpaceModel.from_dict(m))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"model for {label!r}: {exc}") from None
    return Config(catalog, schemas, models)


@lru_cache(maxsize=1)
def _builtin() -> Config:
    return config_from_dict(parse_json(_data_text("builtin.json"), "builtin.json"))


def load_config(path=None) -> Config:
    """Load ``path``, or the bundled built-in configuration when None."""
    if path is None:
        return _builtin()
    return config_from_dict(read_json(path))


def load_answers(path) -> list:
    """Answers file: a JSON list of ``{"question_id", "answer"}`` objects."""
    return answers_from_json(read_json(path))


def answers_from_json(data) -> list:
    if not isinstance(data, list):
        raise ConfigurationError("answers must be a JSON list")
    try:
        return [AttributeAnswer(d["question_id"], d["answer"]) for d in data]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed answer entry ({exc})") from None


def key_transcript() -> list:
    """The 17-answer 20-questions transcript that ends in "key"."""
    return answers_from_json(parse_json(_data_text("key_transcript.json")))


def bundled_path(name: str):
    """Filesystem path of a bundled data file (e.g. ``scenarios/tenant-keys.json``)."""
    node = resources.files("cpsseq") / "data"
    for part in name.split("/"):
        node = node / part
    return node
