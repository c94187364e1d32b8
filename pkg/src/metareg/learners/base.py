"""Model base class, registry and the versioned JSON document format."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..features import FC

SCHEMA_VERSION = 1

MODEL_KINDS: dict[str, type["Model"]] = {}


def register(cls):
    MODEL_KINDS[cls.kind] = cls
    return cls


def _encode(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Model:
    """A trained learner: hyperparameters plus a dict of parameter arrays."""

    kind = ""
    view = FC
    task = "binary"

    def __init__(self, hyperparams: dict | None = None, params: dict | None = None):
        self.hyperparams = dict(hyperparams or {})
        self.params = params if params is not None else {}

    def _check_input(self, X, ndim: int, width: int) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != ndim or X.shape[-1] != width:
            raise ValueError(
                f"{self.kind}: dimension mismatch, expected {ndim}-D input with "
                f"{width} features, got shape {X.shape}"
            )
        return X

    def predict_score(self, X) -> np.ndarray:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        """Hard 0/1 labels for classifiers; regressors override this."""
        return (self.predict_score(X) >= 0.5).astype(float)

    def to_document(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "hyperparams": _encode(self.hyperparams),
            "parameters": _encode(self.params),
        }

    @classmethod
    def decode_params(cls, raw: dict) -> dict:
        return {k: np.asarray(v, dtype=float) for k, v in raw.items()}

    def __repr__(self):
        return f"{type(self).__name__}({self.hyperparams})"


def from_document(doc: dict) -> Model:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    kind = doc.get("kind")
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    cls = MODEL_KINDS[kind]
    return cls(doc["hyperparams"], cls.decode_params(doc["parameters"]))


def dumps(model: Model) -> str:
    return json.dumps(model.to_document(), sort_keys=True)


def loads(text: str) -> Model:
    return from_document(json.loads(text))


def save_model(model: Model, path: str | Path) -> None:
    Path(path).write_text(dumps(model))


def load_model(path: str | Path) -> Model:
    return loads(Path(path).read_text())


@register
class ConstantScorer(Model):
    """Emits a fixed score; stands in for thresholds with a single class."""

    kind = "Constant"

    @classmethod
    def from_prior(cls, prior: float, view: str = FC) -> "ConstantScorer":
        return cls({"prior": float(prior), "view": view}, {})

    @property
    def view(self):
        return self.hyperparams.get("view", FC)

    def predict_score(self, X) -> np.ndarray:
        return np.full(len(X), self.hyperparams["prior"], dtype=float)
