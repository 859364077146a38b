"""Asset identification: attribute-question classification, class-specific
characterization, physical hashing and identity resolution.

The estimators follow the scikit-learn conventions (``fit`` returns ``self``,
hyper-parameters live in ``__init__``, learned state ends with ``_``) so they
compose with pipelines and ``get_params``/``set_params``.
"""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .digests import digest
from .errors import (
    ConfigurationError,
    LowConfidenceError,
    RangeError,
    StorageError,
    ValidationError,
)

DEFAULT_QUANTIZATION_FACTOR = 6.0
DEFAULT_MATCH_THRESHOLD = 3.0
DEFAULT_MIN_CONFIDENCE = 0.5


class AnswerLevel(str, enum.Enum):
    YES = "Yes"
    USUALLY = "Usually"
    SOMETIMES = "Sometimes"
    RARELY = "Rarely"
    DOUBTFUL = "Doubtful"
    NO = "No"
    UNKNOWN = "Unknown"


# Probability that the respondent means "yes"; Unknown carries no evidence.
ANSWER_WEIGHTS = {
    AnswerLevel.YES: 0.95,
    AnswerLevel.USUALLY: 0.8,
    AnswerLevel.SOMETIMES: 0.5,
    AnswerLevel.RARELY: 0.2,
    AnswerLevel.DOUBTFUL: 0.1,
    AnswerLevel.NO: 0.05,
    AnswerLevel.UNKNOWN: None,
}


@dataclass(frozen=True)
class AttributeAnswer:
    question_id: str
    answer: AnswerLevel

    def __post_init__(self):
        try:
            object.__setattr__(self, "answer", AnswerLevel(self.answer))
        except ValueError:
            raise ValidationError(f"unknown answer level {self.answer!r}") from None


@dataclass(frozen=True, eq=False)
class ClassCatalog:
    """Classes, ordered questions and the per-class probability that the
    true answer to each question is "yes"."""

    questions: tuple
    classes: tuple
    likelihoods: np.ndarray
    question_text: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.classes:
            raise ConfigurationError("catalog has no classes")
        if not self.questions:
            raise ConfigurationError("catalog has no questions")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("duplicate class labels")
        if len(set(self.questions)) != len(self.questions):
            raise ConfigurationError("duplicate question ids")
        lk = np.asarray(self.likelihoods, dtype=float)
        if lk.shape != (len(self.classes), len(self.questions)):
            raise ConfigurationError(
                f"likelihood matrix shape {lk.shape} does not match "
                f"{len(self.classes)} classes x {len(self.questions)} questions"
            )
        if not np.all(np.isfinite(lk)) or lk.min() < 0 or lk.max() > 1:
            raise ConfigurationError("likelihoods must lie in [0, 1]")
        lk.setflags(write=False)
        object.__setattr__(self, "likelihoods", lk)
        object.__setattr__(self, "questions", tuple(self.questions))
        object.__setattr__(self, "classes", tuple(self.classes))

    @classmethod
    def from_mapping(cls, questions, classes: Mapping[str, Mapping[str, float]]):
        """Build from ``[{"id", "text"}, ...]`` and ``{label: {qid: p}}``."""
        qids, texts = [], {}
        for q in questions:
            if isinstance(q, str):
                qids.append(q)
            else:
                qids.append(q["id"])
                texts[q["id"]] = q.get("text", q["id"])
        rows = []
        for label, row in classes.items():
            missing = [q for q in qids if q not in row]
            if missing:
                raise ConfigurationError(f"class {label!r} lacks likelihoods for {missing}")
            extra = set(row) - set(qids)
            if extra:
                raise ConfigurationError(f"class {label!r} has unknown questions {sorted(extra)}")
            rows.append([row[q] for q in qids])
        return cls(tuple(qids), tuple(classes), np.array(rows, dtype=float).reshape(len(rows), len(qids)), texts)

    def question_index(self, question_id: str) -> int:
        try:
            return self.questions.index(question_id)
        except ValueError:
            raise ValidationError(f"unknown question id {question_id!r}") from None


@dataclass(frozen=True)
class ClassPosterior:
    entries: tuple  # ((label, probability), ...) sorted

    @classmethod
    def from_probabilities(cls, labels, probs):
        pairs = sorted(zip(labels, (float(p) for p in probs)), key=lambda e: (-e[1], e[0]))
        return cls(tuple(pairs))

    @property
    def top(self) -> str:
        return self.entries[0][0]

    @property
    def confidence(self) -> float:
        return self.entries[0][1]

    def probability(self, label: str) -> float:
        return dict(self.entries)[label]

    def rank(self, label: str) -> int:
        return [e[0] for e in self.entries].index(label)

    def as_dict(self) -> dict:
        return dict(self.entries)


class AnswerClassifier(ClassifierMixin, BaseEstimator):
    """Naive-Bayes classifier over graded yes/no attribute answers.

    ``fit`` takes one likelihood profile per class (rows of ``X``, entries in
    [0, 1]) and the class labels ``y``. ``predict_proba`` takes rows of answer
    weights (probability the respondent means "yes"), with NaN marking a
    skipped question. An answer with weight ``w`` against a class with
    likelihood ``l`` contributes ``w*l + (1-w)*(1-l)``; the class prior is
    uniform.
    """

    def __init__(self, min_confidence=DEFAULT_MIN_CONFIDENCE):
        self.min_confidence = min_confidence

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        if X.min() < 0 or X.max() > 1:
            raise ConfigurationError("likelihood profiles must lie in [0, 1]")
        y = np.asarray(y)
        if len(y) != X.shape[0]:
            raise ConfigurationError("one label per likelihood profile is required")
        self.classes_ = y
        self.likelihoods_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def _joint_log_likelihood(self, X):
        check_is_fitted(self, "likelihoods_")
        X = check_array(X, dtype=float, ensure_all_finite="allow-nan")
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} answers per row, got {X.shape[1]}")
        answered = ~np.isnan(X)
        if np.any((X[answered] < 0) | (X[answered] > 1)):
            raise ValidationError("answer weights must lie in [0, 1]")
        # skipped questions get w = 0.5, a neutral factor that is then masked out
        w = np.where(answered, X, 0.5)[:, None, :]
        lk = self.likelihoods_[None, :, :]
        term = np.log(w * lk + (1.0 - w) * (1.0 - lk))
        return np.where(answered[:, None, :], term, 0.0).sum(axis=2)

    def predict_log_proba(self, X):
        jll = self._joint_log_likelihood(X)
        norm = np.logaddexp.reduce(jll, axis=1, keepdims=True)
        return jll - norm

    def predict_proba(self, X):
        return np.exp(self.predict_log_proba(X))

    def predict(self, X):
        proba = self.predict_proba(X)
        order = np.argsort(self.classes_.astype(str), kind="stable")
        # argmax over the lexicographically sorted labels breaks ties by label
        return self.classes_[order][np.argmax(proba[:, order], axis=1)]

    @classmethod
    def from_catalog(cls, catalog: ClassCatalog, **params):
        return cls(**params).fit(catalog.likelihoods, np.array(catalog.classes, dtype=object))


def encode_answers(answers: Iterable[AttributeAnswer], catalog: ClassCatalog) -> np.ndarray:
    """Answer list -> weight row aligned to ``catalog.questions`` (NaN = skipped)."""
    row = np.full(len(catalog.questions), np.nan)
    seen = set()
    for a in answers:
        if not isinstance(a, AttributeAnswer):
            a = AttributeAnswer(**a) if isinstance(a, Mapping) else AttributeAnswer(*a)
        idx = catalog.question_index(a.question_id)
        if a.question_id in seen:
            raise ValidationError(f"question {a.question_id!r} answered twice")
        seen.add(a.question_id)
        w = ANSWER_WEIGHTS[a.answer]
        if w is not None:
            row[idx] = w
    return row


def classify(answers: Sequence[AttributeAnswer], catalog: ClassCatalog) -> ClassPosterior:
    if catalog is None or not getattr(catalog, "classes", None):
        raise ConfigurationError("empty catalog")
    row = encode_answers(answers, catalog)
    clf = AnswerClassifier.from_catalog(catalog)
    probs = clf.predict_proba(row[None, :])[0]
    return ClassPosterior.from_probabilities(catalog.classes, probs)


# --------------------------------------------------------------------------
# characterization


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    unit: str
    sigma: float
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"feature {self.name!r}: sigma must be positive")
        if self.lower > self.upper:
            raise ConfigurationError(f"feature {self.name!r}: empty bounds")


@dataclass(frozen=True)
class Feature:
    name: str
    value: float
    unit: str
    noise_sigma: float


@dataclass(frozen=True)
class FeatureVector:
    class_label: str
    features: tuple

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        for f in self.features:
            if not f.noise_sigma > 0:
                raise ValidationError(f"feature {f.name!r}: noise_sigma must be positive")

    @property
    def names(self) -> tuple:
        return tuple(f.name for f in self.features)

    @property
    def values(self) -> np.ndarray:
        return np.array([f.value for f in self.features], dtype=float)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([f.noise_sigma for f in self.features], dtype=float)

    def as_dict(self) -> dict:
        return {f.name: f.value for f in self.features}

    def to_json(self) -> dict:
        return {
            "class_label": self.class_label,
            "features": [[f.name, f.value, f.unit, f.noise_sigma] for f in self.features],
        }

    @classmethod
    def from_json(cls, data) -> "FeatureVector":
        return cls(data["class_label"], tuple(Feature(n, float(v), u, float(s)) for n, v, u, s in data["features"]))


def characterize(class_label: str, observation: Mapping[str, float], schemas: Mapping[str, Sequence[FeatureSpec]]) -> FeatureVector:
    """Order a raw observation by the class schema and check its bounds."""
    try:
        schema = schemas[class_label]
    except KeyError:
        raise ConfigurationError(f"no feature schema for class {class_label!r}") from None
    feats = []
    for spec in schema:
        if spec.name not in observation:
            raise ValidationError(f"observation lacks channel {spec.name!r}")
        try:
            value = float(observation[spec.name])
        except (TypeError, ValueError):
            raise ValidationError(f"channel {spec.name!r} is not numeric") from None
        if not math.isfinite(value):
            raise ValidationError(f"channel {spec.name!r} is not finite")
        if not spec.lower <= value <= spec.upper:
            raise RangeError(f"{spec.name}={value} outside [{spec.lower}, {spec.upper}]")
        feats.append(Feature(spec.name, value, spec.unit, spec.sigma))
    return FeatureVector(class_label, tuple(feats))


# --------------------------------------------------------------------------
# physical hash


@dataclass(frozen=True)
class PhysicalHash:
    class_label: str
    quantized_cells: tuple
    raw_features: FeatureVector
    digest: str


def _bin_digest(class_label: str, cells) -> str:
    return digest({"class_label": class_label, "cells": [int(c) for c in cells]})


class PhysicalHasher(TransformerMixin, BaseEstimator):
    """Quantize feature rows into bins ``quantization_factor * sigma`` wide."""

    def __init__(self, noise_sigma=None, quantization_factor=DEFAULT_QUANTIZATION_FACTOR):
        self.noise_sigma = noise_sigma
        self.quantization_factor = quantization_factor

    def fit(self, X=None, y=None):
        if not (self.quantization_factor > 0 and math.isfinite(self.quantization_factor)):
            raise ConfigurationError("quantization_factor must be positive")
        if self.noise_sigma is None:
            raise ConfigurationError("noise_sigma is required")
        sigma = np.atleast_1d(np.asarray(self.noise_sigma, dtype=float))
        if np.any(~(sigma > 0)):
            raise ConfigurationError("noise_sigma entries must be positive")
        self.bin_width_ = self.quantization_factor * sigma
        self.n_features_in_ = sigma.size
        return self

    def transform(self, X):
        check_is_fitted(self, "bin_width_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return np.floor(X / self.bin_width_).astype(np.int64)


def physical_hash(fv: FeatureVector, quantization_factor: float = DEFAULT_QUANTIZATION_FACTOR) -> PhysicalHash:
    hasher = PhysicalHasher(fv.sigmas, quantization_factor).fit()
    cells = tuple(int(c) for c in hasher.transform(fv.values[None, :])[0])
    return PhysicalHash(fv.class_label, cells, fv, _bin_digest(fv.class_label, cells))


# --------------------------------------------------------------------------
# identity resolution


def coverage_threshold(n_features: int, coverage: float = 0.995) -> float:
    """Distance radius holding ``coverage`` of re-scans under unit-sigma noise.

    Under independent Gaussian noise the sigma-normalized distance of a
    re-scan from its clean reading is chi-distributed with ``n_features``
    degrees of freedom.
    """
    return float(math.sqrt(stats.chi2.ppf(coverage, n_features)))


def sigma_distances(x: np.ndarray, candidates: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return np.sqrt((((candidates - x[None, :]) / sigma[None, :]) ** 2).sum(axis=1))


class IdentityResolver(BaseEstimator):
    """Nearest-registered-instance matcher with a sigma-normalized gate.

    ``predict`` returns the matched label or ``None`` when the nearest
    candidate is farther than ``match_threshold``. Ties go to the smallest
    label.
    """

    def __init__(self, noise_sigma=None, match_threshold=DEFAULT_MATCH_THRESHOLD):
        self.noise_sigma = noise_sigma
        self.match_threshold = match_threshold

    def fit(self, X, y):
        if not (self.match_threshold > 0):
            raise ConfigurationError("match_threshold must be positive")
        X = check_array(X, dtype=float, ensure_min_samples=0)
        self.candidates_ = X
        self.labels_ = list(y)
        self.sigma_ = np.asarray(self.noise_sigma, dtype=float)
        return self

    def kneighbor(self, x):
        """(label, distance) of the nearest candidate, or (None, inf)."""
        check_is_fitted(self, "candidates_")
        if len(self.labels_) == 0:
            return None, math.inf
        d = sigma_distances(np.asarray(x, dtype=float), self.candidates_, self.sigma_)
        best = d.min()
        label = min(lbl for lbl, di in zip(self.labels_, d) if di == best)
        return label, float(best)

    def predict(self, X):
        X = check_array(X, dtype=float)
        out = []
        for x in X:
            label, dist = self.kneighbor(x)
            out.append(label if dist <= self.match_threshold else None)
        return np.array(out, dtype=object)


class Resolution(str, enum.Enum):
    RESOLVED = "Resolved"
    MINTED = "Minted"


@dataclass(frozen=True)
class Identity:
    identity_id: str
    physical_hash: PhysicalHash
    minted_at: int

    @property
    def digest(self) -> str:
        return digest(
            {
                "identity_id": self.identity_id,
                "physical_hash": self.physical_hash.digest,
                "minted_at": self.minted_at,
            }
        )

    def to_json(self) -> dict:
        ph = self.physical_hash
        return {
            "identity_id": self.identity_id,
            "minted_at": self.minted_at,
            "class_label": ph.class_label,
            "quantized_cells": list(ph.quantized_cells),
            "digest": ph.digest,
            "raw_features": ph.raw_features.to_json(),
        }

    @classmethod
    def from_json(cls, data) -> "Identity":
        fv = FeatureVector.from_json(data["raw_features"])
        ph = PhysicalHash(data["class_label"], tuple(data["quantized_cells"]), fv, data["digest"])
        if _bin_digest(ph.class_label, ph.quantized_cells) != ph.digest:
            raise ValidationError(f"identity {data['identity_id']}: digest does not match cells")
        return cls(data["identity_id"], ph, int(data["minted_at"]))


class IdentityRegistry:
    """Registry of minted identities with atomic resolve-or-mint.

    Identity ids are ``<prefix>-<n>`` with a zero-padded counter, so string
    order equals mint order.
    """

    def __init__(self, prefix: str = "cps", quantization_factor: float = DEFAULT_QUANTIZATION_FACTOR):
        self.prefix = prefix
        self.quantization_factor = quantization_factor
        self._lock = threading.Lock()
        self._by_class: dict[str, list[Identity]] = {}
        self._by_id: dict[str, Identity] = {}
        self._counter = 0
        self._clock = 0
        self.available = True

    def __len__(self):
        return len(self._by_id)

    def __iter__(self):
        return iter(sorted(self._by_id.values(), key=lambda i: i.identity_id))

    def __contains__(self, identity_id):
        return identity_id in self._by_id

    def get(self, identity_id: str) -> Identity:
        return self._by_id[identity_id]

    def candidates(self, class_label: str) -> list:
        return list(self._by_class.get(class_label, ()))

    def mint_or_resolve(self, fv: FeatureVector, match_threshold: float = DEFAULT_MATCH_THRESHOLD, at: int | None = None):
        """Return ``(identity, Resolution)`` for ``fv``; mints when nothing matches."""
        if not match_threshold > 0:
            raise ConfigurationError("match_threshold must be positive")
        if not self.available:
            raise StorageError("identity registry unavailable")
        with self._lock:
            cands = self._by_class.get(fv.class_label, [])
            if cands:
                resolver = IdentityResolver(fv.sigmas, match_threshold).fit(
                    np.array([c.physical_hash.raw_features.values for c in cands]),
                    [c.identity_id for c in cands],
                )
                label, dist = resolver.kneighbor(fv.values)
                if dist <= match_threshold:
                    return self._by_id[label], Resolution.RESOLVED
            self._counter += 1
            self._clock = max(self._clock + 1, at if at is not None else 0)
            ident = Identity(
                f"{self.prefix}-{self._counter:06d}",
                physical_hash(fv, self.quantization_factor),
                at if at is not None else self._clock,
            )
            self._by_class.setdefault(fv.class_label, []).append(ident)
            self._by_id[ident.identity_id] = ident
            return ident, Resolution.MINTED

    def to_json(self) -> dict:
        return {
            "prefix": self.prefix,
            "quantization_factor": self.quantization_factor,
            "counter": self._counter,
            "clock": self._clock,
            "identities": [i.to_json() for i in self],
        }

    @classmethod
    def from_json(cls, data) -> "IdentityRegistry":
        reg = cls(data.get("prefix", "cps"), data.get("quantization_factor", DEFAULT_QUANTIZATION_FACTOR))
        for item in data.get("identities", []):
            ident = Identity.from_json(item)
            reg._by_class.setdefault(ident.physical_hash.class_label, []).append(ident)
            reg._by_id[ident.identity_id] = ident
        reg._counter = int(data.get("counter", len(reg._by_id)))
        reg._clock = int(data.get("clock", 0))
        return reg


def mint_or_resolve(fv: FeatureVector, registry: IdentityRegistry, match_threshold: float = DEFAULT_MATCH_THRESHOLD, at=None):
    return registry.mint_or_resolve(fv, match_threshold, at=at)


def identify(answers, observation, catalog, schemas, registry, *, min_confidence=DEFAULT_MIN_CONFIDENCE,
             match_threshold=DEFAULT_MATCH_THRESHOLD, at=None):
    """Classify, characterize and resolve one observed asset.

    Returns ``(posterior, feature_vector, identity, resolution)``. Raises
    :class:`LowConfidenceError` when the top class posterior is below
    ``min_confidence``; nothing is minted in that case.
    """
    posterior = classify(answers, catalog)
    if posterior.confidence < min_confidence:
        raise LowConfidenceError(
            f"top class {posterior.top!r} has posterior {posterior.confidence:.3f} < {min_confidence}"
        )
    fv = characterize(posterior.top, observation, schemas)
    ident, kind = registry.mint_or_resolve(fv, match_threshold, at=at)
    return posterior, fv, ident, kind
