"""Sentence segmentation and five-way sentence-type classification."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

from .embedding import EmbeddingCache, EmbeddingProvider, embed_batch

WEIGHTS_SCHEMA_VERSION = 1
MIN_SENTENCE_CHARS = 4

TERMINATORS = set("。！？!?")
OPEN_BRACKETS = {"「": "」", "『": "』", "（": "）", "(": ")", "【": "】"}
CLOSE_BRACKETS = {v: k for k, v in OPEN_BRACKETS.items()}


class Label(str, Enum):
    # declaration order is the argmax tie-break order
    OPINION = "OPINION"
    FACT = "FACT"
    QUESTION = "QUESTION"
    DESCRIPTION = "DESCRIPTION"
    OTHER = "OTHER"


LABEL_ORDER = tuple(Label)


class ClassifierError(Exception):
    pass


@dataclass(frozen=True)
class SentenceUnit:
    speech_id: str
    index: int
    text: str
    label: Label
    confidence: float

    def __post_init__(self):
        if not self.text:
            raise ValueError("sentence text must be non-empty")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.index < 0:
            raise ValueError("index must be >= 0")

    def to_json(self) -> dict:
        return {"speech_id": self.speech_id, "index": self.index, "text": self.text,
                "label": self.label.value, "confidence": self.confidence}

    @classmethod
    def from_json(cls, raw: dict) -> "SentenceUnit":
        return cls(raw["speech_id"], int(raw["index"]), raw["text"], Label(raw["label"]), float(raw["confidence"]))


def segment(text: str) -> list[str]:
    """Split after 。！？!? (and '.' before whitespace or at the end), outside brackets/quotes.

    A run of terminators ends one sentence. Unbalanced closing brackets are
    ignored, so a stray 」 cannot hide the rest of a speech.
    """
    text = text.strip()
    out: list[str] = []
    stack: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in OPEN_BRACKETS:
            stack.append(OPEN_BRACKETS[ch])
        elif ch in CLOSE_BRACKETS and stack and stack[-1] == ch:
            stack.pop()
        elif not stack and (ch in TERMINATORS or (ch == "." and (i + 1 == n or text[i + 1].isspace()))):
            j = i + 1
            while j < n and (text[j] in TERMINATORS or text[j] == "."):
                j += 1
            piece = text[start:j].strip()
            if piece:
                out.append(piece)
            start = i = j
            continue
        i += 1
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


@dataclass(frozen=True)
class LabeledSet:
    items: tuple[tuple[str, Label], ...]
    provenance: str = ""

    def __post_init__(self):
        if not self.items:
            raise ValueError("labeled set is empty")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def texts(self) -> list[str]:
        return [t for t, _ in self.items]

    @property
    def labels(self) -> list[Label]:
        return [lab for _, lab in self.items]

    @classmethod
    def from_tsv(cls, path: str | Path, provenance: str | None = None) -> "LabeledSet":
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f, delimiter="\t")
            if reader.fieldnames is None or not {"text", "label"} <= set(reader.fieldnames):
                raise ValueError(f"{path}: header must contain 'text' and 'label'")
            items = tuple((row["text"], Label(row["label"].strip().upper())) for row in reader)
        return cls(items, provenance or str(path))

    def to_tsv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["text", "label"])
            for t, lab in self.items:
                w.writerow([t, lab.value])

    def split(self, test_fraction: float = 0.2, seed: int = 0) -> tuple["LabeledSet", "LabeledSet"]:
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self.items))
        n_test = int(round(len(self.items) * test_fraction))
        test = tuple(self.items[i] for i in sorted(perm[:n_test]))
        train = tuple(self.items[i] for i in sorted(perm[n_test:]))
        return LabeledSet(train, self.provenance + " [train]"), LabeledSet(test, self.provenance + " [test]")


class SentenceClassifier(Protocol):
    labels: tuple[Label, ...]

    def decision(self, texts: Sequence[str]) -> np.ndarray:
        """Per-label probabilities, shape (len(texts), len(labels))."""
        ...


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearSentenceClassifier:
    """Multinomial logistic regression over provider embeddings."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray, labels: Sequence[Label],
                 provider: EmbeddingProvider, cache: EmbeddingCache | None = None):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (provider.descriptor.dimension, len(labels)):
            raise ClassifierError(
                f"weights shape {weights.shape} does not fit provider dimension "
                f"{provider.descriptor.dimension} x {len(labels)} labels")
        self.weights = weights
        self.bias = np.asarray(bias, dtype=np.float64)
        self.labels = tuple(labels)
        self.provider = provider
        self.cache = cache
        self.eval_macro_f1: float | None = None

    def features(self, texts: Sequence[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.weights.shape[0]))
        return np.stack([v.values for v in embed_batch(texts, self.provider, self.cache)])

    def decision(self, texts: Sequence[str]) -> np.ndarray:
        return _softmax(self.features(texts) @ self.weights + self.bias)

    def predict(self, texts: Sequence[str]) -> list[Label]:
        if not texts:
            return []
        return [self.labels[i] for i in np.argmax(self.decision(texts), axis=1)]

    def save(self, path: str | Path) -> None:
        doc = {
            "schema_version": WEIGHTS_SCHEMA_VERSION,
            "kind": "linear-softmax",
            "provider_id": self.provider.descriptor.provider_id,
            "labels": [lab.value for lab in self.labels],
            "dimension": int(self.weights.shape[0]),
            "n_labels": int(self.weights.shape[1]),
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist(),
            "eval_macro_f1": self.eval_macro_f1,
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_classifier(path: str | Path, provider: EmbeddingProvider,
                    cache: EmbeddingCache | None = None) -> LinearSentenceClassifier:
    """Load a weights file, refusing one whose dimension differs from the provider's."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != WEIGHTS_SCHEMA_VERSION:
        raise ClassifierError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    if doc["dimension"] != provider.descriptor.dimension:
        raise ClassifierError(
            f"{path}: weights expect dimension {doc['dimension']}, provider "
            f"{provider.descriptor.provider_id} gives {provider.descriptor.dimension}")
    weights = np.asarray(doc["weights"], dtype=np.float64)
    if weights.shape != (doc["dimension"], doc["n_labels"]):
        raise ClassifierError(f"{path}: weight matrix is {weights.shape}, header says "
                              f"({doc['dimension']}, {doc['n_labels']})")
    clf = LinearSentenceClassifier(weights, doc["bias"], [Label(x) for x in doc["labels"]], provider, cache)
    clf.eval_macro_f1 = doc.get("eval_macro_f1")
    return clf


def macro_f1(gold: Sequence[Label], pred: Sequence[Label]) -> float:
    """Mean per-class F1 over the labels present in ``gold``."""
    classes = [lab for lab in LABEL_ORDER if lab in set(gold)]
    scores = []
    for c in classes:
        tp = sum(g == c and p == c for g, p in zip(gold, pred))
        fp = sum(g != c and p == c for g, p in zip(gold, pred))
        fn = sum(g == c and p != c for g, p in zip(gold, pred))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def train_classifier(train: LabeledSet, provider: EmbeddingProvider, *, eval_set: LabeledSet | None = None,
                     seed: int = 0, epochs: int = 300, learning_rate: float = 0.5, l2: float = 1e-4,
                     cache: EmbeddingCache | None = None) -> LinearSentenceClassifier:
    """Full-batch gradient descent on softmax cross-entropy, weights initialized from ``seed``.

    Only labels present in ``train`` get output columns. If ``eval_set`` is
    given, its macro-F1 is stored on the classifier as ``eval_macro_f1``.
    """
    present = [lab for lab in LABEL_ORDER if lab in set(train.labels)]
    if len(present) < 2:
        raise ClassifierError("training set needs at least two distinct labels")
    clf = LinearSentenceClassifier(np.zeros((provider.descriptor.dimension, len(present))),
                                   np.zeros(len(present)), present, provider, cache)
    X = clf.features(train.texts)
    col = {lab: i for i, lab in enumerate(present)}
    Y = np.zeros((len(train), len(present)))
    Y[np.arange(len(train)), [col[lab] for lab in train.labels]] = 1.0

    rng = np.random.default_rng(seed)
    W = rng.normal(scale=0.01, size=(X.shape[1], len(present)))
    b = np.zeros(len(present))
    n = len(train)
    for _ in range(epochs):
        P = _softmax(X @ W + b)
        G = (P - Y) / n
        W -= learning_rate * (X.T @ G + l2 * W)
        b -= learning_rate * G.sum(axis=0)
    clf.weights, clf.bias = W, b
    if eval_set is not None:
        clf.eval_macro_f1 = macro_f1(eval_set.labels, clf.predict(eval_set.texts))
    return clf


def classify(sentences: Sequence[str], classifier: SentenceClassifier, speech_id: str = "",
             start_index: int = 0) -> list[SentenceUnit]:
    """Label each sentence by argmax (ties go to the earliest label); confidence is the top probability."""
    if not sentences:
        return []
    probs = classifier.decision(list(sentences))
    top = np.argmax(probs, axis=1)
    return [
        SentenceUnit(speech_id, start_index + i, s, classifier.labels[k], float(min(1.0, max(0.0, probs[i, k]))))
        for i, (s, k) in enumerate(zip(sentences, top))
    ]


def speech_sentences(text: str, min_chars: int = MIN_SENTENCE_CHARS) -> list[str]:
    """Segments kept for classification: those with at least ``min_chars`` non-space characters."""
    return [s for s in segment(text) if len(s.strip()) >= min_chars]


def classify_speech(speech_id: str, text: str, classifier: SentenceClassifier,
                    min_chars: int = MIN_SENTENCE_CHARS) -> list[SentenceUnit]:
    return classify(speech_sentences(text, min_chars), classifier, speech_id)


def filter_opinions(units: Iterable[SentenceUnit]) -> list[SentenceUnit]:
    return [u for u in units if u.label is Label.OPINION]


def dump_units(units: Iterable[SentenceUnit]) -> str:
    return "".join(json.dumps(u.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for u in units)


def load_units(path: str | Path) -> list[SentenceUnit]:
    with open(path, encoding="utf-8") as f:
        return [SentenceUnit.from_json(json.loads(line)) for line in f if line.strip()]
