"""Speaker stance profiles, reference axes, projection onto an axis, and group splits."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .embedding import EmbeddingCache, EmbeddingProvider, EmbeddingVector, embed_batch, l2_normalize, mean_vector
from .nlproc import SentenceUnit

GROUP_NAMES = ("LEFT", "CENTER", "RIGHT")
RESULT_COLUMNS = ("topic_id", "speaker_name", "party", "raw", "normalized", "group", "n_opinion_sentences")


class ScalingError(Exception):
    pass


class DegenerateAxisError(ScalingError):
    pass


class AxisMethod(str, Enum):
    PAIR = "PAIR"
    GENERATED = "GENERATED"


@dataclass(frozen=True)
class StanceProfile:
    speaker_name: str
    party: str
    topic_id: str
    mean_embedding: EmbeddingVector
    n_opinion_sentences: int
    n_speeches: int

    def to_json(self) -> dict:
        return {
            "speaker_name": self.speaker_name,
            "party": self.party,
            "topic_id": self.topic_id,
            "provider_id": self.mean_embedding.provider_id,
            "n_opinion_sentences": self.n_opinion_sentences,
            "n_speeches": self.n_speeches,
            "mean_embedding": self.mean_embedding.values.tolist(),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "StanceProfile":
        return cls(raw["speaker_name"], raw["party"], raw["topic_id"],
                   EmbeddingVector(np.asarray(raw["mean_embedding"]), raw["provider_id"]),
                   int(raw["n_opinion_sentences"]), int(raw["n_speeches"]))


@dataclass(frozen=True)
class ReferenceAxis:
    topic_id: str
    anchor_pro: EmbeddingVector
    anchor_con: EmbeddingVector
    direction: EmbeddingVector
    method: AxisMethod
    anchor_labels: tuple[str, str]
    provenance: dict = field(default_factory=dict)

    @property
    def length(self) -> float:
        diff = self.anchor_pro.values - self.anchor_con.values
        return math.sqrt(float(diff @ diff))

    def swapped(self) -> "ReferenceAxis":
        return _make_axis(self.topic_id, self.anchor_con, self.anchor_pro, self.method,
                          (self.anchor_labels[1], self.anchor_labels[0]), dict(self.provenance))

    def to_json(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "method": self.method.value,
            "anchor_labels": list(self.anchor_labels),
            "provider_id": self.direction.provider_id,
            "anchor_pro": self.anchor_pro.values.tolist(),
            "anchor_con": self.anchor_con.values.tolist(),
            "direction": self.direction.values.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, raw: dict) -> "ReferenceAxis":
        pid = raw["provider_id"]
        return cls(raw["topic_id"], EmbeddingVector(np.asarray(raw["anchor_pro"]), pid),
                   EmbeddingVector(np.asarray(raw["anchor_con"]), pid),
                   EmbeddingVector(np.asarray(raw["direction"]), pid), AxisMethod(raw["method"]),
                   tuple(raw["anchor_labels"]), raw.get("provenance", {}))


@dataclass(frozen=True)
class ProjectionResult:
    speaker_name: str
    party: str
    topic_id: str
    raw: float
    normalized: float
    group: str | None = None
    n_opinion_sentences: int = 0


@dataclass(frozen=True)
class OpinionSentence:
    """An opinion sentence joined to its speech's speaker metadata."""

    unit: SentenceUnit
    speaker_name: str
    party: str

    @property
    def key(self) -> tuple[str, int]:
        return (self.unit.speech_id, self.unit.index)


def build_profiles(sentences: Sequence[OpinionSentence], vectors: Mapping[tuple[str, int], EmbeddingVector],
                   topic_id: str, min_sentences: int = 5, normalize_sentence_vectors: bool = False,
                   ) -> tuple[list[StanceProfile], list[dict]]:
    """One profile per speaker: the mean of their opinion-sentence embeddings.

    Sentences are averaged in (speech_id, index) order. Speakers under
    ``min_sentences`` are left out and listed in the returned skip report.
    """
    if min_sentences < 1:
        raise ValueError("min_sentences must be >= 1")
    by_speaker: dict[str, list[OpinionSentence]] = defaultdict(list)
    for s in sentences:
        by_speaker[s.speaker_name].append(s)
    profiles, skipped = [], []
    for name in sorted(by_speaker):
        group = sorted(by_speaker[name], key=lambda s: s.key)
        if len(group) < min_sentences:
            skipped.append({"speaker_name": name, "n_opinion_sentences": len(group),
                            "reason": f"fewer than {min_sentences} opinion sentences"})
            continue
        vecs = []
        for s in group:
            if s.key not in vectors:
                raise ScalingError(f"no embedding for sentence {s.key}")
            v = vectors[s.key]
            vecs.append(l2_normalize(v) if normalize_sentence_vectors else v)
        parties = {s.party for s in group}
        if len(parties) != 1:
            raise ScalingError(f"{name}: sentences carry several parties {sorted(parties)}")
        profiles.append(StanceProfile(name, parties.pop(), topic_id, mean_vector(vecs), len(group),
                                      len({s.unit.speech_id for s in group})))
    return profiles, skipped


def _make_axis(topic_id: str, pro: EmbeddingVector, con: EmbeddingVector, method: AxisMethod,
               labels: tuple[str, str], provenance: dict | None = None) -> ReferenceAxis:
    if pro.provider_id != con.provider_id:
        raise ScalingError(f"anchors come from different providers: {pro.provider_id}, {con.provider_id}")
    if pro.dimension != con.dimension:
        raise ScalingError("anchor dimensions differ")
    diff = pro.values - con.values
    norm = math.sqrt(float(diff @ diff))
    if norm == 0.0:
        raise DegenerateAxisError(f"pro and con anchors coincide ({labels[0]} / {labels[1]})")
    return ReferenceAxis(topic_id, pro, con, EmbeddingVector(diff / norm, pro.provider_id), method, labels,
                         provenance or {})


def build_axis_from_pair(pro: StanceProfile, con: StanceProfile) -> ReferenceAxis:
    if pro.topic_id != con.topic_id:
        raise ScalingError(f"pair spans topics {pro.topic_id!r} and {con.topic_id!r}")
    return _make_axis(pro.topic_id, pro.mean_embedding, con.mean_embedding, AxisMethod.PAIR,
                      (pro.speaker_name, con.speaker_name))


def build_axis_from_seeds(pro_texts: Sequence[str], con_texts: Sequence[str], provider: EmbeddingProvider,
                          topic_id: str = "", cache: EmbeddingCache | None = None,
                          normalize_sentence_vectors: bool = False, provenance: dict | None = None,
                          ) -> ReferenceAxis:
    """Anchors are the mean embeddings of generated pro and con speeches."""
    if not pro_texts or not con_texts:
        raise ValueError("need at least one seed text per side")
    pro_v = embed_batch(list(pro_texts), provider, cache)
    con_v = embed_batch(list(con_texts), provider, cache)
    if normalize_sentence_vectors:
        pro_v = [l2_normalize(v) for v in pro_v]
        con_v = [l2_normalize(v) for v in con_v]
    return _make_axis(topic_id, mean_vector(pro_v), mean_vector(con_v), AxisMethod.GENERATED,
                      ("generated-pro", "generated-con"), provenance)


def project_vector(v: np.ndarray, axis: ReferenceAxis) -> tuple[float, float]:
    """(raw, normalized): signed distance from the con anchor along the axis, and that over the axis length."""
    if v.shape != axis.direction.values.shape:
        raise ScalingError(f"dimension mismatch: vector {v.shape[0]}, axis {axis.direction.dimension}")
    raw = float((v - axis.anchor_con.values) @ axis.direction.values)
    return raw, raw / axis.length


def project(profile: StanceProfile, axis: ReferenceAxis) -> ProjectionResult:
    if profile.mean_embedding.provider_id != axis.direction.provider_id:
        raise ScalingError(f"profile embedded by {profile.mean_embedding.provider_id}, "
                           f"axis by {axis.direction.provider_id}")
    raw, normalized = project_vector(profile.mean_embedding.values, axis)
    return ProjectionResult(profile.speaker_name, profile.party, profile.topic_id, raw, normalized,
                            None, profile.n_opinion_sentences)


def group_names(k: int) -> tuple[str, ...]:
    return GROUP_NAMES if k == 3 else tuple(f"G{i}" for i in range(k))


def split_sizes(n: int, k: int) -> list[int]:
    """Equal-frequency sizes; the remainder goes to the lowest groups first."""
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def split_groups(results: Sequence[ProjectionResult], k: int = 3) -> list[ProjectionResult]:
    """Label results by rank on normalized score (ties by speaker name); input order is kept."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(results) < k:
        raise ScalingError(f"need at least {k} results to split into {k} groups, got {len(results)}")
    order = sorted(range(len(results)), key=lambda i: (results[i].normalized, results[i].speaker_name))
    names = group_names(k)
    labels: list[str | None] = [None] * len(results)
    pos = 0
    for g, size in enumerate(split_sizes(len(results), k)):
        for i in order[pos:pos + size]:
            labels[i] = names[g]
        pos += size
    return [replace(r, group=lab) for r, lab in zip(results, labels)]


@dataclass(frozen=True)
class FiveNumber:
    party: str
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def party_summary(results: Iterable[ProjectionResult]) -> list[FiveNumber]:
    """Per-party (min, Q1, median, Q3, max) with linear-interpolation quartiles, by median ascending."""
    scores: dict[str, list[float]] = defaultdict(list)
    for r in results:
        if not r.party:
            raise ScalingError(f"{r.speaker_name} has no party")
        scores[r.party].append(r.normalized)
    out = []
    for party, xs in scores.items():
        a = np.asarray(xs)
        q = np.percentile(a, [0, 25, 50, 75, 100], method="linear")
        out.append(FiveNumber(party, len(xs), *map(float, q)))
    return sorted(out, key=lambda f: (f.median, f.party))


def sentence_level_groups(sentences: Sequence[OpinionSentence], vectors: Mapping[tuple[str, int], EmbeddingVector],
                          axis: ReferenceAxis, k: int = 3) -> dict[tuple[str, int], str]:
    """Tercile split over individual sentence projections instead of speaker means."""
    if len(sentences) < k:
        raise ScalingError(f"need at least {k} sentences")
    scored = []
    for s in sentences:
        _, x = project_vector(vectors[s.key].values, axis)
        scored.append((x, s.key))
    scored.sort()
    names = group_names(k)
    out, pos = {}, 0
    for g, size in enumerate(split_sizes(len(scored), k)):
        for _, key in scored[pos:pos + size]:
            out[key] = names[g]
        pos += size
    return out


def write_results(results: Sequence[ProjectionResult], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.topic_id, r.speaker_name, r.party, repr(r.raw), repr(r.normalized), r.group or "",
                        r.n_opinion_sentences])


def read_results(path: str | Path) -> list[ProjectionResult]:
    with open(path, encoding="utf-8", newline="") as f:
        return [ProjectionResult(row["speaker_name"], row["party"], row["topic_id"], float(row["raw"]),
                                 float(row["normalized"]), row["group"] or None, int(row["n_opinion_sentences"]))
                for row in csv.DictReader(f, delimiter="\t")]


def write_profiles(profiles: Sequence[StanceProfile], path: str | Path) -> None:
    Path(path).write_text("".join(json.dumps(p.to_json(), ensure_ascii=False) + "\n" for p in profiles),
                          encoding="utf-8")


def read_profiles(path: str | Path) -> list[StanceProfile]:
    with open(path, encoding="utf-8") as f:
        return [StanceProfile.from_json(json.loads(line)) for line in f if line.strip()]


def write_axis(axis: ReferenceAxis, path: str | Path) -> None:
    Path(path).write_text(json.dumps(axis.to_json(), ensure_ascii=False), encoding="utf-8")


def read_axis(path: str | Path) -> ReferenceAxis:
    return ReferenceAxis.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def write_party_summary(summary: Sequence[FiveNumber], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["party", "n", "min", "q1", "median", "q3", "max"])
        for s in summary:
            w.writerow([s.party, s.n, repr(s.minimum), repr(s.q1), repr(s.median), repr(s.q3), repr(s.maximum)])
