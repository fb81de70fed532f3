"""Group-wise topic summaries: reduce, cluster, and rank cluster terms by class-based TF-IDF."""

from __future__ import annotations

import csv
import re
import unicodedata
import warnings
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .reduce import ReduceError, fit_2d

DEFAULT_K = 5
DEFAULT_TERMS = 10
REPORT_COLUMNS = ("group", "topic_index", "rank", "term", "score", "n_sentences")

Tokenizer = Callable[[str], list[str]]


class TopicsError(Exception):
    pass


def load_stopwords(path: str | Path | None = None) -> frozenset[str]:
    if path is None:
        text = resources.files("ideoaxis").joinpath("data", "stopwords_ja.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def _script(ch: str) -> str:
    o = ord(ch)
    if 0x3041 <= o <= 0x309F:
        return "hira"
    if 0x30A0 <= o <= 0x30FF or 0x31F0 <= o <= 0x31FF:
        return "kata"
    if 0x4E00 <= o <= 0x9FFF or 0x3400 <= o <= 0x4DBF or ch in "々〆ヵヶ":
        return "kanji"
    if ch.isascii() and (ch.isalnum() or ch in "'-"):
        return "latin"
    return "other"


class ScriptTokenizer:
    """Dictionary-free tokenizer: runs of one script form candidate terms.

    Kanji and katakana runs are content terms; a hiragana run is function
    material (particles, inflection) and counts as a stop term. Kanji runs
    longer than ``max_run`` fall back to overlapping character bigrams.
    A lone kanji is usually a verb or adjective stem cut off from its
    inflection (思, 考), so single-kanji runs are dropped along with stopwords.
    Latin text is split on non-word characters and lowercased.
    """

    def __init__(self, stopwords: Iterable[str] | None = None, use_stopwords: bool = True, max_run: int = 6):
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.use_stopwords = use_stopwords
        self.max_run = max_run

    def runs(self, text: str) -> list[tuple[str, str]]:
        text = unicodedata.normalize("NFKC", text)
        out: list[tuple[str, str]] = []
        cur, kind = "", None
        for ch in text:
            k = _script(ch)
            if k == kind and k != "other":
                cur += ch
                continue
            if cur and kind != "other":
                out.append((kind, cur))
            cur, kind = ch, k
        if cur and kind != "other":
            out.append((kind, cur))
        return out

    def __call__(self, text: str) -> list[str]:
        terms = []
        for kind, run in self.runs(text):
            if kind == "latin":
                for w in re.split(r"[-']+", run.lower()):
                    if w:
                        terms.append(w)
                continue
            if kind == "hira":
                if not self.use_stopwords:
                    terms.append(run)
                continue
            if kind == "kanji" and len(run) > self.max_run:
                terms.extend(run[i:i + 2] for i in range(len(run) - 1))
                continue
            terms.append(run)
        if self.use_stopwords:
            terms = [t for t in terms if t not in self.stopwords and not (len(t) == 1 and _script(t) == "kanji")]
        return terms


class MorphTokenizer:
    """Nouns from a morphological analyzer (fugashi or janome, whichever is installed)."""

    def __init__(self, stopwords: Iterable[str] | None = None, use_stopwords: bool = True):
        self.stopwords = frozenset(stopwords) if stopwords is not None else load_stopwords()
        self.use_stopwords = use_stopwords
        try:
            import fugashi

            tagger = fugashi.Tagger()
            self._nouns = lambda s: [w.surface for w in tagger(s) if w.feature.pos1 == "名詞"]
        except ImportError:
            try:
                from janome.tokenizer import Tokenizer as Janome
            except ImportError as e:
                raise TopicsError("no morphological analyzer installed (fugashi or janome)") from e
            jt = Janome()
            self._nouns = lambda s: [t.surface for t in jt.tokenize(s) if t.part_of_speech.startswith("名詞")]

    def __call__(self, text: str) -> list[str]:
        terms = self._nouns(unicodedata.normalize("NFKC", text))
        if self.use_stopwords:
            terms = [t for t in terms if t not in self.stopwords]
        return terms


def make_tokenizer(kind: str = "script", use_stopwords: bool = True) -> Tokenizer:
    if kind == "script":
        return ScriptTokenizer(use_stopwords=use_stopwords)
    if kind == "morph":
        return MorphTokenizer(use_stopwords=use_stopwords)
    raise TopicsError(f"unknown tokenizer {kind!r}")


_default_tokenizer: ScriptTokenizer | None = None


def tokenize(sentence: str, tokenizer: Tokenizer | None = None) -> list[str]:
    global _default_tokenizer
    if tokenizer is None:
        if _default_tokenizer is None:
            _default_tokenizer = ScriptTokenizer()
        tokenizer = _default_tokenizer
    return tokenizer(sentence)


def cluster_group(sentence_vectors: np.ndarray, k: int = DEFAULT_K, seed: int = 0, method: str = "pca",
                  ) -> np.ndarray:
    """k-means (seeded k-means++) over the 2D reduction of the sentence vectors."""
    from sklearn.cluster import KMeans

    X = np.asarray(sentence_vectors, dtype=np.float64)
    n = len(X)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k:
        raise TopicsError(f"{n} sentences cannot form {k} clusters; use k <= {n}")
    if k == 1:
        return np.zeros(n, dtype=int)
    try:
        Z, _ = fit_2d(X, method, seed)
    except ReduceError:
        # constant or tiny data: nothing to separate
        Z = np.zeros((n, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(Z)
    return km.labels_.astype(int)


@dataclass(frozen=True)
class CTfidf:
    vocabulary: tuple[str, ...]
    scores: np.ndarray  # (n_classes, len(vocabulary))
    counts: np.ndarray

    def top_terms(self, c: int, T: int = DEFAULT_TERMS) -> list[tuple[str, float]]:
        """T highest-scoring terms present in class ``c``; ties by term."""
        row = self.scores[c]
        present = [(float(row[j]), t) for j, t in enumerate(self.vocabulary) if self.counts[c, j] > 0]
        present.sort(key=lambda st: (-st[0], st[1]))
        return [(t, s) for s, t in present[:T]]


def ctfidf(classes: Sequence[Iterable[str] | Mapping[str, int]]) -> CTfidf:
    """W(t, c) = tf(t, c) * ln(1 + A / f(t)), A the mean term count per class, f(t) the corpus count of t."""
    if not classes:
        raise TopicsError("need at least one class")
    counters = [Counter(c) if not isinstance(c, Mapping) else Counter(dict(c)) for c in classes]
    for i, c in enumerate(counters):
        if sum(c.values()) == 0:
            raise TopicsError(f"class {i} is empty")
    vocab = tuple(sorted(set().union(*counters)))
    col = {t: j for j, t in enumerate(vocab)}
    tf = np.zeros((len(counters), len(vocab)))
    for i, c in enumerate(counters):
        for t, n in c.items():
            tf[i, col[t]] = n
    f = tf.sum(axis=0)
    A = tf.sum() / len(counters)
    return CTfidf(vocab, tf * np.log1p(A / f), tf)


@dataclass(frozen=True)
class TopicSummary:
    group: str
    topic_index: int
    top_terms: tuple[tuple[str, float], ...]
    n_sentences: int


@dataclass
class TopicsReport:
    summaries: list[TopicSummary]
    errors: dict[str, str]

    def for_group(self, group: str) -> list[TopicSummary]:
        return [s for s in self.summaries if s.group == group]


def group_topics(group: str, tokens: Sequence[Sequence[str]], vectors: np.ndarray, k: int = DEFAULT_K,
                 T: int = DEFAULT_TERMS, seed: int = 0, method: str = "pca") -> list[TopicSummary]:
    labels = cluster_group(vectors, k, seed, method)
    sizes = Counter(labels.tolist())
    # topics numbered by size, largest first, as topic models conventionally do
    order = sorted(sizes, key=lambda c: (-sizes[c], c))
    bags = [Counter(t for i in np.flatnonzero(labels == c) for t in tokens[i]) for c in order]
    nonempty = [i for i, b in enumerate(bags) if b]
    scored = ctfidf([bags[i] for i in nonempty]) if nonempty else None
    out = []
    for rank_i, c in enumerate(order):
        terms: tuple = ()
        if scored is not None and rank_i in nonempty:
            terms = tuple(scored.top_terms(nonempty.index(rank_i), T))
        out.append(TopicSummary(group, rank_i, terms, sizes[c]))
    return out


def topics_report(groups: Mapping[str, tuple[Sequence[str], np.ndarray]], k: int = DEFAULT_K,
                  T: int = DEFAULT_TERMS, seed: int = 0, method: str = "pca",
                  tokenizer: Tokenizer | None = None) -> TopicsReport:
    """``groups`` maps a group name to (sentences, sentence vectors); one group failing leaves others intact."""
    summaries, errors = [], {}
    for name, (sentences, vectors) in groups.items():
        try:
            toks = [tokenize(s, tokenizer) for s in sentences]
            summaries.extend(group_topics(name, toks, np.asarray(vectors), k, T, seed, method))
        except (TopicsError, ReduceError) as e:
            errors[name] = str(e)
    return TopicsReport(summaries, errors)


def write_report(report: TopicsReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for s in report.summaries:
            if not s.top_terms:
                w.writerow([s.group, s.topic_index, "", "", "", s.n_sentences])
            for r, (term, score) in enumerate(s.top_terms):
                w.writerow([s.group, s.topic_index, r, term, repr(score), s.n_sentences])
        for g, msg in sorted(report.errors.items()):
            w.writerow([g, "error", "", msg, "", ""])


def read_report(path: str | Path) -> TopicsReport:
    rows: dict[tuple[str, int], list] = {}
    sizes: dict[tuple[str, int], int] = {}
    errors = {}
    with open(path, encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f, delimiter="\t"):
            if row["topic_index"] == "error":
                errors[row["group"]] = row["term"]
                continue
            key = (row["group"], int(row["topic_index"]))
            rows.setdefault(key, [])
            sizes[key] = int(row["n_sentences"])
            if row["rank"] != "":
                rows[key].append((int(row["rank"]), row["term"], float(row["score"])))
    summaries = [TopicSummary(g, i, tuple((t, s) for _, t, s in sorted(v)), sizes[(g, i)])
                 for (g, i), v in rows.items()]
    return TopicsReport(summaries, errors)


def render_table(report: TopicsReport, group_order: Sequence[str] = ("LEFT", "CENTER", "RIGHT")) -> str:
    """Plain-text grid: one row per topic index, one column per group, cells list quoted terms."""
    groups = [g for g in group_order if report.for_group(g) or g in report.errors]
    n_topics = max((s.topic_index + 1 for s in report.summaries), default=0)
    lines = ["Topics\t" + "\t".join(f"Group {i} ({g.title()})" for i, g in enumerate(groups))]
    cells = {(s.group, s.topic_index): ", ".join(f"'{t}'" for t, _ in s.top_terms) for s in report.summaries}
    for i in range(n_topics):
        row = [f"Topic {i}"]
        for g in groups:
            row.append(f"[error: {report.errors[g]}]" if g in report.errors else cells.get((g, i), ""))
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"

