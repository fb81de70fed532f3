"""Agreement between pipeline party positions and expert party placements."""

from __future__ import annotations

import csv
import itertools
import json
import math
import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .scaling import ProjectionResult


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class ExpertPlacement:
    topic_id: str
    party: str
    stance: float
    source: str
    note: str = ""

    def __post_init__(self):
        if not -1.0 <= self.stance <= 1.0:
            raise ValueError(f"{self.party}: stance {self.stance} outside [-1, 1]")


@dataclass(frozen=True)
class PartyPosition:
    party: str
    position: float
    n_members: int


@dataclass
class AgreementReport:
    topic_id: str
    spearman_rho: float
    kendall_tau: float
    pairwise_accuracy: float
    n_parties: int
    n_comparable_pairs: int
    sign_checks: list[tuple[str, bool]] = field(default_factory=list)

    @property
    def checks_passed(self) -> bool:
        return all(ok for _, ok in self.sign_checks)

    def to_json(self) -> dict:
        d = asdict(self)
        d["sign_checks"] = [{"check": c, "pass": ok} for c, ok in self.sign_checks]
        d["checks_passed"] = self.checks_passed
        return d


def party_positions(results: Iterable[ProjectionResult], statistic: str = "median") -> dict[str, PartyPosition]:
    scores: dict[str, list[float]] = defaultdict(list)
    for r in results:
        scores[r.party].append(r.normalized)
    if not scores:
        raise EvalError("no projected members")
    agg = {"median": np.median, "mean": np.mean}.get(statistic)
    if agg is None:
        raise ValueError(f"unknown statistic {statistic!r}")
    return {p: PartyPosition(p, float(agg(xs)), len(xs)) for p, xs in sorted(scores.items())}


_SIDE = r"\s*(?:median\(\s*)?(\w[\w ,]*?)(?:\s*\))?\s*"
_CHECK = re.compile(rf"^{_SIDE}(<|>){_SIDE}$")


def parse_check(text: str) -> tuple[list[str], str, list[str]]:
    """'median(JCP) < median(LDP)' or 'JCP,CDP < LDP,NDP' -> (left parties, op, right parties)."""
    m = _CHECK.match(text)
    if not m:
        raise EvalError(f"cannot parse check {text!r}; expected 'A < B' or 'median(A) > median(B)'")
    left = [p.strip() for p in m.group(1).split(",") if p.strip()]
    right = [p.strip() for p in m.group(3).split(",") if p.strip()]
    return left, m.group(2), right


def evaluate_check(text: str, ours: Mapping[str, float]) -> bool:
    left, op, right = parse_check(text)
    missing = [p for p in left + right if p not in ours]
    if missing:
        raise EvalError(f"check {text!r} names parties without a position: {missing}")
    if op == "<":
        return all(ours[a] < ours[b] for a in left for b in right)
    return all(ours[a] > ours[b] for a in left for b in right)


def _positions(ours: Mapping[str, PartyPosition | float]) -> dict[str, float]:
    return {p: (v.position if isinstance(v, PartyPosition) else float(v)) for p, v in ours.items()}


def pairwise_accuracy(ours: Mapping[str, float], expert: Mapping[str, float]) -> tuple[float, int]:
    """Share of expert-strictly-ordered pairs that ours orders the same way (ties in ours count as misses)."""
    concordant = comparable = 0
    for a, b in itertools.combinations(sorted(expert), 2):
        if expert[a] == expert[b]:
            continue
        comparable += 1
        if (expert[a] - expert[b]) * (ours[a] - ours[b]) > 0:
            concordant += 1
    return (concordant / comparable if comparable else math.nan), comparable


def rank_agreement(ours: Mapping[str, PartyPosition | float], expert: Sequence[ExpertPlacement],
                   checks: Sequence[str] = (), topic_id: str | None = None) -> AgreementReport:
    pos = _positions(ours)
    exp = {e.party: e.stance for e in expert}
    if len(exp) != len(expert):
        raise EvalError("expert placements repeat a party")
    common = sorted(set(pos) & set(exp))
    if len(common) < 3:
        raise EvalError(f"need at least 3 parties common to both sources, got {common}")
    x = np.array([pos[p] for p in common])
    y = np.array([exp[p] for p in common])
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = float(stats.spearmanr(x, y).statistic) if np.ptp(x) and np.ptp(y) else math.nan
        tau = float(stats.kendalltau(x, y).statistic) if np.ptp(x) and np.ptp(y) else math.nan
    acc, n_pairs = pairwise_accuracy({p: pos[p] for p in common}, {p: exp[p] for p in common})
    tid = topic_id if topic_id is not None else (expert[0].topic_id if expert else "")
    return AgreementReport(tid, rho, tau, acc, len(common), n_pairs,
                           [(c, evaluate_check(c, pos)) for c in checks])


def read_expert(path: str | Path, topic_id: str | None = None) -> list[ExpertPlacement]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = [ExpertPlacement(r["topic_id"], r["party"], float(r["stance"]), r.get("source", ""),
                                r.get("note", "") or "") for r in csv.DictReader(f)]
    if topic_id is not None:
        rows = [r for r in rows if r.topic_id == topic_id]
    seen = set()
    for r in rows:
        if (r.topic_id, r.party) in seen:
            raise EvalError(f"{path}: party {r.party} repeated for topic {r.topic_id}")
        seen.add((r.topic_id, r.party))
    return rows


def shipped_expert(name: str) -> Path:
    return Path(str(resources.files("ideoaxis").joinpath("data", "expert", name)))


def read_checks(path: str | Path) -> list[str]:
    """One check per line; '#' comments and blank lines ignored."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def write_report(report: AgreementReport, positions: Mapping[str, PartyPosition], path: str | Path) -> None:
    doc = report.to_json()
    doc["party_positions"] = {p: {"position": v.position, "n_members": v.n_members} for p, v in positions.items()}
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")
