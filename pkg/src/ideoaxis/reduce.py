"""2D reduction of speaker/anchor embeddings and the anchor-annotated scatter plot."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from html import escape
from pathlib import Path
from typing import Sequence

import numpy as np


class ReduceError(Exception):
    pass


class PointKind(str, Enum):
    SPEAKER = "SPEAKER"
    ANCHOR_PRO = "ANCHOR_PRO"
    ANCHOR_CON = "ANCHOR_CON"
    SEED_SENTENCE = "SEED_SENTENCE"


@dataclass(frozen=True)
class PlanarPoint:
    id: str
    x: float
    y: float
    kind: PointKind = PointKind.SPEAKER
    party: str | None = None

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"point {self.id}: non-finite coordinates")


def pca_2d(X: np.ndarray) -> tuple[np.ndarray, dict]:
    """Project centered rows onto the top two principal directions.

    Each direction's sign is fixed so its largest-magnitude loading is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    C = X - mean
    if not np.any(C):
        raise ReduceError("data has zero variance; PCA is undefined")
    _, s, Vt = np.linalg.svd(C, full_matrices=False)
    comps = Vt[:2].copy()
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    coords = C @ comps.T
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - coords.shape[1]))])
    var = s ** 2
    explained = (var[:2] / var.sum()).tolist() if var.sum() > 0 else [0.0, 0.0]
    return coords, {"method": "pca", "explained_variance_ratio": explained}


def umap_2d(X: np.ndarray, seed: int = 0, n_neighbors: int = 15, min_dist: float = 0.1,
            metric: str = "cosine") -> tuple[np.ndarray, dict]:
    try:
        import umap
    except ImportError as e:
        raise ReduceError("UMAP requested but umap-learn is not installed (pip install ideoaxis[umap])") from e
    n_neighbors = min(n_neighbors, len(X) - 1)
    reducer = umap.UMAP(n_components=2, n_neighbors=n_neighbors, min_dist=min_dist, metric=metric,
                        random_state=seed)
    coords = np.asarray(reducer.fit_transform(np.asarray(X, dtype=np.float64)), dtype=np.float64)
    return coords, {"method": "umap", "seed": seed, "n_neighbors": n_neighbors, "min_dist": min_dist,
                    "metric": metric}


def fit_2d(X: np.ndarray, method: str = "pca", seed: int = 0, **params) -> tuple[np.ndarray, dict]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ReduceError("need at least 2 vectors of equal dimension")
    method = method.lower()
    if method == "pca":
        coords, meta = pca_2d(X)
        meta["seed"] = seed
        return coords, meta
    if method == "umap":
        if len(X) < 3:
            raise ReduceError("UMAP needs at least 3 vectors")
        return umap_2d(X, seed, **params)
    raise ReduceError(f"unknown reduction method {method!r}")


def reduce_2d(vectors: Sequence[np.ndarray] | np.ndarray, ids: Sequence[str] | None = None,
              kinds: Sequence[PointKind] | None = None, parties: Sequence[str | None] | None = None,
              method: str = "pca", seed: int = 0, **params) -> tuple[list[PlanarPoint], dict]:
    """Jointly reduce every vector (anchors included) in one fit."""
    X = np.asarray([np.asarray(v, dtype=np.float64) for v in vectors])
    n = len(X)
    ids = list(ids) if ids is not None else [str(i) for i in range(n)]
    kinds = list(kinds) if kinds is not None else [PointKind.SPEAKER] * n
    parties = list(parties) if parties is not None else [None] * n
    if not len(ids) == len(kinds) == len(parties) == n:
        raise ReduceError("ids/kinds/parties must match the number of vectors")
    coords, meta = fit_2d(X, method, seed, **params)
    points = [PlanarPoint(i, float(x), float(y), k, p) for i, (x, y), k, p in zip(ids, coords, kinds, parties)]
    return points, meta


def anchor_line_angle(a_pro: Sequence[float], a_con: Sequence[float], b_pro: Sequence[float],
                      b_con: Sequence[float]) -> float:
    """Angle in degrees, in [0, 180], between two con->pro anchor segments in the plane."""
    u = np.subtract(a_pro, a_con)
    v = np.subtract(b_pro, b_con)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ReduceError("anchor segment has zero length")
    # half-angle form; acos loses precision near 0 and 180 degrees
    a, b = u / nu, v / nv
    return math.degrees(2 * math.atan2(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b))))


PARTY_COLORS = {
    "LDP": "#2ca02c",
    "NDP": "#ff7f0e",
    "CDP": "#17becf",
    "JCP": "#8c564b",
    "Komeito": "#e377c2",
    "JRP": "#bcbd22",
}
PRO_COLOR = "#1f4fd8"
CON_COLOR = "#d62728"


def render_svg(points: Sequence[PlanarPoint], title: str = "", width: int = 640, height: int = 480) -> str:
    """Scatter of speakers by party, enlarged blue/red anchors, and a black line joining the anchors."""
    pro = [p for p in points if p.kind is PointKind.ANCHOR_PRO]
    con = [p for p in points if p.kind is PointKind.ANCHOR_CON]
    if len(pro) != 1 or len(con) != 1:
        raise ReduceError("plot needs exactly one pro and one con anchor")
    xs = [p.x for p in points]
    ys = [p.y for p in points]
    pad = 40
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = (width - 2 * pad) / ((x1 - x0) or 1.0)
    sy = (height - 2 * pad) / ((y1 - y0) or 1.0)

    def tx(p: PlanarPoint) -> tuple[float, float]:
        return pad + (p.x - x0) * sx, height - pad - (p.y - y0) * sy

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">']
    if title:
        out.append(f'<title>{escape(title)}</title>')
    out.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>')
    (ax, ay), (bx, by) = tx(pro[0]), tx(con[0])
    out.append(f'<line x1="{ax:.3f}" y1="{ay:.3f}" x2="{bx:.3f}" y2="{by:.3f}" stroke="black" stroke-width="2"/>')
    for p in points:
        if p.kind in (PointKind.ANCHOR_PRO, PointKind.ANCHOR_CON):
            continue
        cx, cy = tx(p)
        color = PARTY_COLORS.get(p.party or "", "#7f7f7f")
        out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="4" fill="{color}" fill-opacity="0.8">'
                   f'<title>{escape(p.id)} ({escape(p.party or "")})</title></circle>')
    for p, color in ((pro[0], PRO_COLOR), (con[0], CON_COLOR)):
        cx, cy = tx(p)
        out.append(f'<circle cx="{cx:.3f}" cy="{cy:.3f}" r="10" fill="{color}">'
                   f'<title>{escape(p.id)}</title></circle>')
    ly = pad
    for party, color in PARTY_COLORS.items():
        out.append(f'<text x="{width - pad - 60}" y="{ly}" font-size="11" fill="{color}">{party}</text>')
        ly += 14
    out.append("</svg>")
    return "\n".join(out) + "\n"


def sidecar_doc(points: Sequence[PlanarPoint], metadata: dict) -> dict:
    return {
        "metadata": metadata,
        "columns": ["id", "kind", "party", "x", "y"],
        "rows": [[p.id, p.kind.value, p.party, p.x, p.y] for p in points],
    }


def points_from_sidecar(doc: dict) -> tuple[list[PlanarPoint], dict]:
    points = [PlanarPoint(i, float(x), float(y), PointKind(k), party) for i, k, party, x, y in doc["rows"]]
    return points, doc["metadata"]


def plot_payload(points: Sequence[PlanarPoint], axis_meta: dict, out_dir: str | Path, stem: str = "plot",
                 reducer_meta: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.svg`` plus a ``<stem>.json`` sidecar that alone suffices to redraw it."""
    kinds = {p.kind for p in points}
    if PointKind.ANCHOR_PRO not in kinds or PointKind.ANCHOR_CON not in kinds:
        raise ReduceError("points must include both anchors")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"axis": axis_meta, "reducer": reducer_meta or {}}
    title = f"{axis_meta.get('topic_id', '')} ({axis_meta.get('method', '')})".strip()
    meta["title"] = title
    svg_path, side_path = out_dir / f"{stem}.svg", out_dir / f"{stem}.json"
    svg_path.write_text(render_svg(points, title), encoding="utf-8")
    side_path.write_text(json.dumps(sidecar_doc(points, meta), ensure_ascii=False, indent=1), encoding="utf-8")
    return svg_path, side_path


def render_from_sidecar(path: str | Path) -> str:
    points, meta = points_from_sidecar(json.loads(Path(path).read_text(encoding="utf-8")))
    return render_svg(points, meta.get("title", ""))
