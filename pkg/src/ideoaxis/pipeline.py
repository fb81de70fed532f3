"""Stage-by-stage pipeline with a content-hash manifest for resumability and provenance."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
from collections import defaultdict
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import corpus, embedding, evalcmp, nlproc, reduce, scaling, seedgen, topics
from .config import PipelineConfig

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"


class Stage(str, Enum):
    INGEST = "INGEST"
    CLASSIFY = "CLASSIFY"
    EMBED = "EMBED"
    PROFILE = "PROFILE"
    AXIS = "AXIS"
    SCALE = "SCALE"
    TOPICS = "TOPICS"
    PLOT = "PLOT"
    VALIDATE = "VALIDATE"


STAGES = tuple(Stage)

DEPENDS = {
    Stage.INGEST: (),
    Stage.CLASSIFY: (Stage.INGEST,),
    Stage.EMBED: (Stage.CLASSIFY,),
    Stage.PROFILE: (Stage.EMBED,),
    Stage.AXIS: (Stage.PROFILE,),
    Stage.SCALE: (Stage.PROFILE, Stage.AXIS),
    Stage.TOPICS: (Stage.EMBED, Stage.AXIS, Stage.SCALE),
    Stage.PLOT: (Stage.PROFILE, Stage.AXIS),
    Stage.VALIDATE: (Stage.SCALE,),
}


class PipelineError(Exception):
    pass


class MissingUpstreamError(PipelineError):
    pass


class StaleArtifactError(PipelineError):
    pass


class StagePathError(PipelineError):
    pass


class ChecksFailed(PipelineError):
    pass


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def dir_hash(path: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(x for x in path.rglob("*") if x.is_file()):
        h.update(p.relative_to(path).as_posix().encode())
        h.update(b"\0" + file_hash(p).encode() + b"\n")
    return h.hexdigest()


def _canon(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, default=str, separators=(",", ":"))


@dataclass
class StageResult:
    stage: Stage
    status: str
    outputs: dict[str, str]

    @property
    def ok(self) -> bool:
        return self.status in ("ok", "cache_hit")


class Manifest:
    """Append-only JSONL log of stage runs in the output directory."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / MANIFEST

    def entries(self) -> list[dict]:
        if not self.path.exists():
            return []
        with open(self.path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def latest(self, stage: Stage) -> dict | None:
        for e in reversed(self.entries()):
            if e["stage"] == stage.value and e["status"] in ("ok", "cache_hit", "checks_failed"):
                return e
        return None

    def append(self, entry: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")


class Runner:
    def __init__(self, config: PipelineConfig, offline: bool = False, client_factory: Callable | None = None):
        self.cfg = config
        self.offline = offline
        self.out = Path(config.output_dir)
        self.manifest = Manifest(self.out)
        self.client_factory = client_factory
        self._provider = None
        self._cache = None

    # ---- helpers -------------------------------------------------------------------------
    def rel(self, p: Path) -> str:
        """Outputs relative to the output dir, anything else relative to the config dir."""
        p = Path(p).resolve()
        try:
            return p.relative_to(self.out.resolve()).as_posix()
        except ValueError:
            return Path(os.path.relpath(p, self.cfg.base_dir.resolve())).as_posix()

    def tdir(self, topic_id: str) -> Path:
        d = self.out / topic_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def provider(self):
        if self._provider is None:
            pc = self.cfg.provider
            self._provider = embedding.make_provider(pc.kind, dimension=pc.dimension, seed=pc.seed, model=pc.model,
                                                     endpoint=pc.endpoint, batch_size=pc.batch_size,
                                                     offline=self.offline)
        return self._provider

    @property
    def cache(self):
        if self._cache is None:
            self._cache = embedding.EmbeddingCache(self.cfg.cache_dir)
        return self._cache

    def provider_params(self) -> dict:
        pc = self.cfg.provider
        return {"kind": pc.kind, "dimension": pc.dimension, "seed": pc.seed, "model": pc.model}

    def upstream(self, stage: Stage) -> dict[str, str]:
        """Verified outputs of the stages ``stage`` depends on."""
        inputs = {}
        for dep in DEPENDS[stage]:
            entry = self.manifest.latest(dep)
            if entry is None:
                raise MissingUpstreamError(f"{stage.value} needs {dep.value} output: run {dep.value} first")
            for rel, digest in entry["outputs"].items():
                p = self.out / rel
                if not p.exists():
                    raise MissingUpstreamError(f"{rel} from {dep.value} is missing: run {dep.value} first")
                if file_hash(p) != digest:
                    raise StaleArtifactError(f"{rel} changed since {dep.value} wrote it: rerun {dep.value}")
                inputs[rel] = digest
        return inputs

    # ---- stage driver --------------------------------------------------------------------
    def run_stage(self, stage: Stage, force: bool = False) -> StageResult:
        stage = Stage(stage)
        inputs = self.upstream(stage)
        params, extra_inputs = getattr(self, f"_params_{stage.value.lower()}")()
        inputs.update(extra_inputs)
        key = hashlib.sha256(_canon({"stage": stage.value, "params": params, "inputs": inputs}).encode()).hexdigest()
        prior = self.manifest.latest(stage)
        if not force and prior and prior["key"] == key and all(
                (self.out / r).exists() and file_hash(self.out / r) == h for r, h in prior["outputs"].items()):
            status = "cache_hit" if prior["status"] != "checks_failed" else "checks_failed"
            self.manifest.append(self._entry(stage, key, params, inputs, prior["outputs"], status))
            log.info("%s: inputs unchanged, skipping", stage.value)
            return StageResult(stage, status, prior["outputs"])
        written, status = getattr(self, f"_run_{stage.value.lower()}")()
        outputs = {self.rel(p): file_hash(p) for p in written}
        self.manifest.append(self._entry(stage, key, params, inputs, outputs, status))
        return StageResult(stage, status, outputs)

    def _entry(self, stage, key, params, inputs, outputs, status) -> dict:
        return {"stage": stage.value, "key": key, "status": status, "params": json.loads(_canon(params)),
                "inputs": inputs, "outputs": outputs,
                "time": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")}

    # ---- INGEST --------------------------------------------------------------------------
    def _params_ingest(self):
        api = self.cfg.api
        extra = {}
        if self.cfg.roster is not None and Path(self.cfg.roster).exists():
            extra[self.rel(self.cfg.roster)] = file_hash(self.cfg.roster)
        if api.fixture_dir is not None and Path(api.fixture_dir).exists():
            extra[self.rel(api.fixture_dir) + "/"] = dir_hash(api.fixture_dir)
        params = {"topics": [{"id": t.id, "query_words": t.query_words, "date_from": t.date_from,
                              "date_to": t.date_to, "house": t.house} for t in self.cfg.topics],
                  "base_url": api.base_url, "page_size": api.page_size, "offline": self.offline}
        return params, extra

    def make_client(self) -> corpus.DietClient:
        if self.client_factory is not None:
            return self.client_factory()
        api = self.cfg.api
        transport = None
        if api.fixture_dir is not None:
            import httpx

            live = None if self.offline or not api.record else httpx.HTTPTransport()
            transport = corpus.RecordedTransport(api.fixture_dir, record_with=live)
        elif self.offline:
            raise StagePathError("offline ingest needs api.fixture_dir with recorded responses")
        replay = transport is not None and not api.record
        return corpus.DietClient(api.base_url, page_size=api.page_size,
                                 min_interval=0.0 if replay else api.min_interval,
                                 max_retries=api.max_retries, backoff=api.backoff, transport=transport)

    def load_roster(self) -> corpus.SpeakerRoster:
        if self.cfg.roster is None:
            raise StagePathError("no roster configured (set 'roster' in the config)")
        if not Path(self.cfg.roster).exists():
            raise StagePathError(f"roster file not found: {self.cfg.roster}")
        return corpus.SpeakerRoster.from_csv(self.cfg.roster)

    def _run_ingest(self):
        roster = self.load_roster()
        written = []
        with self.make_client() as client:
            for t in self.cfg.topics:
                recs = corpus.build_topic_corpus(t.spec(), roster, client, max_workers=self.cfg.api.max_workers)
                path = self.tdir(t.id) / "corpus.jsonl"
                corpus.store_corpus(recs, path)
                log.info("INGEST %s: %d speeches", t.id, len(recs))
                written.append(path)
        return written, "ok"

    # ---- CLASSIFY ------------------------------------------------------------------------
    def _params_classify(self):
        cc = self.cfg.classifier
        extra = {}
        for p in (cc.path, cc.train_data):
            if p is not None:
                if not Path(p).exists():
                    raise StagePathError(f"classifier file not found: {p}")
                extra[self.rel(p)] = file_hash(p)
        return {"provider": self.provider_params(), "seed": cc.seed, "test_fraction": cc.test_fraction,
                "min_chars": cc.min_chars, "source": "weights" if cc.path else "train"}, extra

    def load_or_train_classifier(self) -> tuple[nlproc.LinearSentenceClassifier, list[Path]]:
        cc = self.cfg.classifier
        if cc.path is not None:
            return nlproc.load_classifier(cc.path, self.provider, self.cache), []
        data = nlproc.LabeledSet.from_tsv(cc.train_data, provenance=self.rel(cc.train_data))
        train, test = data.split(cc.test_fraction, cc.seed) if cc.test_fraction > 0 else (data, None)
        clf = nlproc.train_classifier(train, self.provider, eval_set=test, seed=cc.seed, cache=self.cache)
        path = self.out / "classifier.json"
        self.out.mkdir(parents=True, exist_ok=True)
        clf.save(path)
        log.info("CLASSIFY trained baseline, held-out macro-F1 %s", clf.eval_macro_f1)
        return clf, [path]

    def _run_classify(self):
        clf, written = self.load_or_train_classifier()
        for t in self.cfg.topics:
            recs = corpus.load_corpus(self.tdir(t.id) / "corpus.jsonl")
            units = []
            for r in recs:
                units.extend(nlproc.classify_speech(r.speech_id, r.text, clf, self.cfg.classifier.min_chars))
            path = self.tdir(t.id) / "sentences.jsonl"
            path.write_text(nlproc.dump_units(units), encoding="utf-8")
            written.append(path)
        return written, "ok"

    # ---- EMBED ---------------------------------------------------------------------------
    def _params_embed(self):
        return {"provider": self.provider_params()}, {}

    def _run_embed(self):
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            written += embed_opinions(corpus.load_corpus(d / "corpus.jsonl"), nlproc.load_units(d / "sentences.jsonl"),
                                      self.provider, self.cache, d)
        return written, "ok"

    # ---- PROFILE -------------------------------------------------------------------------
    def _params_profile(self):
        return {"min_sentences": self.cfg.min_sentences,
                "normalize_sentence_vectors": self.cfg.normalize_sentence_vectors}, {}

    def _run_profile(self):
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            sents, vecs = load_opinion_sentences(d)
            profiles, skipped = scaling.build_profiles(sents, vecs, t.id, self.cfg.min_sentences,
                                                       self.cfg.normalize_sentence_vectors)
            scaling.write_profiles(profiles, d / "profiles.jsonl")
            (d / "profile_skips.json").write_text(json.dumps(skipped, ensure_ascii=False, indent=1),
                                                  encoding="utf-8")
            log.info("PROFILE %s: %d profiles, %d skipped", t.id, len(profiles), len(skipped))
            written += [d / "profiles.jsonl", d / "profile_skips.json"]
        return written, "ok"

    # ---- AXIS ----------------------------------------------------------------------------
    def seed_paths(self, spec: str) -> list[Path]:
        p = Path(spec)
        p = p if p.is_absolute() else self.cfg.base_dir / p
        if p.is_dir():
            files = sorted(p.glob("*.json"))
            if not files:
                raise StagePathError(f"no seed bundles in {p}")
            return files
        if not p.exists():
            raise StagePathError(f"seed bundle not found: {p}")
        return [p]

    def _params_axis(self):
        extra = {}
        axes = {}
        for t in self.cfg.topics:
            axes[t.id] = asdict(t.axis)
            if t.axis.method == "seeds":
                for side in (t.axis.pro, t.axis.con):
                    for p in self.seed_paths(side):
                        extra[self.rel(p)] = file_hash(p)
        return {"axes": axes, "provider": self.provider_params(),
                "normalize_sentence_vectors": self.cfg.normalize_sentence_vectors}, extra

    def _run_axis(self):
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            if t.axis.method == "pair":
                profiles = {p.speaker_name: p for p in scaling.read_profiles(d / "profiles.jsonl")}
                for name in (t.axis.pro, t.axis.con):
                    if corpus.normalize_name(name) not in profiles:
                        raise PipelineError(f"topic {t.id}: axis speaker {name!r} has no profile "
                                            f"(absent or under min_sentences)")
                ax = scaling.build_axis_from_pair(profiles[corpus.normalize_name(t.axis.pro)],
                                                  profiles[corpus.normalize_name(t.axis.con)])
            else:
                ax = build_axis_from_bundles(self.seed_paths(t.axis.pro), self.seed_paths(t.axis.con), self.provider,
                                             t.id, self.cache, self.cfg.normalize_sentence_vectors, self.rel)
            scaling.write_axis(ax, d / "axis.json")
            written.append(d / "axis.json")
        return written, "ok"

    # ---- SCALE ---------------------------------------------------------------------------
    def _params_scale(self):
        return {"groups": self.cfg.groups}, {}

    def _run_scale(self):
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            ax = scaling.read_axis(d / "axis.json")
            results = [scaling.project(p, ax) for p in scaling.read_profiles(d / "profiles.jsonl")]
            results = scaling.split_groups(results, self.cfg.groups)
            results.sort(key=lambda r: (r.normalized, r.speaker_name))
            scaling.write_results(results, d / "results.tsv")
            scaling.write_party_summary(scaling.party_summary(results), d / "party_summary.tsv")
            written += [d / "results.tsv", d / "party_summary.tsv"]
        return written, "ok"

    # ---- TOPICS --------------------------------------------------------------------------
    def _params_topics(self):
        return {"topic_model": asdict(self.cfg.topic_model), "reduce": asdict(self.cfg.reduce),
                "groups": self.cfg.groups}, {}

    def _run_topics(self):
        tm = self.cfg.topic_model
        tok = topics.make_tokenizer(tm.tokenizer, tm.stopwords)
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            grouped = grouped_sentences(d, tm.level, self.cfg.groups)
            report = topics.topics_report(grouped, tm.k, tm.terms, tm.seed, self.cfg.reduce.method, tok)
            topics.write_report(report, d / "topics.tsv")
            (d / "topics.txt").write_text(topics.render_table(report, scaling.group_names(self.cfg.groups)),
                                          encoding="utf-8")
            written += [d / "topics.tsv", d / "topics.txt"]
        return written, "ok"

    # ---- PLOT ----------------------------------------------------------------------------
    def _params_plot(self):
        return {"reduce": asdict(self.cfg.reduce)}, {}

    def _run_plot(self):
        written = []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            svg, side = plot_topic(scaling.read_profiles(d / "profiles.jsonl"), scaling.read_axis(d / "axis.json"),
                                   d, self.cfg.reduce.method, self.cfg.reduce.seed)
            written += [svg, side]
        return written, "ok"

    # ---- VALIDATE ------------------------------------------------------------------------
    def _checks(self, t) -> list[str]:
        checks = list(t.checks)
        if t.checks_file is not None:
            checks += evalcmp.read_checks(t.checks_file)
        return checks

    def _params_validate(self):
        extra = {}
        for t in self.cfg.topics:
            for p in (t.expert, t.checks_file):
                if p is not None:
                    if not Path(p).exists():
                        raise StagePathError(f"topic {t.id}: file not found: {p}")
                    extra[self.rel(p)] = file_hash(p)
        return {"statistic": self.cfg.party_statistic, "checks": {t.id: t.checks for t in self.cfg.topics}}, extra

    def _run_validate(self):
        written, failed = [], []
        for t in self.cfg.topics:
            d = self.tdir(t.id)
            results = scaling.read_results(d / "results.tsv")
            positions = evalcmp.party_positions(results, self.cfg.party_statistic)
            checks = self._checks(t)
            if t.expert is not None:
                expert = evalcmp.read_expert(t.expert, t.id)
                report = evalcmp.rank_agreement(positions, expert, checks, t.id)
            else:
                pos = {p: v.position for p, v in positions.items()}
                report = evalcmp.AgreementReport(t.id, float("nan"), float("nan"), float("nan"), len(pos), 0,
                                                 [(c, evalcmp.evaluate_check(c, pos)) for c in checks])
            evalcmp.write_report(report, positions, d / "validation.json")
            written.append(d / "validation.json")
            if not report.checks_passed:
                failed.append(t.id)
        return written, ("checks_failed" if failed else "ok")

    # ---- whole pipeline ------------------------------------------------------------------
    def run_all(self, from_stage: Stage | None = None) -> list[StageResult]:
        start = STAGES.index(Stage(from_stage)) if from_stage else 0
        results = []
        for stage in STAGES[start:]:
            res = self.run_stage(stage, force=from_stage is not None)
            log.info("%s: %s", stage.value, res.status)
            results.append(res)
        return results


def embed_opinions(records: list[corpus.SpeechRecord], units: list[nlproc.SentenceUnit], provider,
                   cache, out_dir: Path) -> list[Path]:
    """Embed the opinion sentences and store them with their speaker metadata in ``out_dir``."""
    speakers = {r.speech_id: r for r in records}
    ops = sorted(nlproc.filter_opinions(units), key=lambda u: (u.speech_id, u.index))
    missing = sorted({u.speech_id for u in ops} - set(speakers))
    if missing:
        raise PipelineError(f"sentences refer to speeches absent from the corpus: {missing[:5]}")
    rows = [dict(u.to_json(), speaker_name=speakers[u.speech_id].speaker_name, party=speakers[u.speech_id].party)
            for u in ops]
    vecs = embedding.embed_batch([u.text for u in ops], provider, cache) if ops else []
    X = np.stack([v.values for v in vecs]) if vecs else np.zeros((0, provider.descriptor.dimension))
    out_dir.mkdir(parents=True, exist_ok=True)
    p_rows, p_vecs, p_meta = (out_dir / "opinion_sentences.jsonl", out_dir / "opinion_vectors.npy",
                              out_dir / "opinion_vectors.meta.json")
    p_rows.write_text("".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in rows),
                      encoding="utf-8")
    np.save(p_vecs, X)
    p_meta.write_text(json.dumps({"provider_id": provider.descriptor.provider_id, "rows": len(rows)},
                                 sort_keys=True), encoding="utf-8")
    return [p_rows, p_vecs, p_meta]


def load_opinion_sentences(d: Path) -> tuple[list[scaling.OpinionSentence], dict]:
    rows = [json.loads(line) for line in (d / "opinion_sentences.jsonl").read_text(encoding="utf-8").splitlines()
            if line.strip()]
    X = np.load(d / "opinion_vectors.npy")
    meta = json.loads((d / "opinion_vectors.meta.json").read_text(encoding="utf-8"))
    if len(rows) != len(X):
        raise StaleArtifactError(f"{d}: {len(rows)} opinion rows but {len(X)} vectors")
    sents, vecs = [], {}
    for row, x in zip(rows, X):
        s = scaling.OpinionSentence(nlproc.SentenceUnit.from_json(row), row["speaker_name"], row["party"])
        sents.append(s)
        vecs[s.key] = embedding.EmbeddingVector(x, meta["provider_id"])
    return sents, vecs


def build_axis_from_bundles(pro_paths, con_paths, provider, topic_id, cache=None, normalize=False,
                            rel=lambda p: str(p)) -> scaling.ReferenceAxis:
    pro_b = [seedgen.load_seeds(p) for p in pro_paths]
    con_b = [seedgen.load_seeds(p) for p in con_paths]
    provenance = {"pro_bundles": {rel(p): b.content_hash for p, b in zip(pro_paths, pro_b)},
                  "con_bundles": {rel(p): b.content_hash for p, b in zip(con_paths, con_b)}}
    return scaling.build_axis_from_seeds([t for b in pro_b for t in b.texts], [t for b in con_b for t in b.texts],
                                         provider, topic_id, cache, normalize, provenance)


def grouped_sentences(d: Path, level: str, k: int, results_path: Path | None = None,
                      ) -> dict[str, tuple[list[str], np.ndarray]]:
    """Opinion sentences (and vectors) bucketed by the speaker's group, or by their own projection."""
    sents, vecs = load_opinion_sentences(d)
    if level == "speaker":
        group_of = {r.speaker_name: r.group for r in scaling.read_results(results_path or d / "results.tsv")}
        assign = {s.key: group_of.get(s.speaker_name) for s in sents}
    else:
        assign = scaling.sentence_level_groups(sents, vecs, scaling.read_axis(d / "axis.json"), k)
    buckets: dict[str, list] = defaultdict(list)
    for s in sents:
        g = assign.get(s.key)
        if g is not None:
            buckets[g].append(s)
    out = {}
    for g in scaling.group_names(k):
        members = buckets.get(g, [])
        dim = next(iter(vecs.values())).dimension if vecs else 1
        X = np.stack([vecs[s.key].values for s in members]) if members else np.zeros((0, dim))
        out[g] = ([s.unit.text for s in members], X)
    return out


def plot_topic(profiles, axis: scaling.ReferenceAxis, out_dir: Path, method: str = "pca", seed: int = 0,
               stem: str = "plot") -> tuple[Path, Path]:
    vecs = [p.mean_embedding.values for p in profiles] + [axis.anchor_pro.values, axis.anchor_con.values]
    ids = [p.speaker_name for p in profiles] + list(axis.anchor_labels)
    kinds = [reduce.PointKind.SPEAKER] * len(profiles) + [reduce.PointKind.ANCHOR_PRO, reduce.PointKind.ANCHOR_CON]
    anchor_party = {p.speaker_name: p.party for p in profiles} if axis.method is scaling.AxisMethod.PAIR else {}
    parties = [p.party for p in profiles] + [anchor_party.get(axis.anchor_labels[0]),
                                              anchor_party.get(axis.anchor_labels[1])]
    points, meta = reduce.reduce_2d(vecs, ids, kinds, parties, method, seed)
    axis_meta = {"topic_id": axis.topic_id, "method": axis.method.value, "anchor_labels": list(axis.anchor_labels)}
    return reduce.plot_payload(points, axis_meta, out_dir, stem, meta)


def run_stage(stage: Stage | str, config: PipelineConfig, offline: bool = False, force: bool = False) -> StageResult:
    return Runner(config, offline).run_stage(Stage(stage.upper() if isinstance(stage, str) else stage), force)


def run_all(config: PipelineConfig, offline: bool = False, from_stage: Stage | str | None = None) -> list[StageResult]:
    if isinstance(from_stage, str):
        from_stage = Stage(from_stage.upper())
    return Runner(config, offline).run_all(from_stage)
