"""Command-line entry point.

Every stage subcommand runs against a config file (``--config``); most also
accept direct file arguments for one-off use outside a configured run.
Exit codes: 0 success, 1 stage failure (or failed sign check), 2 config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import corpus, embedding, evalcmp, nlproc, reduce, scaling, seedgen, topics
from .config import ConfigError, load_config
from .pipeline import (STAGES, ChecksFailed, PipelineError, Runner, Stage, build_axis_from_bundles, embed_opinions,
                       grouped_sentences, plot_topic)

log = logging.getLogger("ideoaxis")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _add_provider_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("embedding provider (direct mode)")
    g.add_argument("--provider", default="hashing", choices=["mock", "hashing", "http", "sentence-transformers"])
    g.add_argument("--dimension", type=int, default=768)
    g.add_argument("--provider-seed", type=int, default=0)
    g.add_argument("--model")
    g.add_argument("--endpoint")
    g.add_argument("--cache-dir", type=Path)


def _provider(args):
    prov = embedding.make_provider(args.provider, dimension=args.dimension, seed=args.provider_seed,
                                   model=args.model, endpoint=args.endpoint, offline=args.offline)
    cache = embedding.EmbeddingCache(args.cache_dir) if args.cache_dir else None
    return prov, cache


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ideoaxis", description="Scale legislators on a pro/con axis from speech.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def stage_parser(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="pipeline config (TOML)")
        p.add_argument("--offline", action="store_true", help="forbid network access; replay fixtures only")
        p.add_argument("--from", dest="from_stage", type=str.upper, choices=[s.value for s in STAGES],
                       help="rerun from this stage onwards, ignoring cache hits")
        p.add_argument("--force", action="store_true", help="rerun this stage even if inputs are unchanged")
        return p

    p = stage_parser("ingest", "fetch speeches for topics")
    p.add_argument("--topic", help="direct mode: topic id from the config")
    p.add_argument("--out", type=Path, help="direct mode: corpus file to write")

    p = stage_parser("classify", "label sentences and keep opinions")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--classifier", type=Path, help="classifier weights (JSON)")
    p.add_argument("--out", type=Path)
    p.add_argument("--min-chars", type=int, default=nlproc.MIN_SENTENCE_CHARS)
    _add_provider_args(p)

    stage_parser("embed", "embed opinion sentences")

    p = stage_parser("profile", "per-speaker mean embeddings")
    p.add_argument("--corpus", type=Path, help="direct mode: corpus file")
    p.add_argument("--sentences", type=Path, help="direct mode: classified sentences")
    p.add_argument("--topic", default="", help="direct mode: topic id recorded on profiles")
    p.add_argument("--min-sentences", type=int, default=5)
    p.add_argument("--normalize", action="store_true", help="L2-normalize sentence vectors before averaging")
    p.add_argument("--out", type=Path, help="direct mode: output directory")
    _add_provider_args(p)

    stage_parser("axis", "build reference axes")

    p = stage_parser("scale", "project speakers on the axis")
    p.add_argument("--profiles", type=Path)
    p.add_argument("--axis", help="pair:<pro>,<con> | seeds:<pro>,<con> (bundle files or dirs) | axis.json")
    p.add_argument("--groups", type=int, default=3)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", type=Path, help="direct mode: output directory")
    _add_provider_args(p)

    p = stage_parser("topics", "group-wise c-TF-IDF topics")
    p.add_argument("--results", type=Path)
    p.add_argument("--sentences", type=Path, help="opinion_sentences.jsonl (vectors read from its directory)")
    p.add_argument("--k", type=int, default=topics.DEFAULT_K)
    p.add_argument("--terms", type=int, default=topics.DEFAULT_TERMS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", choices=["pca", "umap"], default="pca")
    p.add_argument("--no-stopwords", action="store_true")
    p.add_argument("--tokenizer", choices=["script", "morph"], default="script")
    p.add_argument("--out", type=Path, help="report TSV (default: next to results)")

    p = stage_parser("plot", "2D map of speakers and anchors")
    p.add_argument("--profiles", type=Path)
    p.add_argument("--axis", type=Path)
    p.add_argument("--method", choices=["pca", "umap"], default="pca")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = stage_parser("validate", "compare party positions with expert placements")
    p.add_argument("--results", type=Path)
    p.add_argument("--expert", type=Path)
    p.add_argument("--checks", type=Path)
    p.add_argument("--topic", help="expert rows to use (default: topic id in results)")
    p.add_argument("--statistic", choices=["median", "mean"], default="median")
    p.add_argument("--out", type=Path, help="report file (default: validation.json next to results)")

    p = stage_parser("run", "run all stages in order")

    p = sub.add_parser("seedgen", help="generate pro/con seed speeches with a chat model")
    p.add_argument("--topic", required=True)
    p.add_argument("--side", required=True, choices=["pro", "con"])
    p.add_argument("--n", type=int, default=seedgen.DEFAULT_N)
    p.add_argument("--prompt-file", type=Path, help="default: shipped prompt for the topic and side")
    p.add_argument("--out", type=Path, help="bundle file (default: seeds/<topic>_<side>.json)")
    p.add_argument("--model", default="gpt-4")
    p.add_argument("--base-url", default="https://api.openai.com/v1")
    p.add_argument("--fixture-responses", type=Path,
                   help="JSON list of canned completions; replaces the chat service")
    p.add_argument("--offline", action="store_true")

    p = sub.add_parser("train-classifier", help="fit the sentence classifier on a labeled TSV")
    p.add_argument("--data", type=Path, help="labeled TSV (default: shipped fixture)")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--offline", action="store_true")
    _add_provider_args(p)
    return ap


# ---- direct-mode handlers ----------------------------------------------------------------

def _ingest_direct(args) -> int:
    if args.config is None or args.topic is None:
        raise ConfigError("ingest --out needs --config and --topic")
    cfg = load_config(args.config)
    t = cfg.topic(args.topic)
    runner = Runner(cfg, args.offline)
    with runner.make_client() as client:
        recs = corpus.build_topic_corpus(t.spec(), runner.load_roster(), client, max_workers=cfg.api.max_workers)
    corpus.store_corpus(recs, args.out)
    print(f"{len(recs)} speeches -> {args.out}")
    return EXIT_OK


def _classify_direct(args) -> int:
    if args.classifier is None or args.out is None:
        raise ConfigError("classify --corpus needs --classifier and --out")
    prov, cache = _provider(args)
    clf = nlproc.load_classifier(args.classifier, prov, cache)
    units = []
    for r in corpus.load_corpus(args.corpus):
        units.extend(nlproc.classify_speech(r.speech_id, r.text, clf, args.min_chars))
    args.out.write_text(nlproc.dump_units(units), encoding="utf-8")
    n_op = len(nlproc.filter_opinions(units))
    print(f"{len(units)} sentences, {n_op} opinions -> {args.out}")
    return EXIT_OK


def _profile_direct(args) -> int:
    if args.sentences is None or args.out is None:
        raise ConfigError("profile --corpus needs --sentences and --out")
    prov, cache = _provider(args)
    embed_opinions(corpus.load_corpus(args.corpus), nlproc.load_units(args.sentences), prov, cache, args.out)
    from .pipeline import load_opinion_sentences

    sents, vecs = load_opinion_sentences(args.out)
    profiles, skipped = scaling.build_profiles(sents, vecs, args.topic, args.min_sentences, args.normalize)
    scaling.write_profiles(profiles, args.out / "profiles.jsonl")
    print(f"{len(profiles)} profiles ({len(skipped)} speakers skipped) -> {args.out / 'profiles.jsonl'}")
    return EXIT_OK


def parse_axis_arg(spec: str, profiles: list[scaling.StanceProfile], args) -> scaling.ReferenceAxis:
    kind, _, rest = spec.partition(":")
    if kind == "pair":
        names = [corpus.normalize_name(x) for x in rest.split(",")]
        if len(names) != 2:
            raise ConfigError("--axis pair: needs <pro>,<con>")
        by_name = {p.speaker_name: p for p in profiles}
        for n in names:
            if n not in by_name:
                raise PipelineError(f"axis speaker {n!r} has no profile")
        return scaling.build_axis_from_pair(by_name[names[0]], by_name[names[1]])
    if kind == "seeds":
        sides = rest.split(",")
        if len(sides) != 2:
            raise ConfigError("--axis seeds: needs <pro>,<con>")

        def paths(x):
            p = Path(x)
            return sorted(p.glob("*.json")) if p.is_dir() else [p]

        prov, cache = _provider(args)
        topic_id = profiles[0].topic_id if profiles else ""
        return build_axis_from_bundles(paths(sides[0]), paths(sides[1]), prov, topic_id, cache, args.normalize)
    path = Path(spec)
    if path.exists():
        return scaling.read_axis(path)
    raise ConfigError(f"--axis: expected pair:..., seeds:... or an axis file, got {spec!r}")


def _scale_direct(args) -> int:
    if args.axis is None or args.out is None:
        raise ConfigError("scale --profiles needs --axis and --out")
    profiles = scaling.read_profiles(args.profiles)
    ax = parse_axis_arg(args.axis, profiles, args)
    results = scaling.split_groups([scaling.project(p, ax) for p in profiles], args.groups)
    results.sort(key=lambda r: (r.normalized, r.speaker_name))
    args.out.mkdir(parents=True, exist_ok=True)
    scaling.write_axis(ax, args.out / "axis.json")
    scaling.write_results(results, args.out / "results.tsv")
    scaling.write_party_summary(scaling.party_summary(results), args.out / "party_summary.tsv")
    for r in results:
        print(f"{r.normalized:+.4f}\t{r.group}\t{r.party}\t{r.speaker_name}")
    return EXIT_OK


def _topics_direct(args) -> int:
    if args.sentences is None:
        raise ConfigError("topics --results needs --sentences")
    groups = {r.group for r in scaling.read_results(args.results) if r.group}
    grouped = grouped_sentences(args.sentences.parent, "speaker", len(groups) or 3, args.results)
    tok = topics.make_tokenizer(args.tokenizer, not args.no_stopwords)
    report = topics.topics_report(grouped, args.k, args.terms, args.seed, args.method, tok)
    out = args.out or args.results.with_name("topics.tsv")
    topics.write_report(report, out)
    sys.stdout.write(topics.render_table(report))
    return EXIT_OK


def _plot_direct(args) -> int:
    if args.axis is None or args.out is None:
        raise ConfigError("plot --profiles needs --axis and --out")
    svg, side = plot_topic(scaling.read_profiles(args.profiles), scaling.read_axis(args.axis), args.out,
                           args.method, args.seed)
    print(f"{svg}\n{side}")
    return EXIT_OK


def _validate_direct(args) -> int:
    if args.expert is None:
        raise ConfigError("validate --results needs --expert")
    results = scaling.read_results(args.results)
    topic_id = args.topic or (results[0].topic_id if results else None)
    positions = evalcmp.party_positions(results, args.statistic)
    checks = evalcmp.read_checks(args.checks) if args.checks else []
    report = evalcmp.rank_agreement(positions, evalcmp.read_expert(args.expert, topic_id), checks, topic_id)
    out = args.out or args.results.with_name("validation.json")
    evalcmp.write_report(report, positions, out)
    print(f"spearman={report.spearman_rho:.3f} kendall={report.kendall_tau:.3f} "
          f"pairwise={report.pairwise_accuracy:.3f} parties={report.n_parties}")
    for c, ok in report.sign_checks:
        print(f"{'PASS' if ok else 'FAIL'}  {c}")
    return EXIT_OK if report.checks_passed else EXIT_FAIL


DIRECT = {"ingest": ("out", _ingest_direct), "classify": ("corpus", _classify_direct),
          "profile": ("corpus", _profile_direct), "scale": ("profiles", _scale_direct),
          "topics": ("results", _topics_direct), "plot": ("profiles", _plot_direct),
          "validate": ("results", _validate_direct)}


def _seedgen(args) -> int:
    side = seedgen.Side(args.side.upper())
    prompt = (args.prompt_file.read_text(encoding="utf-8").strip() if args.prompt_file
              else seedgen.default_prompt(args.topic, side))
    if args.fixture_responses:
        client = seedgen.FixtureChatClient(json.loads(args.fixture_responses.read_text(encoding="utf-8")))
    elif args.offline:
        raise ConfigError("seedgen --offline needs --fixture-responses")
    else:
        client = seedgen.OpenAIChatClient(args.model, base_url=args.base_url)
    bundle = seedgen.generate_seeds(prompt, args.n, client, topic_id=args.topic, side=side)
    out = args.out or Path("seeds") / f"{args.topic}_{args.side}.json"
    digest = seedgen.write_seeds(bundle, out)
    print(f"{len(bundle.texts)} texts ({bundle.retries} retries) -> {out}\nsha256 {digest}")
    return EXIT_OK


def _train(args) -> int:
    from importlib import resources

    data_path = args.data or Path(str(resources.files("ideoaxis").joinpath("data", "labeled_sentences.tsv")))
    data = nlproc.LabeledSet.from_tsv(data_path)
    train, test = data.split(args.test_fraction, args.seed) if args.test_fraction > 0 else (data, None)
    prov, cache = _provider(args)
    clf = nlproc.train_classifier(train, prov, eval_set=test, seed=args.seed, cache=cache)
    clf.save(args.out)
    f1 = "n/a" if clf.eval_macro_f1 is None else f"{clf.eval_macro_f1:.3f}"
    print(f"trained on {len(train.texts)} items, held-out macro-F1 {f1} -> {args.out}")
    return EXIT_OK


def _staged(args) -> int:
    if args.config is None:
        raise ConfigError(f"{args.command}: pass --config (or the direct-mode file arguments)")
    cfg = load_config(args.config)
    runner = Runner(cfg, args.offline)
    if args.command == "run":
        results = runner.run_all(Stage(args.from_stage) if args.from_stage else None)
    elif args.from_stage:
        start = STAGES.index(Stage(args.from_stage))
        stop = STAGES.index(Stage(args.command.upper()))
        results = [runner.run_stage(s, force=True) for s in STAGES[start:stop + 1]]
    else:
        results = [runner.run_stage(Stage(args.command.upper()), force=args.force)]
    for r in results:
        print(f"{r.stage.value:9s} {r.status}")
        for rel, digest in sorted(r.outputs.items()):
            print(f"  {digest[:12]}  {rel}")
    return EXIT_FAIL if any(r.status == "checks_failed" for r in results) else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("httpx").setLevel(logging.WARNING)
    try:
        if args.command == "seedgen":
            return _seedgen(args)
        if args.command == "train-classifier":
            return _train(args)
        direct = DIRECT.get(args.command)
        if direct and getattr(args, direct[0]) is not None:
            return direct[1](args)
        return _staged(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ChecksFailed, PipelineError, corpus.CorpusError, nlproc.ClassifierError, embedding.EmbeddingError,
            scaling.ScalingError, reduce.ReduceError, seedgen.SeedError, topics.TopicsError, evalcmp.EvalError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
