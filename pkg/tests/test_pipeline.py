import json
import re
from pathlib import Path

import pytest

from ideoaxis import cli
from ideoaxis.config import ConfigError, load_config
from ideoaxis.pipeline import (STAGES, Manifest, MissingUpstreamError, Runner, Stage, StagePathError,
                               StaleArtifactError)


def edit_config(d: Path, old: str, new: str) -> Path:
    p = d / "config.toml"
    text = p.read_text(encoding="utf-8")
    assert old in text
    p.write_text(text.replace(old, new), encoding="utf-8")
    return p


def runner(d: Path) -> Runner:
    return Runner(load_config(d / "config.toml"), offline=True)


def statuses(results):
    return [(r.stage.value, r.status) for r in results]


def test_scale_before_profile_names_missing_stage(fixture_copy):
    with pytest.raises(MissingUpstreamError, match="run PROFILE first"):
        runner(fixture_copy).run_stage(Stage.SCALE)


def test_rerun_is_cache_hit(fixture_copy):
    r = runner(fixture_copy)
    assert all(x.ok for x in r.run_all())
    again = runner(fixture_copy).run_stage(Stage.SCALE)
    assert again.status == "cache_hit"
    assert all(s == "cache_hit" for _, s in statuses(runner(fixture_copy).run_all()))
    assert runner(fixture_copy).run_stage(Stage.SCALE, force=True).status == "ok"


def test_from_stage_reruns_only_downstream(fixture_copy):
    runner(fixture_copy).run_all()
    n_before = len(Manifest(fixture_copy / "out").entries())
    res = runner(fixture_copy).run_all(from_stage=Stage.SCALE)
    assert [r.stage for r in res] == list(STAGES[STAGES.index(Stage.SCALE):])
    assert all(r.status == "ok" for r in res)
    new = Manifest(fixture_copy / "out").entries()[n_before:]
    assert [e["stage"] for e in new] == ["SCALE", "TOPICS", "PLOT", "VALIDATE"]


def test_axis_edit_invalidates_axis_and_dependents(fixture_copy):
    runner(fixture_copy).run_all()
    cfg = load_config(fixture_copy / "config.toml")
    pro = cfg.topic("defence").axis.pro
    edit_config(fixture_copy, f'pro = "{pro}"', 'pro = "石井恵子"')
    res = dict(statuses(runner(fixture_copy).run_all()))
    for s in ("INGEST", "CLASSIFY", "EMBED", "PROFILE"):
        assert res[s] == "cache_hit"
    for s in ("AXIS", "SCALE", "TOPICS", "PLOT"):
        assert res[s] == "ok"


def test_tampered_artifact_is_stale(fixture_copy):
    r = runner(fixture_copy)
    for s in STAGES[:STAGES.index(Stage.AXIS) + 1]:
        r.run_stage(s)
    prof = fixture_copy / "out" / "defence" / "profiles.jsonl"
    prof.write_text(prof.read_text(encoding="utf-8") + "\n", encoding="utf-8")
    with pytest.raises(StaleArtifactError, match="PROFILE"):
        runner(fixture_copy).run_stage(Stage.SCALE)


def test_missing_roster_fails_at_ingest(fixture_copy):
    (fixture_copy / "roster.csv").unlink()
    with pytest.raises(StagePathError, match="roster"):
        runner(fixture_copy).run_stage(Stage.INGEST)


def test_offline_without_fixtures_refused(fixture_copy):
    edit_config(fixture_copy, 'fixture_dir = "api"\n', "")
    with pytest.raises(StagePathError, match="offline"):
        runner(fixture_copy).run_stage(Stage.INGEST)


def test_offline_http_provider_refused(fixture_copy):
    edit_config(fixture_copy, 'kind = "hashing"', 'kind = "http"\nendpoint = "http://localhost:1"\nmodel = "m"')
    r = runner(fixture_copy)
    r.run_stage(Stage.INGEST)
    with pytest.raises(Exception, match="offline"):
        r.run_stage(Stage.CLASSIFY)


def test_manifest_covers_every_output(fixture_copy):
    runner(fixture_copy).run_all()
    out = fixture_copy / "out"
    entries = Manifest(out).entries()
    assert [e["stage"] for e in entries] == [s.value for s in STAGES]
    recorded = set().union(*(e["outputs"] for e in entries))
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.jsonl"}
    assert on_disk == recorded
    for e in entries:
        assert set(e) == {"stage", "key", "status", "params", "inputs", "outputs", "time"}
        assert all(re.fullmatch(r"[0-9a-f]{64}", h) for h in e["outputs"].values())
        # no absolute paths leak into the manifest
        assert not any(k.startswith("/") for k in list(e["inputs"]) + list(e["outputs"]))


def test_failed_check_marks_validate(fixture_copy):
    edit_config(fixture_copy, 'id = "defence"', 'id = "defence"\nchecks = ["median(LDP) < median(JCP)"]')
    res = runner(fixture_copy).run_all()
    assert res[-1].status == "checks_failed" and not res[-1].ok
    doc = json.loads((fixture_copy / "out" / "defence" / "validation.json").read_text(encoding="utf-8"))
    assert {"check": "median(LDP) < median(JCP)", "pass": False} in doc["sign_checks"]
    # a rerun with unchanged inputs keeps reporting the failure
    assert runner(fixture_copy).run_stage(Stage.VALIDATE).status == "checks_failed"


def test_fixture_results_shape(fixture_copy):
    runner(fixture_copy).run_all()
    rows = (fixture_copy / "out" / "defence" / "results.tsv").read_text(encoding="utf-8").splitlines()
    assert rows[0].split("\t") == ["topic_id", "speaker_name", "party", "raw", "normalized", "group",
                                   "n_opinion_sentences"]
    # six parties x five eligible speakers; the single-speech members fall under min_sentences
    assert len(rows) == 1 + 30
    names = [r.split("\t")[1] for r in rows[1:]]
    assert "引退太郎" not in names and "委員長" not in names


# ---- config --------------------------------------------------------------------------------

def test_config_resolves_paths_against_its_directory(fixture_copy):
    cfg = load_config(fixture_copy / "config.toml")
    assert cfg.roster == fixture_copy / "roster.csv"
    assert cfg.topic("nuclear").axis.method == "seeds"
    assert cfg.topic("defence").date_from.isoformat() == "2023-01-01"
    with pytest.raises(ConfigError):
        cfg.topic("budget")


@pytest.mark.parametrize("old,new", [
    ("min_sentences = 5", "min_sentences = 5\nbogus = 1"),
    ("min_sentences = 5", "min_sentences = 0"),
    ("min_sentences = 5", 'min_sentences = "five"'),
    ('method = "pair"', 'method = "vibes"'),
    ("date_from = 2023-01-01\ndate_to = 2023-12-31\nexpert = \"", "date_from = 2024-01-01\ndate_to = 2023-12-31\nexpert = \""),
    ("k = 2", "k = 2\nlevel = \"paragraph\""),
    ("page_size = 10", "page_size = 1000"),
])
def test_bad_configs_rejected(fixture_copy, old, new):
    edit_config(fixture_copy, old, new)
    with pytest.raises(ConfigError):
        load_config(fixture_copy / "config.toml")


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


# ---- CLI -----------------------------------------------------------------------------------

def test_cli_run_and_exit_codes(fixture_copy, capsys):
    cfg = str(fixture_copy / "config.toml")
    assert cli.main(["run", "--config", cfg, "--offline"]) == 0
    assert "VALIDATE  ok" in capsys.readouterr().out
    assert cli.main(["scale", "--config", cfg, "--offline"]) == 0
    assert "cache_hit" in capsys.readouterr().out
    assert cli.main(["run", "--config", cfg, "--offline", "--from", "topics"]) == 0
    out = capsys.readouterr().out
    assert "SCALE" not in out and "TOPICS" in out


def test_cli_config_errors_exit_2(fixture_copy, tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    assert cli.main(["scale"]) == 2
    edit_config(fixture_copy, "groups = 3", "groups = 3\nunknown_key = true")
    assert cli.main(["run", "--config", str(fixture_copy / "config.toml"), "--offline"]) == 2
    assert "unknown key" in capsys.readouterr().err


def test_cli_stage_failure_exits_1(fixture_copy, capsys):
    assert cli.main(["scale", "--config", str(fixture_copy / "config.toml"), "--offline"]) == 1
    assert "run PROFILE first" in capsys.readouterr().err


def test_cli_failed_check_exits_1(fixture_copy):
    edit_config(fixture_copy, 'id = "defence"', 'id = "defence"\nchecks = ["LDP < JCP"]')
    assert cli.main(["run", "--config", str(fixture_copy / "config.toml"), "--offline"]) == 1


def test_cli_direct_modes(fixture_copy, tmp_path, capsys):
    cfg = str(fixture_copy / "config.toml")
    assert cli.main(["run", "--config", cfg, "--offline"]) == 0
    d = fixture_copy / "out" / "defence"
    c = load_config(cfg)
    pro, con = c.topic("defence").axis.pro, c.topic("defence").axis.con
    out = tmp_path / "direct"
    assert cli.main(["scale", "--profiles", str(d / "profiles.jsonl"), "--axis", f"pair:{pro},{con}",
                     "--out", str(out)]) == 0
    assert (out / "results.tsv").read_text() == (d / "results.tsv").read_text()
    expert = c.topic("defence").expert
    assert cli.main(["validate", "--results", str(out / "results.tsv"), "--expert", str(expert),
                     "--checks", str(c.topic("defence").checks_file)]) == 0
    # swapping the pair reverses the order, so the sign checks fail
    swapped = tmp_path / "swapped"
    assert cli.main(["scale", "--profiles", str(d / "profiles.jsonl"), "--axis", f"pair:{con},{pro}",
                     "--out", str(swapped)]) == 0
    assert cli.main(["validate", "--results", str(swapped / "results.tsv"), "--expert", str(expert),
                     "--checks", str(c.topic("defence").checks_file)]) == 1
    assert cli.main(["plot", "--profiles", str(d / "profiles.jsonl"), "--axis", str(out / "axis.json"),
                     "--out", str(tmp_path / "plot")]) == 0
    assert (tmp_path / "plot" / "plot.svg").exists()
    assert cli.main(["scale", "--profiles", str(d / "profiles.jsonl"), "--axis", "pair:nobody,else",
                     "--out", str(tmp_path / "x")]) == 1
    assert cli.main(["scale", "--profiles", str(d / "profiles.jsonl"), "--axis", "what",
                     "--out", str(tmp_path / "x")]) == 2


def test_cli_seedgen_with_fixture_responses(tmp_path, capsys):
    responses = tmp_path / "r.json"
    responses.write_text(json.dumps(["賛成の答弁です。"] * 5, ensure_ascii=False), encoding="utf-8")
    out = tmp_path / "s.json"
    args = ["seedgen", "--topic", "defence", "--side", "pro", "--fixture-responses", str(responses), "--out", str(out)]
    assert cli.main(args) == 0
    assert json.loads(out.read_text(encoding="utf-8"))["prompt"].startswith("自衛隊を憲法に明記")
    assert cli.main(args) == 1  # bundles are never overwritten
    assert cli.main(["seedgen", "--topic", "defence", "--side", "con", "--offline"]) == 2


def test_cli_train_classifier(tmp_path, capsys):
    out = tmp_path / "w.json"
    assert cli.main(["train-classifier", "--out", str(out), "--dimension", "256"]) == 0
    assert "macro-F1" in capsys.readouterr().out and out.exists()


def test_live_config_parses():
    root = Path(__file__).resolve().parents[1]
    cfg = load_config(root / "configs" / "live.toml")
    assert cfg.provider.kind == "sentence-transformers"
    assert cfg.topic("defence").query_words == ["自衛隊", "集団的自衛権", "安全保障", "軍事力", "防衛"]
    assert cfg.topic("nuclear").query_words == ["原子", "原発", "廃炉", "再稼働", "ベースロード"]
    assert (cfg.topic("nuclear").axis.pro, cfg.topic("nuclear").axis.con) == ("岸田文雄", "志位和夫")
    assert cfg.topic("defence").expert.exists()
