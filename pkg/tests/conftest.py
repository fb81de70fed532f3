import shutil
from pathlib import Path

import pytest

from ideoaxis.config import load_config

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "synthetic"

_criteria: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion verdict line; printed in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _criteria.append(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def fixture_config(tmp_path):
    """The shipped synthetic config, writing outputs and cache under tmp_path."""

    def make(sub: str = "run"):
        cfg = load_config(FIXTURE / "config.toml")
        cfg.output_dir = tmp_path / sub / "out"
        cfg.provider.cache_dir = tmp_path / sub / "cache"
        return cfg

    return make


@pytest.fixture
def fixture_copy(tmp_path):
    """A private copy of the synthetic fixture directory (for tests that edit inputs)."""
    dst = tmp_path / "synthetic"
    shutil.copytree(FIXTURE, dst, ignore=shutil.ignore_patterns("out", ".embedding_cache"))
    cfg_text = (dst / "config.toml").read_text(encoding="utf-8")
    # shipped data paths are relative to the fixture's place in the repo
    cfg_text = cfg_text.replace("../../src/", str(ROOT / "src") + "/")
    (dst / "config.toml").write_text(cfg_text, encoding="utf-8")
    return dst
