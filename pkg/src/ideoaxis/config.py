"""Pipeline configuration: TOML file -> dataclasses, rejecting unknown keys."""

from __future__ import annotations

import dataclasses
import datetime as dt
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import DEFAULT_BASE_URL, MAX_PAGE_SIZE, House, TopicSpec


class ConfigError(Exception):
    pass


@dataclass
class ApiConfig:
    base_url: str = DEFAULT_BASE_URL
    page_size: int = MAX_PAGE_SIZE
    min_interval: float = 1.0
    max_retries: int = 5
    backoff: float = 1.0
    fixture_dir: Path | None = None
    record: bool = False
    max_workers: int = 1


@dataclass
class ProviderConfig:
    kind: str = "hashing"
    dimension: int = 768
    seed: int = 0
    model: str | None = None
    endpoint: str | None = None
    batch_size: int = 64
    cache_dir: Path | None = None


@dataclass
class ClassifierConfig:
    path: Path | None = None
    train_data: Path | None = None
    seed: int = 0
    test_fraction: float = 0.2
    min_chars: int = 4


@dataclass
class AxisConfig:
    method: str = "pair"
    pro: str = ""
    con: str = ""


@dataclass
class TopicConfig:
    id: str
    query_words: list[str]
    date_from: dt.date
    date_to: dt.date
    axis: AxisConfig
    house: str = "LOWER"
    expert: Path | None = None
    checks: list[str] = field(default_factory=list)
    checks_file: Path | None = None

    def spec(self) -> TopicSpec:
        return TopicSpec(self.id, tuple(self.query_words), self.date_from, self.date_to, House(self.house))


@dataclass
class ReduceConfig:
    method: str = "pca"
    seed: int = 0


@dataclass
class TopicModelConfig:
    k: int = 5
    terms: int = 10
    stopwords: bool = True
    tokenizer: str = "script"
    level: str = "speaker"
    seed: int = 0


@dataclass
class PipelineConfig:
    output_dir: Path
    topics: list[TopicConfig]
    roster: Path | None = None
    min_sentences: int = 5
    groups: int = 3
    normalize_sentence_vectors: bool = False
    party_statistic: str = "median"
    api: ApiConfig = field(default_factory=ApiConfig)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    reduce: ReduceConfig = field(default_factory=ReduceConfig)
    topic_model: TopicModelConfig = field(default_factory=TopicModelConfig)
    base_dir: Path = Path(".")

    def topic(self, topic_id: str) -> TopicConfig:
        for t in self.topics:
            if t.id == topic_id:
                return t
        raise ConfigError(f"no topic {topic_id!r} in config (have {[t.id for t in self.topics]})")

    @property
    def cache_dir(self) -> Path:
        return self.provider.cache_dir or (self.base_dir / ".embedding_cache")


_NESTED = {"api": ApiConfig, "provider": ProviderConfig, "classifier": ClassifierConfig, "reduce": ReduceConfig,
           "topic_model": TopicModelConfig, "axis": AxisConfig}


def _coerce(name: str, value: Any, tp: str, base: Path, where: str) -> Any:
    if value is None:
        return None
    if "Path" in tp:
        p = Path(value)
        return p if p.is_absolute() else base / p
    if "dt.date" in tp:
        if isinstance(value, dt.date):
            return value
        try:
            return dt.date.fromisoformat(str(value))
        except ValueError:
            raise ConfigError(f"{where}.{name}: not an ISO date: {value!r}") from None
    if tp.startswith("int") and not isinstance(value, int):
        raise ConfigError(f"{where}.{name}: expected an integer, got {value!r}")
    if tp.startswith("float") and not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{name}: expected a number, got {value!r}")
    if tp.startswith("bool") and not isinstance(value, bool):
        raise ConfigError(f"{where}.{name}: expected true/false, got {value!r}")
    if tp.startswith("list") and not isinstance(value, list):
        raise ConfigError(f"{where}.{name}: expected a list, got {value!r}")
    return value


def _build(cls, table: dict, base: Path, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(table) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for name, f in fields.items():
        if name not in table:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise ConfigError(f"{where}: missing required key {name!r}")
            continue
        value = table[name]
        if name in _NESTED:
            kwargs[name] = _build(_NESTED[name], value, base, f"{where}.{name}")
        elif name == "topics":
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{where}.topics: need at least one [[topics]] entry")
            kwargs[name] = [_build(TopicConfig, t, base, f"topics[{i}]") for i, t in enumerate(value)]
        else:
            kwargs[name] = _coerce(name, value, str(f.type), base, where)
    return cls(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    base = path.resolve().parent
    cfg = _build(PipelineConfig, raw, base, path.name)
    cfg.base_dir = base
    validate_config(cfg)
    return cfg


def validate_config(cfg: PipelineConfig) -> None:
    ids = [t.id for t in cfg.topics]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate topic ids: {ids}")
    for t in cfg.topics:
        try:
            t.spec()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if t.axis.method not in ("pair", "seeds"):
            raise ConfigError(f"topic {t.id}: axis.method must be 'pair' or 'seeds'")
        if not t.axis.pro or not t.axis.con:
            raise ConfigError(f"topic {t.id}: axis needs both pro and con")
    if cfg.min_sentences < 1:
        raise ConfigError("min_sentences must be >= 1")
    if cfg.groups < 1:
        raise ConfigError("groups must be >= 1")
    if cfg.party_statistic not in ("median", "mean"):
        raise ConfigError("party_statistic must be 'median' or 'mean'")
    if cfg.topic_model.level not in ("speaker", "sentence"):
        raise ConfigError("topic_model.level must be 'speaker' or 'sentence'")
    if cfg.reduce.method not in ("pca", "umap"):
        raise ConfigError("reduce.method must be 'pca' or 'umap'")
    if not 1 <= cfg.api.page_size <= MAX_PAGE_SIZE:
        raise ConfigError(f"api.page_size must be in [1, {MAX_PAGE_SIZE}]")
    if cfg.classifier.path is None and cfg.classifier.train_data is None:
        raise ConfigError("classifier needs 'path' (weights) or 'train_data' (labeled TSV)")
