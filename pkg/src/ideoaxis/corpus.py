"""Speech records: fetching from the Diet minutes API, topic corpora, and the JSONL store."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator
from urllib.parse import urlencode

import httpx

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://kokkai.ndl.go.jp/api"
MAX_PAGE_SIZE = 100
CORPUS_SCHEMA_VERSION = 1

PARTIES = ("LDP", "NDP", "CDP", "JCP", "Komeito", "JRP")

# speakerGroup prefixes as they appear in the minutes API; caucus names carry suffixes
# such as "・無所属の会", so matching is by prefix.
PARTY_PREFIXES = {
    "自由民主党": "LDP",
    "国民民主党": "NDP",
    "立憲民主党": "CDP",
    "日本共産党": "JCP",
    "公明党": "Komeito",
    "日本維新の会": "JRP",
}


class House(str, Enum):
    LOWER = "LOWER"
    UPPER = "UPPER"

    @property
    def api_name(self) -> str:
        return "衆議院" if self is House.LOWER else "参議院"

    @classmethod
    def from_api(cls, name: str) -> "House":
        if name == "衆議院":
            return cls.LOWER
        if name == "参議院":
            return cls.UPPER
        return cls(name)


class CorpusError(Exception):
    pass


class DietAPIError(CorpusError):
    pass


class NetworkError(DietAPIError):
    """Transport failure or retryable server status; ``attempts`` counts tries made."""

    retryable = True

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class HTTPStatusError(DietAPIError):
    retryable = False

    def __init__(self, status: int, body: str):
        self.status = status
        self.body_excerpt = body[:200]
        super().__init__(f"HTTP {status}: {self.body_excerpt}")


class ParseError(DietAPIError):
    retryable = False

    def __init__(self, field_name: str, detail: str = ""):
        self.field = field_name
        super().__init__(f"malformed response field {field_name!r}" + (f": {detail}" if detail else ""))


class SchemaVersionError(CorpusError):
    pass


_WS = re.compile(r"[\s　]+")
_SPACE_NEXT_TO_WIDE = re.compile(r" (?=[^\x00-\x7f])|(?<=[^\x00-\x7f]) ")


def normalize_name(name: str) -> str:
    """Collapse whitespace; drop it entirely next to non-ASCII characters (Japanese names)."""
    collapsed = _WS.sub(" ", name).strip()
    return _SPACE_NEXT_TO_WIDE.sub("", collapsed)


def party_code(speaker_group: str) -> str:
    for prefix, code in PARTY_PREFIXES.items():
        if speaker_group.startswith(prefix):
            return code
    return speaker_group


@dataclass(frozen=True)
class SpeechRecord:
    speech_id: str
    speaker_name: str
    party: str
    house: House
    date: dt.date
    text: str
    matched_queries: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.speech_id:
            raise ValueError("speech_id must be non-empty")
        if not self.text:
            raise ValueError(f"speech {self.speech_id}: text must be non-empty")

    def to_json(self) -> dict:
        return {
            "schema_version": CORPUS_SCHEMA_VERSION,
            "speech_id": self.speech_id,
            "speaker_name": self.speaker_name,
            "party": self.party,
            "house": self.house.value,
            "date": self.date.isoformat(),
            "text": self.text,
            "matched_queries": sorted(self.matched_queries),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "SpeechRecord":
        return cls(
            speech_id=raw["speech_id"],
            speaker_name=raw["speaker_name"],
            party=raw["party"],
            house=House(raw["house"]),
            date=dt.date.fromisoformat(raw["date"]),
            text=raw["text"],
            matched_queries=frozenset(raw["matched_queries"]),
        )


@dataclass(frozen=True)
class TopicSpec:
    topic_id: str
    query_words: tuple[str, ...]
    date_from: dt.date
    date_to: dt.date
    house: House = House.LOWER

    def __post_init__(self):
        if not self.query_words:
            raise ValueError(f"topic {self.topic_id}: query_words must be non-empty")
        if self.date_from > self.date_to:
            raise ValueError(f"topic {self.topic_id}: date_from is after date_to")


@dataclass(frozen=True)
class RosterEntry:
    speaker_name: str
    party: str
    house: House = House.LOWER
    active: bool = True
    aliases: tuple[str, ...] = ()


@dataclass
class SpeakerRoster:
    entries: list[RosterEntry]
    _lookup: dict[str, RosterEntry] = field(init=False, repr=False)

    def __post_init__(self):
        self._lookup = {}
        seen = set()
        for e in self.entries:
            if e.party not in PARTIES:
                raise ValueError(f"{e.speaker_name}: unknown party {e.party!r}; expected one of {PARTIES}")
            key = normalize_name(e.speaker_name)
            if key in seen:
                raise ValueError(f"duplicate roster entry {e.speaker_name!r}")
            seen.add(key)
            for name in (e.speaker_name, *e.aliases):
                self._lookup[normalize_name(name)] = e

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, name: str) -> RosterEntry | None:
        """Roster entry for a raw API speaker name (via aliases), active members only."""
        entry = self._lookup.get(normalize_name(name))
        if entry is None or not entry.active:
            return None
        return entry

    @classmethod
    def from_csv(cls, path: str | Path) -> "SpeakerRoster":
        """Columns: speaker_name, party, house, active, aliases ('|'-separated, optional)."""
        entries = []
        with open(path, encoding="utf-8", newline="") as f:
            for row in csv.DictReader(f):
                entries.append(
                    RosterEntry(
                        speaker_name=row["speaker_name"].strip(),
                        party=row["party"].strip(),
                        house=House(row.get("house", "LOWER").strip() or "LOWER"),
                        active=row.get("active", "true").strip().lower() in ("1", "true", "yes"),
                        aliases=tuple(a.strip() for a in (row.get("aliases") or "").split("|") if a.strip()),
                    )
                )
        return cls(entries)


class RateLimiter:
    """Minimum interval between requests, shared across threads."""

    def __init__(self, min_interval: float = 1.0, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.min_interval = min_interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if now < self._next:
                self._sleep(self._next - now)
                now = self._next
            self._next = now + self.min_interval


def _fixture_key(path: str, params: dict) -> str:
    canonical = path.strip("/") + "?" + urlencode(sorted(params.items()))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:24]


class RecordedTransport(httpx.BaseTransport):
    """Replays (or records) API responses from a directory, keyed by request path and query.

    Replay mode never touches the network; an unrecorded request is a 599 with a
    message naming the missing fixture file.
    """

    def __init__(self, directory: str | Path, record_with: httpx.BaseTransport | None = None):
        self.directory = Path(directory)
        self.record_with = record_with

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        params = dict(request.url.params.multi_items())
        name = _fixture_key(request.url.path, params) + ".json"
        fpath = self.directory / name
        if fpath.exists():
            stored = json.loads(fpath.read_text(encoding="utf-8"))
            return httpx.Response(stored["status"], content=stored["body"].encode("utf-8"), request=request)
        if self.record_with is None:
            return httpx.Response(599, text=f"no recorded fixture {name} for {request.url}", request=request)
        response = self.record_with.handle_request(request)
        response.read()
        self.directory.mkdir(parents=True, exist_ok=True)
        payload = {"request": str(request.url), "status": response.status_code, "body": response.text}
        fpath.write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")
        return response


def write_fixture_response(directory: str | Path, path: str, params: dict, body: dict, status: int = 200) -> Path:
    """Store one canned response where ``RecordedTransport`` will find it."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    str_params = {k: str(v) for k, v in params.items()}
    fpath = directory / (_fixture_key(path, str_params) + ".json")
    payload = {"request": path + "?" + urlencode(sorted(str_params.items())), "status": status,
               "body": json.dumps(body, ensure_ascii=False)}
    fpath.write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")
    return fpath


class DietClient:
    """Client for the speech endpoint of the Diet minutes search API.

    All requests from one client (and its threads) go through one rate limiter.
    5xx/429 responses and transport errors are retried with exponential backoff;
    other statuses >= 400 raise ``HTTPStatusError`` at once.
    """

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        *,
        page_size: int = MAX_PAGE_SIZE,
        min_interval: float = 1.0,
        max_retries: int = 5,
        backoff: float = 1.0,
        transport: httpx.BaseTransport | None = None,
        limiter: RateLimiter | None = None,
        sleep: Callable[[float], None] = time.sleep,
        timeout: float = 30.0,
    ):
        if not 1 <= page_size <= MAX_PAGE_SIZE:
            raise ValueError(f"page_size must be in [1, {MAX_PAGE_SIZE}]")
        self.page_size = page_size
        self.max_retries = max_retries
        self.backoff = backoff
        self.limiter = limiter or RateLimiter(min_interval, sleep=sleep)
        self._sleep = sleep
        self._http = httpx.Client(base_url=base_url.rstrip("/") + "/", transport=transport, timeout=timeout)
        self.retries = 0
        self.requests = 0
        self._count_lock = threading.Lock()

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _get(self, params: dict) -> dict:
        attempt = 0
        while True:
            attempt += 1
            self.limiter.wait()
            with self._count_lock:
                self.requests += 1
            try:
                resp = self._http.get("speech", params=params)
            except httpx.TransportError as e:
                failure: str = f"network failure: {e}"
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError as e:
                        raise ParseError("<body>", str(e)) from None
                if resp.status_code < 500 and resp.status_code != 429:
                    raise HTTPStatusError(resp.status_code, resp.text)
                failure = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if attempt > self.max_retries:
                raise NetworkError(failure, attempt)
            with self._count_lock:
                self.retries += 1
            delay = self.backoff * 2 ** (attempt - 1)
            log.warning("retrying in %.1fs after %s", delay, failure)
            self._sleep(delay)

    def fetch_speeches(self, query: str, date_from: dt.date, date_to: dt.date,
                       house: House = House.LOWER) -> Iterator[SpeechRecord]:
        """Every speech matching ``query`` in the date range, paginating transparently."""
        if not query:
            raise ValueError("query must be non-empty")
        if date_from > date_to:
            raise ValueError("date_from is after date_to")
        start = 1
        while True:
            params = {
                "any": query,
                "from": date_from.isoformat(),
                "until": date_to.isoformat(),
                "nameOfHouse": house.api_name,
                "recordPacking": "json",
                "startRecord": str(start),
                "maximumRecords": str(self.page_size),
            }
            page = self._get(params)
            if "message" in page and "speechRecord" not in page:
                raise HTTPStatusError(400, str(page["message"]))
            total = _int_field(page, "numberOfRecords")
            if total == 0:
                return
            records = page.get("speechRecord")
            if not isinstance(records, list):
                raise ParseError("speechRecord", "expected a list")
            for raw in records:
                yield _parse_speech(raw, query)
            nxt = page.get("nextRecordPosition")
            if nxt in (None, "", 0) or not records:
                return
            try:
                start = int(nxt)
            except (TypeError, ValueError):
                raise ParseError("nextRecordPosition", repr(nxt)) from None


def _int_field(page: dict, name: str) -> int:
    try:
        return int(page[name])
    except KeyError:
        raise ParseError(name, "missing") from None
    except (TypeError, ValueError):
        raise ParseError(name, repr(page[name])) from None


def _parse_speech(raw: dict, query: str) -> SpeechRecord:
    for name in ("speechID", "speaker", "speech", "date", "nameOfHouse"):
        if not isinstance(raw.get(name), str):
            raise ParseError(name, "missing or not a string")
    try:
        date = dt.date.fromisoformat(raw["date"])
    except ValueError:
        raise ParseError("date", repr(raw["date"])) from None
    try:
        house = House.from_api(raw["nameOfHouse"])
    except ValueError:
        raise ParseError("nameOfHouse", repr(raw["nameOfHouse"])) from None
    return SpeechRecord(
        speech_id=raw["speechID"],
        speaker_name=normalize_name(raw["speaker"]),
        party=party_code(raw.get("speakerGroup") or ""),
        house=house,
        date=date,
        text=raw["speech"],
        matched_queries=frozenset({query}),
    )


def fetch_speeches(query: str, date_from: dt.date, date_to: dt.date, house: House = House.LOWER,
                   client: DietClient | None = None) -> Iterator[SpeechRecord]:
    own = client is None
    client = client or DietClient()
    try:
        yield from client.fetch_speeches(query, date_from, date_to, house)
    finally:
        if own:
            client.close()


def merge_records(records: Iterable[SpeechRecord], roster: SpeakerRoster) -> list[SpeechRecord]:
    """Dedupe by speech_id (merging matched queries), keep active roster speakers, sort by (date, id)."""
    merged: dict[str, SpeechRecord] = {}
    for rec in records:
        entry = roster.resolve(rec.speaker_name)
        if entry is None:
            continue
        prior = merged.get(rec.speech_id)
        queries = rec.matched_queries | (prior.matched_queries if prior else frozenset())
        merged[rec.speech_id] = SpeechRecord(
            speech_id=rec.speech_id,
            speaker_name=entry.speaker_name,
            party=entry.party,
            house=rec.house,
            date=rec.date,
            text=rec.text,
            matched_queries=queries,
        )
    return sorted(merged.values(), key=lambda r: (r.date, r.speech_id))


def build_topic_corpus(spec: TopicSpec, roster: SpeakerRoster, client: DietClient | None = None,
                       max_workers: int = 1) -> list[SpeechRecord]:
    if len(roster) == 0:
        raise ValueError("roster must be non-empty")
    own = client is None
    client = client or DietClient()

    def fetch(q: str) -> list[SpeechRecord]:
        return list(client.fetch_speeches(q, spec.date_from, spec.date_to, spec.house))

    try:
        if max_workers > 1:
            with ThreadPoolExecutor(max_workers) as pool:
                batches = list(pool.map(fetch, spec.query_words))
        else:
            batches = [fetch(q) for q in spec.query_words]
    finally:
        if own:
            client.close()
    return merge_records((r for batch in batches for r in batch), roster)


def dump_corpus(records: Iterable[SpeechRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n" for r in records)


def store_corpus(records: Iterable[SpeechRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dump_corpus(records), encoding="utf-8")
    tmp.replace(path)


def load_corpus(path: str | Path) -> list[SpeechRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            raw = json.loads(line)
            version = raw.get("schema_version")
            if version != CORPUS_SCHEMA_VERSION:
                raise SchemaVersionError(
                    f"{path}:{lineno}: schema_version {version!r}, expected {CORPUS_SCHEMA_VERSION}")
            out.append(SpeechRecord.from_json(raw))
    return out
