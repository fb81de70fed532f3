"""Generated seed speeches for axis construction, pinned to disk by content hash."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol, Sequence

log = logging.getLogger(__name__)

DEFAULT_N = 5


class SeedError(Exception):
    pass


class ServiceError(SeedError):
    retryable = True


class IntegrityError(SeedError):
    pass


class Side(str, Enum):
    PRO = "PRO"
    CON = "CON"


class ChatClient(Protocol):
    model_id: str
    params: dict

    def complete(self, prompt: str) -> str:
        ...


class FixtureChatClient:
    """Returns canned completions in order, cycling when exhausted."""

    def __init__(self, responses: Sequence[str], model_id: str = "fixture"):
        if not responses:
            raise ValueError("fixture client needs at least one response")
        self.responses = list(responses)
        self.model_id = model_id
        self.params: dict = {}
        self._i = 0

    def complete(self, prompt: str) -> str:
        text = self.responses[self._i % len(self.responses)]
        self._i += 1
        return text


class OpenAIChatClient:
    """Chat-completions client (``POST {base_url}/chat/completions``), token from an env var."""

    def __init__(self, model: str = "gpt-4", base_url: str = "https://api.openai.com/v1",
                 token_env: str = "OPENAI_API_KEY", transport=None, timeout: float = 120.0, **params):
        import httpx

        token = os.environ.get(token_env)
        if not token and transport is None:
            raise SeedError(f"environment variable {token_env} is not set")
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self.model_id = model
        self.params = params
        self._http = httpx.Client(base_url=base_url.rstrip("/") + "/", headers=headers, transport=transport,
                                  timeout=timeout)

    def complete(self, prompt: str) -> str:
        import httpx

        body = {"model": self.model_id, "messages": [{"role": "user", "content": prompt}], **self.params}
        try:
            resp = self._http.post("chat/completions", json=body)
        except httpx.TransportError as e:
            raise ServiceError(f"chat service unreachable: {e}") from e
        if resp.status_code >= 400:
            raise ServiceError(f"chat service HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, ValueError) as e:
            raise ServiceError(f"unexpected chat response: {e}") from e


@dataclass(frozen=True)
class SeedBundle:
    topic_id: str
    side: Side
    prompt: str
    texts: tuple[str, ...]
    model_id: str
    created_at: str
    params: dict = field(default_factory=dict)
    retries: int = 0

    def __post_init__(self):
        if not self.texts or any(not t.strip() for t in self.texts):
            raise ValueError("bundle texts must be non-empty")

    def payload(self) -> dict:
        return {
            "topic_id": self.topic_id,
            "side": self.side.value,
            "prompt": self.prompt,
            "model_id": self.model_id,
            "created_at": self.created_at,
            "params": self.params,
            "retries": self.retries,
            "texts": list(self.texts),
        }

    @property
    def content_hash(self) -> str:
        canonical = json.dumps(self.payload(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def generate_seeds(prompt: str, n: int, client: ChatClient, *, topic_id: str = "", side: Side = Side.PRO,
                   max_retries: int = 5, backoff: float = 1.0, sleep: Callable[[float], None] = time.sleep,
                   max_workers: int = 1, now: Callable[[], dt.datetime] | None = None) -> SeedBundle:
    """Request ``n`` independent completions; empty ones and service errors are retried and counted."""
    if n < 1:
        raise ValueError("n must be >= 1")
    retries = 0
    lock = threading.Lock()

    def one(_: int) -> str:
        nonlocal retries
        for attempt in range(max_retries + 1):
            try:
                text = client.complete(prompt)
            except ServiceError as e:
                failure = str(e)
            else:
                if text and text.strip():
                    return text
                failure = "empty completion"
            if attempt == max_retries:
                raise ServiceError(f"{failure}; gave up after {attempt + 1} attempts")
            with lock:
                retries += 1
            log.warning("seed completion retry %d: %s", attempt + 1, failure)
            sleep(backoff * 2 ** attempt)
        raise AssertionError("unreachable")

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers) as pool:
            texts = list(pool.map(one, range(n)))
    else:
        texts = [one(i) for i in range(n)]
    created = (now or (lambda: dt.datetime.now(dt.timezone.utc)))().isoformat()
    return SeedBundle(topic_id, side, prompt, tuple(texts), client.model_id, created,
                      dict(getattr(client, "params", {}) or {}), retries)


def write_seeds(bundle: SeedBundle, path: str | Path) -> str:
    """Write atomically; refuses to overwrite an existing bundle. Returns the content hash."""
    path = Path(path)
    if path.exists():
        raise SeedError(f"{path} exists; bundles are immutable, write a new file")
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(bundle.payload(), content_hash=bundle.content_hash)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, ensure_ascii=False, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)
    return bundle.content_hash


def load_seeds(path: str | Path) -> SeedBundle:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"seed bundle not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    try:
        bundle = SeedBundle(doc["topic_id"], Side(doc["side"]), doc["prompt"], tuple(doc["texts"]),
                            doc["model_id"], doc["created_at"], doc.get("params", {}), doc.get("retries", 0))
    except (KeyError, ValueError) as e:
        raise IntegrityError(f"{path}: malformed bundle ({e})") from e
    if doc.get("content_hash") != bundle.content_hash:
        raise IntegrityError(f"{path}: content hash mismatch, bundle was modified after writing")
    return bundle


def default_prompt(topic_id: str, side: Side) -> str:
    """Shipped prompt text for ``topic_id`` (files under ideoaxis/data/prompts)."""
    name = f"{topic_id}_{side.value.lower()}.txt"
    try:
        return resources.files("ideoaxis").joinpath("data", "prompts", name).read_text(encoding="utf-8").strip()
    except FileNotFoundError:
        raise SeedError(f"no shipped prompt {name}") from None
