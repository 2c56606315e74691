"""Chat-completions client with a content-addressed response cache.

Every request is keyed by a SHA-256 digest of ``(model, messages,
temperature)``. Entries are plain JSON files so they can be read during an
audit and shipped to another machine for replay.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from pathlib import Path
from typing import Any, Callable

import httpx

from .errors import UpstreamError

logger = logging.getLogger(__name__)

API_KEY_ENV = "SPATIALGROUND_API_KEY"
DEFAULT_MODEL = "gpt-4"

Messages = list[dict[str, str]]
# a transport takes the request body and returns (reply text, usage dict)
Transport = Callable[[dict[str, Any]], tuple[str, dict[str, int]]]


def request_digest(model: str, messages: Messages, temperature: float) -> str:
    body = json.dumps({"model": model, "messages": messages, "temperature": float(temperature)},
                      sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(body.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per request digest under ``directory``."""

    STATS_FILE = "_stats.json"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()

    def _path(self, digest: str) -> Path:
        return self.directory / f"{digest}.json"

    def get(self, digest: str) -> dict | None:
        """Cached entry, or None on a miss. Unreadable entries count as misses."""
        path = self._path(digest)
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            req = entry["request"]
            ok = (isinstance(entry.get("reply"), str)
                  and request_digest(req["model"], req["messages"], req["temperature"]) == digest)
        except FileNotFoundError:
            self._bump("misses")
            return None
        except (OSError, ValueError, KeyError, TypeError):
            ok = False
        if not ok:
            logger.warning("corrupted cache entry %s, treating as miss", path.name)
            self._bump("misses")
            return None
        self._bump("hits")
        return entry

    def put(self, digest: str, request: dict, reply: str, usage: dict | None = None) -> None:
        entry = {"digest": digest, "request": request, "reply": reply, "usage": usage or {}}
        self._write_atomic(self._path(digest), json.dumps(entry, indent=2, sort_keys=True, ensure_ascii=False))

    def _write_atomic(self, path: Path, text: str) -> None:
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
            os.replace(tmp, path)

    def _bump(self, counter: str) -> None:
        with self._lock:
            stats = self.counters()
            stats[counter] = stats.get(counter, 0) + 1
            self._write_atomic(self.directory / self.STATS_FILE, json.dumps(stats, sort_keys=True))

    def counters(self) -> dict[str, int]:
        try:
            stats = json.loads((self.directory / self.STATS_FILE).read_text())
            return {"hits": int(stats.get("hits", 0)), "misses": int(stats.get("misses", 0))}
        except (OSError, ValueError):
            return {"hits": 0, "misses": 0}

    def entry_paths(self) -> list[Path]:
        return sorted(p for p in self.directory.glob("*.json") if p.name != self.STATS_FILE)

    def __len__(self) -> int:
        return len(self.entry_paths())

    def stats(self) -> dict[str, int]:
        return {"entries": len(self), **self.counters()}

    def clear(self) -> int:
        with self._lock:
            paths = self.entry_paths()
            for p in paths:
                p.unlink()
            (self.directory / self.STATS_FILE).unlink(missing_ok=True)
        return len(paths)

    def export(self, bundle: str | Path) -> int:
        """Write every valid entry to a JSON-lines bundle."""
        n = 0
        with open(bundle, "w", encoding="utf-8") as fh:
            for p in self.entry_paths():
                try:
                    entry = json.loads(p.read_text(encoding="utf-8"))
                except ValueError:
                    continue
                fh.write(json.dumps(entry, sort_keys=True, ensure_ascii=False) + "\n")
                n += 1
        return n

    def import_bundle(self, bundle: str | Path) -> int:
        n = 0
        with open(bundle, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                req = entry["request"]
                digest = request_digest(req["model"], req["messages"], req["temperature"])
                self.put(digest, req, entry["reply"], entry.get("usage"))
                n += 1
        return n


class RateLimiter:
    """Enforces a minimum spacing between upstream calls."""

    def __init__(self, min_interval: float = 0.0):
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._last = -float("inf")

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            delay = self._last + self.min_interval - now
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()


_LIMITERS: dict[str, RateLimiter] = {}
_LIMITERS_LOCK = threading.Lock()


def shared_limiter(key: str, min_interval: float) -> RateLimiter:
    with _LIMITERS_LOCK:
        lim = _LIMITERS.setdefault(key, RateLimiter(min_interval))
        lim.min_interval = max(lim.min_interval, min_interval)
        return lim


class ChatClient:
    """Cache-first chat client.

    With neither ``endpoint`` nor ``transport`` set the client is replay-only:
    a cache miss raises :class:`UpstreamError`.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = DEFAULT_MODEL,
        cache: ResponseCache | str | Path | None = None,
        *,
        api_key: str | None = None,
        timeout: float = 60.0,
        min_interval: float = 0.0,
        temperature: float = 0.0,
        transport: Transport | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.cache = ResponseCache(cache) if isinstance(cache, (str, Path)) else cache
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.temperature = temperature
        self.transport = transport
        self.limiter = shared_limiter(endpoint or "<transport>", min_interval)
        self._counter_lock = threading.Lock()
        self.upstream_calls = 0
        self.cache_hits = 0
        self._local = threading.local()

    @property
    def last_usage(self) -> dict[str, int]:
        """Token usage of the calling thread's most recent request."""
        return getattr(self._local, "usage", {})

    @last_usage.setter
    def last_usage(self, value: dict[str, int]) -> None:
        self._local.usage = value

    @property
    def offline(self) -> bool:
        return self.endpoint is None and self.transport is None

    def chat(self, messages: Messages, timeout: float | None = None) -> str:
        if not messages:
            raise ValueError("messages must be non-empty")
        request = {"model": self.model, "messages": [dict(m) for m in messages],
                   "temperature": float(self.temperature)}
        digest = request_digest(self.model, request["messages"], self.temperature)
        if self.cache is not None:
            entry = self.cache.get(digest)
            if entry is not None:
                with self._counter_lock:
                    self.cache_hits += 1
                self.last_usage = dict(entry.get("usage") or {})
                return entry["reply"]
        if self.offline:
            raise UpstreamError(f"no cached reply for request {digest[:12]} and no endpoint configured")

        self.limiter.wait()
        with self._counter_lock:
            self.upstream_calls += 1
        if self.transport is not None:
            reply, usage = self.transport(request)
        else:
            reply, usage = self._http(request, timeout or self.timeout)
        if self.cache is not None:
            self.cache.put(digest, request, reply, usage)
        self.last_usage = dict(usage)
        return reply

    def _http(self, request: dict[str, Any], timeout: float) -> tuple[str, dict[str, int]]:
        url = self.endpoint.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = httpx.post(url, json=request, headers=headers, timeout=timeout)
            resp.raise_for_status()
            body = resp.json()
            reply = body["choices"][0]["message"]["content"] or ""
        except httpx.TimeoutException as exc:
            raise UpstreamError(f"chat request to {url} timed out after {timeout}s") from exc
        except httpx.HTTPError as exc:
            raise UpstreamError(f"chat request to {url} failed: {exc}") from exc
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise UpstreamError(f"malformed chat response from {url}: {exc}") from exc
        usage = body.get("usage") or {}
        return reply, {k: int(usage.get(k, 0) or 0) for k in ("prompt_tokens", "completion_tokens")}


def chat(client: ChatClient, messages: Messages) -> str:
    return client.chat(messages)


class ScriptedTransport:
    """Transport that replays a fixed list of replies, for tests and demos."""

    def __init__(self, replies: list[str]):
        self.replies = list(replies)
        self.requests: list[dict] = []

    def __call__(self, request: dict[str, Any]) -> tuple[str, dict[str, int]]:
        self.requests.append(request)
        if len(self.requests) > len(self.replies):
            raise UpstreamError("scripted transport ran out of replies")
        return self.replies[len(self.requests) - 1], {}
