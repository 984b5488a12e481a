"""Wikidata access: entity search, descriptions, and SPARQL coordinates.

All HTTP goes through a transport object chosen by cache mode:

* ``live``   — straight to the network, rate-limited.
* ``record`` — read-through cache: serve hits from disk, fetch misses
  live and store the response for later replay.
* ``replay`` — disk only.  A miss raises ReplayCacheMiss; no network
  connection is ever opened.

Cache keys canonicalize the request (method + URL + sorted query
parameters + body hash), so a recorded response is found again even if
parameter order changes.  The client retries transport-level failures
with 1s/2s/4s backoff, spaces request starts at least 0.1s apart, and
never lets more than a handful of requests run at once.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import tempfile
import threading
import time
import urllib.error
import urllib.parse
import urllib.request
from base64 import b64decode, b64encode
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ProtocolError, ReplayCacheMiss, TransportError

DEFAULT_API_URL = "https://www.wikidata.org/w/api.php"
DEFAULT_SPARQL_URL = "https://query.wikidata.org/sparql"
DEFAULT_USER_AGENT = "geolex/0.1 (encyclopedia gazetteer pipeline)"
DEFAULT_MIN_INTERVAL_S = 0.1
DEFAULT_BACKOFF_S = (1.0, 2.0, 4.0)
SPARQL_BATCH_SIZE = 200
SEARCH_LIMIT = 5

_QID_RE = re.compile(r"^Q[1-9][0-9]*$")
_ENTITY_URI_PREFIX = "http://www.wikidata.org/entity/"
# WKT point literal, optionally preceded by a datum IRI.
_WKT_POINT_RE = re.compile(
    r"^\s*(?:<[^<>]+>\s+)?Point\s*\(\s*([^\s()]+)\s+([^\s()]+)\s*\)\s*$",
    re.IGNORECASE,
)


def validate_qid(qid: str) -> str:
    """Return ``qid`` if it looks like ``Q`` + digits (no leading zero)."""
    if not isinstance(qid, str) or not _QID_RE.match(qid):
        raise ValueError(f"not a Wikidata item id: {qid!r}")
    return qid


def qid_number(qid: str) -> int:
    return int(validate_qid(qid)[1:])


def parse_wkt_point(literal: str) -> tuple[float, float]:
    """Parse a WKT ``Point(lon lat)`` literal into a (lat, lon) pair.

    WKT puts longitude first; callers get latitude first.  An optional
    ``<datum-iri>`` prefix is accepted and ignored.  Out-of-range or
    non-finite coordinates raise ValueError.
    """
    match = _WKT_POINT_RE.match(literal)
    if not match:
        raise ValueError(f"not a WKT point: {literal!r}")
    try:
        lon = float(match.group(1))
        lat = float(match.group(2))
    except ValueError as err:
        raise ValueError(f"bad WKT point coordinates: {literal!r}") from err
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise ValueError(f"non-finite WKT point: {literal!r}")
    if abs(lon) > 180.0:
        raise ValueError(f"longitude out of range: {lon}")
    if abs(lat) > 90.0:
        raise ValueError(f"latitude out of range: {lat}")
    return lat, lon


# ── Requests, cache keys, transports ─────────────────────────────────────


@dataclass(frozen=True)
class HttpRequest:
    """One HTTP exchange, described independently of any HTTP library."""

    method: str
    url: str
    params: tuple[tuple[str, str], ...] = ()
    body: bytes | None = None
    headers: tuple[tuple[str, str], ...] = ()

    def full_url(self) -> str:
        if not self.params:
            return self.url
        return f"{self.url}?{urllib.parse.urlencode(list(self.params))}"


def canonical_request_key(request: HttpRequest) -> str:
    """Stable cache key for a request.

    Method, bare URL, query parameters sorted by (name, value), and a
    hash of the body.  Reordering parameters therefore never changes
    the key; changing any value always does.
    """
    body_hash = hashlib.sha256(request.body or b"").hexdigest()
    query = urllib.parse.urlencode(sorted(request.params))
    material = f"{request.method.upper()} {request.url}?{query} body:{body_hash}"
    return hashlib.sha256(material.encode("utf-8")).hexdigest()


class RateLimiter:
    """Spaces request starts at least ``min_interval`` seconds apart.

    Thread-safe; the lock is held while waiting so concurrent callers
    queue up and get distinct start slots.  Clock and sleep are
    injectable for tests.
    """

    def __init__(
        self,
        min_interval: float = DEFAULT_MIN_INTERVAL_S,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        if min_interval < 0:
            raise ValueError(f"min_interval must be >= 0, got {min_interval}")
        self.min_interval = min_interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._last_start: float | None = None
        self.starts: list[float] = []

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if self._last_start is not None:
                earliest = self._last_start + self.min_interval
                if now < earliest:
                    self._sleep(earliest - now)
                    now = max(self._clock(), earliest)
            self._last_start = now
            self.starts.append(now)


class UrllibTransport:
    """Live HTTP.  Sends a User-Agent on every request (the endpoints
    reject anonymous clients) and shares one rate limiter."""

    def __init__(
        self,
        user_agent: str = DEFAULT_USER_AGENT,
        timeout: float = 30.0,
        rate_limiter: RateLimiter | None = None,
    ):
        if not user_agent.strip():
            raise ValueError("user_agent must be non-empty")
        self.user_agent = user_agent
        self.timeout = timeout
        self.rate_limiter = rate_limiter or RateLimiter()
        self.request_count = 0

    def send(self, request: HttpRequest) -> bytes:
        self.rate_limiter.wait()
        self.request_count += 1
        headers = dict(request.headers)
        headers.setdefault("User-Agent", self.user_agent)
        http_request = urllib.request.Request(
            request.full_url(),
            data=request.body,
            headers=headers,
            method=request.method,
        )
        try:
            with urllib.request.urlopen(http_request, timeout=self.timeout) as response:
                return response.read()
        except urllib.error.HTTPError as err:
            if err.code == 429 or err.code >= 500:
                raise TransportError(f"HTTP {err.code} from {request.url}") from err
            raise ProtocolError(f"HTTP {err.code} from {request.url}") from err
        except (urllib.error.URLError, TimeoutError, OSError) as err:
            raise TransportError(f"{request.method} {request.url}: {err}") from err


class ResponseCache:
    """One JSON file per request key under a directory.

    Bodies from these endpoints are UTF-8 JSON and are stored as text;
    anything undecodable falls back to base64 so the cache can hold any
    response byte-for-byte.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)

    def path_for(self, key: str) -> Path:
        return self.cache_dir / f"{key}.json"

    def get(self, key: str) -> bytes | None:
        path = self.path_for(key)
        if not path.exists():
            return None
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            body = record["body"]
            encoding = record.get("encoding", "utf-8")
        except (json.JSONDecodeError, KeyError, TypeError) as err:
            raise ProtocolError(f"corrupt cache file {path}: {err}") from err
        if encoding == "base64":
            return b64decode(body)
        return body.encode("utf-8")

    def put(self, key: str, request: HttpRequest, body: bytes) -> Path:
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        try:
            stored: dict = {"body": body.decode("utf-8")}
        except UnicodeDecodeError:
            stored = {"body": b64encode(body).decode("ascii"), "encoding": "base64"}
        record = {
            "request_key": key,
            "method": request.method,
            "url": request.full_url(),
            "fetched_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **stored,
        }
        path = self.path_for(key)
        fd, tmp_name = tempfile.mkstemp(prefix=key[:16] + ".", dir=self.cache_dir)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False))
            os.replace(tmp_name, path)
        except BaseException:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
            raise
        return path


class ReplayTransport:
    """Serves recorded responses only; never opens a connection."""

    def __init__(self, cache_dir: str | Path):
        self.cache = ResponseCache(cache_dir)
        self.request_count = 0

    def send(self, request: HttpRequest) -> bytes:
        self.request_count += 1
        body = self.cache.get(canonical_request_key(request))
        if body is None:
            raise ReplayCacheMiss(
                f"no recorded response for {request.method} {request.full_url()}"
            )
        return body


class RecordingTransport:
    """Read-through recorder around a live transport."""

    def __init__(self, inner, cache_dir: str | Path):
        self.inner = inner
        self.cache = ResponseCache(cache_dir)

    def send(self, request: HttpRequest) -> bytes:
        key = canonical_request_key(request)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        body = self.inner.send(request)
        self.cache.put(key, request, body)
        return body


def make_transport(
    mode: str,
    cache_dir: str | Path | None = None,
    user_agent: str = DEFAULT_USER_AGENT,
    min_interval: float = DEFAULT_MIN_INTERVAL_S,
    timeout: float = 30.0,
):
    """Build the transport for a cache mode (live, record, replay)."""
    if mode == "live":
        return UrllibTransport(
            user_agent=user_agent,
            timeout=timeout,
            rate_limiter=RateLimiter(min_interval),
        )
    if mode in ("record", "replay"):
        if cache_dir is None:
            raise ValueError(f"cache mode {mode!r} needs a cache directory")
        if mode == "replay":
            return ReplayTransport(cache_dir)
        live = UrllibTransport(
            user_agent=user_agent,
            timeout=timeout,
            rate_limiter=RateLimiter(min_interval),
        )
        return RecordingTransport(live, cache_dir)
    raise ValueError(f"unknown cache mode {mode!r}; expected live, record, or replay")


# ── Client ───────────────────────────────────────────────────────────────


@dataclass
class WikidataCandidate:
    """One search hit: item id, display label, Swedish description."""

    qid: str
    label: str = ""
    description_sv: str | None = None


@dataclass(frozen=True)
class CoordinateRecord:
    qid: str
    lat: float
    lon: float

    def __post_init__(self) -> None:
        validate_qid(self.qid)
        if not (math.isfinite(self.lat) and -90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (math.isfinite(self.lon) and -180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")


def _parse_json_body(body: bytes, request: HttpRequest) -> dict:
    try:
        parsed = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ProtocolError(f"non-JSON response from {request.url}: {err}") from err
    if not isinstance(parsed, dict):
        raise ProtocolError(f"unexpected response shape from {request.url}")
    return parsed


def _qid_from_entity_uri(uri: str) -> str:
    return validate_qid(uri.rsplit("/", 1)[-1])


def _dedupe(qids: Iterable[str]) -> list[str]:
    out: list[str] = []
    seen: set[str] = set()
    for qid in qids:
        validate_qid(qid)
        if qid not in seen:
            seen.add(qid)
            out.append(qid)
    return out


class WikidataClient:
    """Entity search, description fetch, and coordinate queries.

    ``warnings`` counts SPARQL result rows that were skipped as
    unparseable; everything else either succeeds or raises.
    """

    def __init__(
        self,
        transport=None,
        api_url: str = DEFAULT_API_URL,
        sparql_url: str = DEFAULT_SPARQL_URL,
        max_in_flight: int = 4,
        backoff_s: Sequence[float] = DEFAULT_BACKOFF_S,
        sleep=time.sleep,
    ):
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.transport = transport if transport is not None else UrllibTransport()
        self.api_url = api_url
        self.sparql_url = sparql_url
        self.backoff_s = tuple(backoff_s)
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.warnings = 0

    def _send(self, request: HttpRequest) -> bytes:
        """Send with retries: transport errors back off 1s/2s/4s, then
        give up; protocol errors and replay misses surface at once."""
        attempts = len(self.backoff_s) + 1
        for attempt in range(attempts):
            try:
                with self._slots:
                    return self.transport.send(request)
            except TransportError:
                if attempt == attempts - 1:
                    raise
                self._sleep(self.backoff_s[attempt])
        raise AssertionError("unreachable")

    def search_candidates(
        self, headword: str, limit: int = SEARCH_LIMIT, language: str = "sv"
    ) -> list[WikidataCandidate]:
        """Entity search for a headword, best matches first."""
        if not headword or not headword.strip():
            raise ValueError("cannot search for an empty headword")
        if not 1 <= limit <= 50:
            raise ValueError(f"limit must be in 1..50, got {limit}")
        request = HttpRequest(
            "GET",
            self.api_url,
            params=(
                ("action", "wbsearchentities"),
                ("format", "json"),
                ("language", language),
                ("limit", str(limit)),
                ("search", headword),
                ("uselang", language),
            ),
        )
        data = _parse_json_body(self._send(request), request)
        if "error" in data:
            raise ProtocolError(f"search API error: {data['error']}")
        hits = data.get("search")
        if not isinstance(hits, list):
            raise ProtocolError(f"search response missing 'search' list for {headword!r}")
        candidates = []
        for hit in hits[:limit]:
            try:
                qid = validate_qid(hit["id"])
            except (KeyError, TypeError, ValueError) as err:
                raise ProtocolError(f"search hit without a valid item id: {hit!r}") from err
            candidates.append(
                WikidataCandidate(
                    qid=qid,
                    label=hit.get("label", ""),
                    description_sv=hit.get("description"),
                )
            )
        return candidates

    def fetch_descriptions(
        self, qids: Sequence[str], language: str = "sv"
    ) -> dict[str, str | None]:
        """Authoritative descriptions for items, ``None`` where absent
        (including items that do not exist)."""
        unique = _dedupe(qids)
        if not unique:
            raise ValueError("no item ids given")
        out: dict[str, str | None] = {}
        for start in range(0, len(unique), 50):  # API caps ids at 50 per call
            batch = unique[start : start + 50]
            request = HttpRequest(
                "GET",
                self.api_url,
                params=(
                    ("action", "wbgetentities"),
                    ("format", "json"),
                    ("ids", "|".join(batch)),
                    ("languages", language),
                    ("props", "descriptions"),
                ),
            )
            data = _parse_json_body(self._send(request), request)
            if "error" in data:
                raise ProtocolError(f"entity API error: {data['error']}")
            entities = data.get("entities")
            if not isinstance(entities, dict):
                raise ProtocolError("entity response missing 'entities' map")
            for qid in batch:
                entity = entities.get(qid)
                description = None
                if isinstance(entity, dict) and "missing" not in entity:
                    description = (
                        entity.get("descriptions", {}).get(language, {}).get("value")
                    )
                out[qid] = description
        return out

    def fetch_coordinates(self, qids: Sequence[str]) -> list[CoordinateRecord]:
        """Coordinates (P625) for items, via SPARQL, batched 200 at a time.

        Items without a coordinate claim simply do not appear in the
        result.  Rows that fail to parse are skipped and counted in
        ``warnings``.  The first coordinate seen per item wins.
        """
        unique = _dedupe(qids)
        if not unique:
            raise ValueError("no item ids given")
        records: list[CoordinateRecord] = []
        seen: set[str] = set()
        for start in range(0, len(unique), SPARQL_BATCH_SIZE):
            batch = unique[start : start + SPARQL_BATCH_SIZE]
            values = " ".join(f"wd:{qid}" for qid in batch)
            query = (
                "SELECT ?item ?coords WHERE { VALUES ?item { "
                + values
                + " } ?item wdt:P625 ?coords }"
            )
            request = HttpRequest(
                "POST",
                self.sparql_url,
                body=urllib.parse.urlencode({"query": query}).encode("ascii"),
                headers=(
                    ("Accept", "application/sparql-results+json"),
                    ("Content-Type", "application/x-www-form-urlencoded"),
                ),
            )
            data = _parse_json_body(self._send(request), request)
            try:
                bindings = data["results"]["bindings"]
            except (KeyError, TypeError) as err:
                raise ProtocolError("SPARQL response missing results.bindings") from err
            if not isinstance(bindings, list):
                raise ProtocolError("SPARQL bindings is not a list")
            for row in bindings:
                try:
                    qid = _qid_from_entity_uri(row["item"]["value"])
                    lat, lon = parse_wkt_point(row["coords"]["value"])
                except (KeyError, TypeError, ValueError):
                    self.warnings += 1
                    continue
                if qid in seen:
                    continue
                seen.add(qid)
                records.append(CoordinateRecord(qid, lat, lon))
        return records
