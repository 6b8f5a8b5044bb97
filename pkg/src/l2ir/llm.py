"""LLM backends and the caching completion client.

Three pieces: a deterministic mock backend that answers profile and
audit prompts from the prompt text alone (no network, no labels), a
remote chat-completion backend with retries, and a client that fronts
either with a content-addressed response cache and a bounded number of
in-flight requests.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from hashlib import sha256
from pathlib import Path

import requests

from . import hashing
from .prompts import Prompt

logger = logging.getLogger(__name__)

DEFAULT_MAX_IN_FLIGHT = 4

ENV_LLM_URL = "L2IR_LLM_URL"
ENV_LLM_KEY = "L2IR_LLM_KEY"
ENV_LLM_MODEL = "L2IR_LLM_MODEL"


class BackendError(RuntimeError):
    """The completion backend failed after bounded retries."""


def prompt_key(model_id: str, system: str, user: str) -> str:
    """Content address of one request: sha256 over model and both messages."""
    payload = "\x00".join((model_id, system, user)).encode("utf-8")
    return sha256(payload).hexdigest()


# --------------------------------------------------------------------------
# Mock backend
# --------------------------------------------------------------------------

_TARGET_SUMMARY_RE = re.compile(
    r"^Node ID: (?P<id>.+?) \| Total reviews: (?P<n>\d+) \| "
    r"Avg\. rating: (?P<avg>[0-9.]+)$",
    re.MULTILINE,
)
_TARGET_STATS_RE = re.compile(
    r"^Target Statistics: rating std (?P<std>[0-9.]+) \| "
    r"dominant rating share (?P<dom>[0-9.]+) \| "
    r"max reviews in one day (?P<mday>\d+) \| "
    r"sentiment score (?P<sent>-?[0-9.]+)$",
    re.MULTILINE,
)
_USER_A_RE = re.compile(
    r"^  User A: (?P<name>.+?) \(Suspected Fraud Node\) \| "
    r"risk score (?P<z>[0-9.]+)$",
    re.MULTILINE,
)
_USER_B_RE = re.compile(
    r"^  User B: (?P<name>.+?) \(Suspected Benign Node\) \| "
    r"risk score (?P<z>[0-9.]+)$",
    re.MULTILINE,
)
_MAGNITUDE_RE = re.compile(
    r"^  Contradictory Magnitude: (?P<c>[0-9.]+)$", re.MULTILINE
)

_NO_TEXT = "(no text)"


@dataclass
class _Row:
    item: str
    day: int | None
    rating: int
    text: str


def _parse_rows(block: str, with_dates: bool) -> list[_Row]:
    rows = []
    for line in block.splitlines():
        if not line.startswith("  - "):
            continue
        parts = line[4:].split(" | ")
        if with_dates:
            if len(parts) < 5:
                continue
            item, date_cell, star_cell = parts[0], parts[1], parts[2]
            text = " | ".join(parts[3:-1])
            day = int(date_cell.split()[1])
        else:
            if len(parts) < 4:
                continue
            item, star_cell = parts[0], parts[1]
            text = " | ".join(parts[2:-1])
            day = None
        rating = int(star_cell.split()[0])
        rows.append(_Row(item=item, day=day, rating=rating, text=text))
    return rows


def _top_tokens(rows: list[_Row], limit: int) -> list[str]:
    counts: Counter[str] = Counter()
    for row in rows:
        if row.text == _NO_TEXT:
            continue
        counts.update(hashing.tokenize(row.text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:limit]]


class MockLLMBackend:
    """Deterministic stand-in backend.

    Responses are pure functions of the prompt text: the mock parses the
    target block (and for audits, both interaction histories) back out
    of the prompt and writes a templated report from those numbers. It
    never sees graph labels, so any class signal in its output can only
    come from the behavior traces themselves.
    """

    model_id = "mock-intent-v1"

    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, system: str, user: str) -> str:
        with self._lock:
            self.calls += 1
        if "[Target Connection]" in user:
            return self._audit(user)
        if "[Target Node]" in user:
            return self._profile(user)
        digest = sha256(user.encode("utf-8")).hexdigest()[:12]
        return f"Acknowledged request {digest}."

    # -- profile -----------------------------------------------------------

    def _profile(self, user: str) -> str:
        summary = _TARGET_SUMMARY_RE.search(user)
        stats = _TARGET_STATS_RE.search(user)
        if summary is None or stats is None:
            raise BackendError("mock backend could not parse profile prompt")
        node_id = summary.group("id")
        n = int(summary.group("n"))
        avg = float(summary.group("avg"))
        dom = float(stats.group("dom"))
        max_day = int(stats.group("mday"))
        sent = float(stats.group("sent"))

        trace_block = user.split("Chronological Behavior Traces:", 1)[1]
        trace_block = trace_block.split("\n\nTask:", 1)[0]
        rows = _parse_rows(trace_block, with_dates=False)
        tokens = _top_tokens(rows, limit=5)
        token_line = ", ".join(tokens) if tokens else "no review text available"

        signals = []
        if n >= 3 and dom >= 0.8:
            signals.append("star ratings are highly uniform")
        if max_day >= 3:
            signals.append("a same-day burst of reviews")
        if n >= 3 and avg >= 4.5:
            signals.append("ratings cluster at the top of the scale")
        if sent >= 0.6 and n >= 2:
            signals.append("review text is uniformly promotional in tone")

        if dom >= 0.8 and n >= 3:
            spread = "Activity is concentrated on a single rating level."
        else:
            spread = "Activity is spread across rating levels."
        if signals:
            signal_text = "Signals observed: " + "; ".join(signals) + "."
        else:
            signal_text = "No strong irregularity stands out in the history."
        if len(signals) >= 2:
            closing = "The combined pattern warrants closer review."
        elif len(signals) == 1:
            closing = "The pattern is mildly irregular but not conclusive."
        else:
            closing = "The pattern is consistent with ordinary reviewing."

        return "\n".join(
            [
                "User Profile Summary:",
                f"Account {node_id} shows {n} reviews with an average rating "
                f"of {avg:.2f}. {spread}",
                "",
                "Behavior Pattern Analysis:",
                f"The dominant rating share is {dom:.2f} and at most {max_day} "
                f"reviews landed on a single day. Recurring terms: {token_line}.",
                "",
                "Fraud Signal Analysis:",
                f"{signal_text} The vocabulary leans on: {token_line}.",
                "",
                "Overall Assessment:",
                f"{closing} Final classification is left to downstream scoring.",
            ]
        )

    # -- audit -------------------------------------------------------------

    def _audit(self, user: str) -> str:
        m_a, m_b = _USER_A_RE.search(user), _USER_B_RE.search(user)
        m_c = _MAGNITUDE_RE.search(user)
        if m_a is None or m_b is None or m_c is None:
            raise BackendError("mock backend could not parse audit prompt")
        name_a, z_a = m_a.group("name"), float(m_a.group("z"))
        name_b, z_b = m_b.group("name"), float(m_b.group("z"))
        magnitude = float(m_c.group("c"))

        after_a = user.split("Chronological Interaction History (User A):", 1)[1]
        block_a, after_b = after_a.split(
            "Chronological Interaction History (User B):", 1
        )
        block_b = after_b.split("\n\nTask:", 1)[0]
        rows_a = _parse_rows(block_a, with_dates=True)
        rows_b = _parse_rows(block_b, with_dates=True)

        def mean_rating(rows: list[_Row]) -> float:
            return sum(r.rating for r in rows) / len(rows) if rows else 0.0

        def max_per_day(rows: list[_Row]) -> int:
            per_day: Counter[int] = Counter(r.day for r in rows)
            return max(per_day.values()) if per_day else 0

        mean_a, mean_b = mean_rating(rows_a), mean_rating(rows_b)
        burst_a, burst_b = max_per_day(rows_a), max_per_day(rows_b)
        shared = len({r.item for r in rows_a} & {r.item for r in rows_b})
        gap = abs(mean_a - mean_b)

        points = 0
        if gap >= 1.0:
            points += 1
        if burst_a >= 3:
            points += 1
        if len(rows_a) >= 3 and mean_a >= 4.5 and len({r.rating for r in rows_a}) == 1:
            points += 1
        if shared >= 1 and gap >= 1.5:
            points += 1

        verdict = "High" if points >= 2 else ("Medium" if points == 1 else "Low")
        confidence = min(0.95, 0.35 + 0.15 * points + 0.25 * magnitude)

        tokens_a = _top_tokens(rows_a, limit=3)
        sig_rating = (
            f"average ratings differ by {gap:.2f} stars "
            f"({mean_a:.2f} vs {mean_b:.2f})"
        )
        if burst_a >= 3:
            sig_timing = f"User A posted up to {burst_a} reviews in one day"
        else:
            sig_timing = "User A's reviews are spread over time"
        if tokens_a:
            sig_content = "User A's recurring terms: " + ", ".join(tokens_a)
        else:
            sig_content = "User A left no review text"

        if points >= 2:
            intent = (
                "The pattern fits deliberate targeting of an established "
                "account to borrow credibility."
            )
        elif points == 1:
            intent = (
                "The pattern is partially consistent with opportunistic "
                "contact but is not clearly orchestrated."
            )
        else:
            intent = (
                "The pattern looks like incidental co-activity between "
                "unrelated accounts."
            )
        if min(len(rows_a), len(rows_b)) < 4:
            hedge = "Both histories are short, so the aggregate gaps are noisy."
        else:
            hedge = (
                "Histories are long enough that the aggregate gaps are "
                "unlikely to be sampling noise."
            )
        if shared == 0:
            hedge += " No shared product anchors the connection."

        return "\n".join(
            [
                "Connection Overview:",
                f"The connection joins {name_a} (risk score {z_a:.4f}) and "
                f"{name_b} (risk score {z_b:.4f}) with a contradictory "
                f"magnitude of {magnitude:.4f}. The accounts share {shared} "
                "products.",
                "",
                "Behavior Difference:",
                f"User A averages {mean_a:.2f} stars against User B's "
                f"{mean_b:.2f}, a gap of {gap:.2f}. User A's busiest day "
                f"holds {burst_a} reviews and User B's holds {burst_b}.",
                "",
                "Connection Intent Analysis:",
                intent,
                "",
                "Counter Evidence and Uncertainty:",
                hedge,
                "",
                "Risk Verdict:",
                f"{verdict} (confidence {confidence:.2f}). Key signals: "
                f"(1) {sig_rating}; (2) {sig_timing}; (3) {sig_content}.",
            ]
        )


# --------------------------------------------------------------------------
# Remote backend
# --------------------------------------------------------------------------


class RemoteLLMBackend:
    """Chat-completion endpoint client: POST {model, messages} with retries."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        max_retries: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ) -> None:
        self.url = url
        self.model_id = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.session = session or requests.Session()
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, system: str, user: str) -> str:
        payload = {
            "model": self.model_id,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            with self._lock:
                self.calls += 1
            try:
                resp = self.session.post(
                    self.url, json=payload, headers=headers, timeout=self.timeout
                )
                if resp.status_code >= 500 or resp.status_code == 429:
                    raise requests.HTTPError(f"status {resp.status_code}")
                if resp.status_code >= 400:
                    # Client errors are deterministic; retrying cannot help.
                    raise BackendError(
                        f"completion endpoint rejected request: "
                        f"status {resp.status_code}"
                    )
                data = resp.json()
                try:
                    return data["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise BackendError(
                        f"malformed completion response: {data!r:.200}"
                    ) from exc
            except requests.RequestException as exc:
                last_error = exc
                if attempt + 1 < self.max_retries:
                    delay = self.backoff * (2.0**attempt)
                    logger.warning(
                        "completion request failed (%s), retry %d/%d in %.1fs",
                        exc,
                        attempt + 1,
                        self.max_retries - 1,
                        delay,
                    )
                    time.sleep(delay)
        raise BackendError(
            f"completion endpoint failed after {self.max_retries} attempts"
        ) from last_error


def remote_backend_from_env(**kwargs) -> RemoteLLMBackend:
    url = os.environ.get(ENV_LLM_URL)
    model = os.environ.get(ENV_LLM_MODEL)
    if not url or not model:
        raise BackendError(
            f"remote backend requires {ENV_LLM_URL} and {ENV_LLM_MODEL} to be set"
        )
    return RemoteLLMBackend(
        url=url, model=model, api_key=os.environ.get(ENV_LLM_KEY), **kwargs
    )


def get_backend(name: str, **kwargs):
    """Backend factory keyed by CLI name (``mock`` or ``remote``)."""
    if name == "mock":
        return MockLLMBackend()
    if name == "remote":
        return remote_backend_from_env(**kwargs)
    raise ValueError(f"unknown LLM backend: {name!r}")


# --------------------------------------------------------------------------
# Caching client
# --------------------------------------------------------------------------


class LLMClient:
    """Completion client with a content-addressed on-disk cache.

    Responses are stored under ``cache/{profiles|audits}/<sha256>.json``
    keyed by (model id, system, user). Writes go through a temp file and
    an atomic rename, so concurrent writers at worst duplicate work and
    never corrupt an entry. A cache hit skips the backend entirely.
    """

    def __init__(
        self,
        backend,
        cache_dir: str | Path | None = None,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ) -> None:
        if max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {max_in_flight}")
        self.backend = backend
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.max_in_flight = max_in_flight
        self.cache_hits = 0
        self.cache_misses = 0
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()

    def cache_path(self, prompt: Prompt) -> Path | None:
        if self.cache_dir is None:
            return None
        bucket = "profiles" if prompt.kind == "profile" else "audits"
        key = prompt_key(self.backend.model_id, prompt.system, prompt.user)
        return self.cache_dir / bucket / f"{key}.json"

    def complete(self, prompt: Prompt) -> str:
        path = self.cache_path(prompt)
        if path is not None and path.exists():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                with self._lock:
                    self.cache_hits += 1
                return entry["text"]
            except (OSError, ValueError, KeyError) as exc:
                logger.warning("unreadable cache entry %s (%s), refetching", path, exc)
        with self._gate:
            text = self.backend.complete(prompt.system, prompt.user)
        with self._lock:
            self.cache_misses += 1
        if path is not None:
            self._store(path, prompt, text)
        return text

    def complete_many(self, prompts: list[Prompt]) -> list[str]:
        """Complete a batch concurrently; results keep the input order."""
        if not prompts:
            return []
        if self.max_in_flight == 1 or len(prompts) == 1:
            return [self.complete(p) for p in prompts]
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(self.complete, prompts))

    def _store(self, path: Path, prompt: Prompt, text: str) -> None:
        entry = {
            "prompt_sha256": path.stem,
            "model": self.backend.model_id,
            "kind": prompt.kind,
            "text": text,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(
                f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp"
            )
            tmp.write_text(
                json.dumps(entry, ensure_ascii=False, indent=2), encoding="utf-8"
            )
            os.replace(tmp, path)
        except OSError as exc:
            logger.warning("cache write failed for %s: %s", path, exc)
