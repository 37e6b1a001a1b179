"""LLM-judge scoring over an OpenAI-compatible chat-completions endpoint.

The judge only sees the problem and the trace, never the gold answer.
Verdicts are cached in an append-only JSON-lines file keyed by a SHA-256
of everything that can change the judge's answer, so reruns against a warm
cache issue no network calls and add no cost.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import httpx

from .errors import BudgetExceededError, TransportError, UnparseableReplyError
from .policy import Trace, oracle_essentials

logger = logging.getLogger(__name__)

API_KEY_ENV = "CONCISERL_JUDGE_KEY"
_INT_TOKEN = re.compile(r"(?<!\d)\d+(?!\d)")


def default_system_prompt() -> str:
    return resources.files("conciserl.data").joinpath("judge_system_prompt.txt").read_text()


@dataclass
class JudgeConfig:
    endpoint_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4.1-mini"
    system_prompt: str = field(default_factory=default_system_prompt)
    temperature: float = 0.0
    max_reply_tokens: int = 16
    timeout: float = 30.0
    max_retries: int = 3
    budget_cap: float = 10.0
    parallelism_limit: int = 4
    # currency per token; defaults are illustrative list prices
    prompt_token_price: float = 0.4e-6
    reply_token_price: float = 1.6e-6
    retry_backoff: float = 1.0

    def __post_init__(self) -> None:
        if self.parallelism_limit < 1:
            raise ValueError("parallelism_limit must be >= 1")
        if self.budget_cap < 0:
            raise ValueError("budget_cap must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class JudgeVerdict:
    raw_reply: str
    score: int
    prompt_tokens: int
    reply_tokens: int
    cost: float
    from_cache: bool
    latency_ms: float

    @property
    def normalized(self) -> float:
        return self.score / 10


def parse_score(reply: str) -> int:
    """First standalone integer in ``reply`` that lies in 1..10.

    Out-of-range integers are skipped rather than clamped, so
    ``"0 issues, score 8"`` gives 8 and ``"10/10"`` gives 10.
    """
    for m in _INT_TOKEN.finditer(reply):
        value = int(m.group())
        if 1 <= value <= 10:
            return value
    raise UnparseableReplyError(reply)


def mock_judge(trace: Trace) -> int:
    """Offline stand-in judge: ``clamp(round(10 * E / T), 1, 10)``.

    ``E`` and ``T`` come from :func:`conciserl.policy.oracle_essentials`.
    Rounding is half away from zero; an empty body scores 1.
    """
    essential, total = oracle_essentials(trace)
    if total == 0:
        return 1
    raw = int(10 * essential / total + 0.5)
    return min(10, max(1, raw))


def cache_key(model_name: str, system_prompt: str, problem_text: str, trace_text: str) -> str:
    payload = json.dumps([model_name, system_prompt, problem_text, trace_text], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class JudgeCache:
    """Append-only JSON-lines verdict cache.

    Records look like ``{"key", "score", "raw", "prompt_tokens",
    "reply_tokens", "ts"}``. The file is read once on open; later lines
    for an existing key win, which keeps duplicate appends harmless.
    """

    def __init__(self, path: Optional[str | Path] = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        logger.warning("%s:%d: skipping corrupt cache line", self.path, lineno)
                        continue
                    self._records[rec["key"]] = rec

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            return self._records.get(key)

    def put(self, key: str, score: int, raw: str, prompt_tokens: int, reply_tokens: int) -> None:
        rec = {
            "key": key,
            "score": score,
            "raw": raw,
            "prompt_tokens": prompt_tokens,
            "reply_tokens": reply_tokens,
            "ts": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        line = json.dumps(rec, ensure_ascii=False) + "\n"
        with self._lock:
            self._records[key] = rec
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                # one write per record on an O_APPEND handle
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line)
                    fh.flush()
                    os.fsync(fh.fileno())


class JudgeClient:
    """Scores traces with a remote judge, with caching, retries and a budget cap.

    Args:
        cfg: endpoint, model and accounting settings.
        cache: verdict cache; an in-memory one is created when omitted.
        transport: optional ``httpx`` transport, used by tests to stand in
            for the network.
        api_key: bearer token; read from ``CONCISERL_JUDGE_KEY`` if omitted.
    """

    def __init__(
        self,
        cfg: JudgeConfig,
        cache: Optional[JudgeCache] = None,
        transport: Optional[httpx.BaseTransport] = None,
        api_key: Optional[str] = None,
    ):
        self.cfg = cfg
        self.cache = cache if cache is not None else JudgeCache()
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(timeout=cfg.timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()
        self.total_cost = 0.0
        self.live_calls = 0
        self.cache_hits = 0

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> JudgeClient:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def request_body(self, problem_text: str, trace_text: str) -> dict:
        return {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_reply_tokens,
            "messages": [
                {"role": "system", "content": self.cfg.system_prompt},
                {"role": "user", "content": problem_text + "\n\n" + trace_text},
            ],
        }

    def score_trace(self, trace_text: str, problem_text: str) -> JudgeVerdict:
        t0 = time.perf_counter()
        key = cache_key(self.cfg.model_name, self.cfg.system_prompt, problem_text, trace_text)
        rec = self.cache.get(key)
        if rec is not None:
            with self._lock:
                self.cache_hits += 1
            return JudgeVerdict(
                raw_reply=rec["raw"],
                score=int(rec["score"]),
                prompt_tokens=int(rec["prompt_tokens"]),
                reply_tokens=int(rec["reply_tokens"]),
                cost=0.0,
                from_cache=True,
                latency_ms=(time.perf_counter() - t0) * 1e3,
            )

        with self._lock:
            if self.total_cost >= self.cfg.budget_cap:
                raise BudgetExceededError(
                    f"judge spend {self.total_cost:.4f} reached cap {self.cfg.budget_cap:.4f}"
                )
        payload = self._post(self.request_body(problem_text, trace_text))
        raw = payload["choices"][0]["message"]["content"] or ""
        usage = payload.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", 0))
        reply_tokens = int(usage.get("completion_tokens", 0))
        cost = prompt_tokens * self.cfg.prompt_token_price + reply_tokens * self.cfg.reply_token_price
        with self._lock:
            self.live_calls += 1
            self.total_cost += cost
        # charged even when the reply turns out to be unparseable
        score = parse_score(raw)
        self.cache.put(key, score, raw, prompt_tokens, reply_tokens)
        return JudgeVerdict(
            raw_reply=raw,
            score=score,
            prompt_tokens=prompt_tokens,
            reply_tokens=reply_tokens,
            cost=cost,
            from_cache=False,
            latency_ms=(time.perf_counter() - t0) * 1e3,
        )

    def score_many(self, items: Sequence[tuple[str, str]]) -> list[JudgeVerdict | Exception]:
        """Score ``(trace_text, problem_text)`` pairs concurrently.

        Results come back in input order; a failed item holds its exception.
        """

        def one(item: tuple[str, str]):
            try:
                return self.score_trace(*item)
            except Exception as exc:  # noqa: BLE001 - surfaced per item
                return exc

        with ThreadPoolExecutor(max_workers=self.cfg.parallelism_limit) as pool:
            return list(pool.map(one, items))

    def _post(self, body: dict) -> dict:
        url = self.cfg.endpoint_url.rstrip("/") + "/chat/completions"
        last: Exception | None = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                time.sleep(self.cfg.retry_backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(url, json=body)
            except httpx.HTTPError as exc:
                last = exc
                logger.warning("judge request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}")
                logger.warning("judge returned HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"judge unreachable after {self.cfg.max_retries + 1} attempts: {last}")

