"""Tabular autoregressive policy over a synthetic addition task.

Each problem asks for ``a + b`` with ``a, b`` in ``0..9``. A trace is a
sequence over a 22-token vocabulary::

    STEP, FILLER, ANS(0) ... ANS(18), END

The next-token distribution is a softmax over a logit row selected by the
two previous tokens (left-padded with a BOS marker that is never emitted)
and by a bucket derived from the prompt id. Because the policy is a plain
lookup table, sequence log-probabilities and their gradients are exact,
which is what makes the finite-difference checks in the test suite tight.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import log_softmax

from .errors import DegenerateConfigError

STEP = 0
FILLER = 1
ANS_OFFSET = 2
N_ANSWERS = 19
END = ANS_OFFSET + N_ANSWERS
VOCAB_SIZE = END + 1
BOS = VOCAB_SIZE  # context padding only
N_CONTEXT_TOKENS = VOCAB_SIZE + 1
CONTEXT_ORDER = 2
DEFAULT_MAX_LEN = 16
DEFAULT_BUCKETS = 100

PARAMS_FORMAT = "conciserl-policy"
PARAMS_VERSION = 1


def ans(k: int) -> int:
    """Token id of the answer token ``ANS(k)``."""
    if not 0 <= k < N_ANSWERS:
        raise ValueError(f"answer {k} outside 0..{N_ANSWERS - 1}")
    return ANS_OFFSET + k


def is_answer(token: int) -> bool:
    return ANS_OFFSET <= token < END


def token_name(token: int) -> str:
    if token == STEP:
        return "STEP"
    if token == FILLER:
        return "FILLER"
    if token == END:
        return "END"
    if is_answer(token):
        return f"ANS({token - ANS_OFFSET})"
    raise ValueError(f"unknown token id {token}")


@dataclass(frozen=True)
class SyntheticProblem:
    a: int
    b: int
    prompt_id: int = -1

    def __post_init__(self) -> None:
        if not (0 <= self.a <= 9 and 0 <= self.b <= 9):
            raise ValueError("operands must lie in 0..9")
        if self.prompt_id < 0:
            object.__setattr__(self, "prompt_id", 10 * self.a + self.b)

    @property
    def gold(self) -> int:
        return self.a + self.b

    @property
    def prompt(self) -> str:
        return f"What is {self.a} + {self.b}?"

    @property
    def gold_text(self) -> str:
        return str(self.gold)


def all_problems() -> list[SyntheticProblem]:
    """The 100 distinct problems, ordered by prompt id."""
    return [SyntheticProblem(a, b) for a in range(10) for b in range(10)]


def render(tokens: Sequence[int]) -> str:
    """Human-readable text for a token sequence.

    Answer tokens render as ``\\boxed{k}`` so the text can go through the
    same extraction path as real model output. A trace cut off at
    ``max_len`` without END gets a trailing ``...``.
    """
    words = []
    for tok in tokens:
        if tok == END:
            return " ".join(words)
        if tok == STEP:
            words.append("step")
        elif tok == FILLER:
            words.append("wait")
        else:
            words.append(f"\\boxed{{{tok - ANS_OFFSET}}}")
    words.append("...")
    return " ".join(words)


_WORDS = {"step": STEP, "wait": FILLER}


def parse_rendered(text: str) -> tuple[int, ...]:
    """Inverse of :func:`render`. Raises ValueError on unknown words."""
    words = text.split()
    truncated = bool(words) and words[-1] == "..."
    if truncated:
        words = words[:-1]
    tokens = []
    for w in words:
        if w in _WORDS:
            tokens.append(_WORDS[w])
        elif w.startswith("\\boxed{") and w.endswith("}") and w[7:-1].isdigit():
            tokens.append(ans(int(w[7:-1])))
        else:
            raise ValueError(f"not a rendered synthetic trace word: {w!r}")
    if not truncated:
        tokens.append(END)
    return tuple(tokens)


@dataclass(frozen=True)
class Trace:
    tokens: tuple[int, ...]
    per_step_logprobs: tuple[float, ...]
    prompt_id: int
    logprob: float = field(init=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.per_step_logprobs):
            raise ValueError("one log-probability per token is required")
        object.__setattr__(self, "logprob", float(np.sum(self.per_step_logprobs)))

    @property
    def length(self) -> int:
        return len(self.tokens)

    @property
    def terminated(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == END

    @property
    def text(self) -> str:
        return render(self.tokens)

    def __repr__(self) -> str:
        names = " ".join(token_name(t) for t in self.tokens)
        return f"Trace([{names}], logprob={self.logprob:.4f})"


def _context_ids(tokens: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Previous-two-token context for every position of ``tokens``."""
    padded = np.concatenate([[BOS, BOS], np.asarray(tokens, dtype=np.int64)])
    n = len(tokens)
    return padded[:n], padded[1 : n + 1]


@dataclass
class PolicyParams:
    """Logit table of shape ``(n_buckets, 23, 23, 22)``.

    Axes are prompt bucket, token two steps back, previous token, next
    token. Index 22 on the context axes is the BOS pad.
    """

    logits: np.ndarray

    def __post_init__(self) -> None:
        self.logits = np.asarray(self.logits, dtype=np.float64)
        expected = (N_CONTEXT_TOKENS, N_CONTEXT_TOKENS, VOCAB_SIZE)
        if self.logits.ndim != 4 or self.logits.shape[1:] != expected:
            raise ValueError(f"logit table must have shape (B, *{expected}), got {self.logits.shape}")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @classmethod
    def zeros(cls, n_buckets: int = DEFAULT_BUCKETS) -> PolicyParams:
        return cls(np.zeros((n_buckets, N_CONTEXT_TOKENS, N_CONTEXT_TOKENS, VOCAB_SIZE)))

    @classmethod
    def initial(
        cls,
        seed: int,
        n_buckets: int = DEFAULT_BUCKETS,
        scale: float = 0.1,
        filler_bias: float = 1.0,
    ) -> PolicyParams:
        """Seeded small-noise initialization tilted toward FILLER."""
        rng = np.random.default_rng(seed)
        shape = (n_buckets, N_CONTEXT_TOKENS, N_CONTEXT_TOKENS, VOCAB_SIZE)
        logits = rng.normal(0.0, scale, size=shape)
        logits[..., FILLER] += filler_bias
        return cls(logits)

    @property
    def n_buckets(self) -> int:
        return self.logits.shape[0]

    def bucket(self, prompt_id: int) -> int:
        return prompt_id % self.n_buckets

    def copy(self) -> PolicyParams:
        return PolicyParams(self.logits.copy())

    def next_token_logprobs(self, prompt_id: int, prefix: Sequence[int]) -> np.ndarray:
        p2, p1 = ([BOS, BOS] + list(prefix))[-CONTEXT_ORDER:]
        return log_softmax(self.logits[self.bucket(prompt_id), p2, p1])

    def save(self, path: str | Path) -> None:
        """Write a one-line JSON header followed by raw little-endian float64."""
        header = {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "shape": list(self.logits.shape),
            "dtype": "<f8",
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(self.logits.astype("<f8").tobytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> PolicyParams:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != PARAMS_FORMAT:
                raise ValueError(f"{path}: not a policy snapshot")
            if header.get("version") != PARAMS_VERSION:
                raise ValueError(f"{path}: unsupported snapshot version {header.get('version')}")
            data = np.frombuffer(fh.read(), dtype=header["dtype"])
        return cls(data.reshape(header["shape"]).astype(np.float64))


def sample_batch(
    problems: Sequence[SyntheticProblem],
    params: PolicyParams,
    n: int,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int | np.random.Generator | None = None,
) -> list[list[Trace]]:
    """Sample ``n`` traces for each problem, vectorized across all rows."""
    if n < 2:
        raise DegenerateConfigError(f"need at least 2 rollouts per prompt, got {n}")
    if max_len < 2:
        raise DegenerateConfigError(f"max_len must be >= 2, got {max_len}")
    rng = np.random.default_rng(seed)

    rows = len(problems) * n
    prompt_ids = np.repeat([p.prompt_id for p in problems], n)
    buckets = prompt_ids % params.n_buckets
    tokens = np.full((rows, max_len), -1, dtype=np.int64)
    step_lp = np.zeros((rows, max_len))
    p2 = np.full(rows, BOS, dtype=np.int64)
    p1 = np.full(rows, BOS, dtype=np.int64)
    lengths = np.zeros(rows, dtype=np.int64)
    alive = np.ones(rows, dtype=bool)

    for t in range(max_len):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        lp = log_softmax(params.logits[buckets[idx], p2[idx], p1[idx]], axis=-1)
        cdf = np.cumsum(np.exp(lp), axis=-1)
        u = rng.random(idx.size)
        choice = np.minimum((u[:, None] >= cdf).sum(axis=-1), VOCAB_SIZE - 1)
        tokens[idx, t] = choice
        step_lp[idx, t] = lp[np.arange(idx.size), choice]
        lengths[idx] += 1
        p2[idx], p1[idx] = p1[idx], choice
        alive[idx] = choice != END

    out: list[list[Trace]] = []
    for g, problem in enumerate(problems):
        group = []
        for r in range(g * n, (g + 1) * n):
            L = lengths[r]
            group.append(
                Trace(
                    tuple(int(x) for x in tokens[r, :L]),
                    tuple(float(x) for x in step_lp[r, :L]),
                    problem.prompt_id,
                )
            )
        out.append(group)
    return out


def sample(
    problem: SyntheticProblem,
    params: PolicyParams,
    n: int,
    max_len: int = DEFAULT_MAX_LEN,
    seed: int | np.random.Generator | None = None,
) -> list[Trace]:
    """Draw ``n`` traces for one problem; deterministic for a fixed seed."""
    return sample_batch([problem], params, n, max_len, seed)[0]


def _flatten(traces: Sequence[Trace], n_buckets: int):
    seg = np.repeat(np.arange(len(traces)), [t.length for t in traces])
    if seg.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return seg, empty, empty, empty, empty
    buckets = np.repeat([t.prompt_id % n_buckets for t in traces], [t.length for t in traces])
    ctx = [_context_ids(t.tokens) for t in traces if t.length]
    p2 = np.concatenate([c[0] for c in ctx])
    p1 = np.concatenate([c[1] for c in ctx])
    chosen = np.concatenate([np.asarray(t.tokens, dtype=np.int64) for t in traces if t.length])
    return seg, buckets, p2, p1, chosen


def batch_logprobs(traces: Sequence[Trace], params: PolicyParams) -> np.ndarray:
    """Exact sequence log-probabilities of ``traces`` under ``params``."""
    seg, buckets, p2, p1, chosen = _flatten(traces, params.n_buckets)
    lp = log_softmax(params.logits[buckets, p2, p1], axis=-1)
    per_step = lp[np.arange(chosen.size), chosen]
    return np.bincount(seg, weights=per_step, minlength=len(traces))


def batch_logprob_grad(
    traces: Sequence[Trace], params: PolicyParams, weights: Sequence[float]
) -> np.ndarray:
    """``sum_i weights[i] * d logprob(trace_i) / d logits`` as a dense table."""
    seg, buckets, p2, p1, chosen = _flatten(traces, params.n_buckets)
    grad = np.zeros_like(params.logits)
    if seg.size == 0:
        return grad
    w = np.asarray(weights, dtype=np.float64)[seg]
    rows = -np.exp(log_softmax(params.logits[buckets, p2, p1], axis=-1))
    rows[np.arange(chosen.size), chosen] += 1.0
    flat = grad.reshape(-1, VOCAB_SIZE)
    row_index = np.ravel_multi_index((buckets, p2, p1), params.logits.shape[:3])
    np.add.at(flat, row_index, rows * w[:, None])
    return grad


def logprob(trace: Trace, problem: SyntheticProblem, params: PolicyParams) -> float:
    """Sum of log-softmax terms along ``trace`` for ``problem``."""
    retagged = Trace(trace.tokens, trace.per_step_logprobs, problem.prompt_id)
    return float(batch_logprobs([retagged], params)[0])


def logprob_grad(trace: Trace, problem: SyntheticProblem, params: PolicyParams) -> np.ndarray:
    retagged = Trace(trace.tokens, trace.per_step_logprobs, problem.prompt_id)
    return batch_logprob_grad([retagged], params, [1.0])


def enumerate_traces(
    problem: SyntheticProblem, params: PolicyParams, max_len: int
) -> Iterator[tuple[tuple[int, ...], float]]:
    """Every possible trace up to ``max_len`` with its exact log-probability.

    The number of traces grows like ``21 ** max_len``; keep ``max_len``
    at 3 or below.
    """

    def walk(prefix: tuple[int, ...], lp: float):
        row = params.next_token_logprobs(problem.prompt_id, prefix)
        for tok in range(VOCAB_SIZE):
            seq = prefix + (tok,)
            if tok == END or len(seq) == max_len:
                yield seq, lp + row[tok]
            else:
                yield from walk(seq, lp + row[tok])

    yield from walk((), 0.0)


def oracle_accuracy(trace: Trace, problem: SyntheticProblem) -> int:
    """1 iff the trace reached END and its last answer token is the gold sum."""
    if not trace.terminated:
        return 0
    answers = [t for t in trace.tokens[:-1] if is_answer(t)]
    return int(bool(answers) and answers[-1] == ans(problem.gold))


def oracle_essentials(trace: Trace) -> tuple[int, int]:
    """``(E, T)``: essential answer emissions and body tokens before END.

    Only one answer emission is ever needed, so ``E`` is 0 or 1. ``T``
    counts every STEP/FILLER/ANS token ahead of END (or of the cut-off).
    """
    body = trace.tokens[:-1] if trace.terminated else trace.tokens
    essential = int(any(is_answer(t) for t in body))
    return essential, len(body)
