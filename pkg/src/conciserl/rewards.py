"""Reward functions: judge-based conciseness variants and length baselines.

All functions are pure. Conciseness scores come in as raw judge integers
(1..10) wrapped in :class:`ConcisenessScore`; accuracy is a 0/1 int.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import InvalidAlphaError, InvalidParamsError, MissingScoreError, OutOfRangeError

_BOXED = "\\boxed"
_WS = re.compile(r"\s+")


def extract_boxed_answer(text: str) -> Optional[str]:
    """Return the contents of the last ``\\boxed{...}`` in ``text``.

    Braces are matched, so nested groups come back verbatim. Returns None
    when there is no ``\\boxed{`` or when the last one is never closed.
    """
    start = text.rfind(_BOXED + "{")
    if start < 0:
        return None
    i = start + len(_BOXED) + 1
    depth = 1
    for j in range(i, len(text)):
        ch = text[j]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


def normalize_answer(answer: str) -> str:
    s = _WS.sub(" ", answer.strip())
    if len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = _WS.sub(" ", s[1:-1].strip())
    return s


def accuracy(trace_answer: Optional[str], gold: str) -> int:
    """1 if the extracted answer matches ``gold`` after normalization, else 0.

    Normalization trims and collapses whitespace and strips one enclosing
    ``$...$`` pair. No symbolic equivalence is attempted.
    """
    if not gold:
        raise ValueError("gold answer must be non-empty")
    if trace_answer is None:
        return 0
    return int(normalize_answer(trace_answer) == normalize_answer(gold))


def normalize_judge_score(s: int) -> float:
    if isinstance(s, bool) or int(s) != s or not 1 <= s <= 10:
        raise OutOfRangeError(f"judge score must be an integer in 1..10, got {s!r}")
    return int(s) / 10


@dataclass(frozen=True)
class ConcisenessScore:
    raw: int

    def __post_init__(self) -> None:
        normalize_judge_score(self.raw)

    @property
    def normalized(self) -> float:
        return self.raw / 10


@dataclass(frozen=True)
class RewardValue:
    scalar: float
    components: Optional[tuple[float, float]] = None


class RewardKind(str, Enum):
    PURE = "pure"
    GATED = "gated"
    SEPARATED = "separated"
    COSINE = "cosine"
    ALPHA = "alpha"
    ACCURACY = "accuracy"


@dataclass(frozen=True)
class CosineParams:
    """Cosine length schedule constants. Defaults are the published ones."""

    l_max: int = 14336
    rc_0: float = 2.0
    rc_L: float = 1.0
    rw_0: float = -10.0
    rw_L: float = 0.0
    r_exceed: float = -10.0

    def __post_init__(self) -> None:
        if self.l_max <= 0:
            raise InvalidParamsError(f"l_max must be positive, got {self.l_max}")


@dataclass(frozen=True)
class RewardVariant:
    kind: RewardKind
    cosine: CosineParams = CosineParams()
    alpha: float = 0.0
    accuracy_weight: float = 1.0
    conciseness_weight: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RewardKind(self.kind))
        if self.kind is RewardKind.ALPHA and not 0 <= self.alpha < 1:
            raise InvalidAlphaError(f"alpha must lie in [0, 1), got {self.alpha}")

    @property
    def needs_judge(self) -> bool:
        return self.kind in (RewardKind.PURE, RewardKind.GATED, RewardKind.SEPARATED)


def reward_pure(c: ConcisenessScore) -> RewardValue:
    return RewardValue(c.normalized)


def reward_gated(a: int, c: Optional[ConcisenessScore]) -> RewardValue:
    """Conciseness gated by correctness; a wrong trace needs no judge call."""
    if a == 0:
        return RewardValue(0.0)
    if c is None:
        raise MissingScoreError("a correct trace needs a conciseness score")
    return RewardValue(a * c.normalized)


def reward_separated(
    a: int,
    c: Optional[ConcisenessScore],
    accuracy_weight: float = 1.0,
    conciseness_weight: float = 1.0,
) -> RewardValue:
    """Accuracy and conciseness as two channels, summed with the given weights."""
    if c is None:
        raise MissingScoreError("the separated reward always needs a conciseness score")
    parts = (accuracy_weight * a, conciseness_weight * c.normalized)
    return RewardValue(parts[0] + parts[1], parts)


def cosine_reward(correct: int, length: int, p: CosineParams = CosineParams()) -> float:
    if p.l_max <= 0:
        raise InvalidParamsError(f"l_max must be positive, got {p.l_max}")
    if length < 0:
        raise ValueError("length must be non-negative")
    if length > p.l_max:
        return p.r_exceed
    r0, rL = (p.rc_0, p.rc_L) if correct else (p.rw_0, p.rw_L)
    return rL + 0.5 * (r0 - rL) * (1.0 + math.cos(math.pi * length / p.l_max))


def alpha_penalty_reward(
    correct: int, length: int, group: Sequence[int], alpha: float
) -> float:
    """``1 - alpha * sigmoid(z)`` for correct traces, 0 otherwise.

    ``z`` standardizes ``length`` against the lengths of the correct traces
    in the same rollout group (population std; zero spread gives z = 0).
    """
    if not 0 <= alpha < 1:
        raise InvalidAlphaError(f"alpha must lie in [0, 1), got {alpha}")
    if not correct:
        return 0.0
    if len(group) == 0:
        raise ValueError("a correct trace needs a non-empty group of correct lengths")
    g = np.asarray(group, dtype=np.float64)
    std = g.std()
    z = 0.0 if std == 0 else (length - g.mean()) / std
    return float(1.0 - alpha * expit(z))


def compute_reward(
    variant: RewardVariant,
    a: int,
    c: Optional[ConcisenessScore],
    length: int,
    correct_lengths: Sequence[int] = (),
) -> RewardValue:
    """Dispatch to the reward function named by ``variant``."""
    kind = variant.kind
    if kind is RewardKind.PURE:
        if c is None:
            raise MissingScoreError("pure conciseness needs a score")
        return reward_pure(c)
    if kind is RewardKind.GATED:
        return reward_gated(a, c)
    if kind is RewardKind.SEPARATED:
        return reward_separated(a, c, variant.accuracy_weight, variant.conciseness_weight)
    if kind is RewardKind.COSINE:
        return RewardValue(cosine_reward(a, length, variant.cosine))
    if kind is RewardKind.ALPHA:
        return RewardValue(alpha_penalty_reward(a, length, correct_lengths, variant.alpha))
    return RewardValue(float(a))
