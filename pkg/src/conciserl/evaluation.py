"""Evaluation metrics: accuracy, mean length, Len.% of a reference run, per-level breakdowns.

Internal values stay at full precision; :func:`display_round` (one decimal,
half away from zero) is applied only when emitting tables.
"""

from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.ndimage import convolve1d

from .errors import (
    EmptyInputError,
    EvenWidthError,
    MissingCountError,
    MissingLevelError,
    ZeroReferenceError,
)
from .io import atomic_write_csv, atomic_write_json, read_jsonl
from .rewards import accuracy, extract_boxed_answer

_APPROX_TOKEN = re.compile(r"[^\W_]+|(?:[^\w\s]|_)+")


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    prompt: str
    gold: str
    dataset: str
    level: Optional[int] = None


@dataclass(frozen=True)
class EvalOutcome:
    problem_id: str
    correct: int
    token_count: int
    dataset: str = ""
    level: Optional[int] = None
    trace_text: Optional[str] = None

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be non-negative")
        if self.correct not in (0, 1):
            raise ValueError("correct must be 0 or 1")


@dataclass(frozen=True)
class LevelStats:
    accuracy_pct: float
    mean_length: float
    count: int


@dataclass
class AggregateMetrics:
    accuracy_pct: float
    mean_length: float
    length_pct_of_reference: float
    count: int
    per_level: dict[int, LevelStats] = field(default_factory=dict)


def display_round(x: float, decimals: int = 1) -> float:
    """Round half away from zero on the decimal representation of ``x``."""
    q = Decimal(1).scaleb(-decimals)
    d = Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP)
    return float(d)


def count_tokens(text: Optional[str], scheme: str = "approx", provided: Optional[int] = None) -> int:
    """Token count of a trace.

    ``approx`` splits on whitespace and again wherever a run switches between
    alphanumeric and other characters (``"a+b = c"`` is 5 tokens). These
    counts are not comparable to a real model tokenizer. ``provided`` passes
    through a count recorded alongside the trace.
    """
    if scheme == "provided":
        if provided is None:
            raise MissingCountError("the 'provided' token scheme needs a token_count field")
        return int(provided)
    if scheme != "approx":
        raise ValueError(f"unknown token scheme {scheme!r}")
    return len(_APPROX_TOKEN.findall(text or ""))


def load_dataset(path: str | Path) -> list[ProblemRecord]:
    records = []
    seen: set[tuple[str, str]] = set()
    for row in read_jsonl(path):
        rec = ProblemRecord(
            id=str(row["id"]),
            prompt=row.get("prompt", ""),
            gold=str(row["answer"]),
            dataset=row.get("dataset", ""),
            level=row.get("level"),
        )
        key = (rec.dataset, rec.id)
        if key in seen:
            raise ValueError(f"{path}: duplicate id {rec.id!r} in dataset {rec.dataset!r}")
        seen.add(key)
        records.append(rec)
    return records


def outcomes_from_traces(
    problems: Sequence[ProblemRecord],
    trace_rows: Iterable[Mapping],
    scheme: str = "approx",
) -> list[EvalOutcome]:
    """Join recorded traces to their problems.

    A row without ``correct`` is graded by extracting its last boxed answer
    and comparing it with the problem's gold answer.
    """
    by_id: dict[str, ProblemRecord] = {}
    for p in problems:
        if p.id in by_id:
            raise ValueError(f"problem id {p.id!r} is ambiguous across datasets")
        by_id[p.id] = p
    outcomes = []
    for row in trace_rows:
        pid = str(row["id"])
        if pid not in by_id:
            raise KeyError(f"trace for unknown problem id {pid!r}")
        problem = by_id[pid]
        text = row.get("trace_text")
        correct = row.get("correct")
        if correct is None:
            if text is None:
                raise ValueError(f"trace {pid!r} has neither 'correct' nor 'trace_text'")
            correct = accuracy(extract_boxed_answer(text), problem.gold)
        outcomes.append(
            EvalOutcome(
                problem_id=pid,
                correct=int(correct),
                token_count=count_tokens(text, scheme, row.get("token_count")),
                dataset=problem.dataset,
                level=problem.level,
                trace_text=text,
            )
        )
    return outcomes


def _mean_length(outcomes: Sequence[EvalOutcome]) -> float:
    return float(np.mean([o.token_count for o in outcomes]))


def aggregate(
    outcomes: Sequence[EvalOutcome], reference_outcomes: Sequence[EvalOutcome]
) -> AggregateMetrics:
    """Accuracy, mean length and length as a percentage of the reference run."""
    if not outcomes or not reference_outcomes:
        raise EmptyInputError("aggregate needs at least one outcome and one reference outcome")
    ref_mean = _mean_length(reference_outcomes)
    if ref_mean <= 0:
        raise ZeroReferenceError("reference mean length is zero")
    mean_len = _mean_length(outcomes)
    leveled = [o for o in outcomes if o.level is not None]
    return AggregateMetrics(
        accuracy_pct=100.0 * float(np.mean([o.correct for o in outcomes])),
        mean_length=mean_len,
        length_pct_of_reference=100.0 * mean_len / ref_mean,
        count=len(outcomes),
        per_level=difficulty_breakdown(leveled) if leveled else {},
    )


def aggregate_by_dataset(
    outcomes: Sequence[EvalOutcome], reference_outcomes: Sequence[EvalOutcome]
) -> dict[str, AggregateMetrics]:
    """:func:`aggregate` per dataset tag, each against the same-tag reference."""
    ours, ref = defaultdict(list), defaultdict(list)
    for o in outcomes:
        ours[o.dataset].append(o)
    for o in reference_outcomes:
        ref[o.dataset].append(o)
    if not ours:
        raise EmptyInputError("no outcomes to aggregate")
    missing = sorted(set(ours) - set(ref))
    if missing:
        raise EmptyInputError(f"no reference outcomes for dataset(s): {', '.join(missing)}")
    return {name: aggregate(ours[name], ref[name]) for name in sorted(ours)}


def average_row(values: Sequence[float]) -> float:
    """Unweighted mean across datasets, at full precision."""
    if len(values) == 0:
        raise EmptyInputError("average_row needs at least one value")
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def difficulty_breakdown(outcomes: Sequence[EvalOutcome]) -> dict[int, LevelStats]:
    """Per-level accuracy (%) and mean length; levels with no outcomes are omitted."""
    buckets: dict[int, list[EvalOutcome]] = defaultdict(list)
    for o in outcomes:
        if o.level is None:
            raise MissingLevelError(f"outcome {o.problem_id!r} has no difficulty level")
        buckets[int(o.level)].append(o)
    return {
        level: LevelStats(
            accuracy_pct=100.0 * float(np.mean([o.correct for o in rows])),
            mean_length=_mean_length(rows),
            count=len(rows),
        )
        for level, rows in sorted(buckets.items())
    }


def gaussian_kernel(width: int = 9) -> np.ndarray:
    """Discrete Gaussian window of ``width`` points with sigma = width / 4, summing to 1."""
    if width < 1 or width % 2 == 0:
        raise EvenWidthError(f"smoothing width must be a positive odd integer, got {width}")
    half = width // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / (width / 4)) ** 2)
    return k / k.sum()


def smooth_series(values: Sequence[float], width: int = 9) -> np.ndarray:
    """Gaussian smoothing for training curves.

    Edges use half-sample symmetric reflection (``d c b a | a b c d | d c b a``),
    and the output has the same length as the input.
    """
    kernel = gaussian_kernel(width)
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return convolve1d(x, kernel, mode="reflect")


METRICS_HEADER = ("dataset", "accuracy_pct", "mean_length", "length_pct")
LEVEL_HEADER = ("dataset", "level", "accuracy_pct", "mean_length", "count")
AVERAGE_LABEL = "Average"


def metrics_rows(per_dataset: Mapping[str, AggregateMetrics]) -> list[list]:
    rows = [
        [name, display_round(m.accuracy_pct), display_round(m.mean_length), display_round(m.length_pct_of_reference)]
        for name, m in per_dataset.items()
    ]
    if len(per_dataset) > 1:
        ms = list(per_dataset.values())
        rows.append(
            [
                AVERAGE_LABEL,
                display_round(average_row([m.accuracy_pct for m in ms])),
                display_round(average_row([m.mean_length for m in ms])),
                display_round(average_row([m.length_pct_of_reference for m in ms])),
            ]
        )
    return rows


def write_eval_outputs(
    out_dir: str | Path,
    per_dataset: Mapping[str, AggregateMetrics],
    method: str = "",
) -> dict:
    """Write metrics.csv, per_level.csv and summary.json; returns the summary."""
    out_dir = Path(out_dir)
    atomic_write_csv(out_dir / "metrics.csv", METRICS_HEADER, metrics_rows(per_dataset))
    level_rows = [
        [name, level, display_round(s.accuracy_pct), display_round(s.mean_length), s.count]
        for name, m in per_dataset.items()
        for level, s in m.per_level.items()
    ]
    atomic_write_csv(out_dir / "per_level.csv", LEVEL_HEADER, level_rows)
    ms = list(per_dataset.values())
    summary = {
        "method": method,
        "datasets": {
            name: {
                "accuracy_pct": m.accuracy_pct,
                "mean_length": m.mean_length,
                "length_pct": m.length_pct_of_reference,
                "count": m.count,
                "per_level": {str(k): asdict(v) for k, v in m.per_level.items()},
            }
            for name, m in per_dataset.items()
        },
        "average": {
            "accuracy_pct": average_row([m.accuracy_pct for m in ms]),
            "mean_length": average_row([m.mean_length for m in ms]),
            "length_pct": average_row([m.length_pct_of_reference for m in ms]),
        },
    }
    atomic_write_json(out_dir / "summary.json", summary)
    return summary


def write_curve(path: str | Path, raw: Sequence[float], width: int = 9, steps: Optional[Sequence[int]] = None) -> None:
    smoothed = smooth_series(raw, width)
    steps = list(steps) if steps is not None else list(range(len(raw)))
    atomic_write_csv(
        path,
        ("step", "raw", "smoothed"),
        [[s, repr(float(r)), repr(float(m))] for s, r, m in zip(steps, raw, smoothed)],
    )
