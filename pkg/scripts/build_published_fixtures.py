"""Regenerate the bundled fixtures.

Fixtures under src/conciserl/data/published/ are rebuilt from tables.json;
src/conciserl/data/synthetic_traces.jsonl is rebuilt from the toy policy.

Each (method, dataset) cell of the raw-token results table becomes 1000
trace records whose accuracy and mean token count equal the published
cell exactly. Token counts are spread around the mean with a seeded
log-normal draw and then nudged so their sum is exact.

    python scripts/build_published_fixtures.py
"""

import json
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1] / "src" / "conciserl" / "data" / "published"
N = 1000
METHODS = {
    "conciserl": "ConciseRL",
    "conciserl_separated": "ConciseRL (Separated)",
    "full_reasoning": "Full Reasoning",
}
SLUG = {"GSM8K": "gsm8k", "MATH500": "math500", "MMLU-Pro-1k": "mmlu-pro-1k", "GPQA-main": "gpqa-main", "TheoremQA": "theoremqa"}


def spread(total: int, n: int, rng: np.random.Generator) -> list[int]:
    """n positive integers summing to ``total``."""
    mean = total / n
    raw = rng.lognormal(0.0, 0.6, size=n)
    counts = np.maximum(1, np.floor(raw / raw.mean() * mean)).astype(int)
    diff = total - counts.sum()
    order = rng.permutation(n)
    i = 0
    while diff != 0:
        j = order[i % n]
        step = 1 if diff > 0 else -1
        if counts[j] + step >= 1:
            counts[j] += step
            diff -= step
        i += 1
    return counts.tolist()


def correct_flags(k: int, n: int, rng: np.random.Generator) -> list[int]:
    flags = np.zeros(n, dtype=int)
    flags[rng.permutation(n)[:k]] = 1
    return flags.tolist()


def write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def main() -> None:
    tables = json.loads((ROOT / "tables.json").read_text())
    names = tables["datasets"]
    raw = tables["deepseek_r1_distill_qwen_1p5b"]["raw"]

    problems = []
    for name in names:
        for i in range(N):
            problems.append({
                "id": f"{SLUG[name]}-{i:04d}",
                "prompt": f"({name} problem {i}; text not bundled)",
                "answer": "n/a",
                "dataset": name,
            })
    write_jsonl(ROOT / "datasets.jsonl", problems)

    for seed, (fname, method) in enumerate(METHODS.items()):
        rng = np.random.default_rng(1000 + seed)
        rows = []
        for d, name in enumerate(names):
            acc, mean_len = raw[method]["acc"][d], raw[method]["len"][d]
            k = round(acc * N / 100)
            counts = spread(mean_len * N, N, rng)
            flags = correct_flags(k, N, rng)
            rows += [
                {"id": f"{SLUG[name]}-{i:04d}", "token_count": c, "correct": f}
                for i, (c, f) in enumerate(zip(counts, flags))
            ]
        write_jsonl(ROOT / f"{fname}.jsonl", rows)

    # MATH500 level 1 has 43 problems; only these level-1 cells are
    # representable with integer counts over 43 records.
    rng = np.random.default_rng(2000)
    level1 = [{"id": f"math500-L1-{i:02d}", "prompt": "(MATH500 level-1 problem; text not bundled)",
               "answer": "n/a", "dataset": "MATH500", "level": 1} for i in range(43)]
    write_jsonl(ROOT / "math500_level1.jsonl", level1)
    for fname, correct, total in [("math500_level1_conciserl_separated", 41, 5091),
                                  ("math500_level1_conciserl", 41, 11420)]:
        counts = spread(total, 43, rng)
        flags = correct_flags(correct, 43, rng)
        write_jsonl(ROOT / f"{fname}.jsonl",
                    [{"id": p["id"], "token_count": c, "correct": f} for p, c, f in zip(level1, counts, flags)])


def synthetic_traces() -> None:
    from conciserl.policy import PolicyParams, SyntheticProblem, render, sample_batch, ans, FILLER, END

    hand = [
        (SyntheticProblem(3, 4), (ans(7), END)),
        (SyntheticProblem(3, 4), (FILLER,) * 4 + (ans(7), END)),
        (SyntheticProblem(3, 4), (ans(6), END)),
        (SyntheticProblem(3, 4), (FILLER,) * 19 + (ans(7), END)),
    ]
    problems = [SyntheticProblem(a, b) for a, b in [(1, 2), (5, 5), (9, 8), (0, 0)]]
    params = PolicyParams.initial(seed=0)
    rows = [{"id": f"hand-{i}", "prompt": p.prompt, "trace_text": render(toks)} for i, (p, toks) in enumerate(hand)]
    for p, group in zip(problems, sample_batch(problems, params, 5, 16, seed=0)):
        rows += [{"id": f"p{p.prompt_id:02d}-{j}", "prompt": p.prompt, "trace_text": t.text} for j, t in enumerate(group)]
    write_jsonl(ROOT.parent / "synthetic_traces.jsonl", rows)


if __name__ == "__main__":
    main()
    synthetic_traces()
