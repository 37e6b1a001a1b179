"""Command-line entry point: ``conciserl {train,score,eval,report}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags (flags win). Exit codes: 0 success,
1 usage or configuration error, 2 runtime abort, 3 judge budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

from .errors import BudgetExceededError, ConciseRLError
from .evaluation import (
    aggregate_by_dataset,
    display_round,
    load_dataset,
    outcomes_from_traces,
    write_curve,
    write_eval_outputs,
)
from .io import RunDirLocked, atomic_write_csv, atomic_write_json, atomic_write_text, read_jsonl
from .judge import JudgeCache, JudgeClient, JudgeConfig, mock_judge
from .policy import SyntheticProblem, Trace, all_problems, parse_rendered
from .rewards import RewardKind
from .trainer import TrainConfig, mock_scorer, run_training

logger = logging.getLogger("conciserl")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_BUDGET = 0, 1, 2, 3
MODES = ("train", "score", "eval", "report")
CURVE_METRICS = ("reward_mean", "accuracy", "length_mean", "judge_score_mean", "kl_initial")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


@dataclass
class RunConfig:
    mode: str = "train"
    seed: int = 7
    judge_kind: str = "mock"
    token_scheme: str = "approx"
    method: str = ""
    dataset: Optional[str] = None
    traces: Optional[str] = None
    reference: Optional[str] = None
    out: Optional[str] = None
    cache: Optional[str] = None
    runs: list[str] = field(default_factory=list)
    train: TrainConfig = field(default_factory=TrainConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="conciserl", description=__doc__.splitlines()[0])
    p.add_argument("mode_arg", nargs="?", choices=MODES, metavar="MODE", help="train | score | eval | report")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--reward", choices=[k.value for k in RewardKind])
    p.add_argument("--alpha", type=float, help="length-penalty strength for --reward alpha")
    p.add_argument("--judge", choices=("mock", "remote"))
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dataset")
    p.add_argument("--traces")
    p.add_argument("--reference")
    p.add_argument("--out")
    p.add_argument("--token-scheme", choices=("approx", "provided"))
    p.add_argument("--cache", help="judge verdict cache (JSON lines)")
    p.add_argument("--method", help="label for eval outputs (default: traces file stem)")
    p.add_argument("--runs", nargs="+", help="run or eval directories for report")
    p.add_argument("--endpoint", help="judge base URL")
    p.add_argument("--model", help="judge model name")
    p.add_argument("--budget", type=float, help="judge spend cap")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _train_from_dict(d: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown train settings: {', '.join(sorted(unknown))}")
    return TrainConfig(**d)


def _judge_from_dict(d: dict, base_dir: Path) -> JudgeConfig:
    d = dict(d)
    prompt_file = d.pop("system_prompt_file", None)
    if prompt_file is not None:
        d["system_prompt"] = (base_dir / prompt_file).read_text()
    known = {f.name for f in fields(JudgeConfig)}
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown judge settings: {', '.join(sorted(unknown))}")
    return JudgeConfig(**d)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional JSON file, and flags."""
    raw: dict = {}
    base_dir = Path.cwd()
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file not found: {args.config}")
        try:
            raw = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc.msg})") from exc
        base_dir = args.config.parent

    paths = dict(raw.get("paths", {}))
    train = dict(raw.get("train", {}))
    reward = dict(train.pop("reward", {}))
    judge = dict(raw.get("judge", {}))
    judge_kind = judge.pop("kind", "mock")

    mode = args.mode_arg or args.mode or raw.get("mode")
    if mode is None:
        raise UsageError("no mode given (train, score, eval or report)")
    if args.mode_arg and args.mode and args.mode_arg != args.mode:
        raise UsageError(f"conflicting modes {args.mode_arg!r} and {args.mode!r}")

    seed = args.seed if args.seed is not None else raw.get("seed", train.get("seed", 7))
    train["seed"] = seed
    if args.steps is not None:
        train["steps"] = args.steps
    if args.reward is not None:
        reward["kind"] = args.reward
    if args.alpha is not None:
        reward["alpha"] = args.alpha
    if reward:
        reward.setdefault("kind", RewardKind.GATED.value)
        reward.setdefault("cosine", {"l_max": train.get("max_len", 16)})
        train["reward"] = reward
    if args.judge is not None:
        judge_kind = args.judge
    if args.endpoint is not None:
        judge["endpoint_url"] = args.endpoint
    if args.model is not None:
        judge["model_name"] = args.model
    if args.budget is not None:
        judge["budget_cap"] = args.budget
    for name in ("dataset", "traces", "reference", "out", "cache", "runs"):
        value = getattr(args, name)
        if value is not None:
            paths[name] = value

    try:
        train_cfg = _train_from_dict(train)
        judge_cfg = _judge_from_dict(judge, base_dir)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    rc = RunConfig(
        mode=mode,
        seed=seed,
        judge_kind=judge_kind,
        token_scheme=args.token_scheme or raw.get("token_scheme", "approx"),
        method=args.method or raw.get("method", ""),
        dataset=paths.get("dataset"),
        traces=paths.get("traces"),
        reference=paths.get("reference"),
        out=paths.get("out"),
        cache=paths.get("cache"),
        runs=list(paths.get("runs", [])),
        train=train_cfg,
        judge=judge_cfg,
    )
    if rc.judge_kind not in ("mock", "remote"):
        raise UsageError(f"unknown judge kind {rc.judge_kind!r}")
    _check_paths(rc)
    return rc


def _check_paths(rc: RunConfig) -> None:
    required = {
        "train": ("out",),
        "score": ("traces", "out"),
        "eval": ("dataset", "traces", "reference", "out"),
        "report": ("out",),
    }[rc.mode]
    for name in required:
        if not getattr(rc, name):
            raise UsageError(f"{rc.mode} needs --{name}")
    for name in ("dataset", "traces", "reference"):
        value = getattr(rc, name)
        if value and not Path(value).exists():
            raise UsageError(f"--{name} path does not exist: {value}")
    if rc.mode == "report":
        if not rc.runs:
            raise UsageError("report needs --runs")
        for r in rc.runs:
            if not Path(r).is_dir():
                raise UsageError(f"run directory does not exist: {r}")


def _snapshot(rc: RunConfig) -> dict:
    judge = {
        k: v for k, v in vars(rc.judge).items() if k != "system_prompt"
    }
    judge["kind"] = rc.judge_kind
    return {
        "mode": rc.mode,
        "seed": rc.seed,
        "judge": judge,
        "paths": {"dataset": rc.dataset, "out": rc.out, "cache": rc.cache},
    }


def _synthetic_dataset(path: Optional[str]) -> list[SyntheticProblem]:
    if path is None:
        return all_problems()
    problems = [SyntheticProblem(int(r["a"]), int(r["b"])) for r in read_jsonl(path)]
    if not problems:
        raise ConciseRLError(f"{path}: no problems")
    return problems


def cmd_train(rc: RunConfig, transport=None) -> int:
    dataset = _synthetic_dataset(rc.dataset)
    client = None
    scorer = mock_scorer
    if rc.judge_kind == "remote":
        client = JudgeClient(rc.judge, JudgeCache(rc.cache), transport=transport)

        def scorer(trace: Trace, problem: SyntheticProblem) -> int:
            return client.score_trace(trace.text, problem.prompt).score

    try:
        logs = run_training(rc.train, dataset, rc.out, scorer, extra_config=_snapshot(rc))
    finally:
        if client is not None:
            logger.info("judge: %d live calls, %d cache hits, cost %.6f", client.live_calls, client.cache_hits, client.total_cost)
            client.close()
    if logs:
        last = logs[-1]
        logger.info("finished %d steps: length %.2f, accuracy %.3f", len(logs), last.length_mean, last.accuracy)
    return EXIT_OK


def cmd_score(rc: RunConfig, transport=None) -> int:
    """Score every trace line; bad lines yield error records, the rest still run."""
    out = Path(rc.out)
    problems = {}
    if rc.dataset:
        problems = {p.id: p.prompt for p in load_dataset(rc.dataset)}

    items: list[tuple[int, dict]] = []
    results: list[dict] = []
    with open(rc.traces, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                if not isinstance(row, dict) or "trace_text" not in row:
                    raise ValueError("record needs a 'trace_text' field")
                items.append((lineno, row))
            except ValueError as exc:
                results.append({"line": lineno, "error": str(exc)})

    def problem_text(row: dict) -> str:
        return row.get("prompt") or problems.get(str(row.get("id")), "")

    budget_hit = False
    summary = {"scored": 0, "errors": 0, "live_calls": 0, "cache_hits": 0, "cost": 0.0}
    if rc.judge_kind == "mock":
        for lineno, row in items:
            try:
                tokens = parse_rendered(row["trace_text"])
                score = mock_judge(Trace(tokens, (0.0,) * len(tokens), -1))
                results.append({"line": lineno, "id": row.get("id"), "score": score, "normalized": score / 10,
                                "from_cache": False, "cost": 0.0})
            except ValueError as exc:
                results.append({"line": lineno, "id": row.get("id"), "error": str(exc)})
    else:
        with JudgeClient(rc.judge, JudgeCache(rc.cache), transport=transport) as client:
            verdicts = client.score_many([(row["trace_text"], problem_text(row)) for _, row in items])
            for (lineno, row), v in zip(items, verdicts):
                if isinstance(v, Exception):
                    budget_hit |= isinstance(v, BudgetExceededError)
                    rec = {"line": lineno, "id": row.get("id"), "error": f"{type(v).__name__}: {v}"}
                    raw = getattr(v, "raw_reply", None)
                    if raw is not None:
                        rec["raw"] = raw
                    results.append(rec)
                else:
                    results.append({"line": lineno, "id": row.get("id"), "score": v.score, "normalized": v.normalized,
                                    "raw": v.raw_reply, "from_cache": v.from_cache, "cost": v.cost,
                                    "prompt_tokens": v.prompt_tokens, "reply_tokens": v.reply_tokens})
            summary.update(live_calls=client.live_calls, cache_hits=client.cache_hits, cost=client.total_cost)

    results.sort(key=lambda r: r["line"])
    summary["errors"] = sum("error" in r for r in results)
    summary["scored"] = len(results) - summary["errors"]
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "verdicts.jsonl", "".join(json.dumps(r) + "\n" for r in results))
    atomic_write_json(out / "score_summary.json", summary)
    logger.info("scored %d traces, %d errors, %d live calls, cost %.6f",
                summary["scored"], summary["errors"], summary["live_calls"], summary["cost"])
    if budget_hit:
        return EXIT_BUDGET
    return EXIT_RUNTIME if summary["errors"] else EXIT_OK


def cmd_eval(rc: RunConfig) -> int:
    problems = load_dataset(rc.dataset)
    outcomes = outcomes_from_traces(problems, read_jsonl(rc.traces), rc.token_scheme)
    reference = outcomes_from_traces(problems, read_jsonl(rc.reference), rc.token_scheme)
    per_dataset = aggregate_by_dataset(outcomes, reference)
    method = rc.method or Path(rc.traces).stem
    write_eval_outputs(rc.out, per_dataset, method)
    for name, m in per_dataset.items():
        logger.info("%s: acc %.2f%% len %.1f (%.1f%% of reference)", name, m.accuracy_pct, m.mean_length, m.length_pct_of_reference)
    return EXIT_OK


def cmd_report(rc: RunConfig) -> int:
    """Side-by-side table of eval dirs and smoothed curves of training runs."""
    out = Path(rc.out)
    rows = []
    curves = []
    for run in map(Path, rc.runs):
        summary_file = run / "summary.json"
        steps_file = run / "steps.csv"
        if summary_file.exists():
            summary = json.loads(summary_file.read_text())
            method = summary.get("method") or run.name
            for name, m in summary["datasets"].items():
                rows.append([name, method, m["accuracy_pct"], m["mean_length"], m["length_pct"]])
        if steps_file.exists():
            with open(steps_file, newline="") as fh:
                table = list(csv.DictReader(fh))
            steps = [int(r["step"]) for r in table]
            for metric in CURVE_METRICS:
                values = [float(r[metric]) if r.get(metric) else float("nan") for r in table]
                if values:
                    path = out / "curves" / f"{run.name}__{metric}.csv"
                    write_curve(path, values, 9, steps)
                    curves.append(str(path))
        if not summary_file.exists() and not steps_file.exists():
            raise ConciseRLError(f"{run}: neither summary.json nor steps.csv found")
    rows.sort(key=lambda r: (r[0], r[1]))
    atomic_write_csv(
        out / "comparison.csv",
        ("dataset", "method", "accuracy_pct", "mean_length", "length_pct"),
        [[d, m, display_round(a), display_round(l), display_round(p)] for d, m, a, l, p in rows],
    )
    atomic_write_json(out / "report.json", {"comparison": rows, "curves": curves})
    return EXIT_OK


COMMANDS = {"train": cmd_train, "score": cmd_score, "eval": cmd_eval, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        rc = resolve_config(args)
    except UsageError as exc:
        print(f"conciserl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[rc.mode](rc)
    except BudgetExceededError as exc:
        print(f"conciserl: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConciseRLError, RunDirLocked, KeyError, ValueError, OSError) as exc:
        print(f"conciserl: {rc.mode} aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
