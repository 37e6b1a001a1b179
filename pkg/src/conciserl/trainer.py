"""Leave-one-out policy-gradient training with a clipped sequence-level surrogate.

One training step:

1. sample ``n`` rollouts per prompt from the current policy (the "old"
   policy for this step) and record their log-probabilities;
2. score every rollout with the configured reward variant;
3. turn rewards into leave-one-out advantages within each group;
4. take one gradient-ascent step on the clipped surrogate minus
   ``kl_coefficient`` times the KL divergence to the initial policy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DegenerateConfigError, DegenerateGroupError, InvalidRatioError
from .io import atomic_write_csv, atomic_write_json, run_dir_lock
from .policy import (
    DEFAULT_BUCKETS,
    DEFAULT_MAX_LEN,
    PolicyParams,
    SyntheticProblem,
    Trace,
    batch_logprob_grad,
    batch_logprobs,
    enumerate_traces,
    oracle_accuracy,
    sample_batch,
)
from .rewards import ConcisenessScore, CosineParams, RewardKind, RewardVariant, compute_reward

logger = logging.getLogger(__name__)

PUBLISHED_LEARNING_RATE = 5e-6
PUBLISHED_PROMPTS_PER_BATCH = 32

# (trace, problem) -> raw judge score in 1..10
Scorer = Callable[[Trace, SyntheticProblem], int]

STEP_LOG_COLUMNS = (
    "step",
    "reward_mean",
    "accuracy",
    "length_mean",
    "judge_score_mean",
    "kl_initial",
    "kl_prev",
)
SEPARATED_COLUMNS = ("reward_accuracy_mean", "reward_conciseness_mean")


def loo_advantage(rewards: Sequence[float], normalize: bool = False) -> np.ndarray:
    """``A_i = R_i - mean_{j != i} R_j``.

    With ``normalize=True`` the advantages are further divided by the
    group's reward standard deviation (skipped when that is zero).
    """
    r = np.asarray(rewards, dtype=np.float64)
    n = r.size
    if n < 2:
        raise DegenerateGroupError(f"leave-one-out needs at least 2 rewards, got {n}")
    adv = r - (r.sum() - r) / (n - 1)
    if normalize:
        std = r.std()
        if std > 0:
            adv = adv / std
    return adv


def ppo_weight(ratio: float, eps: float, advantage: float) -> float:
    if not ratio > 0:
        raise InvalidRatioError(f"probability ratio must be positive, got {ratio}")
    return min(max(ratio, 1.0 - eps), 1.0 + eps) * advantage


@dataclass
class RolloutGroup:
    problem: SyntheticProblem
    traces: list[Trace]
    rewards: np.ndarray
    advantages: np.ndarray
    old_logprobs: np.ndarray
    judge_scores: list[Optional[int]] = field(default_factory=list)
    accuracies: list[int] = field(default_factory=list)
    components: Optional[np.ndarray] = None  # (n, 2) for the separated reward

    def __post_init__(self) -> None:
        if len(self.traces) < 2:
            raise DegenerateGroupError("a rollout group needs at least 2 traces")


def surrogate_loss(
    groups: RolloutGroup | Sequence[RolloutGroup],
    params_new: PolicyParams,
    eps: float,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate and its gradient with respect to ``params_new``.

    ``L = mean_i w_i * log p_new(y_i)`` over every trace of every group, with
    ``w_i = clip(p_new / p_old, 1 - eps, 1 + eps) * A_i``. The weights are
    held constant when differentiating.
    """
    if isinstance(groups, RolloutGroup):
        groups = [groups]
    traces = [t for g in groups for t in g.traces]
    old = np.concatenate([g.old_logprobs for g in groups])
    adv = np.concatenate([g.advantages for g in groups])
    new = batch_logprobs(traces, params_new)
    ratio = np.exp(new - old)
    weights = np.array([ppo_weight(r, eps, a) for r, a in zip(ratio, adv)])
    n = len(traces)
    loss = float(np.dot(weights, new) / n)
    grad = batch_logprob_grad(traces, params_new, weights / n)
    return loss, grad


def _k3(log_p: np.ndarray, log_q: np.ndarray) -> np.ndarray:
    """Per-sample ``(q/p - 1) - log(q/p)``: unbiased for KL(p||q) and never negative."""
    x = np.clip(log_q - log_p, -700.0, 700.0)
    return np.expm1(x) - x


def kl_estimate(
    params_p: PolicyParams,
    params_q: PolicyParams,
    problems: Sequence[SyntheticProblem],
    samples: int = 64,
    seed: int | np.random.Generator | None = None,
    max_len: int = DEFAULT_MAX_LEN,
    exact: bool = False,
    estimator: str = "k3",
) -> float:
    """KL(p || q) between the trace distributions, averaged over ``problems``.

    ``exact=True`` enumerates every trace (only sensible for ``max_len <= 3``).
    Otherwise ``samples`` traces per problem are drawn from ``p``; the
    ``"k1"`` estimator averages ``log p - log q`` directly, ``"k3"`` uses a
    non-negative unbiased variant with lower variance.
    """
    if exact:
        total = 0.0
        for problem in problems:
            seqs, lps = zip(*enumerate_traces(problem, params_p, max_len))
            traces = [Trace(s, (0.0,) * len(s), problem.prompt_id) for s in seqs]
            lp = np.asarray(lps)
            lq = batch_logprobs(traces, params_q)
            p = np.exp(lp)
            total += float(np.sum(p * (lp - lq)))
        return total / len(problems)

    groups = sample_batch(problems, params_p, samples, max_len, seed)
    traces = [t for g in groups for t in g]
    lp = np.array([t.logprob for t in traces])
    lq = batch_logprobs(traces, params_q)
    if estimator == "k1":
        return float(np.mean(lp - lq))
    if estimator == "k3":
        return float(np.mean(_k3(lp, lq)))
    raise ValueError(f"unknown KL estimator {estimator!r}")


@dataclass
class TrainConfig:
    """Training hyperparameters.

    The defaults are tuned for the toy policy. ``learning_rate`` is large
    because the surrogate is averaged over every trace in the batch and the
    policy is a sparse lookup table; :meth:`published_setup` gives the
    published large-model values instead.
    """

    learning_rate: float = 1000.0
    kl_coefficient: float = 1e-3
    clip_epsilon: float = 0.2
    rollouts_per_prompt: int = 8
    prompts_per_batch: int = 32
    steps: int = 200
    seed: int = 7
    reward: RewardVariant = field(
        default_factory=lambda: RewardVariant(RewardKind.GATED, cosine=CosineParams(l_max=DEFAULT_MAX_LEN))
    )
    max_len: int = DEFAULT_MAX_LEN
    n_buckets: int = DEFAULT_BUCKETS
    init_scale: float = 0.1
    filler_bias: float = 1.0
    normalize_advantages: bool = False
    kl_samples: int = 2
    checkpoint_every: int = 50

    def __post_init__(self) -> None:
        if isinstance(self.reward, dict):
            reward = dict(self.reward)
            reward["cosine"] = CosineParams(**reward.get("cosine", {}))
            self.reward = RewardVariant(**reward)
        if not 0 < self.clip_epsilon < 1:
            raise DegenerateConfigError(f"clip_epsilon must lie in (0, 1), got {self.clip_epsilon}")
        if self.rollouts_per_prompt < 2:
            raise DegenerateConfigError("rollouts_per_prompt must be >= 2")
        if self.prompts_per_batch < 1 or self.steps < 0:
            raise DegenerateConfigError("prompts_per_batch must be >= 1 and steps >= 0")

    @classmethod
    def published_setup(cls, **overrides) -> TrainConfig:
        values = dict(
            learning_rate=PUBLISHED_LEARNING_RATE,
            kl_coefficient=1e-3,
            clip_epsilon=0.2,
            rollouts_per_prompt=8,
            prompts_per_batch=PUBLISHED_PROMPTS_PER_BATCH,
        )
        values.update(overrides)
        return cls(**values)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward"]["kind"] = self.reward.kind.value
        return d


@dataclass
class StepLog:
    step: int
    reward_mean: float
    accuracy: float
    length_mean: float
    judge_score_mean: float
    kl_initial: float
    kl_prev: float
    reward_accuracy_mean: Optional[float] = None
    reward_conciseness_mean: Optional[float] = None
    judge_calls: int = 0

    def row(self, separated: bool) -> list:
        values = [getattr(self, c) for c in STEP_LOG_COLUMNS]
        if separated:
            values += [self.reward_accuracy_mean, self.reward_conciseness_mean]
        return [_fmt(v) for v in values]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


@dataclass
class TrainState:
    params: PolicyParams
    initial: PolicyParams
    rng: np.random.Generator
    step: int = 0

    @classmethod
    def fresh(cls, cfg: TrainConfig) -> TrainState:
        params = PolicyParams.initial(cfg.seed, cfg.n_buckets, cfg.init_scale, cfg.filler_bias)
        return cls(params, params.copy(), np.random.default_rng(cfg.seed))


def mock_scorer(trace: Trace, problem: SyntheticProblem) -> int:
    from .judge import mock_judge

    return mock_judge(trace)


def build_group(
    problem: SyntheticProblem,
    traces: list[Trace],
    cfg: TrainConfig,
    scorer: Scorer,
) -> RolloutGroup:
    """Score one prompt's rollouts and attach leave-one-out advantages."""
    variant = cfg.reward
    accs = [oracle_accuracy(t, problem) for t in traces]
    correct_lengths = [t.length for t, a in zip(traces, accs) if a]
    rewards, scores, parts = [], [], []
    for trace, a in zip(traces, accs):
        score = None
        consult = variant.needs_judge and not (variant.kind is RewardKind.GATED and a == 0)
        if consult:
            score = scorer(trace, problem)
        value = compute_reward(
            variant,
            a,
            ConcisenessScore(score) if score is not None else None,
            trace.length,
            correct_lengths,
        )
        rewards.append(value.scalar)
        scores.append(score)
        parts.append(value.components)
    rewards_arr = np.asarray(rewards, dtype=np.float64)
    components = np.asarray(parts) if variant.kind is RewardKind.SEPARATED else None
    return RolloutGroup(
        problem=problem,
        traces=traces,
        rewards=rewards_arr,
        advantages=loo_advantage(rewards_arr, cfg.normalize_advantages),
        old_logprobs=np.array([t.logprob for t in traces]),
        judge_scores=scores,
        accuracies=accs,
        components=components,
    )


def train_step(
    state: TrainState,
    problems: Sequence[SyntheticProblem],
    cfg: TrainConfig,
    scorer: Scorer = mock_scorer,
) -> tuple[TrainState, StepLog]:
    """One sample-score-update cycle over a batch of prompts.

    Any exception raised while scoring propagates before the parameters are
    touched, so a failed step leaves ``state.params`` unchanged.
    """
    params = state.params
    sampled = sample_batch(problems, params, cfg.rollouts_per_prompt, cfg.max_len, state.rng)
    groups = [build_group(p, trs, cfg, scorer) for p, trs in zip(problems, sampled)]

    _, grad = surrogate_loss(groups, params, cfg.clip_epsilon)
    traces = [t for g in groups for t in g.traces]
    if cfg.kl_coefficient:
        # score-function gradient of KL(p_theta || p_initial) on the same rollouts
        lp = np.concatenate([g.old_logprobs for g in groups])
        lp_init = batch_logprobs(traces, state.initial)
        grad -= cfg.kl_coefficient * batch_logprob_grad(traces, params, (lp - lp_init) / len(traces))
    new_params = PolicyParams(params.logits + cfg.learning_rate * grad)

    # fresh rollouts from the updated policy for the KL diagnostics
    probe = [t for g in sample_batch(problems, new_params, cfg.kl_samples, cfg.max_len, state.rng) for t in g]
    lp_new = np.array([t.logprob for t in probe])
    kl_initial = float(np.mean(_k3(lp_new, batch_logprobs(probe, state.initial))))
    kl_prev = float(np.mean(_k3(lp_new, batch_logprobs(probe, params))))

    judged = [s for g in groups for s in g.judge_scores if s is not None]
    log = StepLog(
        step=state.step,
        reward_mean=float(np.mean(np.concatenate([g.rewards for g in groups]))),
        accuracy=float(np.mean([a for g in groups for a in g.accuracies])),
        length_mean=float(np.mean([t.length for t in traces])),
        judge_score_mean=float(np.mean(judged)) if judged else math.nan,
        kl_initial=kl_initial,
        kl_prev=kl_prev,
        judge_calls=len(judged),
    )
    if cfg.reward.kind is RewardKind.SEPARATED:
        comps = np.concatenate([g.components for g in groups])
        log.reward_accuracy_mean = float(comps[:, 0].mean())
        log.reward_conciseness_mean = float(comps[:, 1].mean())
    state.params = new_params
    state.step += 1
    return state, log


def sample_prompts(
    dataset: Sequence[SyntheticProblem], k: int, rng: np.random.Generator
) -> list[SyntheticProblem]:
    """Draw ``k`` prompts uniformly with replacement."""
    return [dataset[i] for i in rng.integers(0, len(dataset), size=k)]


def train(
    cfg: TrainConfig,
    dataset: Sequence[SyntheticProblem],
    scorer: Scorer = mock_scorer,
    state: Optional[TrainState] = None,
    on_step: Optional[Callable[[TrainState, StepLog], None]] = None,
) -> tuple[TrainState, list[StepLog]]:
    state = state if state is not None else TrainState.fresh(cfg)
    logs = []
    for _ in range(cfg.steps):
        batch = sample_prompts(dataset, cfg.prompts_per_batch, state.rng)
        state, log = train_step(state, batch, cfg, scorer)
        logs.append(log)
        if on_step is not None:
            on_step(state, log)
    return state, logs


def write_step_log(path: str | Path, logs: Sequence[StepLog], separated: bool) -> None:
    header = list(STEP_LOG_COLUMNS) + (list(SEPARATED_COLUMNS) if separated else [])
    atomic_write_csv(path, header, [log.row(separated) for log in logs])


def run_training(
    cfg: TrainConfig,
    dataset: Sequence[SyntheticProblem],
    run_dir: str | Path,
    scorer: Scorer = mock_scorer,
    extra_config: Optional[dict] = None,
) -> list[StepLog]:
    """Train and persist a run directory.

    Layout::

        config.json                  configuration snapshot
        steps.csv                    one row per step
        checkpoints/step_000050.bin  policy snapshots every ``checkpoint_every`` steps
        checkpoints/final.bin

    Files are replaced atomically; ``steps.csv`` is rewritten at each
    checkpoint so an interrupted run leaves a complete prefix.
    """
    run_dir = Path(run_dir)
    separated = cfg.reward.kind is RewardKind.SEPARATED
    with run_dir_lock(run_dir):
        snapshot = {"train": cfg.to_dict(), **(extra_config or {})}
        atomic_write_json(run_dir / "config.json", snapshot)
        ckpt = run_dir / "checkpoints"
        ckpt.mkdir(exist_ok=True)
        state = TrainState.fresh(cfg)
        state.params.save(ckpt / "step_000000.bin")
        logs: list[StepLog] = []

        def on_step(st: TrainState, log: StepLog) -> None:
            logs.append(log)
            logger.info(
                "step %d reward %.4f acc %.3f len %.2f kl0 %.4f",
                log.step, log.reward_mean, log.accuracy, log.length_mean, log.kl_initial,
            )
            if cfg.checkpoint_every and st.step % cfg.checkpoint_every == 0:
                st.params.save(ckpt / f"step_{st.step:06d}.bin")
                write_step_log(run_dir / "steps.csv", logs, separated)

        try:
            train(cfg, dataset, scorer, state, on_step)
        finally:
            write_step_log(run_dir / "steps.csv", logs, separated)
        state.params.save(ckpt / "final.bin")
    return logs
