import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conciserl.errors import DegenerateConfigError, DegenerateGroupError, InvalidRatioError
from conciserl.io import RunDirLocked
from conciserl.policy import FILLER, END, PolicyParams, SyntheticProblem, Trace, all_problems, ans, batch_logprobs
from conciserl.rewards import RewardKind
from conciserl.trainer import (
    STEP_LOG_COLUMNS,
    RolloutGroup,
    TrainConfig,
    TrainState,
    build_group,
    kl_estimate,
    loo_advantage,
    mock_scorer,
    ppo_weight,
    run_training,
    surrogate_loss,
    train,
    train_step,
)


def _trace(tokens, pid):
    return Trace(tuple(tokens), (0.0,) * len(tokens), pid)


def small_cfg(**kw):
    base = dict(n_buckets=4, prompts_per_batch=4, rollouts_per_prompt=4, steps=3, max_len=8)
    base.update(kw)
    return TrainConfig(**base)


def test_loo_examples():
    np.testing.assert_allclose(loo_advantage([0.5, 0.5]), [0.0, 0.0])
    np.testing.assert_allclose(loo_advantage([1.0, 0.0]), [1.0, -1.0])
    with pytest.raises(DegenerateGroupError):
        loo_advantage([1.0])
    norm = loo_advantage([1.0, 0.0, 0.0, 0.0], normalize=True)
    assert norm.sum() == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(loo_advantage([2.0, 2.0, 2.0], normalize=True), 0.0)


@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=32))
def test_loo_sums_to_zero(r):
    assert abs(loo_advantage(r).sum()) <= 1e-9 * max(1.0, max(abs(x) for x in r))


@pytest.mark.parametrize(
    "ratio, adv, w",
    [(1.5, 1.0, 1.2), (0.5, -1.0, -0.8), (1.1, 2.0, 2.2), (0.9, 0.0, 0.0)],
)
def test_ppo_weight(ratio, adv, w):
    assert ppo_weight(ratio, 0.2, adv) == pytest.approx(w)


def test_ppo_weight_rejects_bad_ratio():
    with pytest.raises(InvalidRatioError):
        ppo_weight(0.0, 0.2, 1.0)
    with pytest.raises(InvalidRatioError):
        ppo_weight(float("nan"), 0.2, 1.0)


def test_gated_skips_judge_for_wrong_traces():
    p = SyntheticProblem(1, 1)
    traces = [_trace([ans(2), END], p.prompt_id), _trace([ans(3), END], p.prompt_id), _trace([FILLER] * 4, p.prompt_id)]
    calls = []

    def scorer(t, prob):
        calls.append(t)
        return mock_scorer(t, prob)

    g = build_group(p, traces, TrainConfig(), scorer)
    assert len(calls) == 1
    assert g.rewards.tolist() == [1.0, 0.0, 0.0]
    assert g.judge_scores == [10, None, None]


def test_separated_group_has_components():
    p = SyntheticProblem(1, 1)
    traces = [_trace([ans(2), END], p.prompt_id), _trace([FILLER, ans(3), END], p.prompt_id)]
    g = build_group(p, traces, TrainConfig(reward={"kind": "separated"}), mock_scorer)
    np.testing.assert_allclose(g.components, [[1, 1.0], [0, 0.5]])
    np.testing.assert_allclose(g.rewards, [2.0, 0.5])


def test_surrogate_grad_zero_for_zero_advantages():
    p = SyntheticProblem(0, 0)
    params = PolicyParams.initial(0, n_buckets=1)
    traces = [_trace([ans(0), END], 0), _trace([FILLER, END], 0)]
    old = batch_logprobs(traces, params)
    g = RolloutGroup(p, traces, np.zeros(2), np.zeros(2), old)
    loss, grad = surrogate_loss(g, params, 0.2)
    assert loss == 0.0 and not grad.any()


def test_surrogate_matches_full_difference_when_clipped():
    # with every ratio far outside the clip range the weights are constant,
    # so the returned gradient is the true derivative of the returned loss
    rng = np.random.default_rng(0)
    p = SyntheticProblem(0, 1)
    params = PolicyParams(rng.normal(size=(1, 23, 23, 22)))
    traces = [_trace([ans(1), END], 1), _trace([FILLER, FILLER, END], 1), _trace([END], 1)]
    lp = batch_logprobs(traces, params)
    g = RolloutGroup(p, traces, np.array([1.0, 0.0, 0.0]), loo_advantage([1.0, 0.0, 0.0]), lp - 5.0)
    _, grad = surrogate_loss(g, params, 0.2)
    idx = tuple(np.argwhere(grad)[0])
    h = 1e-6
    x = params.logits.copy()
    x[idx] += h
    up, _ = surrogate_loss(g, PolicyParams(x), 0.2)
    x[idx] -= 2 * h
    down, _ = surrogate_loss(g, PolicyParams(x), 0.2)
    assert grad[idx] == pytest.approx((up - down) / (2 * h), rel=1e-6)


def test_kl_estimators_agree_with_exact():
    rng = np.random.default_rng(3)
    p = PolicyParams(rng.normal(scale=0.3, size=(1, 23, 23, 22)))
    q = PolicyParams(rng.normal(scale=0.3, size=(1, 23, 23, 22)))
    probs = [SyntheticProblem(0, 0)]
    exact = kl_estimate(p, q, probs, exact=True, max_len=2)
    for est in ("k1", "k3"):
        approx = kl_estimate(p, q, probs, samples=20_000, seed=0, max_len=2, estimator=est)
        assert approx == pytest.approx(exact, rel=0.1)
    with pytest.raises(ValueError):
        kl_estimate(p, q, probs, samples=4, seed=0, estimator="k9")


def test_config_validation_and_dict():
    with pytest.raises(DegenerateConfigError):
        TrainConfig(clip_epsilon=0)
    with pytest.raises(DegenerateConfigError):
        TrainConfig(rollouts_per_prompt=1)
    cfg = TrainConfig(reward={"kind": "alpha", "alpha": 0.4})
    assert cfg.reward.kind is RewardKind.ALPHA
    d = cfg.to_dict()
    assert d["reward"]["kind"] == "alpha"
    assert TrainConfig(**json.loads(json.dumps(d))).to_dict() == d
    pf = TrainConfig.published_setup(steps=1)
    assert pf.learning_rate == 5e-6 and pf.prompts_per_batch == 32 and pf.steps == 1


def test_train_step_updates_state_and_logs():
    cfg = small_cfg()
    state = TrainState.fresh(cfg)
    before = state.params.logits.copy()
    state, log = train_step(state, all_problems()[:4], cfg)
    assert state.step == 1 and log.step == 0
    assert not np.array_equal(before, state.params.logits)
    assert np.array_equal(before, state.initial.logits)
    assert 0 <= log.accuracy <= 1 and log.kl_initial >= 0 and log.kl_prev >= 0
    assert 1 <= log.length_mean <= cfg.max_len


def test_failed_scoring_leaves_params_untouched():
    cfg = small_cfg(reward={"kind": "pure"})
    state = TrainState.fresh(cfg)
    before = state.params.logits.copy()

    def boom(trace, problem):
        raise RuntimeError("judge down")

    with pytest.raises(RuntimeError):
        train_step(state, all_problems()[:4], cfg, boom)
    assert np.array_equal(before, state.params.logits) and state.step == 0


def test_train_is_deterministic():
    cfg = small_cfg(steps=4)
    _, a = train(cfg, all_problems())
    _, b = train(cfg, all_problems())
    assert [x.row(False) for x in a] == [x.row(False) for x in b]


def test_run_training_layout(tmp_path):
    cfg = small_cfg(steps=4, checkpoint_every=2, reward={"kind": "separated"})
    logs = run_training(cfg, all_problems(), tmp_path, extra_config={"seed": cfg.seed})
    assert len(logs) == 4
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["final.bin", "step_000000.bin", "step_000002.bin", "step_000004.bin"]
    with open(tmp_path / "steps.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and list(rows[0])[: len(STEP_LOG_COLUMNS)] == list(STEP_LOG_COLUMNS)
    assert "reward_accuracy_mean" in rows[0]
    conf = json.loads((tmp_path / "config.json").read_text())
    assert conf["train"]["reward"]["kind"] == "separated" and conf["seed"] == cfg.seed
    assert not (tmp_path / ".lock").exists()
    final = PolicyParams.load(tmp_path / "checkpoints" / "final.bin")
    assert final.n_buckets == 4


def test_run_dir_lock_blocks_second_writer(tmp_path):
    (tmp_path / ".lock").write_text("1234")
    with pytest.raises(RunDirLocked):
        run_training(small_cfg(steps=1), all_problems(), tmp_path)


def test_cosine_and_accuracy_rewards_train_without_judge():
    for kind in ("cosine", "accuracy", "alpha"):
        extra = {"alpha": 0.4} if kind == "alpha" else {}
        cfg = small_cfg(steps=2, reward={"kind": kind, "cosine": {"l_max": 8}, **extra})
        _, logs = train(cfg, all_problems(), scorer=lambda t, p: pytest.fail("judge called"))
        assert all(math.isnan(x.judge_score_mean) for x in logs)
