import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conciserl.errors import DegenerateConfigError
from conciserl.policy import (
    END,
    FILLER,
    STEP,
    VOCAB_SIZE,
    PolicyParams,
    SyntheticProblem,
    Trace,
    all_problems,
    ans,
    batch_logprob_grad,
    batch_logprobs,
    enumerate_traces,
    logprob,
    logprob_grad,
    oracle_accuracy,
    oracle_essentials,
    parse_rendered,
    render,
    sample,
    sample_batch,
)


def _trace(tokens, pid=0):
    return Trace(tuple(tokens), (0.0,) * len(tokens), pid)


def test_problems():
    probs = all_problems()
    assert len(probs) == 100
    assert [p.prompt_id for p in probs] == list(range(100))
    p = SyntheticProblem(3, 4)
    assert p.gold == 7 and p.prompt == "What is 3 + 4?" and p.prompt_id == 34
    with pytest.raises(ValueError):
        SyntheticProblem(10, 0)


def test_render_and_parse_round_trip():
    tokens = (FILLER, STEP, ans(7), END)
    text = render(tokens)
    assert text == "wait step \\boxed{7}"
    assert parse_rendered(text) == tokens
    truncated = (FILLER,) * 3
    assert render(truncated) == "wait wait wait ..."
    assert parse_rendered(render(truncated)) == truncated
    with pytest.raises(ValueError):
        parse_rendered("hmm \\boxed{2}")


def test_oracles():
    p = SyntheticProblem(3, 4)
    assert oracle_accuracy(_trace([FILLER, ans(7), END]), p) == 1
    assert oracle_accuracy(_trace([ans(7), ans(6), END]), p) == 0
    assert oracle_accuracy(_trace([ans(6), ans(7), END]), p) == 1
    assert oracle_accuracy(_trace([ans(7)] * 4), p) == 0  # never terminated
    assert oracle_accuracy(_trace([END]), p) == 0
    assert oracle_essentials(_trace([FILLER, FILLER, ans(7), ans(7), END])) == (1, 4)
    assert oracle_essentials(_trace([STEP, END])) == (0, 1)


def test_initial_params_are_verbose_biased():
    params = PolicyParams.initial(seed=0)
    row = np.exp(params.next_token_logprobs(5, ()))
    assert row.argmax() == FILLER
    assert params.logits.shape == (100, 23, 23, VOCAB_SIZE)
    assert np.array_equal(params.logits, PolicyParams.initial(seed=0).logits)


def test_params_validation():
    with pytest.raises(ValueError):
        PolicyParams(np.zeros((2, 23, 23, 5)))
    bad = np.zeros((1, 23, 23, VOCAB_SIZE))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        PolicyParams(bad)


def test_save_load_round_trip(tmp_path):
    params = PolicyParams.initial(seed=3, n_buckets=5)
    params.save(tmp_path / "p.bin")
    back = PolicyParams.load(tmp_path / "p.bin")
    assert np.array_equal(back.logits, params.logits)
    (tmp_path / "junk.bin").write_bytes(b"nonsense\n")
    with pytest.raises(ValueError):
        PolicyParams.load(tmp_path / "junk.bin")


def test_sampling_deterministic_and_consistent():
    params = PolicyParams.initial(seed=1, n_buckets=10)
    p = SyntheticProblem(2, 2)
    a = sample(p, params, 16, seed=5)
    b = sample(p, params, 16, seed=5)
    assert [t.tokens for t in a] == [t.tokens for t in b]
    for t in a:
        assert 1 <= t.length <= 16
        assert t.terminated or t.length == 16
        assert END not in t.tokens[:-1]
        assert t.logprob == pytest.approx(logprob(t, p, params), abs=1e-10)


def test_sampling_rejects_degenerate_config():
    params = PolicyParams.zeros(1)
    with pytest.raises(DegenerateConfigError):
        sample(SyntheticProblem(0, 0), params, 1)
    with pytest.raises(DegenerateConfigError):
        sample(SyntheticProblem(0, 0), params, 4, max_len=1)


def test_uniform_policy_first_token_frequency():
    n = 100_000
    traces = sample(SyntheticProblem(0, 0), PolicyParams.zeros(1), n, max_len=2, seed=11)
    freq = np.bincount([t.tokens[0] for t in traces], minlength=VOCAB_SIZE) / n
    sigma = math.sqrt((1 / 22) * (21 / 22) / n)
    assert np.all(np.abs(freq - 1 / 22) < 4.5 * sigma)
    assert abs(freq[END] - 1 / 22) < 3 * sigma


def test_enumeration_is_a_distribution():
    rng = np.random.default_rng(0)
    params = PolicyParams(rng.normal(size=(1, 23, 23, VOCAB_SIZE)))
    p = SyntheticProblem(0, 0)
    seqs = list(enumerate_traces(p, params, 3))
    assert len(seqs) == 1 + 21 + 21 * 21 * 22
    assert math.isclose(sum(math.exp(lp) for _, lp in seqs), 1.0, rel_tol=1e-12)
    for tokens, lp in seqs[:50]:
        assert logprob(_trace(tokens), p, params) == pytest.approx(lp, abs=1e-12)


def test_batch_logprobs_match_single():
    params = PolicyParams.initial(seed=2, n_buckets=7)
    groups = sample_batch(all_problems()[:5], params, 3, seed=0)
    traces = [t for g in groups for t in g]
    np.testing.assert_allclose(batch_logprobs(traces, params), [t.logprob for t in traces], atol=1e-10)


def test_logprob_grad_finite_difference():
    rng = np.random.default_rng(1)
    params = PolicyParams(rng.normal(size=(2, 23, 23, VOCAB_SIZE)))
    p = SyntheticProblem(0, 1)
    trace = _trace([STEP, FILLER, ans(1), END], p.prompt_id)
    g = logprob_grad(trace, p, params)
    h = 1e-6
    for idx in list(zip(*np.nonzero(g)))[:15]:
        x = params.logits.copy()
        x[idx] += h
        up = logprob(trace, p, PolicyParams(x))
        x[idx] -= 2 * h
        down = logprob(trace, p, PolicyParams(x))
        assert g[idx] == pytest.approx((up - down) / (2 * h), abs=1e-7)


def test_batch_grad_is_weighted_sum():
    params = PolicyParams.initial(seed=4, n_buckets=3)
    p = SyntheticProblem(1, 1)
    traces = sample(p, params, 4, seed=0)
    w = [0.5, -1.0, 2.0, 0.0]
    total = sum(wi * logprob_grad(t, p, params) for wi, t in zip(w, traces))
    np.testing.assert_allclose(batch_logprob_grad(traces, params, w), total, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, VOCAB_SIZE - 2), max_size=10))
def test_render_parse_property(body):
    tokens = tuple(body) + (END,)
    assert parse_rendered(render(tokens)) == tokens


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_gradient_rows_sum_to_zero(seed):
    # softmax gradients cancel across the vocabulary for every context row
    params = PolicyParams.initial(seed=seed % 1000, n_buckets=2)
    traces = sample(SyntheticProblem(0, 0), params, 2, seed=seed)
    g = batch_logprob_grad(traces, params, [1.0, -0.5])
    np.testing.assert_allclose(g.sum(axis=-1), 0.0, atol=1e-12)
