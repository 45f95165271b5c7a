import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfrewrite.backends.base import ContextDescriptor, GenerationMode, GenerationResult, SamplingParams
from selfrewrite.backends.toy import (
    EOS_ID,
    N_MODES,
    THINK_CLOSE_ID,
    VOCAB,
    PolicyParameters,
    ToyPolicy,
    _sampling_distribution,
    decode,
    encode,
    logprob_gradient,
)
from selfrewrite.errors import ContextOverflow, DimensionMismatch, UnsupportedBackend
from selfrewrite.tasks import generate_task_set

V = len(VOCAB)
TASK = generate_task_set(0, 1, 2)[0]


def random_params(seed: int, k: int = 2, scale: float = 1.0) -> PolicyParameters:
    p = PolicyParameters.zeros(context_order=k)
    return p.with_theta(np.random.default_rng(seed).normal(0, scale, p.size))


def oracle_logprobs(params: PolicyParameters, mode: int, history: list[int], tokens: list[int]) -> list[float]:
    """Explicit one-hot feature vector times the weight matrix, softmax in plain floats."""
    k, W = params.context_order, params.matrix
    seq = list(history) + list(tokens)
    out = []
    for t in range(len(tokens)):
        pos = len(history) + t
        x = np.zeros(k * V + N_MODES)
        for lag in range(1, k + 1):
            if pos - lag >= 0:
                x[(lag - 1) * V + seq[pos - lag]] = 1.0
        x[k * V + mode] = 1.0
        logits = [float(sum(x[r] * W[r, j] for r in np.flatnonzero(x))) for j in range(V)]
        top = max(logits)
        log_z = top + math.log(sum(math.exp(z - top) for z in logits))
        out.append(logits[tokens[t]] - log_z)
    return out


def test_vocabulary_shape():
    assert V == 32
    assert encode("</think> \\boxed{7} <eos>") == [THINK_CLOSE_ID, *encode("\\boxed{"), encode("7")[0], *encode("}"), EOS_ID]
    assert decode(encode("so 3 \\boxed{ 4 }")) == "so 3 \\boxed{4}"
    assert encode("Wait, unknownword 5") == encode("wait 5")


def test_parameter_count_and_serialization():
    p = random_params(0, k=3)
    assert p.size == (3 * V + N_MODES) * V
    q = PolicyParameters.from_bytes(p.to_bytes())
    assert q.context_order == 3 and np.array_equal(q.theta, p.theta)
    with pytest.raises(DimensionMismatch):
        PolicyParameters(np.zeros(5))
    with pytest.raises(ValueError):
        PolicyParameters.zeros(vocabulary_size=65)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4))
def test_serialization_identity(seed, k):
    p = random_params(seed, k)
    assert PolicyParameters.from_bytes(p.to_bytes()).to_bytes() == p.to_bytes()


def test_zero_parameters_are_uniform():
    policy = ToyPolicy(PolicyParameters.zeros())
    (res,) = policy.generate(TASK, SamplingParams(max_new_tokens=30, seed=3), 1)
    assert np.allclose(res.token_logprobs, -math.log(32), atol=0, rtol=1e-15)


def test_generation_is_seeded():
    policy = ToyPolicy(random_params(1))
    params = SamplingParams(max_new_tokens=40, seed=11)
    assert policy.generate(TASK, params, 3) == policy.generate(TASK, params, 3)
    a, b = policy.generate(TASK, params, 2)
    assert a.token_ids != b.token_ids


@pytest.mark.parametrize("seed", range(5))
def test_generate_logprobs_match_softmax_oracle(seed):
    params = random_params(seed)
    policy = ToyPolicy(params)
    for res in policy.generate(TASK, SamplingParams(temperature=0.7, max_new_tokens=25, seed=seed), 2):
        want = oracle_logprobs(params, GenerationMode.GENERATE, encode(TASK.prompt_text), res.token_ids)
        assert np.max(np.abs(np.array(res.token_logprobs) - want)) <= 1e-12
        assert all(lp <= 0 for lp in res.token_logprobs)


@pytest.mark.parametrize("seed", range(3))
def test_rewrite_and_continue_logprobs_match_oracle(seed):
    params = random_params(seed, k=3)
    policy = ToyPolicy(params)
    passage = "wait 3 3 so 4 hmm 4"
    rw = policy.rewrite(passage, SamplingParams(max_new_tokens=20, seed=seed))
    want = oracle_logprobs(params, GenerationMode.REWRITE, encode(passage), rw.token_ids)
    assert np.max(np.abs(np.array(rw.token_logprobs) - want)) <= 1e-12
    cont = policy.continue_answer(TASK, "so 4", SamplingParams(max_new_tokens=6, seed=seed))
    ctx = policy.continuation_context(TASK, "so 4")
    want = oracle_logprobs(params, GenerationMode.CONTINUE, ctx, cont.token_ids)
    assert np.max(np.abs(np.array(cont.token_logprobs) - want)) <= 1e-12
    assert cont.reasoning_text == "" and THINK_CLOSE_ID not in cont.token_ids[:-1]
    assert len(cont.token_ids) <= 6


def test_generate_splits_at_first_marker():
    params = PolicyParameters.zeros(context_order=1)
    m = params.matrix.copy()
    m[1 * V + GenerationMode.GENERATE, THINK_CLOSE_ID] = 50.0  # always emit the marker
    policy = ToyPolicy(params.with_theta(m.ravel()))
    (res,) = policy.generate(TASK, SamplingParams(max_new_tokens=5), 1)
    assert res.reasoning_text == "" and res.token_ids[0] == THINK_CLOSE_ID
    assert "</think>" not in res.answer_text


def test_logprob_gradient_at_old_parameters():
    params = random_params(4)
    policy = ToyPolicy(params)
    (res,) = policy.generate(TASK, SamplingParams(max_new_tokens=30, seed=2), 1)
    total, grad = logprob_gradient(params, res)
    assert abs(total - sum(res.token_logprobs)) <= 1e-10
    assert grad.shape == (params.size,)


def test_gradient_at_zero_is_onehot_minus_uniform():
    params = PolicyParameters.zeros(context_order=2)
    res = GenerationResult("", "", [3, 5], [-math.log(V)] * 2, ContextDescriptor(GenerationMode.GENERATE, (7,)))
    _, grad = logprob_gradient(params, res)
    expected = np.zeros((params.n_rows, V))
    rows = [[0 * V + 7, 2 * V + 0], [0 * V + 3, 1 * V + 7, 2 * V + 0]]  # lag-1, lag-2 and mode rows
    for tok, active in zip([3, 5], rows):
        delta = -np.full(V, 1 / V)
        delta[tok] += 1
        for r in active:
            expected[r] += delta
    assert np.allclose(grad.reshape(params.n_rows, V), expected, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_logprob_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    params = random_params(seed, k=2, scale=0.5)
    ids = rng.integers(0, V, 6).tolist()
    res = GenerationResult("", "", ids, [0.0] * 6, ContextDescriptor(GenerationMode.REWRITE, tuple(rng.integers(0, V, 2))))
    _, grad = logprob_gradient(params, res)
    h = 1e-5
    coords = np.flatnonzero(grad)
    coords = np.concatenate([coords[:40], rng.choice(params.size, 10, replace=False)])
    for c in coords:
        up, down = params.theta.copy(), params.theta.copy()
        up[c] += h
        down[c] -= h
        fd = (logprob_gradient(params.with_theta(up), res)[0] - logprob_gradient(params.with_theta(down), res)[0]) / (2 * h)
        assert abs(fd - grad[c]) <= 1e-4 * max(1.0, abs(grad[c]))


def test_missing_context_is_unsupported():
    res = GenerationResult("a", "", [1], [-1.0], None)
    with pytest.raises(UnsupportedBackend):
        logprob_gradient(PolicyParameters.zeros(), res)


def test_context_overflow():
    policy = ToyPolicy(PolicyParameters.zeros(), max_context_tokens=3)
    with pytest.raises(ContextOverflow):
        policy.generate(TASK, SamplingParams(max_new_tokens=2), 1)


def test_empty_reasoning_rejected():
    policy = ToyPolicy(PolicyParameters.zeros())
    with pytest.raises(ValueError):
        policy.rewrite("  ", SamplingParams())
    with pytest.raises(ValueError):
        policy.continue_answer(TASK, "", SamplingParams())


def test_sampling_distribution_filters():
    logits = np.log(np.array([0.5, 0.3, 0.15, 0.05]))
    assert np.allclose(_sampling_distribution(logits, SamplingParams(top_k=2)), [0.625, 0.375, 0, 0])
    assert np.allclose(_sampling_distribution(logits, SamplingParams(top_p=0.8)), [0.625, 0.375, 0, 0])
    assert np.allclose(_sampling_distribution(logits, SamplingParams(top_p=0.81)), np.array([0.5, 0.3, 0.15, 0]) / 0.95)
    cold = _sampling_distribution(logits, SamplingParams(temperature=0.5))
    assert np.allclose(cold, np.array([0.25, 0.09, 0.0225, 0.0025]) / 0.365)


def test_sampling_params_validation():
    for bad in ({"temperature": 0}, {"top_p": 0}, {"top_p": 1.5}, {"top_k": 0}, {"max_new_tokens": 0}):
        with pytest.raises(ValueError):
            SamplingParams(**bad)
