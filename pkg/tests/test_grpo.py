import math

import numpy as np
import pytest

from selfrewrite.backends.base import ContextDescriptor, GenerationMode, GenerationResult, SamplingParams
from selfrewrite.backends.toy import VOCAB, PolicyParameters, ToyPolicy, token_logprobs, window_features
from selfrewrite.errors import DimensionMismatch, EmptyBatch, NonFiniteObjective
from selfrewrite.grpo import (
    HyperParams,
    OptimizerState,
    TrainSample,
    clip_by_global_norm,
    objective_gradient,
    optimizer_step,
    surrogate_objective,
)
from selfrewrite.tasks import generate_task_set

V = len(VOCAB)


def random_params(seed, k=2, scale=0.5):
    p = PolicyParameters.zeros(context_order=k)
    return p.with_theta(np.random.default_rng(seed).normal(0, scale, p.size))


def make_sample(params, rng, n=None, advantage=None, mode=GenerationMode.GENERATE, old_shift=0.0):
    n = n or int(rng.integers(1, 8))
    ids = rng.integers(0, V, n)
    prefix = tuple(rng.integers(0, V, params.context_order))
    feats = window_features(prefix, ids, mode, params.context_order, V)
    old = token_logprobs(params.matrix, feats, ids) + old_shift * rng.normal(size=n)
    adv = float(rng.normal()) if advantage is None else advantage
    return TrainSample(feats, ids, old, adv, np.ones(n, bool))


def random_batch(params, seed, size=4, old_shift=0.3):
    rng = np.random.default_rng(seed)
    return [make_sample(params, rng, old_shift=old_shift) for _ in range(size)]


def test_defaults():
    hp = HyperParams()
    assert (hp.clip_epsilon, hp.learning_rate, hp.weight_decay, hp.kl_coefficient, hp.grad_norm_clip) == (
        0.2, 3e-6, 1e-2, 0.0, 1.0)
    assert (hp.group_size, hp.batch_size, hp.cutoff_length) == (8, 256, 12288)
    for bad in ({"clip_epsilon": 0}, {"clip_epsilon": 1}, {"learning_rate": 0}, {"kl_coefficient": -1},
                {"group_size": 3}, {"optimizer": "lion"}):
        with pytest.raises(ValueError):
            HyperParams(**bad)


def test_ratio_one_gives_mean_advantage():
    params = random_params(0)
    batch = random_batch(params, 1, old_shift=0.0)
    value = surrogate_objective(params, batch, HyperParams())
    assert value == pytest.approx(np.mean([s.advantage for s in batch]), abs=1e-12)


def test_zero_advantages():
    params = random_params(0)
    batch = random_batch(params, 2)
    for s in batch:
        s.advantage = 0.0
    assert surrogate_objective(params, batch, HyperParams()) == 0.0
    assert not objective_gradient(params, batch, HyperParams()).any()


def test_single_token_clip_binds_at_one_point_two():
    params = PolicyParameters.zeros(context_order=1)
    feats = window_features((0,), [5], GenerationMode.GENERATE, 1, V)
    old = np.array([-math.log(V) - math.log(1.5)])  # ratio exp(lp - old) = 1.5
    sample = TrainSample(feats, np.array([5]), old, 1.0, np.ones(1, bool))
    assert surrogate_objective(params, [sample], HyperParams()) == pytest.approx(1.2, abs=1e-12)
    assert not objective_gradient(params, [sample], HyperParams()).any()


def test_saturated_batch_has_zero_gradient():
    params = random_params(3)
    rng = np.random.default_rng(0)
    batch = [make_sample(params, rng, advantage=abs(rng.normal()) + 0.1) for _ in range(3)]
    for s in batch:
        s.old_logprobs = s.old_logprobs - 0.5  # ratio e^0.5 > 1.2 everywhere
    assert not objective_gradient(params, batch, HyperParams()).any()


def finite_difference_check(params, batch, hp, n_coords=60, seed=0):
    grad = objective_gradient(params, batch, hp)
    rng = np.random.default_rng(seed)
    nz = np.flatnonzero(grad)
    coords = np.concatenate([rng.choice(nz, min(len(nz), n_coords), replace=False) if len(nz) else [],
                             rng.choice(params.size, 20, replace=False)]).astype(int)
    h = 1e-5
    for c in coords:
        up, down = params.theta.copy(), params.theta.copy()
        up[c] += h
        down[c] -= h
        fd = (surrogate_objective(params.with_theta(up), batch, hp)
              - surrogate_objective(params.with_theta(down), batch, hp)) / (2 * h)
        assert abs(fd - grad[c]) <= 1e-4 * max(1.0, abs(grad[c])), (c, fd, grad[c])


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    params = random_params(seed)
    finite_difference_check(params, random_batch(params, seed + 100), HyperParams(), seed=seed)


def test_gradient_with_kl_term():
    params = random_params(7)
    batch = random_batch(params, 8)
    for s in batch:
        s.ref_logprobs = s.old_logprobs + 0.1
    finite_difference_check(params, batch, HyperParams(kl_coefficient=0.3))


def test_masking_excludes_tokens():
    params = random_params(1)
    rng = np.random.default_rng(4)
    s = make_sample(params, rng, n=6, old_shift=0.2)
    head = TrainSample(s.feats[:3], s.token_ids[:3], s.old_logprobs[:3], s.advantage, np.ones(3, bool))
    s.mask[3:] = False
    hp = HyperParams()
    assert surrogate_objective(params, [s], hp) == pytest.approx(surrogate_objective(params, [head], hp), abs=1e-15)
    assert np.allclose(objective_gradient(params, [s], hp), objective_gradient(params, [head], hp), atol=1e-15)


def test_cutoff_masks_tail():
    params = random_params(0)
    policy = ToyPolicy(params)
    (res,) = policy.generate(generate_task_set(0, 1, 1)[0], SamplingParams(max_new_tokens=20, seed=1), 1)
    s = TrainSample.from_results(params, [res], 1.0, cutoff_length=4)
    assert s.mask.sum() == min(4, len(res.token_ids))


def test_clip_semantics_under_perturbation():
    params = PolicyParameters.zeros(context_order=1)
    hp = HyperParams()
    ids = np.array([3, 4, 5])
    free_feats = window_features((6,), ids, GenerationMode.GENERATE, 1, V)
    free = TrainSample(free_feats, ids, token_logprobs(params.matrix, free_feats, ids) - 0.05, 1.0, np.ones(3, bool))
    feats = window_features((2,), [9], GenerationMode.GENERATE, 1, V)
    clipped = TrainSample(feats, np.array([9]), np.array([-math.log(V) - 1.0]), 1.0, np.ones(1, bool))
    row = 0 * V + 2  # lag-1 row of token 2: active only for the clipped token
    assert row not in free.feats
    m = params.matrix.copy()
    m[row, 9] += 0.5  # pushes the clipped token's ratio further above 1 + eps
    moved = params.with_theta(m.ravel())
    assert math.exp(token_logprobs(moved.matrix, feats, [9])[0] - clipped.old_logprobs[0]) > 1.2
    for p in (params, moved):
        assert surrogate_objective(p, [free, clipped], hp) == pytest.approx(
            surrogate_objective(p, [free], hp) / 2 + 1.2 / 2, abs=1e-12)
        assert np.array_equal(objective_gradient(p, [free, clipped], hp), objective_gradient(p, [free], hp) / 2)


def test_nonfinite_ratio_is_reported():
    params = random_params(0)
    batch = random_batch(params, 0)
    batch[0].old_logprobs = batch[0].old_logprobs - 1e4
    with pytest.raises(NonFiniteObjective):
        surrogate_objective(params, batch, HyperParams())


def test_empty_batch():
    with pytest.raises(EmptyBatch):
        surrogate_objective(random_params(0), [], HyperParams())


def test_decay_only_step():
    hp = HyperParams(learning_rate=0.1, weight_decay=0.5)
    theta = np.array([1.0, -2.0, 3.0])
    _, new = optimizer_step(OptimizerState.zeros(3), theta, np.zeros(3), hp)
    assert np.array_equal(new, theta * (1 - 0.1 * 0.5))


def test_global_norm_clip():
    g = np.array([6.0, 8.0])
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 10.0 and np.allclose(clipped, g * 0.1)
    hp = HyperParams(learning_rate=1.0, weight_decay=0.0, optimizer="sgd")
    _, new = optimizer_step(OptimizerState.zeros(2), np.zeros(2), g, hp)
    assert np.allclose(new, [0.6, 0.8])


def test_scalar_adamw_oracle():
    lr, wd, b1, b2, eps = 0.01, 0.1, 0.9, 0.999, 1e-8
    hp = HyperParams(learning_rate=lr, weight_decay=wd, grad_norm_clip=100.0)
    theta, g = 0.5, 0.3
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat, v_hat = m / (1 - b1), v / (1 - b2)
    expected = theta * (1 - lr * wd) + lr * m_hat / (math.sqrt(v_hat) + eps)
    state, new = optimizer_step(OptimizerState.zeros(1), np.array([theta]), np.array([g]), hp)
    assert new[0] == pytest.approx(expected, abs=1e-15)
    assert state.step == 1
    # second step keeps moments
    g2 = -0.2
    m2, v2 = b1 * m + (1 - b1) * g2, b2 * v + (1 - b2) * g2 * g2
    expected2 = expected * (1 - lr * wd) + lr * (m2 / (1 - b1**2)) / (math.sqrt(v2 / (1 - b2**2)) + eps)
    _, new2 = optimizer_step(state, new, np.array([g2]), hp)
    assert new2[0] == pytest.approx(expected2, abs=1e-15)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        optimizer_step(OptimizerState.zeros(3), np.zeros(3), np.zeros(4), HyperParams())


def test_step_is_deterministic():
    params = random_params(2)
    batch = random_batch(params, 3)
    hp = HyperParams(learning_rate=1e-2)
    outs = []
    for _ in range(2):
        state = OptimizerState.zeros(params.size)
        outs.append(optimizer_step(state, params.theta, objective_gradient(params, batch, hp), hp)[1].tobytes())
    assert outs[0] == outs[1]


def test_rewritten_sample_tokens_use_their_own_contexts():
    params = random_params(5, k=2)
    policy = ToyPolicy(params)
    task = generate_task_set(0, 1, 1)[0]
    rw = policy.rewrite("3 3 wait 3", SamplingParams(max_new_tokens=6, seed=1))
    cont = policy.continue_answer(task, rw.reasoning_text or "3", SamplingParams(max_new_tokens=4, seed=2))
    sample = TrainSample.from_results(params, [rw, cont], 1.0)
    lp = token_logprobs(params.matrix, sample.feats, sample.token_ids)
    assert np.allclose(lp, rw.token_logprobs + cont.token_logprobs, atol=1e-12)
    assert sample.feats[0, -1] == 2 * V + GenerationMode.REWRITE
    assert sample.feats[-1, -1] == 2 * V + GenerationMode.CONTINUE


def test_scaled_gradient_is_linear_in_advantages():
    params = random_params(9)
    batch = random_batch(params, 9, old_shift=0.0)
    hp = HyperParams()
    g = objective_gradient(params, batch, hp)
    for s in batch:
        s.advantage /= 5
    assert np.allclose(objective_gradient(params, batch, hp), g / 5, atol=1e-15)


def test_context_descriptor_roundtrip_through_sample():
    params = PolicyParameters.zeros()
    res = GenerationResult("", "", [1, 2], [-math.log(V)] * 2, ContextDescriptor(GenerationMode.GENERATE, (4, 5)))
    s = TrainSample.from_results(params, [res], 0.5)
    assert s.feats.shape == (2, 3) and s.advantage == 0.5
