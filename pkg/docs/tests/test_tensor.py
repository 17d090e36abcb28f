#!/usr/bin/env python3
"""
Testes do motor de diferenciação reversa
"""

import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np

from helpers import run_tests
from core.errors import ContractError, DimensionError, DomainError
from core.tensor import (KL_OP, Parameter, Tensor, bernoulli_nll_logits, concat, count_ops,
                         gaussian_kl_std, gradient_check, stack)

TOLERANCE = 1e-4


def _param(shape, seed=0, scale=1.0):
    return Parameter(np.random.default_rng(seed).normal(scale=scale, size=shape))


def test_broadcast_add_mul_gradients():
    a, b = _param((3, 4), 1), _param((4,), 2)
    errors = gradient_check(lambda: ((a + b) * a - b).sum(), {"a": a, "b": b})
    assert max(errors.values()) < TOLERANCE, errors
    assert b.grad.shape == (4,)


def test_matmul_and_division_gradients():
    a, b = _param((2, 3, 4), 3), _param((4, 5), 4)
    c = Parameter(np.abs(np.random.default_rng(5).normal(size=(5,))) + 1.0)
    errors = gradient_check(lambda: ((a @ b) / c).tanh().mean(), {"a": a, "b": b, "c": c})
    assert max(errors.values()) < TOLERANCE, errors


def test_vector_left_matmul_gradient():
    v, w = _param((4,), 6), _param((4, 3), 7)
    errors = gradient_check(lambda: (v @ w).sigmoid().sum(), {"v": v, "w": w})
    assert max(errors.values()) < TOLERANCE, errors


def test_elementwise_chain_gradients():
    x = _param((3, 5), 8)
    errors = gradient_check(lambda: (x.exp().log() * x).softplus().sum() + x.pow(3).mean(), {"x": x})
    assert errors["x"] < TOLERANCE


def test_softmax_rows_and_gradient():
    x = _param((4, 6), 9)
    probs = x.softmax(axis=-1)
    assert np.allclose(probs.data.sum(axis=-1), 1.0)
    weights = np.random.default_rng(10).normal(size=(4, 6))
    errors = gradient_check(lambda: (x.softmax(axis=-1) * weights).sum(), {"x": x})
    assert errors["x"] < TOLERANCE


def test_take_accumulates_repeated_rows():
    table = _param((5, 3), 11)
    out = table.take(np.array([1, 1, 4]))
    out.sum().backward()
    assert np.allclose(table.grad[1], 2.0)
    assert np.allclose(table.grad[4], 1.0)
    assert np.allclose(table.grad[0], 0.0)


def test_take_out_of_range_raises():
    table = _param((5, 3), 12)
    try:
        table.take(np.array([5]))
        assert False, "esperado DimensionError"
    except DimensionError:
        pass


def test_concat_stack_getitem_gradients():
    a, b = _param((2, 3), 13), _param((2, 2), 14)
    errors = gradient_check(lambda: concat([a, b], axis=-1).tanh().sum()
                            + stack([a, a], axis=0)[1, :, 0].sum(), {"a": a, "b": b})
    assert max(errors.values()) < TOLERANCE, errors


def test_clamp_max_blocks_gradient_above_bound():
    x = Parameter(np.array([1.0, 800.0]))
    x.clamp_max(700.0).sum().backward()
    assert x.grad.tolist() == [1.0, 0.0]


def test_gaussian_kl_properties():
    assert gaussian_kl_std(np.zeros(4), np.ones(4)).item() == 0.0
    rng = np.random.default_rng(15)
    for _ in range(50):
        mu = rng.normal(size=(3, 4))
        sigma = np.exp(rng.normal(size=(3, 4)))
        assert np.all(gaussian_kl_std(mu, sigma).data >= 0.0)
    mu, sigma = _param((2, 3), 16), Parameter(np.full((2, 3), 0.7))
    errors = gradient_check(lambda: gaussian_kl_std(mu, sigma).sum(), {"mu": mu, "sigma": sigma})
    assert max(errors.values()) < TOLERANCE, errors


def test_gaussian_kl_matches_monte_carlo():
    mu, sigma = np.array([0.5, -1.0, 0.0]), np.array([0.7, 1.5, 0.2])
    eps = np.random.default_rng(19).normal(size=(1_000_000, 3))
    z = mu + sigma * eps
    # log q(z) − log p(z); as constantes de normalização se cancelam
    log_ratio = (-np.log(sigma) - 0.5 * eps ** 2 + 0.5 * z ** 2).sum(axis=1)
    estimate = log_ratio.mean()
    standard_error = log_ratio.std() / np.sqrt(len(log_ratio))
    assert abs(estimate - gaussian_kl_std(mu, sigma).item()) < 3.0 * standard_error


def test_unused_parameters_get_zero_gradient():
    used, unused, other = _param((3, 2), 20), _param((2, 2), 21), _param((2,), 22)
    hidden = used.tanh() @ unused
    # `unused` entra no grafo só com peso nulo; `lonely` nem entra
    loss = (used * used).sum() + other.sum() + hidden.sum() * 0.0
    loss.backward()
    assert np.any(used.grad != 0.0)
    assert np.array_equal(other.grad, np.ones(2))
    assert np.array_equal(unused.grad, np.zeros((2, 2)))
    lonely = _param((4,), 23)
    (used * 2.0).sum().backward()
    assert np.array_equal(lonely.grad, np.zeros(4))


def test_gaussian_kl_rejects_non_positive_sigma():
    try:
        gaussian_kl_std(np.zeros(2), np.array([1.0, 0.0]))
        assert False, "esperado DomainError"
    except DomainError:
        pass


def test_kl_node_is_tagged():
    mu, sigma = _param((2, 3), 17), Parameter(np.ones((2, 3)))
    loss = gaussian_kl_std(mu, sigma).mean() + (mu * mu).sum()
    assert count_ops(loss, KL_OP) == 1


def test_bernoulli_nll_matches_closed_form():
    logits = np.array([-3.0, 0.0, 2.5, 40.0])
    targets = np.array([1, 0, 1, 0])
    expected = -np.where(targets == 1, np.log(1 / (1 + np.exp(-logits))), np.log(1 - 1 / (1 + np.exp(-logits))))
    got = bernoulli_nll_logits(Tensor(logits), targets).data
    assert np.allclose(got[:3], expected[:3])
    assert np.isclose(got[3], 40.0)


def test_backward_requires_scalar():
    x = _param((2,), 18)
    try:
        (x * 2.0).backward()
        assert False, "esperado ContractError"
    except ContractError:
        pass


def test_log_domain_and_matmul_shapes():
    try:
        Tensor(np.array([1.0, -1.0])).log()
        assert False, "esperado DomainError"
    except DomainError:
        pass
    try:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
        assert False, "esperado DimensionError"
    except DimensionError:
        pass


def test_shared_subgraph_gradient_accumulates():
    x = Parameter(np.array([2.0]))
    y = x * x
    (y + y).sum().backward()
    assert np.allclose(x.grad, [8.0])


if __name__ == "__main__":
    print("🔧 TESTE: Motor numérico (Tensor)")
    print("=" * 50)
    sys.exit(run_tests(dict(globals())))
