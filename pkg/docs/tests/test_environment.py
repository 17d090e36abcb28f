#!/usr/bin/env python3
"""
Testes do ambiente de avaliação (ground truth por fatoração com decaimento α^c)
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
from scipy.special import expit

from helpers import run_tests, tiny_dataset, tiny_env
from core.data import InteractionRecord, build_dataset
from core.environment import (EpisodeOverError, FitError, GroundTruthEnv, UnknownIdError,
                              fit_ground_truth, load_environment, save_environment)
from core.errors import ContractError


def test_accept_probability_without_exposure():
    env = tiny_env()
    u, a = env.user_embeddings[2], env.item_embeddings[5]
    assert env.accept_probability(2, 5) == float(expit(u @ a))


def test_orthogonal_embeddings_decay_by_alpha_squared():
    env = GroundTruthEnv(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]), alpha=0.9, horizon=4)
    env.step(0, 0)
    env.step(0, 0)
    assert np.isclose(env.accept_probability(0, 0), 0.405)


def test_decay_law_is_exact_per_repeat():
    env = tiny_env(alpha=0.7, horizon=6)
    first = env.accept_probability(1, 3)
    probs = [env.step(1, 3).accept_probability for _ in range(6)]
    assert probs[0] == first
    for k in range(1, 6):
        assert np.isclose(probs[k], 0.7 * probs[k - 1], rtol=0, atol=1e-15)
        assert probs[k] <= probs[k - 1]


def test_accept_probability_does_not_mutate():
    env = tiny_env()
    before = env.accept_probability(0, 0)
    env.accept_probability(0, 0)
    assert env.accept_probability(0, 0) == before
    assert env.exposure_counts == {}


def test_extreme_probabilities():
    sure = GroundTruthEnv(np.array([[10.0]]), np.array([[10.0]]), alpha=1.0, horizon=1)
    assert sure.step(0, 0).feedback == 1
    never = GroundTruthEnv(np.array([[10.0]]), np.array([[-10.0]]), alpha=1.0, horizon=1000, seed=1)
    hits = sum(never.step(0, 0).feedback for _ in range(1000))
    assert hits / 1000 < 0.01


def test_horizon_and_unknown_ids():
    env = tiny_env(horizon=2)
    env.step(0, 1)
    env.step(0, 2)
    try:
        env.step(0, 3)
        assert False, "esperado EpisodeOverError"
    except EpisodeOverError:
        pass
    env.step(1, 1)
    for call in (lambda: env.accept_probability(99, 0), lambda: env.step(0, -1)):
        try:
            call()
            assert False, "esperado UnknownIdError"
        except UnknownIdError:
            pass


def test_reset_is_per_user_and_idempotent():
    env = tiny_env(horizon=3)
    base_a, base_b = env.accept_probability(0, 4), env.accept_probability(1, 4)
    env.step(0, 4)
    env.step(1, 4)
    env.reset(0)
    env.reset(0)
    assert env.accept_probability(0, 4) == base_a
    assert np.isclose(env.accept_probability(1, 4), env.alpha * base_b)
    env.step(0, 4)
    env.step(0, 4)
    env.step(0, 4)


def test_seeded_transcripts_reproduce():
    def transcript():
        env = tiny_env(seed=4)
        rng = np.random.default_rng(11)
        return [(env.step(u, i, rng).feedback, env.accept_probability(u, i))
                for u, i in [(0, 1), (0, 1), (2, 3), (0, 5)]]
    assert transcript() == transcript()


def test_constructor_contracts():
    for kwargs in ({"alpha": 0.0}, {"alpha": 1.5}, {"horizon": -1}):
        try:
            GroundTruthEnv(np.ones((2, 2)), np.ones((3, 2)), **kwargs)
            assert False, "esperado ContractError"
        except ContractError:
            pass
    try:
        GroundTruthEnv(np.ones((2, 2)), np.ones((3, 3)))
        assert False, "esperado ContractError"
    except ContractError:
        pass


def test_fit_ranks_liked_item_first():
    records = [InteractionRecord(0, 0, 1, t) for t in range(0, 20, 2)]
    records += [InteractionRecord(0, 1, 0, t) for t in range(1, 20, 2)]
    dataset = build_dataset(records, [], n_users=1, n_items=2, n_buckets=2)
    env = fit_ground_truth(dataset, rank=2, epochs=200, lr=0.1, negatives=0, held_out_fraction=0.0)
    assert env.accept_probability(0, 0) > env.accept_probability(0, 1)


def test_fit_zero_epochs_and_determinism():
    dataset = tiny_dataset()
    init = np.random.default_rng(0).normal(0.0, 0.1, size=(dataset.n_users, 3))
    env = fit_ground_truth(dataset, rank=3, epochs=0, seed=0)
    assert np.array_equal(env.user_embeddings, init)
    a = fit_ground_truth(dataset, rank=3, epochs=5, seed=2)
    b = fit_ground_truth(dataset, rank=3, epochs=5, seed=2)
    assert np.array_equal(a.user_embeddings, b.user_embeddings)
    assert np.array_equal(a.item_embeddings, b.item_embeddings)


def test_fit_report_and_auc():
    dataset = tiny_dataset(users=10, items=12, records_per_user=16, seed=1)
    env = fit_ground_truth(dataset, rank=4, epochs=60, lr=0.05, seed=0)
    assert 0.0 < env.fit_report["base_rate"] < 1.0
    assert env.fit_report["held_out"] == int(dataset.n_records * 0.1)
    assert env.fit_report["auc"] is None or 0.0 <= env.fit_report["auc"] <= 1.0


def test_fit_errors():
    try:
        fit_ground_truth(tiny_dataset(), rank=0)
        assert False, "esperado ContractError"
    except ContractError:
        pass
    dataset = tiny_dataset()
    empty = dataset.with_records([[] for _ in range(dataset.n_users)])
    try:
        fit_ground_truth(empty)
        assert False, "esperado FitError"
    except FitError:
        pass


def test_environment_round_trip():
    env = tiny_env(alpha=0.8, horizon=5, seed=3)
    env.fit_report["auc"] = 0.7
    with tempfile.TemporaryDirectory() as tmp:
        save_environment(env, tmp)
        loaded = load_environment(tmp)
    assert np.array_equal(loaded.user_embeddings, env.user_embeddings)
    assert (loaded.alpha, loaded.horizon, loaded.seed) == (0.8, 5, 3)
    assert loaded.fit_report == {"auc": 0.7}


if __name__ == "__main__":
    print("🔧 TESTE: Ambiente de avaliação")
    print("=" * 50)
    sys.exit(run_tests(dict(globals())))
