"""
Utilitários compartilhados pelos testes do SimuRec

Datasets e configurações pequenas, logs de episódio montados à mão e um
executor simples para rodar cada arquivo de teste como script.
"""

import os
import sys
import traceback

# Adiciona o diretório root ao path
ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import numpy as np

from core.config import BenchConfig, TrainConfig
from core.data import generate_logged_dataset
from core.environment import GroundTruthEnv
from core.evaluation import EpisodeLog


def tiny_dataset(users: int = 6, items: int = 12, buckets: int = 4, records_per_user: int = 8, seed: int = 0):
    """Dataset sintético mínimo (2 registros por usuário e bucket por padrão)"""
    return generate_logged_dataset(n_users=users, n_items=items, n_buckets=buckets,
                                   records_per_user=records_per_user, latent_dim=4,
                                   communities=2, seed=seed)


def tiny_train_config(**overrides) -> TrainConfig:
    """Hiperparâmetros reduzidos para rodar o ciclo completo em segundos"""
    values = dict(
        lr=0.01, batch_size=16, buffer_size=400, update_size=16, gamma=0.9, target_update=4,
        droprate=0.1, dim=8, memory_size=5, k_c=6, k_q=6, episodes=2, horizon=4, seed=0,
        n_samples=2, state_refresh=3,
    )
    values.update(overrides)
    return TrainConfig(**values)


def tiny_bench_config(**overrides) -> BenchConfig:
    values = dict(users=24, steps=6, items=8, dim=4, k_c=20, batch_size=32, lr=0.01, seeds=1)
    values.update(overrides)
    return BenchConfig(**values)


def tiny_env(users: int = 6, items: int = 12, rank: int = 3, alpha: float = 0.5,
             horizon: int = 8, seed: int = 0) -> GroundTruthEnv:
    """Ambiente com embeddings sorteados, sem ajuste"""
    rng = np.random.default_rng(seed)
    return GroundTruthEnv(rng.normal(size=(users, rank)), rng.normal(size=(items, rank)),
                          alpha=alpha, horizon=horizon, seed=seed)


def make_log(items, feedback, user: int = 0, seed: int = 0) -> EpisodeLog:
    """Log de episódio montado à mão (probabilidade de aceite igual ao feedback)"""
    return EpisodeLog(user=user, seed=seed,
                      steps=[(int(i), float(y), int(y)) for i, y in zip(items, feedback)])


def run_tests(namespace: dict) -> int:
    """
    Executa as funções test_* de um módulo e imprime o resultado de cada uma

    Returns:
        int: Código de saída (0 se todos passarem)
    """
    tests = [(name, fn) for name, fn in namespace.items() if name.startswith("test_") and callable(fn)]
    failures = 0
    for name, fn in tests:
        try:
            fn()
            print(f"✅ {name}")
        except Exception:
            failures += 1
            print(f"❌ {name}")
            traceback.print_exc()
    print("=" * 50)
    print(f"{len(tests) - failures}/{len(tests)} testes passaram")
    return 1 if failures else 0
