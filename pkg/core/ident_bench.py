"""
Bancada de identificabilidade do sistema SimuRec

Gera dados sintéticos a partir do processo gerador com latentes conhecidos,
treina o modelo de mundo sobre eles e mede a recuperação dos latentes:
componente a componente para o estado do usuário (MCC) e em bloco para o
contexto (R² de um regressor não linear).
"""
import os
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit, softmax
from scipy.stats import ortho_group
from sklearn.linear_model import Ridge
from sklearn.model_selection import KFold, cross_val_predict
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import PolynomialFeatures, StandardScaler
from tqdm import tqdm

from .config import BenchConfig, TrainConfig
from .data import (IdMap, InteractionRecord, LoggedDataset, PopularitySeries, SocialGraphSeries,
                   build_dataset)
from .errors import ContractError, SimuRecError
from .logger import LoggerManager, quiet_logger
from .tensor import Tensor
from .trainer import TrainerManager
from .utils import FileUtils, ReportUtils, SeedUtils
from .world_model import WorldModel, records_input

# Inclinação negativa das camadas de mistura
NEGATIVE_SLOPE = 0.2
MAX_REGENERATIONS = 10
TARGET_BASE_RATE = 0.5


class BenchError(SimuRecError):
    """Exceção personalizada para erros da bancada de identificabilidade"""
    pass


def _leaky(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, NEGATIVE_SLOPE * x)


@dataclass
class SyntheticProcess:
    """
    Processo gerador com latentes conhecidos

    ρ: s_t = 0.5·tanh(W s_{t−1} + λ·média dos vizinhos em G_t) + σ_{r_t} ⊙ ε
    g: logit = v_aᵀ mix([s^u; s^c]) + β·(M·z_t[a] − 1) + viés
    f_z: logits de popularidade giram por uma matriz ortogonal
    f_G: o grafo percorre `regimes` instantâneos distintos em ciclo
    """
    n_u: int
    n_c: int
    regimes: int
    n_items: int
    seed: int
    transition: np.ndarray
    social_weight: float
    noise_scales: np.ndarray
    mixing: List[np.ndarray]
    item_vectors: np.ndarray
    popularity_rotation: np.ndarray
    popularity_init: np.ndarray
    popularity_weight: float = 0.5
    bias: float = 0.0

    @classmethod
    def create(cls, n_u: int = 2, n_c: int = 2, regimes: int = 5, n_items: int = 20,
               seed: int = 0) -> "SyntheticProcess":
        """Sorteia as redes de mistura e as escalas de ruído por regime"""
        if min(n_u, n_c, regimes, n_items) < 1:
            raise ContractError("n_u, n_c, regimes e n_items devem ser positivos")
        rng = SeedUtils.make_rng(seed, 31)
        latent = n_u + n_c
        transition = rng.uniform(-1.0, 1.0, size=(n_u, n_u))
        transition /= max(np.abs(np.linalg.eigvals(transition)).max(), 1e-9) / 0.8
        mixing = [np.atleast_2d(ortho_group.rvs(latent, random_state=rng)) if latent > 1 else np.ones((1, 1))
                  for _ in range(2)]
        rotation = ortho_group.rvs(n_items, random_state=rng) if n_items > 1 else np.ones((1, 1))
        return cls(
            n_u=n_u, n_c=n_c, regimes=regimes, n_items=n_items, seed=seed,
            transition=transition,
            social_weight=0.3,
            noise_scales=rng.uniform(0.1, 1.0, size=(regimes, n_u)),
            mixing=mixing,
            item_vectors=rng.normal(0.0, 1.0, size=(n_items, latent)),
            popularity_rotation=np.atleast_2d(rotation),
            popularity_init=rng.normal(0.0, 1.0, size=n_items),
        )

    def mix(self, user_latents: np.ndarray, context: np.ndarray) -> np.ndarray:
        """Rede de mistura invertível por construção (ortogonal + leaky ReLU)"""
        h = np.concatenate([user_latents, context], axis=-1)
        for layer in self.mixing:
            h = _leaky(h) @ layer
        return h

    def is_injective(self, user_latents: np.ndarray, context: np.ndarray, decimals: int = 10) -> bool:
        """Latentes distintos devem produzir saídas distintas da mistura"""
        inputs = np.concatenate([user_latents, context], axis=-1)
        outputs = self.mix(user_latents, context)
        distinct_in = len(np.unique(np.round(inputs, decimals), axis=0))
        distinct_out = len(np.unique(np.round(outputs, decimals), axis=0))
        return distinct_in == distinct_out

    def regime_graphs(self, n_users: int, degree: int = 3) -> List[Dict[int, List[int]]]:
        """Um grafo aleatório por regime; com um único usuário não há arestas"""
        rng = SeedUtils.make_rng(self.seed, 32, n_users)
        graphs = []
        for _ in range(self.regimes):
            graph: Dict[int, List[int]] = {}
            for u in range(n_users):
                others = np.delete(np.arange(n_users), u)
                if len(others):
                    graph[u] = sorted(int(v) for v in rng.choice(others, size=min(degree, len(others)), replace=False))
            graphs.append(graph)
        return graphs

    def popularity_series(self, steps: int) -> np.ndarray:
        """z_t para t = 0..T−1 (uma distribuição sobre itens por linha)"""
        logits = [self.popularity_init]
        for _ in range(1, steps):
            logits.append(2.0 * np.tanh(self.popularity_rotation @ logits[-1]))
        return softmax(np.stack(logits), axis=1)


@dataclass
class SyntheticLatents:
    """Latentes verdadeiros retidos junto com os dados"""
    user_states: np.ndarray
    context: np.ndarray
    regimes: np.ndarray
    base_rate: float
    bias: float = 0.0


@dataclass
class RecoveryReport:
    """Escores de recuperação do modelo treinado e do codificador não treinado"""
    mcc: float
    block_r2: float
    baseline_mcc: float
    baseline_block_r2: float
    component_correlations: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ----------------------------------------------------------------------
# Geração
# ----------------------------------------------------------------------
def _calibrate_bias(logits: np.ndarray, target: float = TARGET_BASE_RATE,
                    low: float = -20.0, high: float = 20.0, iterations: int = 60) -> float:
    """Viés tal que a média de σ(logit + viés) seja `target` (bissecção)"""
    for _ in range(iterations):
        middle = 0.5 * (low + high)
        if expit(logits + middle).mean() < target:
            low = middle
        else:
            high = middle
    return 0.5 * (low + high)


def _rollout(process: SyntheticProcess, users: int, steps: int, graphs: List[Dict[int, List[int]]],
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    states = np.zeros((users, steps, process.n_u))
    regimes = np.arange(steps) % process.regimes
    context = rng.normal(0.0, 1.0, size=(users, process.n_c))
    for t in range(steps):
        noise = process.noise_scales[regimes[t]] * rng.normal(size=(users, process.n_u))
        if t == 0:
            states[:, 0] = noise
            continue
        previous = states[:, t - 1]
        graph = graphs[regimes[t]]
        neighbor_mean = np.stack([
            previous[graph[u]].mean(axis=0) if graph.get(u) else np.zeros(process.n_u) for u in range(users)
        ])
        drive = previous @ process.transition.T + process.social_weight * neighbor_mean
        states[:, t] = 0.5 * np.tanh(drive) + noise
    actions = rng.integers(0, process.n_items, size=(users, steps))
    return states, context, regimes, actions


def generate_synthetic(process: SyntheticProcess, users: int, steps: int) -> Tuple[LoggedDataset, SyntheticLatents]:
    """
    Rola o processo gerador: um registro por usuário e passo, ações uniformes

    O viés de g é calibrado por bissecção para uma taxa de positivos próxima de
    0.5; misturas degeneradas (saída constante, taxa fora de [0.2, 0.8] ou
    perda de injetividade) são sorteadas de novo com outra semente.

    Args:
        process (SyntheticProcess): Processo gerador
        users (int): Número de usuários
        steps (int): Passos T por usuário (>= 2)

    Returns:
        Tuple[LoggedDataset, SyntheticLatents]: Dados e latentes verdadeiros
    """
    if steps < 2:
        raise ContractError(f"T deve ser >= 2, recebido {steps}")
    if users < 1:
        raise ContractError("pelo menos um usuário é exigido")

    for attempt in range(MAX_REGENERATIONS):
        if attempt:
            process = SyntheticProcess.create(process.n_u, process.n_c, process.regimes, process.n_items,
                                              SeedUtils.derive_seed(process.seed, 33, attempt))
        rng = SeedUtils.make_rng(process.seed, 34, users, steps)
        graphs = process.regime_graphs(users)
        states, context, regimes, actions = _rollout(process, users, steps, graphs, rng)
        z = process.popularity_series(steps)

        flat_states = states.reshape(-1, process.n_u)
        flat_context = np.repeat(context, steps, axis=0)
        mixed = process.mix(flat_states, flat_context)
        flat_actions = actions.reshape(-1)
        flat_steps = np.tile(np.arange(steps), users)
        logits = np.einsum("ij,ij->i", process.item_vectors[flat_actions], mixed)
        logits += process.popularity_weight * (process.n_items * z[flat_steps, flat_actions] - 1.0)
        if logits.size > 1 and np.std(logits) < 1e-9:
            continue
        if not process.is_injective(flat_states, flat_context):
            continue
        process = replace(process, bias=_calibrate_bias(logits))
        feedback = (rng.random(logits.shape) < expit(logits + process.bias)).astype(np.int64)
        base_rate = float(feedback.mean())
        if logits.size >= 20 and not 0.2 <= base_rate <= 0.8:
            continue
        break
    else:
        raise BenchError(f"processo degenerado após {MAX_REGENERATIONS} tentativas")

    records = [
        InteractionRecord(u, int(actions[u, t]), int(feedback[u * steps + t]), t)
        for u in range(users) for t in range(steps)
    ]
    dataset = build_dataset(records, [], id_map=IdMap.identity(users, process.n_items), n_users=users,
                            n_items=process.n_items, n_buckets=steps, bucket_width=1, start=0)
    adjacency = [{u: set(graphs[r].get(u, [])) for u in range(users)} for r in regimes]
    neighbor_lists = [{u: list(graphs[r].get(u, [])) for u in range(users)} for r in regimes]
    dataset = replace(dataset, popularity=PopularitySeries(z),
                      social=SocialGraphSeries(adjacency=adjacency, neighbor_lists=neighbor_lists))
    return dataset, SyntheticLatents(user_states=states, context=context, regimes=regimes,
                                      base_rate=base_rate, bias=process.bias)


# ----------------------------------------------------------------------
# Escores
# ----------------------------------------------------------------------
def correlation_matrix(true: np.ndarray, estimated: np.ndarray) -> np.ndarray:
    """|Pearson| entre colunas verdadeiras e estimadas; colunas constantes valem 0"""
    def standardize(x: np.ndarray) -> np.ndarray:
        centered = x - x.mean(axis=0)
        scale = centered.std(axis=0)
        return np.divide(centered, scale, out=np.zeros_like(centered), where=scale > 1e-12)

    a, b = standardize(np.asarray(true, dtype=np.float64)), standardize(np.asarray(estimated, dtype=np.float64))
    return np.abs(a.T @ b / len(a))


def mean_correlation_coefficient(true: np.ndarray, estimated: np.ndarray) -> Tuple[float, List[float]]:
    """
    MCC: média das |correlações| após a atribuição um a um ótima

    Com mais colunas estimadas que verdadeiras, a atribuição escolhe as
    melhores colunas entre todas; o modelo e a referência recebem a mesma
    vantagem, registrada em `scoring` no recovery.json.

    Returns:
        Tuple[float, List[float]]: (MCC, correlação de cada componente verdadeiro)
    """
    corr = correlation_matrix(true, estimated)
    rows, cols = linear_sum_assignment(-corr)
    matched = np.zeros(corr.shape[0])
    matched[rows] = corr[rows, cols]
    return float(matched.mean()), matched.tolist()


def block_r2(true: np.ndarray, estimated: np.ndarray, folds: int = 5, degree: int = 2,
             alpha: float = 1e-3, seed: int = 0) -> float:
    """
    R² de prever o bloco verdadeiro a partir do estimado (ridge polinomial, validação cruzada)

    O R² é agregado sobre todas as componentes e limitado a [0, 1].
    """
    true = np.asarray(true, dtype=np.float64)
    estimated = np.asarray(estimated, dtype=np.float64)
    total = ((true - true.mean(axis=0)) ** 2).sum()
    if total <= 1e-12 or len(true) < 2:
        return 0.0
    splitter = KFold(n_splits=min(folds, len(true)), shuffle=True, random_state=seed)
    regressor = make_pipeline(StandardScaler(), PolynomialFeatures(degree), Ridge(alpha=alpha))
    predicted = cross_val_predict(regressor, estimated, true, cv=splitter)
    score = 1.0 - ((true - predicted) ** 2).sum() / total
    return float(np.clip(score, 0.0, 1.0))


def score_latents(true_user: np.ndarray, estimated_user: np.ndarray,
                  true_context: np.ndarray, estimated_context: np.ndarray) -> Tuple[float, float, List[float]]:
    """(MCC do estado do usuário, R² em bloco do contexto, correlações por componente)"""
    mcc, components = mean_correlation_coefficient(true_user, estimated_user)
    return mcc, block_r2(true_context, estimated_context), components


def estimate_latents(model: WorldModel, dataset: LoggedDataset, users: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    ŝ_t^u e ŝ^c dos usuários informados

    ŝ_t^u é o estado após o registro t; ŝ^c é a média da posterior de f_c sobre
    os passos t >= 1 do usuário.

    Returns:
        Tuple[np.ndarray, np.ndarray]: ([usuários·T, d], [usuários, d])
    """
    states = model.fold_states(dataset)
    user_rows, context_rows = [], []
    with model.inference():
        for u in users:
            n = len(dataset.user_records[u])
            user_rows.append(states[u][1:n + 1])
            if n < 2:
                context_rows.append(np.zeros(model.dim))
                continue
            previous = records_input(dataset, [(u, t - 1) for t in range(1, n)])
            posterior = model.context_encode(previous, Tensor(states[u][1:n]))
            context_rows.append(posterior.mu.data.mean(axis=0))
    return np.concatenate(user_rows, axis=0), np.stack(context_rows)


def score_recovery(model: WorldModel, dataset: LoggedDataset, latents: SyntheticLatents,
                   users: Sequence[int], baseline: Optional[WorldModel] = None) -> RecoveryReport:
    """
    Compara os latentes estimados pelo modelo treinado e por um não treinado

    Args:
        model (WorldModel): Modelo treinado nos dados sintéticos
        dataset (LoggedDataset): Dataset com as trajetórias de avaliação
        latents (SyntheticLatents): Latentes verdadeiros
        users (Sequence[int]): Usuários de avaliação (fora do treino)
        baseline (WorldModel, optional): Modelo de referência (padrão: mesma
            arquitetura e semente, sem treino)

    Returns:
        RecoveryReport: MCC e R² do modelo e da referência
    """
    users = list(users)
    if not users:
        raise ContractError("score_recovery exige pelo menos um usuário de avaliação")
    baseline = baseline or WorldModel(model.n_users, model.n_items, model.dim, model.droprate, model.seed)
    true_user = np.concatenate([latents.user_states[u, :len(dataset.user_records[u])] for u in users], axis=0)
    true_context = latents.context[users]

    estimated_user, estimated_context = estimate_latents(model, dataset, users)
    mcc, r2, components = score_latents(true_user, estimated_user, true_context, estimated_context)
    baseline_user, baseline_context = estimate_latents(baseline, dataset, users)
    base_mcc, base_r2, _ = score_latents(true_user, baseline_user, true_context, baseline_context)
    return RecoveryReport(mcc=mcc, block_r2=r2, baseline_mcc=base_mcc, baseline_block_r2=base_r2,
                          component_correlations=components)


# ----------------------------------------------------------------------
# Execução
# ----------------------------------------------------------------------
class BenchManager:
    """Gerenciador da bancada de identificabilidade"""

    def __init__(self, config: Optional[BenchConfig] = None, logger: Optional[LoggerManager] = None,
                 progress: bool = True):
        """
        Inicializa a bancada

        Args:
            config (BenchConfig, optional): Dimensões latentes, regimes, sementes e treino
            logger (LoggerManager, optional): Logger (padrão: silencioso)
            progress (bool): Exibe barras de progresso
        """
        self.config = config or BenchConfig()
        self.logger = logger or quiet_logger()
        self.progress = progress

    def _train_config(self, seed: int) -> TrainConfig:
        cfg = self.config
        return TrainConfig(lr=cfg.lr, batch_size=cfg.batch_size, dim=cfg.dim, k_c=cfg.k_c, seed=seed)

    def run_seed(self, seed: int) -> Tuple[RecoveryReport, float]:
        """
        Gera, treina e pontua uma semente

        Os últimos `held_out_fraction` usuários ficam fora do treino e são os
        usados na pontuação.

        Returns:
            Tuple[RecoveryReport, float]: Escores e taxa de positivos dos dados
        """
        cfg = self.config
        process = SyntheticProcess.create(cfg.n_u, cfg.n_c, cfg.regimes, cfg.items, seed)
        dataset, latents = generate_synthetic(process, cfg.users, cfg.steps)
        held_out = max(1, int(round(cfg.users * cfg.held_out_fraction)))
        if held_out >= cfg.users:
            raise BenchError(f"held_out_fraction deixa o treino vazio ({cfg.users} usuários)")
        evaluation_users = list(range(cfg.users - held_out, cfg.users))
        training = dataset.with_records([
            [] if u in evaluation_users else list(records) for u, records in enumerate(dataset.user_records)
        ])

        trainer = TrainerManager(self._train_config(seed), self.logger, progress=False)
        trainer.build_world_model(dataset)
        trainer.pretrain_world_model(training)
        report = score_recovery(trainer.world_model, dataset, latents, evaluation_users)
        return report, latents.base_rate

    def run(self, out_dir: Optional[str] = None, seeds: Optional[Sequence[int]] = None) -> Dict[str, Any]:
        """
        Executa todas as sementes e grava recovery.json

        Returns:
            Dict[str, Any]: Configuração, escores por semente e médias
        """
        cfg = self.config
        seeds = list(range(cfg.seeds)) if seeds is None else [int(s) for s in seeds]
        start = datetime.now()
        self.logger.info(f"Bancada: n_u={cfg.n_u} n_c={cfg.n_c} regimes={cfg.regimes} sementes={seeds}")
        per_seed = []
        for seed in tqdm(seeds, desc="Bancada", unit="seed", disable=not self.progress):
            try:
                report, base_rate = self.run_seed(seed)
            except SimuRecError as e:
                self.logger.error(f"Erro na bancada (seed {seed}): {e}")
                raise BenchError(f"Falha na bancada (seed {seed}): {e}") from e
            self.logger.metrics(f"seed={seed}:", {"mcc": report.mcc, "mcc_base": report.baseline_mcc,
                                                  "r2": report.block_r2, "r2_base": report.baseline_block_r2})
            per_seed.append({"seed": seed, "base_rate": base_rate, **report.to_dict()})

        metrics = ["mcc", "block_r2", "baseline_mcc", "baseline_block_r2"]
        result = {
            "config": asdict(cfg),
            "seeds": per_seed,
            "scoring": {
                "mcc_assignment": "rectangular",
                "true_user_dims": cfg.n_u,
                "estimated_user_dims": cfg.dim,
            },
            "mean": {name: float(np.mean([row[name] for row in per_seed])) for name in metrics},
            "summary": ReportUtils.generate_execution_summary(start, datetime.now(), len(per_seed), len(seeds)),
        }
        result["mean"]["mcc_gain"] = result["mean"]["mcc"] - result["mean"]["baseline_mcc"]
        if out_dir:
            path = FileUtils.write_json(os.path.join(out_dir, "recovery.json"), result)
            self.logger.info(f"Relatório de recuperação gravado em {path}")
        return result
