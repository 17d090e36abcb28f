"""
Ambiente de avaliação do sistema SimuRec

Fatoração de matrizes logística de posto H ajustada sobre os logs, com
decaimento de interesse α^c por exposição repetida do mesmo item ao mesmo usuário.
"""
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit
from scipy.stats import mannwhitneyu
from tqdm import tqdm

from .data import LoggedDataset
from .errors import ContractError, SimuRecError
from .logger import LoggerManager

ENV_FORMAT = "simurec-env"
ENV_VERSION = 1


class SimulatorError(SimuRecError):
    """Exceção personalizada para erros do ambiente"""
    pass


class UnknownIdError(SimulatorError, KeyError):
    """Usuário ou item fora do catálogo do ambiente"""
    pass


class EpisodeOverError(SimulatorError):
    """Passo além do horizonte do episódio"""
    pass


class FitError(SimulatorError):
    """Falha no ajuste do ground truth"""
    pass


@dataclass(frozen=True)
class StepResult:
    """Resultado de uma recomendação: feedback amostrado e sua probabilidade"""
    feedback: int
    accept_probability: float


class GroundTruthEnv:
    """Usuários simulados por fatoração de matrizes com decaimento de interesse"""

    def __init__(self, user_embeddings: np.ndarray, item_embeddings: np.ndarray,
                 alpha: float = 0.9, horizon: int = 32, seed: int = 0,
                 fit_report: Optional[Dict[str, Any]] = None):
        """
        Inicializa o ambiente

        Args:
            user_embeddings (np.ndarray): u_g [N, H]
            item_embeddings (np.ndarray): a_g [M, H]
            alpha (float): Taxa de decaimento em (0, 1]
            horizon (int): Passos por episódio
            seed (int): Semente do gerador interno
            fit_report (Dict, optional): Diagnóstico do ajuste (AUC, taxa base)
        """
        self.user_embeddings = np.asarray(user_embeddings, dtype=np.float64)
        self.item_embeddings = np.asarray(item_embeddings, dtype=np.float64)
        if not 0.0 < alpha <= 1.0:
            raise ContractError(f"alpha deve estar em (0, 1], recebido {alpha}")
        if horizon < 0:
            raise ContractError(f"horizon não pode ser negativo, recebido {horizon}")
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ContractError("embeddings de usuário e item com postos diferentes")
        if not (np.all(np.isfinite(self.user_embeddings)) and np.all(np.isfinite(self.item_embeddings))):
            raise SimulatorError("embeddings do ground truth não finitos")
        self.alpha = alpha
        self.horizon = horizon
        self.seed = seed
        self.fit_report = dict(fit_report or {})
        self.rng = np.random.default_rng(seed)
        self.exposure_counts: Dict[Tuple[int, int], int] = {}
        self.episode_steps: Dict[int, int] = {}

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def rank(self) -> int:
        return self.user_embeddings.shape[1]

    def _check_ids(self, user: int, item: Optional[int] = None) -> None:
        if not 0 <= user < self.n_users:
            raise UnknownIdError(f"usuário desconhecido: {user}")
        if item is not None and not 0 <= item < self.n_items:
            raise UnknownIdError(f"item desconhecido: {item}")

    def base_probabilities(self, user: int) -> np.ndarray:
        """σ(u_gᵀa_g) para todos os itens, sem decaimento"""
        self._check_ids(user)
        return expit(self.item_embeddings @ self.user_embeddings[user])

    def base_rate(self) -> float:
        """Probabilidade média de aceitação do catálogo sem exposições"""
        return float(expit(self.user_embeddings @ self.item_embeddings.T).mean())

    def accept_probability(self, user: int, item: int) -> float:
        """
        σ(u_gᵀa_g) · α^c, com c o número de exposições atuais do par; não altera c

        Args:
            user (int): Usuário
            item (int): Item

        Returns:
            float: Probabilidade em [0, 1]
        """
        self._check_ids(user, item)
        base = float(expit(self.user_embeddings[user] @ self.item_embeddings[item]))
        return base * self.alpha ** self.exposure_counts.get((user, item), 0)

    def step(self, user: int, item: int, rng: Optional[np.random.Generator] = None) -> StepResult:
        """
        Recomenda um item: amostra o feedback e incrementa o contador de exposição

        Args:
            user (int): Usuário do episódio
            item (int): Item recomendado
            rng (np.random.Generator, optional): Gerador do episódio (padrão: o do ambiente)

        Returns:
            StepResult: Feedback e probabilidade usada
        """
        self._check_ids(user, item)
        if self.episode_steps.get(user, 0) >= self.horizon:
            raise EpisodeOverError(f"episódio do usuário {user} já atingiu o horizonte {self.horizon}")
        probability = self.accept_probability(user, item)
        feedback = int((rng or self.rng).random() < probability)
        self.exposure_counts[(user, item)] = self.exposure_counts.get((user, item), 0) + 1
        self.episode_steps[user] = self.episode_steps.get(user, 0) + 1
        return StepResult(feedback=feedback, accept_probability=probability)

    def reset(self, user: int) -> None:
        """Zera os contadores de exposição e de passos do usuário"""
        self._check_ids(user)
        for key in [k for k in self.exposure_counts if k[0] == user]:
            del self.exposure_counts[key]
        self.episode_steps.pop(user, None)

    def reset_all(self) -> None:
        self.exposure_counts.clear()
        self.episode_steps.clear()


# ----------------------------------------------------------------------
# Ajuste do ground truth
# ----------------------------------------------------------------------
def _held_out_auc(user_emb: np.ndarray, item_emb: np.ndarray, users: np.ndarray,
                  items: np.ndarray, labels: np.ndarray) -> Optional[float]:
    if len(labels) == 0 or labels.min() == labels.max():
        return None
    scores = np.sum(user_emb[users] * item_emb[items], axis=1)
    positives, negatives = scores[labels == 1], scores[labels == 0]
    statistic, _ = mannwhitneyu(positives, negatives, alternative="two-sided")
    return float(statistic / (len(positives) * len(negatives)))


def _sample_negatives(rng: np.random.Generator, users: np.ndarray, n_items: int,
                      liked: List[set], per_positive: int) -> Tuple[np.ndarray, np.ndarray]:
    """Negativos uniformes por positivo, excluindo os itens que o usuário aceitou"""
    if per_positive <= 0 or len(users) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    repeated = np.repeat(users, per_positive)
    candidates = rng.integers(0, n_items, size=len(repeated))
    keep = np.array([c not in liked[u] for u, c in zip(repeated, candidates)], dtype=bool)
    return repeated[keep], candidates[keep]


def fit_ground_truth(train: LoggedDataset, rank: int = 16, epochs: int = 50, lr: float = 0.05,
                     negatives: int = 4, l2: float = 1e-4, seed: int = 0, alpha: float = 0.9,
                     horizon: int = 32, held_out_fraction: float = 0.1, batch_size: int = 256,
                     logger: Optional[LoggerManager] = None) -> GroundTruthEnv:
    """
    Ajusta u_g e a_g por fatoração logística

    Maximiza Σ log σ(uᵀa) nos positivos e Σ log(1 − σ(uᵀa)) nos negativos logados e
    nos negativos amostrados (uniformes, excluindo positivos do usuário). Uma
    fração dos registros fica de fora para medir a AUC.

    Returns:
        GroundTruthEnv: Ambiente com o relatório de ajuste em `fit_report`
    """
    if rank < 1:
        raise ContractError(f"rank deve ser >= 1, recebido {rank}")
    records = train.records()
    if not records:
        raise FitError("dataset vazio: impossível ajustar o ground truth")

    rng = np.random.default_rng(seed)
    user_emb = rng.normal(0.0, 0.1, size=(train.n_users, rank))
    item_emb = rng.normal(0.0, 0.1, size=(train.n_items, rank))

    users = np.array([r.user_id for r in records], dtype=np.int64)
    items = np.array([r.item_id for r in records], dtype=np.int64)
    labels = np.array([r.feedback for r in records], dtype=np.float64)
    order = rng.permutation(len(records))
    n_held = int(len(records) * held_out_fraction) if len(records) >= 10 else 0
    held, fit = order[:n_held], order[n_held:]

    liked: List[set] = [set() for _ in range(train.n_users)]
    for u, i, y in zip(users[fit], items[fit], labels[fit]):
        if y == 1:
            liked[u].add(int(i))
    positive_users = users[fit][labels[fit] == 1]

    final_loss = float("nan")
    progress = tqdm(range(epochs), desc="Ajuste do ground truth", disable=logger is None, leave=False)
    for _ in progress:
        neg_users, neg_items = _sample_negatives(rng, positive_users, train.n_items, liked, negatives)
        batch_users = np.concatenate([users[fit], neg_users])
        batch_items = np.concatenate([items[fit], neg_items])
        batch_labels = np.concatenate([labels[fit], np.zeros(len(neg_users))])
        shuffle = rng.permutation(len(batch_labels))
        losses = []
        for start in range(0, len(shuffle), batch_size):
            idx = shuffle[start:start + batch_size]
            u, i, y = batch_users[idx], batch_items[idx], batch_labels[idx]
            logits = np.sum(user_emb[u] * item_emb[i], axis=1)
            error = expit(logits) - y
            grad_u = error[:, None] * item_emb[i] + l2 * user_emb[u]
            grad_i = error[:, None] * user_emb[u] + l2 * item_emb[i]
            np.add.at(user_emb, u, -lr * grad_u)
            np.add.at(item_emb, i, -lr * grad_i)
            losses.append(np.mean(np.logaddexp(0.0, logits * (1.0 - 2.0 * y))))
        final_loss = float(np.mean(losses)) if losses else final_loss
        if not np.isfinite(final_loss):
            raise FitError("perda do ajuste divergiu (NaN/inf)")

    held_users, held_items, held_labels = users[held], items[held], labels[held]
    sampled_users, sampled_items = _sample_negatives(
        rng, held_users[held_labels == 1], train.n_items, liked, 1
    )
    auc = _held_out_auc(
        user_emb, item_emb,
        np.concatenate([held_users, sampled_users]),
        np.concatenate([held_items, sampled_items]),
        np.concatenate([held_labels, np.zeros(len(sampled_users))]).astype(np.int64),
    )
    report = {
        "auc": auc,
        "base_rate": float(expit(user_emb @ item_emb.T).mean()),
        "train_loss": final_loss,
        "epochs": epochs,
        "held_out": int(n_held),
    }
    if logger:
        logger.metrics("Ground truth ajustado:", {k: v for k, v in report.items() if v is not None})
    return GroundTruthEnv(user_emb, item_emb, alpha=alpha, horizon=horizon, seed=seed, fit_report=report)


# ----------------------------------------------------------------------
# Persistência
# ----------------------------------------------------------------------
def save_environment(env: GroundTruthEnv, directory: str) -> str:
    """
    Grava env.json e embeddings.npz

    Returns:
        str: Caminho do env.json
    """
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "embeddings.npz"), "wb") as f:
        np.savez(f, user_embeddings=env.user_embeddings, item_embeddings=env.item_embeddings)
    meta = {
        "format": ENV_FORMAT,
        "version": ENV_VERSION,
        "n_users": env.n_users,
        "n_items": env.n_items,
        "rank": env.rank,
        "alpha": env.alpha,
        "horizon": env.horizon,
        "seed": env.seed,
        "embeddings": "embeddings.npz",
        "fit_report": env.fit_report,
    }
    path = os.path.join(directory, "env.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
        f.write("\n")
    return path


def load_environment(directory: str) -> GroundTruthEnv:
    """Lê um ambiente gravado por `save_environment`"""
    path = os.path.join(directory, "env.json")
    if not os.path.exists(path):
        raise SimulatorError(f"env.json não encontrado em {directory}")
    with open(path, "r", encoding="utf-8") as f:
        meta = json.load(f)
    if meta.get("format") != ENV_FORMAT or meta.get("version") != ENV_VERSION:
        raise SimulatorError(f"formato de ambiente não suportado em {directory}")
    with np.load(os.path.join(directory, meta["embeddings"]), allow_pickle=False) as archive:
        user_emb = archive["user_embeddings"].copy()
        item_emb = archive["item_embeddings"].copy()
    return GroundTruthEnv(user_emb, item_emb, alpha=meta["alpha"], horizon=meta["horizon"],
                          seed=meta["seed"], fit_report=meta.get("fit_report"))
