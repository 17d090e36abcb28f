"""
Módulo de avaliação do sistema SimuRec

Episódios interativos contra o ambiente ground truth, métricas online
(HR@K, NDCG@K, diversidade, F-measure, recompensa acumulada), execução das
variantes de comparação e emissão de relatórios.
"""
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .config import EvalConfig, TrainConfig
from .data import LoggedDataset
from .environment import GroundTruthEnv
from .errors import ConfigError, ContractError, SimuRecError
from .logger import LoggerManager, quiet_logger
from .policy import QPolicy
from .trainer import TrainerManager
from .utils import FileUtils, ReportUtils, SeedUtils

VARIANTS = ("dmir", "dmir-d", "dqn-naive-neg", "dqn+wm", "random")

REPORT_FORMAT = "simurec-report"

# Linhas de referência do método completo nos três conjuntos públicos (só exibição)
REFERENCE_ROWS = {
    "Ciao": {"f_measure": 0.4076, "diversity": 0.3440, "hr@20": 0.5000, "hr@50": 0.3722,
             "ndcg@20": 0.5244, "ndcg@50": 0.4183},
    "Epinions": {"f_measure": 0.5176, "diversity": 0.4727, "hr@20": 0.5719, "hr@50": 0.5203,
                 "ndcg@20": 0.5794, "ndcg@50": 0.5379},
    "Yelp": {"f_measure": 0.4546, "diversity": 0.3523, "hr@20": 0.6406, "hr@50": 0.6057,
             "ndcg@20": 0.6306, "ndcg@50": 0.6091},
}


class EvaluationError(SimuRecError):
    """Exceção personalizada para erros de avaliação"""
    pass


@dataclass
class EpisodeLog:
    """Transcrição de um episódio: (item, probabilidade de aceite, feedback) por passo"""
    user: int
    seed: int
    steps: List[Tuple[int, float, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def items(self) -> List[int]:
        return [item for item, _, _ in self.steps]

    @property
    def feedback(self) -> List[int]:
        return [y for _, _, y in self.steps]


# ----------------------------------------------------------------------
# Métricas
# ----------------------------------------------------------------------
def _check_k(k: int) -> None:
    if k <= 0:
        raise ContractError(f"K deve ser positivo, recebido {k}")


def hr_at_k(logs: Sequence[EpisodeLog], k: int) -> float:
    """
    Fração de recomendações aceitas nos primeiros K passos, média por usuário

    Episódios mais curtos que K usam o episódio inteiro como denominador.
    """
    _check_k(k)
    scores = []
    for log in logs:
        head = log.feedback[:k]
        if head:
            scores.append(sum(head) / len(head))
    return float(np.mean(scores)) if scores else 0.0


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(logs: Sequence[EpisodeLog], k: int) -> float:
    """
    DCG@K com ganho = feedback, normalizado pelo DCG ideal do número de acertos

    Usuários sem acerto contribuem com 0.
    """
    _check_k(k)
    scores = []
    for log in logs:
        head = np.asarray(log.feedback[:k], dtype=np.float64)
        if len(head) == 0:
            continue
        discounts = _discounts(len(head))
        hits = int(head.sum())
        if hits == 0:
            scores.append(0.0)
            continue
        scores.append(float(head @ discounts) / float(discounts[:hits].sum()))
    return float(np.mean(scores)) if scores else 0.0


def diversity(logs: Sequence[EpisodeLog]) -> float:
    """Itens distintos recomendados / total de recomendações, média por usuário"""
    scores = [len(set(log.items)) / len(log) for log in logs if len(log)]
    return float(np.mean(scores)) if scores else 0.0


def f_measure(hr: float, div: float) -> float:
    """Média harmônica entre hit ratio e diversidade"""
    if hr + div == 0:
        return 0.0
    return 2.0 * hr * div / (hr + div)


def cumulative_reward_curve(logs: Sequence[EpisodeLog]) -> List[float]:
    """Recompensa acumulada média por passo (aceites somados até o passo)"""
    if not logs:
        return []
    horizon = max(len(log) for log in logs)
    matrix = np.zeros((len(logs), horizon))
    for row, log in enumerate(logs):
        matrix[row, :len(log)] = log.feedback
    return np.cumsum(matrix, axis=1).mean(axis=0).tolist()


def episode_metrics(logs: Sequence[EpisodeLog], ks: Sequence[int]) -> Dict[str, float]:
    """
    Todas as métricas de um conjunto de episódios, em ordem fixa de campos

    O F-measure combina a diversidade com o HR do primeiro K informado.
    """
    if not ks:
        raise ContractError("pelo menos um K é exigido")
    metrics: Dict[str, float] = {}
    for k in ks:
        metrics[f"hr@{k}"] = hr_at_k(logs, k)
    for k in ks:
        metrics[f"ndcg@{k}"] = ndcg_at_k(logs, k)
    metrics["diversity"] = diversity(logs)
    metrics["f_measure"] = f_measure(metrics[f"hr@{ks[0]}"], metrics["diversity"])
    curve = cumulative_reward_curve(logs)
    metrics["cumulative_reward"] = curve[-1] if curve else 0.0
    return metrics


# ----------------------------------------------------------------------
# Relatório
# ----------------------------------------------------------------------
@dataclass
class MetricReport:
    """
    Resultado de uma avaliação

    `rows` tem uma linha por (variante, seed); `summary` guarda média e desvio
    padrão por variante; `curves` a recompensa acumulada média por passo.
    """
    ks: List[int]
    horizon: int
    users: int
    seeds: List[int]
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Dict[str, Dict[str, float]]] = field(default_factory=dict)
    curves: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)

    @property
    def variants(self) -> List[str]:
        return list(dict.fromkeys(row["variant"] for row in self.rows))

    def metric_names(self) -> List[str]:
        if not self.rows:
            return []
        return [key for key in self.rows[0] if key not in ("variant", "seed")]

    def add(self, variant: str, seed: int, metrics: Dict[str, float], curve: List[float]) -> None:
        self.rows.append({"variant": variant, "seed": int(seed), **metrics})
        self.curves.setdefault(variant, {})[str(seed)] = [float(v) for v in curve]

    def summarize(self) -> None:
        """Média e desvio padrão (populacional) de cada métrica por variante"""
        frame = pd.DataFrame(self.rows)
        self.summary = {}
        for variant in self.variants:
            part = frame[frame["variant"] == variant]
            self.summary[variant] = {
                name: {"mean": float(part[name].mean()), "std": float(part[name].std(ddof=0))}
                for name in self.metric_names()
            }

    def mean(self, variant: str, metric: str) -> float:
        return self.summary[variant][metric]["mean"]

    def to_dict(self) -> Dict[str, Any]:
        return {"format": REPORT_FORMAT, "version": 1, **asdict(self)}

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "MetricReport":
        if values.get("format") != REPORT_FORMAT:
            raise EvaluationError(f"formato de relatório desconhecido: {values.get('format')}")
        return cls(
            ks=[int(k) for k in values["ks"]],
            horizon=int(values["horizon"]),
            users=int(values["users"]),
            seeds=[int(s) for s in values["seeds"]],
            rows=list(values["rows"]),
            summary=dict(values["summary"]),
            curves=dict(values["curves"]),
        )


def emit_report(report: MetricReport, out_dir: str, formats: Sequence[str] = ("json", "csv")) -> Dict[str, str]:
    """
    Grava o relatório e a curva de recompensa acumulada

    Args:
        report (MetricReport): Relatório a gravar
        out_dir (str): Diretório de saída
        formats (Sequence[str]): Subconjunto de {json, csv}

    Returns:
        Dict[str, str]: Formato -> caminho gravado (inclui sempre `curves`)
    """
    unknown = set(formats) - {"json", "csv"}
    if unknown:
        raise ContractError(f"formato de relatório inválido: {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    paths: Dict[str, str] = {}
    if "json" in formats:
        paths["json"] = FileUtils.write_json(os.path.join(out_dir, "report.json"), report.to_dict())
    if "csv" in formats:
        paths["csv"] = os.path.join(out_dir, "report.csv")
        columns = ["variant", "seed"] + report.metric_names()
        pd.DataFrame(report.rows, columns=columns).to_csv(paths["csv"], index=False)
    curve_rows = [(variant, int(seed), step + 1, value)
                  for variant, by_seed in report.curves.items()
                  for seed, curve in by_seed.items()
                  for step, value in enumerate(curve)]
    paths["curves"] = os.path.join(out_dir, "curves.csv")
    pd.DataFrame(curve_rows, columns=["variant", "seed", "step", "cumulative_reward"]).to_csv(
        paths["curves"], index=False)
    return paths


def load_report(path: str) -> MetricReport:
    """Lê um report.json"""
    with open(path, "r", encoding="utf-8") as f:
        return MetricReport.from_dict(json.load(f))


def format_report_table(report: MetricReport, references: bool = True) -> str:
    """
    Tabela no formato F-measure / Diversity / HR@K / NDCG@K (média ± desvio)

    As linhas de referência servem apenas para comparação visual.
    """
    columns = ["f_measure", "diversity"] + [f"hr@{k}" for k in report.ks] + [f"ndcg@{k}" for k in report.ks]
    headers = ["Variante", "F-measure", "Diversity"] + [f"HR@{k}" for k in report.ks] + \
              [f"NDCG@{k}" for k in report.ks] + ["Recompensa"]
    rows = []
    for variant in report.summary:
        stats = report.summary[variant]
        cells = [f"{stats[c]['mean']:.4f} ± {stats[c]['std']:.4f}" for c in columns]
        reward = stats["cumulative_reward"]
        rows.append([variant] + cells + [f"{reward['mean']:.2f} ± {reward['std']:.2f}"])
    if references:
        for dataset_name, values in REFERENCE_ROWS.items():
            rows.append([f"referência {dataset_name}"] +
                        [f"{values[c]:.4f}" if c in values else "-" for c in columns] + ["-"])
    return ReportUtils.format_table(rows, headers)


# ----------------------------------------------------------------------
# Execução
# ----------------------------------------------------------------------
class EvaluationManager:
    """Gerenciador de avaliação online das variantes"""

    def __init__(self, train_config: TrainConfig, eval_config: Optional[EvalConfig] = None,
                 logger: Optional[LoggerManager] = None, progress: bool = True):
        """
        Inicializa o gerenciador de avaliação

        Args:
            train_config (TrainConfig): Hiperparâmetros de treino das variantes
            eval_config (EvalConfig, optional): Protocolo (variantes, seeds, K, usuários, horizonte)
            logger (LoggerManager, optional): Logger (padrão: silencioso)
            progress (bool): Se deve exibir barras de progresso
        """
        self.train_config = train_config
        self.eval_config = eval_config or EvalConfig()
        self.logger = logger or quiet_logger()
        self.progress = progress

    def _horizon(self, env: GroundTruthEnv, horizon: Optional[int]) -> int:
        horizon = horizon or self.eval_config.horizon or env.horizon
        if horizon > env.horizon:
            raise ContractError(f"horizonte {horizon} excede o do ambiente ({env.horizon})")
        return horizon

    def _users(self, dataset: LoggedDataset, users: Optional[Sequence[int]]) -> List[int]:
        if users is not None:
            return [int(u) for u in users]
        limit = self.eval_config.users
        return list(range(dataset.n_users if limit is None else min(limit, dataset.n_users)))

    def rollout(self, policy: Optional[QPolicy], env: GroundTruthEnv, dataset: LoggedDataset,
                users: Sequence[int], horizon: int, seed: int) -> List[EpisodeLog]:
        """
        Um episódio por usuário; política gulosa, ou uniforme quando `policy` é None

        O histórico inicial de cada usuário é o seu histórico logado. Cada par
        (seed, usuário) tem o seu próprio gerador, então a ordem dos usuários
        não altera as transcrições.
        """
        users = list(users)
        rngs = [SeedUtils.make_rng(seed, 7, user) for user in users]
        memory = policy.memory_size if policy is not None else self.train_config.memory_size
        histories = [tuple((r.item_id, r.feedback) for r in dataset.user_records[u])[-memory:] for u in users]
        logs = [EpisodeLog(user=user, seed=seed) for user in users]
        for user in users:
            env.reset(user)
        for _ in range(horizon):
            if policy is None:
                actions = [int(rng.integers(0, env.n_items)) for rng in rngs]
            else:
                o = policy.encode(histories, users).data
                actions = [int(a) for a in np.argmax(policy.q_values(o), axis=1)]
            for row, user in enumerate(users):
                result = env.step(user, actions[row], rngs[row])
                logs[row].steps.append((actions[row], result.accept_probability, result.feedback))
                histories[row] = (histories[row] + ((actions[row], result.feedback),))[-memory:]
        for user in users:
            env.reset(user)
        return logs

    def train(self, variant: str, dataset: LoggedDataset, seed: int,
              out_dir: Optional[str] = None) -> Optional[QPolicy]:
        """Treina a política da variante com a semente informada (None para `random`)"""
        trainer = TrainerManager(self.train_config.with_seed(seed), self.logger, progress=False)
        policy, _ = trainer.train_variant(variant, dataset, out_dir)
        if policy is not None:
            policy.eval()
        return policy

    def run_eval(self, variants: Sequence[str], env: GroundTruthEnv, dataset: LoggedDataset,
                 seeds: Optional[Sequence[int]] = None, users: Optional[Sequence[int]] = None,
                 horizon: Optional[int] = None, ks: Optional[Sequence[int]] = None,
                 out_dir: Optional[str] = None) -> MetricReport:
        """
        Treina e avalia cada variante em cada semente

        Args:
            variants (Sequence[str]): Variantes (dmir, dmir-d, dqn-naive-neg, dqn+wm, random)
            env (GroundTruthEnv): Ambiente ajustado
            dataset (LoggedDataset): Dados de treino (mesmo catálogo do ambiente)
            seeds (Sequence[int], optional): Sementes (padrão: 0..seeds-1 da configuração)
            users (Sequence[int], optional): Usuários avaliados
            horizon (int, optional): Passos por episódio
            ks (Sequence[int], optional): Cortes de HR/NDCG
            out_dir (str, optional): Diretório para os artefatos de treino por variante/semente

        Returns:
            MetricReport: Linhas por (variante, semente) e resumo por variante
        """
        unknown = [v for v in variants if v not in VARIANTS]
        if unknown:
            raise ConfigError(f"variante desconhecida: {', '.join(unknown)}")
        if env.n_items != dataset.n_items or env.n_users != dataset.n_users:
            raise EvaluationError(
                f"ambiente ({env.n_users}×{env.n_items}) e dataset "
                f"({dataset.n_users}×{dataset.n_items}) têm dimensões diferentes"
            )
        seeds = list(range(self.eval_config.seeds)) if seeds is None else [int(s) for s in seeds]
        ks = list(ks or self.eval_config.k)
        for k in ks:
            _check_k(k)
        horizon = self._horizon(env, horizon)
        users = self._users(dataset, users)

        report = MetricReport(ks=ks, horizon=horizon, users=len(users), seeds=seeds)
        jobs = [(variant, seed) for variant in variants for seed in seeds]
        for variant, seed in tqdm(jobs, desc="Avaliação", unit="exec", disable=not self.progress):
            run_dir = os.path.join(out_dir, "runs", f"{variant}-seed{seed}") if out_dir else None
            try:
                policy = self.train(variant, dataset, seed, run_dir)
                logs = self.rollout(policy, env, dataset, users, horizon, seed)
            except SimuRecError as e:
                self.logger.error(f"Erro avaliando {variant} (seed {seed}): {e}")
                raise EvaluationError(f"Falha na avaliação de {variant} (seed {seed}): {e}") from e
            metrics = episode_metrics(logs, ks)
            report.add(variant, seed, metrics, cumulative_reward_curve(logs))
            self.logger.metrics(f"{variant} seed={seed}:", metrics)
        report.summarize()
        return report
