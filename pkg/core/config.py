"""
Módulo de configuração do sistema SimuRec
"""
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Type, TypeVar

from dotenv import load_dotenv

from .errors import ConfigError
from .utils import ValidationUtils

T = TypeVar("T")

# ε inicial por perfil de dataset (única diferença entre os três perfis)
EPSILON_START_BY_PROFILE = {
    "ciao": 0.3,
    "epinions": 0.5,
    "yelp": 0.7,
}


def _section_from_dict(cls: Type[T], values: Optional[Dict[str, Any]], section: str) -> T:
    """Cria a dataclass da seção rejeitando chaves desconhecidas"""
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"Chaves desconhecidas na seção '{section}': {unknown}")
    return cls(**values)


@dataclass
class DataConfig:
    """Origem e pré-processamento do dataset de logs"""
    path: Optional[str] = None
    threshold: float = 4.0
    smoothing: float = 1.0
    n_buckets: int = 12
    bucket_width: Optional[int] = None
    max_neighbors: int = 50
    undirected: bool = True
    split_ratio: float = 0.8
    users: int = 50
    items: int = 100
    seed: int = 0


@dataclass
class EnvConfig:
    """Ambiente de avaliação (fatoração de matrizes com decaimento de interesse)"""
    path: Optional[str] = None
    rank: int = 16
    alpha: float = 0.9
    horizon: int = 32
    epochs: int = 50
    lr: float = 0.05
    negatives: int = 4
    l2: float = 1e-4
    seed: int = 0


@dataclass
class TrainConfig:
    """Hiperparâmetros do treinamento (padrões da tabela de hiperparâmetros)"""
    lr: float = 0.001
    batch_size: int = 1024
    buffer_size: int = 50000
    update_size: int = 10000
    gamma: float = 0.95
    target_update: int = 1000
    droprate: float = 0.3
    dim: int = 64
    memory_size: int = 20
    profile: str = "ciao"
    epsilon_start: Optional[float] = None
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.8
    k_c: int = 2000
    k_q: int = 1000
    episodes: int = 10
    horizon: int = 32
    seed: int = 0
    n_samples: int = 8
    state_refresh: int = 50
    double_dqn: bool = True
    reward_mode: str = "probability"
    convergence_tolerance: float = 0.01
    convergence_patience: int = 3
    weight_decay: float = 0.0
    grad_clip: Optional[float] = 5.0

    def __post_init__(self):
        if self.epsilon_start is None:
            if self.profile not in EPSILON_START_BY_PROFILE:
                raise ConfigError(
                    f"Perfil '{self.profile}' sem epsilon_start padrão; informe epsilon_start explicitamente"
                )
            self.epsilon_start = EPSILON_START_BY_PROFILE[self.profile]

    def with_seed(self, seed: int) -> "TrainConfig":
        values = asdict(self)
        values["seed"] = seed
        return TrainConfig(**values)


@dataclass
class EvalConfig:
    """Protocolo de avaliação"""
    variants: List[str] = field(default_factory=lambda: ["dmir"])
    seeds: int = 5
    k: List[int] = field(default_factory=lambda: [20, 50])
    users: Optional[int] = None
    horizon: Optional[int] = None


@dataclass
class BenchConfig:
    """Bancada sintética de identificabilidade"""
    n_u: int = 2
    n_c: int = 2
    regimes: int = 5
    seeds: int = 3
    users: int = 200
    steps: int = 20
    items: int = 20
    dim: int = 8
    k_c: int = 400
    batch_size: int = 256
    lr: float = 0.005
    held_out_fraction: float = 0.25


@dataclass
class PathsConfig:
    """Diretórios de saída"""
    logs: str = "logs"
    runs: str = "runs"


class ConfigManager:
    """Gerenciador de configurações do sistema"""

    SECTIONS = {
        "data": DataConfig,
        "environment": EnvConfig,
        "training": TrainConfig,
        "evaluation": EvalConfig,
        "bench": BenchConfig,
        "paths": PathsConfig,
    }

    def __init__(self, config_path: Optional[str] = "config.json"):
        """
        Inicializa o gerenciador de configurações

        Args:
            config_path (str, optional): Caminho do JSON; None usa apenas os padrões
        """
        load_dotenv()
        self.config_path = config_path
        self._config: Dict[str, Any] = {}
        self._load_config()

    def _load_config(self) -> None:
        """Carrega as configurações do arquivo JSON"""
        if self.config_path is None:
            return
        if not os.path.exists(self.config_path):
            raise ConfigError(f"Arquivo de configuração não encontrado: {self.config_path}")
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self._config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Erro ao decodificar arquivo de configuração: {e}")

        self._validate()

    def _validate(self) -> None:
        """Rejeita seções desconhecidas e hiperparâmetros inválidos"""
        unknown = sorted(set(self._config) - set(self.SECTIONS))
        if unknown:
            raise ConfigError(f"Seções desconhecidas na configuração: {unknown}")

        problems = ValidationUtils.validate_train_config(self.get_train_config())
        if problems:
            raise ConfigError("Configuração de treinamento inválida: " + "; ".join(problems))

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> "ConfigManager":
        """Cria um gerenciador a partir de um dicionário já carregado"""
        manager = cls(config_path=None)
        manager._config = dict(values)
        manager._validate()
        return manager

    def _section(self, name: str):
        return _section_from_dict(self.SECTIONS[name], self._config.get(name), name)

    def get_data_config(self) -> DataConfig:
        return self._section("data")

    def get_env_config(self) -> EnvConfig:
        return self._section("environment")

    def get_train_config(self) -> TrainConfig:
        return self._section("training")

    def get_eval_config(self) -> EvalConfig:
        return self._section("evaluation")

    def get_bench_config(self) -> BenchConfig:
        return self._section("bench")

    def get_logs_path(self) -> str:
        """
        Obtém o caminho para armazenamento de logs

        Returns:
            str: Caminho do diretório de logs
        """
        logs_path = os.getenv("SIMUREC_LOGS_PATH") or self._section("paths").logs
        logs_path = os.path.join(os.getcwd(), logs_path) if not os.path.isabs(logs_path) else logs_path
        os.makedirs(logs_path, exist_ok=True)
        return logs_path

    def get_runs_path(self, name: Optional[str] = None) -> str:
        """
        Obtém o diretório de saída de execuções

        Args:
            name (str, optional): Nome da execução (subdiretório)

        Returns:
            str: Caminho do diretório
        """
        runs_path = os.getenv("SIMUREC_RUNS_PATH") or self._section("paths").runs
        path = os.path.join(runs_path, name) if name else runs_path
        os.makedirs(path, exist_ok=True)
        return path

    def get_log_level(self) -> str:
        return os.getenv("SIMUREC_LOG_LEVEL", "INFO").upper()

    def snapshot(self) -> Dict[str, Any]:
        """
        Configuração efetiva de todas as seções (para o manifesto da execução)

        Returns:
            Dict[str, Any]: Seção -> valores
        """
        return {name: asdict(self._section(name)) for name in self.SECTIONS}
