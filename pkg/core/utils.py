"""
Utilitários diversos para o sistema SimuRec
"""
import hashlib
import json
import os
from datetime import datetime
from typing import Any, Dict, List, Sequence

import numpy as np
from tabulate import tabulate


class SeedUtils:
    """Utilitários para geradores aleatórios reprodutíveis"""

    @staticmethod
    def make_rng(*keys: int) -> np.random.Generator:
        """
        Cria um gerador a partir de uma sequência de chaves inteiras

        Geradores com chaves distintas são independentes; a mesma sequência
        sempre reproduz os mesmos números.

        Args:
            *keys (int): Semente base seguida de chaves (usuário, seed, ...)

        Returns:
            np.random.Generator: Gerador PCG64
        """
        return np.random.default_rng([int(k) & 0xFFFFFFFF for k in keys])

    @staticmethod
    def derive_seed(*keys: int) -> int:
        """Semente inteira derivada deterministicamente de várias chaves"""
        return int(SeedUtils.make_rng(*keys).integers(0, 2 ** 31 - 1))


class FileUtils:
    """Utilitários para arquivos de saída"""

    @staticmethod
    def generate_checksum(filepath: str) -> str:
        """
        Gera checksum MD5 para um arquivo de saída

        Args:
            filepath (str): Caminho do arquivo

        Returns:
            str: Hash MD5 (vazio se o arquivo não puder ser lido)
        """
        hash_md5 = hashlib.md5()
        try:
            with open(filepath, "rb") as f:
                for chunk in iter(lambda: f.read(4096), b""):
                    hash_md5.update(chunk)
            return hash_md5.hexdigest()
        except OSError:
            return ""

    @staticmethod
    def write_json(path: str, data: Dict[str, Any]) -> str:
        """Grava JSON com ordem de campos preservada e indentação estável"""
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
            f.write("\n")
        return path


class ReportUtils:
    """Utilitários para geração de relatórios"""

    @staticmethod
    def generate_execution_summary(start_time: datetime, end_time: datetime,
                                   completed_phases: int, total_phases: int) -> Dict[str, Any]:
        """
        Gera resumo de execução

        Args:
            start_time (datetime): Hora de início
            end_time (datetime): Hora de fim
            completed_phases (int): Fases concluídas
            total_phases (int): Fases planejadas

        Returns:
            Dict[str, Any]: Resumo da execução
        """
        duration = end_time - start_time
        return {
            'start_time': start_time.isoformat(),
            'end_time': end_time.isoformat(),
            'duration_seconds': duration.total_seconds(),
            'duration_formatted': str(duration),
            'completed_phases': completed_phases,
            'total_phases': total_phases,
        }

    @staticmethod
    def format_table(rows: Sequence[Sequence[Any]], headers: Sequence[str], floatfmt: str = ".4f") -> str:
        """Tabela de texto para o console"""
        return tabulate(rows, headers=headers, tablefmt="github", floatfmt=floatfmt)


class ValidationUtils:
    """Utilitários para validação"""

    @staticmethod
    def validate_train_config(config: Any) -> List[str]:
        """
        Valida hiperparâmetros de treinamento

        Args:
            config (TrainConfig): Configuração de treinamento

        Returns:
            List[str]: Lista de erros encontrados
        """
        errors = []
        positive_fields = ['lr', 'batch_size', 'buffer_size', 'update_size', 'target_update',
                           'dim', 'memory_size', 'episodes', 'n_samples', 'state_refresh',
                           'convergence_patience']
        for name in positive_fields:
            value = getattr(config, name)
            if value is None or value <= 0:
                errors.append(f"Campo deve ser positivo: {name}={value}")

        for name in ['k_c', 'k_q', 'horizon']:
            if getattr(config, name) < 0:
                errors.append(f"Campo não pode ser negativo: {name}")

        if not 0.0 <= config.gamma < 1.0:
            errors.append(f"gamma deve estar em [0, 1), recebido {config.gamma}")
        if not 0.0 <= config.droprate < 1.0:
            errors.append(f"droprate deve estar em [0, 1), recebido {config.droprate}")
        for name in ['epsilon_start', 'epsilon_end', 'epsilon_decay_fraction']:
            value = getattr(config, name)
            if value is None or not 0.0 <= value <= 1.0:
                errors.append(f"{name} deve estar em [0, 1], recebido {value}")
        if config.reward_mode not in ("probability", "binary"):
            errors.append(f"reward_mode inválido: {config.reward_mode}")
        if config.buffer_size < config.update_size:
            errors.append("buffer_size deve ser maior ou igual a update_size")

        return errors
