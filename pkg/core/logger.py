"""
Módulo de logging do sistema SimuRec
"""
import logging
import os
from datetime import datetime
from typing import Dict, List, Optional

from colorama import Fore, Style, init

# Inicializa colorama para Windows
init(autoreset=True)


class ColoredFormatter(logging.Formatter):
    """Formatador colorido para logs no console"""

    COLORS = {
        'DEBUG': Fore.CYAN,
        'INFO': Fore.GREEN,
        'WARNING': Fore.YELLOW,
        'ERROR': Fore.RED,
        'CRITICAL': Fore.MAGENTA
    }

    def format(self, record):
        original = record.levelname
        record.levelname = f"{self.COLORS.get(original, '')}{original}{Style.RESET_ALL}"
        try:
            return super().format(record)
        finally:
            record.levelname = original


class LoggerManager:
    """Gerenciador de logs do sistema"""

    def __init__(self, name: str = "SimuRec", logs_path: Optional[str] = None,
                 level: str = "INFO", to_file: bool = True):
        """
        Inicializa o gerenciador de logs

        Args:
            name (str): Nome do logger
            logs_path (str, optional): Caminho para salvar arquivos de log
            level (str): Nível mínimo do console
            to_file (bool): Se deve gravar também em arquivo
        """
        self.name = name
        self.logs_path = logs_path or os.path.join(os.getcwd(), 'logs')
        self.level = getattr(logging, level.upper(), logging.INFO)
        self.to_file = to_file
        self.phases: List[str] = []
        self.logger = self._setup_logger()

    def _setup_logger(self) -> logging.Logger:
        """Configura e retorna o logger"""
        logger = logging.getLogger(self.name)
        logger.setLevel(logging.DEBUG)
        logger.propagate = False

        # Remove handlers existentes para evitar duplicação
        logger.handlers.clear()

        console_handler = logging.StreamHandler()
        console_handler.setLevel(self.level)
        console_handler.setFormatter(ColoredFormatter(
            '[%(asctime)s] %(levelname)s - %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        ))
        logger.addHandler(console_handler)

        if self.to_file:
            os.makedirs(self.logs_path, exist_ok=True)
            log_filename = f"simurec_{datetime.now().strftime('%Y%m%d')}.log"
            file_handler = logging.FileHandler(os.path.join(self.logs_path, log_filename), encoding='utf-8')
            file_handler.setLevel(logging.DEBUG)
            file_handler.setFormatter(logging.Formatter(
                '[%(asctime)s] %(levelname)s - %(name)s - %(message)s',
                datefmt='%Y-%m-%d %H:%M:%S'
            ))
            logger.addHandler(file_handler)

        return logger

    def debug(self, message: str) -> None:
        """Log de debug"""
        self.logger.debug(message)

    def info(self, message: str) -> None:
        """Log de informação"""
        self.logger.info(message)

    def warning(self, message: str) -> None:
        """Log de aviso"""
        self.logger.warning(message)

    def error(self, message: str) -> None:
        """Log de erro"""
        self.logger.error(message)

    def exception(self, message: str) -> None:
        """Log de exceção com traceback"""
        self.logger.exception(message)

    def phase(self, name: str) -> None:
        """
        Registra o início de uma fase de treinamento

        A lista `phases` preserva a ordem e é gravada no manifesto da execução.
        """
        self.phases.append(name)
        self.logger.info(f"▶ Fase: {name}")

    def metrics(self, prefix: str, values: Dict[str, float]) -> None:
        """Log compacto de métricas no formato chave=valor"""
        body = " ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in values.items())
        self.logger.info(f"{prefix} {body}")


def quiet_logger(name: str = "SimuRec-test") -> LoggerManager:
    """Logger sem arquivo e só com avisos no console (testes e bancadas)"""
    return LoggerManager(name=name, level="WARNING", to_file=False)
