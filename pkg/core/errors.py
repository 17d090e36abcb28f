"""
Hierarquia de exceções do sistema SimuRec
"""


class SimuRecError(Exception):
    """Exceção base para todos os erros do SimuRec"""
    pass


class ConfigError(SimuRecError):
    """Exceção personalizada para erros de configuração"""
    pass


class NumericError(SimuRecError):
    """Exceção base do motor numérico"""
    pass


class DimensionError(NumericError):
    """Formatos de tensores incompatíveis"""
    pass


class EmptySequenceError(NumericError):
    """Sequência vazia onde pelo menos um elemento é exigido"""
    pass


class DomainError(NumericError, ValueError):
    """Valor fora do domínio da operação (ex: sigma não positivo)"""
    pass


class ContractError(SimuRecError, ValueError):
    """Pré-condição de uma operação violada"""
    pass
