"""
SimuRec - Recomendação Interativa Baseada em Modelo
Core Module
"""
__version__ = "1.0.0"
