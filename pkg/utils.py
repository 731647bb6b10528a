"""
Funciones auxiliares y utilidades generales
"""
import hashlib
import json
import logging
from datetime import datetime
from typing import Any, Optional

import numpy as np
from scipy.special import expit, logit

from config import LOG_CONFIG


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configura el logging de toda la aplicación
    Un único handler a stderr con el formato de LOG_CONFIG
    """
    logging.basicConfig(
        level=getattr(logging, (level or LOG_CONFIG['level']).upper()),
        format=LOG_CONFIG['format'],
        datefmt=LOG_CONFIG['datefmt'],
        force=True,
    )


def logistic(x):
    """Función logística 1 / (1 + exp(-x)), estable numéricamente"""
    return expit(x)


def log_odds(p):
    """Inversa de la logística"""
    return logit(p)


def format_number(number: float, decimals: int = 4) -> str:
    """
    Formatea un número para reportes
    Ejemplo: 0.123456 -> 0.1235
    """
    if number is None or not np.isfinite(number):
        return "-"
    return f"{number:,.{decimals}f}"


def get_current_datetime() -> str:
    """
    Obtiene la fecha y hora actual en formato dd/mm/yyyy hh:mm:ss
    """
    return datetime.now().strftime('%d/%m/%Y %H:%M:%S')


def canonical_json(document: Any) -> str:
    """JSON con claves ordenadas, para hashes reproducibles"""
    return json.dumps(document, sort_keys=True, separators=(',', ':'), default=_to_builtin)


def config_hash(document: Any) -> str:
    """
    Hash SHA-256 de un documento de configuración
    Se registra en cada manifiesto
    """
    return hashlib.sha256(canonical_json(document).encode('utf-8')).hexdigest()


def _to_builtin(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Tipo no serializable: {type(value).__name__}")


def to_builtin(document: Any) -> Any:
    """Convierte tipos de numpy anidados a tipos de Python (para json)"""
    return json.loads(canonical_json(document))


def normalize_columns(matrix: np.ndarray) -> np.ndarray:
    """Divide cada columna por su suma"""
    return matrix / matrix.sum(axis=0, keepdims=True)
