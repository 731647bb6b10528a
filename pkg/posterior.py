"""
Productos de un ajuste: probabilidades posteriores de dropout, llamadas de
dropout, imputación y deconvolución de las muestras bulk
"""
import logging
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np
import pandas as pd

from model import (DROPOUT, OBSERVED, STRUCTURAL_ZERO, DimensionError, UrsmError,
                   profile_by_cell)
from utils import normalize_columns

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5

# Procedencia de cada entrada de la matriz imputada
MASK_LABELS = {DROPOUT: 'imputed', STRUCTURAL_ZERO: 'structural-zero', OBSERVED: 'observed'}


class ProductError(UrsmError):
    """El ajuste no permite calcular el producto pedido"""


@dataclass
class ImputedMatrix:
    values: np.ndarray
    mask: np.ndarray

    def mask_labels(self) -> np.ndarray:
        return np.vectorize(MASK_LABELS.get, otypes=[object])(self.mask)


@dataclass
class Deconvolution:
    proportions: np.ndarray
    summary: pd.DataFrame


def dropout_posterior(result) -> np.ndarray:
    """pi~ = E[S | X, Y, theta] de los últimos estadísticos del ajuste"""
    return np.clip(result.stats.s, 0.0, 1.0)


def call_dropouts(posterior: np.ndarray, y: np.ndarray,
                  threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Una entrada es dropout si Y = 0 y pi~ < threshold"""
    if not 0.0 <= threshold <= 1.0:
        raise ProductError(f"El umbral debe estar en [0, 1] (recibido {threshold})")
    posterior = np.asarray(posterior)
    y = np.asarray(y)
    if posterior.shape != y.shape:
        raise DimensionError(f"pi~ {posterior.shape} y Y {y.shape} difieren en forma")
    return (y == 0) & (posterior < threshold)


def impute(y: np.ndarray, calls: np.ndarray, profile: np.ndarray, labels: np.ndarray,
           depths: np.ndarray, round_values: bool = False) -> ImputedMatrix:
    """
    Reemplaza cada dropout llamado por su valor esperado A[i, G_l] * R_l
    El resto de las entradas se copia sin cambios.
    """
    y = np.asarray(y)
    calls = np.asarray(calls, dtype=bool)
    if calls.shape != y.shape:
        raise DimensionError(f"Las llamadas {calls.shape} no coinciden con Y {y.shape}")
    if np.any(calls & (y > 0)):
        row, col = np.argwhere(calls & (y > 0))[0]
        raise ProductError(f"Llamada de dropout en una entrada observada [{row}, {col}]")

    expected = profile_by_cell(profile, labels) * np.asarray(depths, dtype=float)[None, :]
    if round_values:
        expected = np.round(expected)
    values = np.where(calls, expected, y.astype(float))

    mask = np.full(y.shape, STRUCTURAL_ZERO, dtype=np.int8)
    mask[calls] = DROPOUT
    mask[y > 0] = OBSERVED
    logger.info("Imputadas %d de %d entradas cero", int(calls.sum()), int((y == 0).sum()))
    return ImputedMatrix(values, mask)


def dropout_calls_summary(calls: np.ndarray, y: np.ndarray) -> Dict[str, int]:
    """Conteo por categoría; las tres suman N * L"""
    y = np.asarray(y)
    observed = int((y > 0).sum())
    dropouts = int(np.asarray(calls, dtype=bool).sum())
    return {
        'observed': observed,
        'dropout': dropouts,
        'structural-zero': int(y.size - observed - dropouts),
        'total': int(y.size),
    }


def _entropy(proportions: np.ndarray) -> np.ndarray:
    safe = np.where(proportions > 0, proportions, 1.0)
    return -(proportions * np.log(safe)).sum(axis=0)


def deconvolve(result, sample_ids: Sequence[str] = ()) -> Deconvolution:
    """
    Proporciones K x M: E[W] (Gibbs) o el W MAP (ruta rápida), con un
    resumen por muestra (tipo dominante en base 1, su proporción y la entropía)
    """
    if result.mode == 'sc-only':
        raise ProductError("Un ajuste del submodelo de células no tiene proporciones bulk")
    proportions = result.map_w if result.map_w is not None else result.stats.w
    return summarize_proportions(proportions, sample_ids)


def summarize_proportions(proportions: np.ndarray, sample_ids: Sequence[str] = ()) -> Deconvolution:
    """Normaliza las columnas y arma el resumen por muestra"""
    proportions = np.asarray(proportions, dtype=float)
    proportions = normalize_columns(proportions)
    n_samples = proportions.shape[1]
    ids = list(sample_ids) if len(sample_ids) else [f"sample_{j + 1}" for j in range(n_samples)]
    dominant = proportions.argmax(axis=0)
    summary = pd.DataFrame({
        'sample': ids,
        'dominant_type': dominant + 1,
        'proportion': proportions[dominant, np.arange(n_samples)],
        'entropy': _entropy(proportions),
    })
    return Deconvolution(proportions, summary)
