"""
Estimadores de referencia y métricas de evaluación: perfil ingenuo, NMF con
pérdida de divergencia, pérdidas L1 y curvas ROC
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import rankdata

from config import BENCHMARK_DEFAULTS, FIT_DEFAULTS
from model import DimensionError, LabelError, cell_type_indicator
from samplers import Stream, as_generator

logger = logging.getLogger(__name__)

NMF_FLOOR = 1e-12
NMF_TOL = 1e-6
L1_MODES = ('total', 'per-column')
MATCHINGS = ('identity', 'hungarian')


# ==================== PERFIL INGENUO ====================

def naive_profile(y: np.ndarray, labels: np.ndarray, n_types: int) -> np.ndarray:
    """
    Promedio por tipo celular de las columnas normalizadas por profundidad
    A_ik = (1 / #{l: G_l = k}) sum_{l: G_l = k} Y_il / R_l
    """
    y = np.asarray(y, dtype=float)
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_types)
    if np.any(counts == 0):
        raise LabelError(f"Tipos celulares sin células: {np.flatnonzero(counts == 0).tolist()}")
    depths = y.sum(axis=0)
    if np.any(depths <= 0):
        raise DimensionError("Hay células con profundidad cero")
    normalized = y / depths[None, :]
    return (normalized @ cell_type_indicator(labels, n_types)) / counts[None, :]


# ==================== NMF (DIVERGENCIA) ====================

def divergence_numerator(basis: np.ndarray, data: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """H * (F^T (V / FH)), núcleo común de la NMF y de la actualización MAP de W"""
    return weights * (basis.T @ (data / np.maximum(basis @ weights, NMF_FLOOR)))


def divergence_weight_update(basis, data, weights) -> np.ndarray:
    """Actualización multiplicativa del factor de pesos H"""
    return divergence_numerator(basis, data, weights) / np.maximum(basis.sum(axis=0), NMF_FLOOR)[:, None]


def divergence_basis_update(basis, data, weights) -> np.ndarray:
    """Actualización multiplicativa del factor base F"""
    ratio = data / np.maximum(basis @ weights, NMF_FLOOR)
    return basis * (ratio @ weights.T) / np.maximum(weights.sum(axis=1), NMF_FLOOR)[None, :]


def kl_divergence(data: np.ndarray, approx: np.ndarray) -> float:
    """D(V || FH) = sum V log(V / FH) - V + FH, con 0 log 0 = 0"""
    approx = np.maximum(approx, NMF_FLOOR)
    positive = data > 0
    value = np.sum(data[positive] * np.log(data[positive] / approx[positive]))
    return float(value - data.sum() + approx.sum())


@dataclass
class NmfResult:
    basis: np.ndarray
    weights: np.ndarray
    divergence: List[float]

    @property
    def reconstruction(self) -> np.ndarray:
        return self.basis @ self.weights


def nmf_divergence(data: np.ndarray, rank: int = BENCHMARK_DEFAULTS['nmf_rank'],
                   iterations: int = BENCHMARK_DEFAULTS['nmf_iterations'],
                   stream: Stream = None, tol: float = NMF_TOL) -> NmfResult:
    """
    NMF por actualizaciones multiplicativas para la divergencia de
    Kullback-Leibler generalizada. Para al llegar a iterations o cuando el
    cambio relativo de la divergencia baja de tol.
    """
    data = np.asarray(data, dtype=float)
    if rank < 1:
        raise DimensionError("El rango de la NMF debe ser al menos 1")
    if np.any(data < 0):
        raise DimensionError("La NMF requiere una matriz no negativa")
    rng = as_generator(stream) if stream is not None else np.random.default_rng(FIT_DEFAULTS['seed'])
    scale = np.sqrt(max(data.mean(), NMF_FLOOR) / rank)
    basis = scale * (0.5 + rng.random((data.shape[0], rank)))
    weights = scale * (0.5 + rng.random((rank, data.shape[1])))

    trace = [kl_divergence(data, basis @ weights)]
    for _ in range(iterations):
        basis = divergence_basis_update(basis, data, weights)
        weights = divergence_weight_update(basis, data, weights)
        trace.append(kl_divergence(data, basis @ weights))
        if abs(trace[-2] - trace[-1]) <= tol * max(abs(trace[-2]), NMF_FLOOR):
            break
    logger.debug("NMF rango %d: %d iteraciones, divergencia %.6g", rank, len(trace) - 1, trace[-1])
    return NmfResult(basis, weights, trace)


def nmf_profile(result: NmfResult, labels: np.ndarray, n_types: int) -> np.ndarray:
    """Perfil promedio por tipo de la reconstrucción de bajo rango"""
    return naive_profile(np.maximum(result.reconstruction, 0.0), labels, n_types)


def nmf_dropout_scores(y: np.ndarray, result: NmfResult) -> np.ndarray:
    """Puntajes de dropout en las entradas cero: el valor reconstruido"""
    return result.reconstruction[np.asarray(y) == 0]


# ==================== MÉTRICAS ====================

def match_columns(est: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Permutación de columnas de est que minimiza la pérdida L1 (húngaro)"""
    cost = np.abs(est[:, :, None] - truth[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    order = np.empty(truth.shape[1], dtype=int)
    order[cols] = rows
    return order


def l1_loss(est, truth, mode: str = 'total', matching: str = 'identity') -> float:
    """sum |est - truth| o su promedio por columna"""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise DimensionError(f"Formas distintas: {est.shape} vs {truth.shape}")
    if mode not in L1_MODES or matching not in MATCHINGS:
        raise ValueError(f"Modo {mode!r} o emparejamiento {matching!r} desconocido")
    if matching == 'hungarian' and est.ndim == 2:
        est = est[:, match_columns(est, truth)]
    total = float(np.abs(est - truth).sum())
    if mode == 'per-column':
        return total / (truth.shape[1] if truth.ndim == 2 else 1)
    return total


def _check_binary(scores, labels) -> Tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel().astype(bool)
    if scores.shape != labels.shape:
        raise DimensionError("scores y labels deben tener el mismo tamaño")
    if labels.all() or not labels.any():
        raise ValueError("Se necesitan etiquetas positivas y negativas")
    return scores, labels


def roc_auc(scores, labels) -> float:
    """AUC por rangos (Mann-Whitney) con corrección de empates"""
    scores, labels = _check_binary(scores, labels)
    ranks = rankdata(scores)
    n_pos = labels.sum()
    n_neg = labels.size - n_pos
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_curve(scores, labels) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Tasas de falsos y verdaderos positivos para cada umbral distinto"""
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind='stable')
    scores, labels = scores[order], labels[order]
    last = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tps = np.cumsum(labels)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / labels.sum()]
    fpr = np.r_[0.0, fps / (~labels).sum()]
    return fpr, tpr, np.r_[np.inf, scores[last]]
