"""
Algoritmo Gibbs-EM: inicialización, ciclo EM, criterio de convergencia,
submodelo de células y ruta rápida MAP para W
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional

import numpy as np
from tqdm import tqdm

from baselines import divergence_numerator, naive_profile
from config import FIT_DEFAULTS, MODES
from gibbs import EStepConfig, run_estep
from model import (ConfigError, Dataset, ModelParams, SufficientStats, UrsmError,
                   default_eps_a)
from mstep import MStepConfig, ProfileTerms, elbo, m_step, project_profile
from utils import format_number, log_odds, normalize_columns

logger = logging.getLogger(__name__)


class FitError(UrsmError):
    """El ajuste no puede continuar (ELBO no finito, modo inválido, ...)"""


@dataclass(frozen=True)
class FitConfig:
    estep: EStepConfig = field(default_factory=EStepConfig)
    mstep: MStepConfig = field(default_factory=MStepConfig)
    max_em_iterations: int = FIT_DEFAULTS['max_em_iterations']
    tolerance: float = FIT_DEFAULTS['tolerance']
    patience: int = FIT_DEFAULTS['patience']
    mode: str = FIT_DEFAULTS['mode']
    seed: int = FIT_DEFAULTS['seed']

    def __post_init__(self):
        if self.max_em_iterations < 1:
            raise ConfigError("max_em_iterations debe ser al menos 1")
        if self.tolerance <= 0 or self.patience < 1:
            raise ConfigError("tolerance y patience deben ser positivos")
        if self.mode not in MODES:
            raise ConfigError(f"Modo desconocido: {self.mode!r} (opciones: {', '.join(MODES)})")


@dataclass
class FitResult:
    params: ModelParams
    stats: SufficientStats
    elbo_trace: List[float]
    converged: bool
    iteration_seconds: List[float]
    mode: str
    map_w: Optional[np.ndarray] = None

    @property
    def n_iterations(self) -> int:
        return len(self.elbo_trace)

    @property
    def status(self) -> str:
        return 'converged' if self.converged else 'max_iterations'


# ==================== INICIALIZACIÓN ====================

def init_params(data: Dataset, eps_a: Optional[float] = None,
                prior_proportions=None) -> ModelParams:
    """
    Valores iniciales: A = perfil ingenuo proyectado, alpha = 1 (o K p / sum p),
    mu_kappa = logit(0.4), mu_tau = (logit(0.7) - mu_kappa) / media(A_ingenuo),
    sigma_kappa^2 = 0.5 y sigma_tau = 0.1 mu_tau
    """
    dims = data.dims
    eps_a = default_eps_a(dims.n_genes) if eps_a is None else eps_a
    naive = naive_profile(data.single_cell.counts, data.single_cell.labels, dims.n_cell_types)
    profile = project_profile(naive, eps_a)

    if prior_proportions is None:
        alpha = np.ones(dims.n_cell_types)
    else:
        prior = np.asarray(prior_proportions, dtype=float)
        if prior.shape != (dims.n_cell_types,) or np.any(prior <= 0):
            raise ConfigError("Las proporciones previas deben ser K valores positivos")
        alpha = dims.n_cell_types * prior / prior.sum()

    mu_kappa = float(log_odds(1.0 - FIT_DEFAULTS['max_dropout_init']))
    mu_tau = float((log_odds(FIT_DEFAULTS['mean_observed_init']) - mu_kappa) / naive.mean())
    return ModelParams(profile=profile, alpha=alpha, mu_kappa=mu_kappa,
                       sigma2_kappa=FIT_DEFAULTS['sigma2_kappa_init'], mu_tau=mu_tau,
                       sigma2_tau=(FIT_DEFAULTS['tau_cv_init'] * mu_tau) ** 2)


# ==================== CONVERGENCIA ====================

def convergence_check(trace, tolerance: float = FIT_DEFAULTS['tolerance'],
                      patience: int = FIT_DEFAULTS['patience']) -> bool:
    """Cambio relativo |dELBO| / |ELBO| < tolerance en las últimas `patience` iteraciones"""
    if len(trace) < patience + 1:
        return False
    recent = np.asarray(trace[-(patience + 1):], dtype=float)
    deltas = np.abs(np.diff(recent))
    scale = np.abs(recent[1:])
    with np.errstate(divide='ignore', invalid='ignore'):
        relative = np.where(scale > 0, deltas / scale, np.where(deltas == 0, 0.0, np.inf))
    return bool(np.all(relative < tolerance))


# ==================== RUTA MAP ====================

def map_w_update(w: np.ndarray, x: np.ndarray, profile: np.ndarray, alpha: np.ndarray,
                 floor: float = FIT_DEFAULTS['map_floor']) -> np.ndarray:
    """
    Iteración de punto fijo para el W MAP:
    W_kj ~ W_kj sum_i X_ij A_ik / (AW)_ij + alpha_k - 1, normalizada por columna.
    Se recorta en floor antes de normalizar (alpha_k < 1 puede dar negativos).
    """
    updated = divergence_numerator(profile, x, w) + (np.asarray(alpha, dtype=float) - 1.0)[:, None]
    if np.any(updated < floor):
        logger.debug("map_w_update: %d entradas recortadas en %.0e", int((updated < floor).sum()), floor)
    updated = np.maximum(updated, floor)
    return normalize_columns(updated)


def plug_in_bulk_stats(stats: SufficientStats, w: np.ndarray, x: np.ndarray,
                       profile: np.ndarray) -> SufficientStats:
    """E[Z~] = X A (.) W / (AW), E[log W] = log W y E[W] = W con el W MAP"""
    mixture = profile @ w
    ztilde = x[:, :, None] * profile[:, None, :] * w.T[None, :, :] / mixture[:, :, None]
    return replace(stats, ztilde=ztilde, w=w.copy(), log_w=np.log(w))


# ==================== CICLO EM ====================

def _em_loop(data: Dataset, config: FitConfig, params: ModelParams,
             estep: Callable[[ModelParams, int], SufficientStats],
             update_alpha: bool, progress: bool) -> tuple:
    trace, seconds = [], []
    stats = None
    converged = False
    bar = tqdm(range(config.max_em_iterations), desc=f"EM ({config.mode})", disable=not progress)
    for iteration in bar:
        start = time.perf_counter()
        stats = estep(params, iteration)
        params = m_step(params, stats, data, config.mstep, update_alpha=update_alpha)
        value = elbo(params, stats, data, ProfileTerms.build(stats, data))
        if not np.isfinite(value):
            raise FitError(f"ELBO no finito en la iteración {iteration + 1}: parámetros inválidos "
                           f"(mu_kappa={params.mu_kappa:.4g}, mu_tau={params.mu_tau:.4g})")
        trace.append(value)
        seconds.append(time.perf_counter() - start)
        logger.info("Iteración %d: ELBO %s (%.1f s)", iteration + 1,
                    format_number(value, 4), seconds[-1])
        if convergence_check(trace, config.tolerance, config.patience):
            converged = True
            break
    bar.close()
    if converged:
        logger.info("Convergencia en %d iteraciones", len(trace))
    else:
        logger.warning("Se alcanzó el máximo de %d iteraciones sin converger", config.max_em_iterations)
    return params, stats, trace, converged, seconds


def fit_gem(data: Dataset, config: FitConfig = FitConfig(), prior_proportions=None,
            progress: bool = False) -> FitResult:
    """Modelo conjunto: paso E de Gibbs sobre células y muestras bulk"""
    if not data.has_bulk:
        raise FitError("El modelo conjunto requiere datos bulk")
    eps_a = config.mstep.resolve_eps_a(data.dims.n_genes)
    params = init_params(data, eps_a, prior_proportions)

    def estep(current, iteration):
        return run_estep(data, current, config.estep, config.seed, epoch=iteration).check(data)

    params, stats, trace, converged, seconds = _em_loop(data, config, params, estep, True, progress)
    return FitResult(params, stats, trace, converged, seconds, 'joint')


def fit_single_cell_only(data: Dataset, config: FitConfig = FitConfig(),
                         progress: bool = False) -> FitResult:
    """Submodelo de células: sin términos bulk y sin actualizar alpha"""
    sc_data = data.without_bulk()
    params = init_params(sc_data, config.mstep.resolve_eps_a(sc_data.dims.n_genes))

    def estep(current, iteration):
        return run_estep(sc_data, current, config.estep, config.seed, epoch=iteration).check(sc_data)

    params, stats, trace, converged, seconds = _em_loop(sc_data, config, params, estep, False, progress)
    return FitResult(params, stats, trace, converged, seconds, 'sc-only')


def fit_map_fast(data: Dataset, config: FitConfig = FitConfig(), prior_proportions=None,
                 progress: bool = False) -> FitResult:
    """
    Igual que fit_gem pero el paso E bulk se reemplaza por una actualización
    MAP de W por iteración, partiendo del W anterior
    """
    if not data.has_bulk:
        raise FitError("La ruta MAP requiere datos bulk")
    sc_data = data.without_bulk()
    x = data.bulk.counts.astype(float)
    params = init_params(data, config.mstep.resolve_eps_a(data.dims.n_genes), prior_proportions)
    state = {'w': np.tile((params.alpha / params.alpha.sum())[:, None], (1, data.dims.n_bulk))}

    def estep(current, iteration):
        stats = run_estep(sc_data, current, config.estep, config.seed, epoch=iteration)
        state['w'] = map_w_update(state['w'], x, current.profile, current.alpha,
                                  FIT_DEFAULTS['map_floor'])
        return plug_in_bulk_stats(stats, state['w'], x, current.profile).check(data)

    params, stats, trace, converged, seconds = _em_loop(data, config, params, estep, True, progress)
    return FitResult(params, stats, trace, converged, seconds, 'map-fast', map_w=state['w'])


def fit(data: Dataset, config: FitConfig = FitConfig(), prior_proportions=None,
        progress: bool = False) -> FitResult:
    """Despacha según config.mode; sin datos bulk siempre usa el submodelo"""
    if not data.has_bulk or config.mode == 'sc-only':
        if config.mode != 'sc-only':
            logger.info("Sin datos bulk: se ajusta el submodelo de células")
        return fit_single_cell_only(data, config, progress)
    if config.mode == 'map-fast':
        return fit_map_fast(data, config, prior_proportions, progress)
    return fit_gem(data, config, prior_proportions, progress)
