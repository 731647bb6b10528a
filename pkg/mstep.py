"""
Paso M: actualización cerrada de los parámetros de dropout, ELBO, gradientes
analíticos, proyección al símplex acotado y ascenso de gradiente proyectado

El ELBO (sin términos que no dependen de theta) se separa en un término por
columna de A, un término de alpha y un término de (mu, sigma^2). El ascenso
hace una búsqueda lineal propia para cada bloque.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import digamma, gammaln

from config import MSTEP_DEFAULTS
from model import (ConfigError, Dataset, ModelParams, ParamsError, ProfileError, SufficientStats,
                   cell_type_indicator, default_eps_a)

logger = logging.getLogger(__name__)

STEP_TOL = 1e-15


@dataclass(frozen=True)
class MStepConfig:
    max_iterations: int = MSTEP_DEFAULTS['max_iterations']
    initial_step: float = MSTEP_DEFAULTS['initial_step']
    backtracking: float = MSTEP_DEFAULTS['backtracking']
    armijo: float = MSTEP_DEFAULTS['armijo']
    max_halvings: int = MSTEP_DEFAULTS['max_halvings']
    scaled_direction: bool = MSTEP_DEFAULTS['scaled_direction']
    eps_a: Optional[float] = None
    eps_alpha: float = MSTEP_DEFAULTS['eps_alpha']
    variance_floor: float = MSTEP_DEFAULTS['variance_floor']

    def __post_init__(self):
        if not 0.0 < self.backtracking < 1.0:
            raise ConfigError("El factor de retroceso debe estar en (0, 1)")
        if self.max_iterations < 1 or self.max_halvings < 1:
            raise ConfigError("max_iterations y max_halvings deben ser positivos")
        if self.initial_step <= 0 or self.armijo < 0:
            raise ConfigError("Paso inicial positivo y constante de Armijo no negativa")
        if self.eps_alpha <= 0 or self.variance_floor <= 0:
            raise ConfigError("Los pisos eps_alpha y variance_floor deben ser positivos")
        if self.eps_a is not None and self.eps_a <= 0:
            raise ConfigError("eps_a debe ser positivo")

    def resolve_eps_a(self, n_genes: int) -> float:
        return default_eps_a(n_genes) if self.eps_a is None else float(self.eps_a)


# ==================== PARÁMETROS DE DROPOUT ====================

def update_dropout_params(stats: SufficientStats,
                          floor: float = MSTEP_DEFAULTS['variance_floor']) -> Tuple[float, float, float, float]:
    """
    mu = promedio de E[x_l]; sigma^2 = promedio de E[x^2] - 2 mu E[x] + mu^2,
    con piso en la varianza. Devuelve (mu_kappa, sigma2_kappa, mu_tau, sigma2_tau)
    """
    if stats.n_samples < 1:
        raise ParamsError("Los estadísticos no tienen sorteos retenidos")

    def closed_form(mean, second):
        mu = float(np.mean(mean))
        var = float(np.mean(second - 2.0 * mu * mean + mu * mu))
        return mu, max(var, floor)

    mu_kappa, sigma2_kappa = closed_form(stats.kappa, stats.kappa2)
    mu_tau, sigma2_tau = closed_form(stats.tau, stats.tau2)
    return mu_kappa, sigma2_kappa, mu_tau, sigma2_tau


# ==================== ELBO ====================

@dataclass
class ProfileTerms:
    """
    Coeficientes del ELBO en A, agregados por tipo celular:
    log_coef = sum_j E[Z~] + sum_{l en k} E[S] Y (multiplica log A),
    quad = sum E[w tau^2], lin = sum E[(S - 1/2) tau - w tau kappa]
    """
    log_coef: np.ndarray
    quad: np.ndarray
    lin: np.ndarray
    es: np.ndarray
    depths: np.ndarray
    labels: np.ndarray
    members: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def build(cls, stats: SufficientStats, data: Dataset) -> 'ProfileTerms':
        sc = data.single_cell
        onehot = cell_type_indicator(sc.labels, data.dims.n_cell_types)
        bulk = stats.ztilde.sum(axis=1) if stats.ztilde.size else 0.0
        log_coef = bulk + (stats.s * sc.counts) @ onehot
        members = {k: np.flatnonzero(sc.labels == k) for k in range(data.dims.n_cell_types)}
        return cls(log_coef=log_coef, quad=stats.omega_tau2 @ onehot,
                   lin=(stats.s_tau - stats.omega_tau_kappa) @ onehot,
                   es=stats.s, depths=sc.depths.astype(float), labels=sc.labels, members=members)

    def column_value(self, k: int, a: np.ndarray) -> float:
        cells = self.members[k]
        u = a @ self.es[:, cells]
        with np.errstate(divide='ignore', invalid='ignore'):
            value = (self.log_coef[:, k] @ np.log(a) - 0.5 * self.quad[:, k] @ (a * a)
                     + self.lin[:, k] @ a - self.depths[cells] @ np.log(u))
        return float(value) if np.isfinite(value) else -np.inf

    def column_grad(self, k: int, a: np.ndarray) -> np.ndarray:
        cells = self.members[k]
        u = a @ self.es[:, cells]
        return (self.log_coef[:, k] / a - self.quad[:, k] * a + self.lin[:, k]
                - self.es[:, cells] @ (self.depths[cells] / u))


def alpha_value(alpha: np.ndarray, stats: SufficientStats) -> float:
    """M lnG(sum alpha) - M sum lnG(alpha_k) + sum_k (alpha_k - 1) sum_j E[log W_kj]"""
    m = stats.log_w.shape[1]
    if m == 0:
        return 0.0
    return float(m * gammaln(alpha.sum()) - m * gammaln(alpha).sum()
                 + (alpha - 1.0) @ stats.log_w.sum(axis=1))


def dropout_value(params: ModelParams, stats: SufficientStats) -> float:
    """Término de las normales previas de kappa y tau"""
    def gaussian(mu, var, mean, second):
        return float(np.sum(-0.5 * np.log(var) - (second - 2.0 * mu * mean + mu * mu) / (2.0 * var)))
    return (gaussian(params.mu_kappa, params.sigma2_kappa, stats.kappa, stats.kappa2)
            + gaussian(params.mu_tau, params.sigma2_tau, stats.tau, stats.tau2))


def elbo(params: ModelParams, stats: SufficientStats, data: Dataset,
         terms: Optional[ProfileTerms] = None) -> float:
    """
    Cota inferior de Jensen evaluada con los estadísticos dados, omitiendo
    las constantes que sólo dependen de los datos. u_l se calcula con el A
    actual.
    """
    terms = terms or ProfileTerms.build(stats, data)
    total = sum(terms.column_value(k, params.profile[:, k]) for k in range(params.profile.shape[1]))
    return total + alpha_value(np.asarray(params.alpha, dtype=float), stats) + dropout_value(params, stats)


def grad_a(params: ModelParams, stats: SufficientStats, data: Dataset,
           terms: Optional[ProfileTerms] = None) -> np.ndarray:
    """Gradiente N x K del ELBO respecto de A"""
    profile = params.profile
    if np.any(profile <= 0):
        raise ProfileError("grad_a requiere A estrictamente positiva")
    terms = terms or ProfileTerms.build(stats, data)
    return np.column_stack([terms.column_grad(k, profile[:, k]) for k in range(profile.shape[1])])


def grad_alpha(params: ModelParams, stats: SufficientStats) -> np.ndarray:
    """sum_j E[log W_kj] + M (digamma(sum alpha) - digamma(alpha_k))"""
    alpha = np.asarray(params.alpha, dtype=float)
    m = stats.log_w.shape[1]
    if m == 0:
        return np.zeros_like(alpha)
    return stats.log_w.sum(axis=1) + m * (digamma(alpha.sum()) - digamma(alpha))


# ==================== PROYECCIÓN ====================

def project_capped_simplex(v, eps: float) -> np.ndarray:
    """
    Proyección euclidiana sobre {u : sum u = 1, u >= eps}

    Ordena v de mayor a menor, busca el mayor rho con
    v_(rho) + (1 - sum_{r<=rho} v_(r) - (N - rho) eps) / rho > eps,
    fija lambda con ese rho y recorta en eps.
    """
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    if eps < 0 or eps * n > 1.0 + 1e-12:
        raise ProfileError(f"Conjunto vacío: eps={eps} con N={n}")
    ordered = np.sort(v, kind='stable')[::-1]
    ranks = np.arange(1, n + 1)
    shifts = (1.0 - np.cumsum(ordered) - (n - ranks) * eps) / ranks
    candidates = np.flatnonzero(ordered + shifts > eps)
    rho = candidates[-1] if candidates.size else 0
    return np.maximum(v + shifts[rho], eps)


def project_profile(profile: np.ndarray, eps: float) -> np.ndarray:
    """Proyecta cada columna de A"""
    return np.column_stack([project_capped_simplex(profile[:, k], eps)
                            for k in range(profile.shape[1])])


def project_alpha(alpha: np.ndarray, eps_alpha: float) -> np.ndarray:
    return np.maximum(alpha, eps_alpha)


# ==================== ASCENSO PROYECTADO ====================

def _line_search(x, value, grad, direction, objective, project, step, config: MStepConfig):
    """
    Retrocede desde step a lo largo de direction hasta cumplir Armijo.
    Devuelve (x nuevo o None, valor, paso, agotada); si se agotan las
    reducciones el paso devuelto ya está reducido y sirve de punto de partida.
    """
    for _ in range(config.max_halvings):
        candidate = project(x + step * direction)
        move = candidate - x
        if np.max(np.abs(move)) <= STEP_TOL:
            return None, value, step, False
        new_value = objective(candidate)
        if new_value >= value + config.armijo * max(float(grad @ move), 0.0):
            return candidate, new_value, step, False
        step *= config.backtracking
    return None, value, step, True


def _scaled_direction(a: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """
    a * (grad - <a, grad> / sum a): gradiente en la métrica diag(a), ya
    restringido a sum = cte. Para sum_i c_i log a_i apunta a c / sum c.
    """
    return a * (grad - (a @ grad) / a.sum())


class _BlockSteps:
    """
    Paso de cada bloque. El primero es t0 / max(1, |d|_inf); tras un paso
    aceptado se duplica (tope t0) y tras una búsqueda agotada se sigue
    reduciendo desde donde quedó.
    """

    def __init__(self, n_blocks: int, config: MStepConfig):
        self.config = config
        self.steps = np.full(n_blocks, np.nan)
        self.exhausted = 0

    def search(self, block, x, value, grad, direction, objective, project):
        if np.isnan(self.steps[block]):
            self.steps[block] = self.config.initial_step / max(1.0, float(np.max(np.abs(direction))))
        new, _, step, failed = _line_search(x, value, grad, direction, objective, project,
                                            self.steps[block], self.config)
        if new is not None:
            self.steps[block] = min(self.config.initial_step, 2.0 * step)
        elif failed:
            self.steps[block] = step
            self.exhausted += 1
        return new, failed


def backtracking_ascent(params: ModelParams, stats: SufficientStats, data: Dataset,
                        config: MStepConfig, update_alpha: bool = True,
                        terms: Optional[ProfileTerms] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Ascenso de gradiente proyectado sobre (A, alpha) con los estadísticos
    fijos. Devuelve (A, alpha) factibles; el ELBO nunca disminuye.

    Con scaled_direction cada columna avanza según _scaled_direction; si no,
    según el gradiente. alpha siempre usa el gradiente.
    """
    eps_a = config.resolve_eps_a(params.profile.shape[0])
    terms = terms or ProfileTerms.build(stats, data)
    profile = params.profile.copy()
    alpha = np.asarray(params.alpha, dtype=float).copy()
    n_types = profile.shape[1]
    update_alpha = update_alpha and stats.log_w.shape[1] > 0

    steps = _BlockSteps(n_types + 1, config)
    for iteration in range(config.max_iterations):
        active = False
        for k in range(n_types):
            col = profile[:, k]
            grad = terms.column_grad(k, col)
            direction = _scaled_direction(col, grad) if config.scaled_direction else grad
            new, failed = steps.search(
                k, col, terms.column_value(k, col), grad, direction,
                lambda a, k=k: terms.column_value(k, a),
                lambda a: project_capped_simplex(a, eps_a))
            if new is not None:
                profile[:, k] = new
            active |= new is not None or failed
        if update_alpha:
            grad = grad_alpha(ModelParams(profile, alpha, 0.0, 1.0, 0.0, 1.0), stats)
            new, failed = steps.search(
                n_types, alpha, alpha_value(alpha, stats), grad, grad,
                lambda a: alpha_value(a, stats),
                lambda a: project_alpha(a, config.eps_alpha))
            if new is not None:
                alpha = new
            active |= new is not None or failed
        if not active:
            logger.debug("Ascenso detenido en la iteración %d: paso nulo", iteration)
            break
    if steps.exhausted:
        logger.debug("Búsqueda lineal agotada %d veces; se sigue desde el paso reducido",
                     steps.exhausted)
    return profile, alpha


def m_step(params: ModelParams, stats: SufficientStats, data: Dataset,
           config: MStepConfig, update_alpha: bool = True) -> ModelParams:
    """Paso M completo: parámetros de dropout en forma cerrada y luego (A, alpha)"""
    mu_kappa, sigma2_kappa, mu_tau, sigma2_tau = update_dropout_params(stats, config.variance_floor)
    profile, alpha = backtracking_ascent(params, stats, data, config, update_alpha)
    new = ModelParams(profile, alpha, mu_kappa, sigma2_kappa, mu_tau, sigma2_tau)
    return new.validate(config.resolve_eps_a(profile.shape[0]), config.eps_alpha)
