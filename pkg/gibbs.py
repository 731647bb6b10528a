"""
Paso E: barridos de Gibbs sobre todas las variables latentes y acumulación
de los estadísticos suficientes

Orden por barrido: omega -> (kappa, tau) -> S para cada célula;
Z~ -> W para cada muestra bulk. Células y muestras son condicionalmente
independientes dado theta, y cada una usa su propio subflujo aleatorio.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.linalg import cho_factor, cho_solve

from config import ESTEP_DEFAULTS
from model import (ConfigError, Dataset, LatentState, ModelParams, StateError, SufficientStats,
                   profile_by_cell)
from samplers import (RngStream, dirichlet_draw, multinomial_draw, mvn2_draw, pg_draw,
                      pg_draw_truncated, pg_mean, pg_variance)

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-300
CACHE_TOL = 1e-10


@dataclass(frozen=True)
class EStepConfig:
    n_sweeps: int = ESTEP_DEFAULTS['n_sweeps']
    burn_in_fraction: float = ESTEP_DEFAULTS['burn_in_fraction']
    thinning: int = ESTEP_DEFAULTS['thinning']
    debug: bool = ESTEP_DEFAULTS['debug']

    def __post_init__(self):
        if self.n_sweeps < 1:
            raise ConfigError("n_sweeps debe ser al menos 1")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigError("burn_in_fraction debe estar en [0, 1)")
        if self.thinning < 1:
            raise ConfigError("thinning debe ser al menos 1")
        if self.burn_in >= self.n_sweeps:
            raise ConfigError("El burn-in debe ser menor que n_sweeps")

    @property
    def burn_in(self) -> int:
        return int(self.n_sweeps * self.burn_in_fraction)

    def is_retained(self, sweep: int) -> bool:
        return sweep >= self.burn_in and (sweep - self.burn_in) % self.thinning == 0

    @property
    def n_retained(self) -> int:
        return sum(1 for sweep in range(self.n_sweeps) if self.is_retained(sweep))


@dataclass
class ChainState:
    """
    Estado latente más cachés: psi = kappa + tau * A[i, G_l],
    A_g = A[:, G_l] y u_s[l] = sum_i A[i, G_l] S[i, l]
    """
    latent: LatentState
    profile_g: np.ndarray
    psi: np.ndarray
    u_s: np.ndarray

    def refresh_psi(self, cell: int = None):
        lat = self.latent
        if cell is None:
            self.psi = lat.kappa[None, :] + lat.tau[None, :] * self.profile_g
        else:
            self.psi[:, cell] = lat.kappa[cell] + lat.tau[cell] * self.profile_g[:, cell]

    def check(self, data: Dataset):
        """Revalida cachés contra los valores latentes (modo depuración)"""
        lat = self.latent
        psi = lat.kappa[None, :] + lat.tau[None, :] * self.profile_g
        if np.max(np.abs(psi - self.psi), initial=0.0) > CACHE_TOL * max(1.0, np.abs(psi).max()):
            raise StateError("Caché psi inconsistente")
        u_s = (self.profile_g * lat.s).sum(axis=0)
        if np.max(np.abs(u_s - self.u_s), initial=0.0) > CACHE_TOL:
            raise StateError("Suma incremental u_s inconsistente")
        if np.any((lat.s == 0) & (data.single_cell.counts > 0)):
            raise StateError("S = 0 en una entrada observada")
        if data.has_bulk:
            if np.any(lat.ztilde.sum(axis=2) != data.bulk.counts):
                raise StateError("Z~ no suma X")
            if np.any(np.abs(lat.w.sum(axis=0) - 1.0) > 1e-9):
                raise StateError("Columnas de W fuera del símplex")


# ==================== INICIALIZACIÓN ====================

def init_chain(data: Dataset, params: ModelParams, stream: RngStream) -> ChainState:
    """
    S = 1, (kappa, tau) = (mu_kappa, mu_tau), W = alpha / sum(alpha) y
    Z~ extraído una vez de su condicional
    """
    dims = data.dims
    n, k, cells, m = dims.n_genes, dims.n_cell_types, dims.n_cells, dims.n_bulk
    profile_g = profile_by_cell(params.profile, data.single_cell.labels)
    s = np.ones((n, cells), dtype=np.int8)
    kappa = np.full(cells, float(params.mu_kappa))
    tau = np.full(cells, float(params.mu_tau))
    w = np.tile((params.alpha / params.alpha.sum())[:, None], (1, m))
    latent = LatentState(w=w, ztilde=np.zeros((n, m, k), dtype=np.int64), s=s,
                         kappa=kappa, tau=tau, omega=np.zeros((n, cells)))
    state = ChainState(latent, profile_g, np.zeros((n, cells)), profile_g.sum(axis=0))
    state.refresh_psi()
    latent.omega = pg_mean(state.psi)
    if data.has_bulk:
        sample_ztilde(state, data, params, stream.at(sweep=0), kind='init')
    return state


# ==================== DATOS BULK ====================

def sample_ztilde(state: ChainState, data: Dataset, params: ModelParams, stream: RngStream,
                  kind: str = 'ztilde'):
    """Z~_ij ~ Multinomial(X_ij, A_i. * W_.j / sum_k A_ik W_kj)"""
    x = data.bulk.counts
    lat = state.latent
    for j in range(x.shape[1]):
        rng = stream.unit(kind, j).generator()
        weights = params.profile * lat.w[:, j][None, :]
        totals = weights.sum(axis=1, keepdims=True)
        if np.any(totals <= 0):
            raise StateError(f"Pesos de asignación nulos en la muestra {j}")
        lat.ztilde[:, j, :] = multinomial_draw(rng, x[:, j], weights / totals)
    return lat.ztilde


def sample_w(state: ChainState, params: ModelParams, stream: RngStream):
    """W_.j ~ Dirichlet(alpha + sum_i Z~_ij)"""
    lat = state.latent
    for j in range(lat.w.shape[1]):
        rng = stream.unit('w', j).generator()
        lat.w[:, j] = dirichlet_draw(rng, params.alpha + lat.ztilde[:, j, :].sum(axis=0))
    return lat.w


# ==================== DATOS DE CÉLULAS ====================

def sample_omega(state: ChainState, stream: RngStream):
    """omega_il ~ PG(1, psi_il)"""
    lat = state.latent
    for cell in range(lat.omega.shape[1]):
        lat.omega[:, cell] = pg_draw(stream.unit('omega', cell), state.psi[:, cell])
    return lat.omega


def kappa_tau_posterior(omega, s, a, params: ModelParams):
    """
    Precisión V y media m de (kappa_l, tau_l) dada omega y S de una célula
    """
    n = a.shape[0]
    sw = omega.sum()
    swa = omega @ a
    precision = np.array([[sw + 1.0 / params.sigma2_kappa, swa],
                          [swa, omega @ (a * a) + 1.0 / params.sigma2_tau]])
    rhs = np.array([s.sum() - n / 2.0 + params.mu_kappa / params.sigma2_kappa,
                    (s - 0.5) @ a + params.mu_tau / params.sigma2_tau])
    mean = cho_solve(cho_factor(precision), rhs)
    return mean, precision


def sample_kappa_tau(state: ChainState, params: ModelParams, stream: RngStream):
    """(kappa_l, tau_l) ~ N(m_wl, V_wl^-1) para cada célula"""
    lat = state.latent
    for cell in range(lat.kappa.shape[0]):
        mean, precision = kappa_tau_posterior(lat.omega[:, cell], lat.s[:, cell],
                                              state.profile_g[:, cell], params)
        lat.kappa[cell], lat.tau[cell] = mvn2_draw(stream.unit('kappa_tau', cell), mean, precision)
        state.refresh_psi(cell)
    return lat.kappa, lat.tau


@njit(cache=True)
def _s_sweep_kernel(a, y, psi, depth, uniforms, s, u_sum):
    # Recorre los genes en orden fijo; u_sum se actualiza tras cada cambio
    for i in range(a.shape[0]):
        if y[i] > 0:
            if s[i] == 0:
                s[i] = 1
                u_sum += a[i]
            continue
        others = u_sum - a[i] * s[i]
        if others <= 0.0:
            raise ValueError("Todos los demás genes de la célula están en dropout")
        logit_b = psi[i] + depth * math.log(others / (a[i] + others))
        if logit_b >= 0:
            b = 1.0 / (1.0 + math.exp(-logit_b))
        else:
            e = math.exp(logit_b)
            b = e / (1.0 + e)
        new = 1 if uniforms[i] < b else 0
        if new != s[i]:
            u_sum += (new - s[i]) * a[i]
            s[i] = new
    return u_sum


def sample_s(state: ChainState, data: Dataset, stream: RngStream):
    """
    S_il ~ Bernoulli(b_il) con b_il = 1 si Y_il > 0 y en otro caso
    logistic(psi_il + R_l log(sum_{n!=i} A S / (A_i + sum_{n!=i} A S)))
    """
    lat = state.latent
    y = data.single_cell.counts
    depths = data.single_cell.depths
    for cell in range(y.shape[1]):
        uniforms = stream.unit('s', cell).generator().random(y.shape[0])
        column = np.ascontiguousarray(lat.s[:, cell])
        state.u_s[cell] = _s_sweep_kernel(
            np.ascontiguousarray(state.profile_g[:, cell]), np.ascontiguousarray(y[:, cell]),
            np.ascontiguousarray(state.psi[:, cell]), float(depths[cell]), uniforms, column,
            float(state.u_s[cell]))
        lat.s[:, cell] = column
    return lat.s


def gibbs_sweep(state: ChainState, data: Dataset, params: ModelParams, stream: RngStream):
    """Un barrido completo sobre células y muestras bulk"""
    sample_omega(state, stream)
    sample_kappa_tau(state, params, stream)
    sample_s(state, data, stream)
    if data.has_bulk:
        sample_ztilde(state, data, params, stream)
        sample_w(state, params, stream)


# ==================== PASO E ====================

def cross_check_omega(omega: np.ndarray, psi: np.ndarray, stream: RngStream) -> float:
    """
    Compara la suma de omega contra sorteos de la aproximación por gammas
    con los mismos psi. Devuelve la diferencia en desvíos estándar.
    """
    approx = pg_draw_truncated(stream.unit('pg_check', 0), psi.ravel())
    spread = np.sqrt(2.0 * pg_variance(psi).sum())
    gap = abs(float(omega.sum() - approx.sum())) / max(spread, LOG_FLOOR)
    if gap > 6.0:
        logger.warning("omega se aleja %.1f desvíos de la aproximación por gammas", gap)
    return gap


class _Accumulator:
    """Sumas de los sorteos retenidos; los productos se forman por sorteo"""

    def __init__(self, dims):
        n, k, cells, m = dims.n_genes, dims.n_cell_types, dims.n_cells, dims.n_bulk
        self.count = 0
        self.sums = {
            'ztilde': np.zeros((n, m, k)), 'log_w': np.zeros((k, m)), 'w': np.zeros((k, m)),
            's': np.zeros((n, cells)), 'kappa': np.zeros(cells), 'tau': np.zeros(cells),
            'kappa2': np.zeros(cells), 'tau2': np.zeros(cells),
            'omega_tau2': np.zeros((n, cells)), 'omega_tau_kappa': np.zeros((n, cells)),
            's_tau': np.zeros((n, cells)),
        }

    def add(self, lat: LatentState, with_bulk: bool):
        sums = self.sums
        self.count += 1
        kappa, tau = lat.kappa, lat.tau
        sums['s'] += lat.s
        sums['kappa'] += kappa
        sums['tau'] += tau
        sums['kappa2'] += kappa ** 2
        sums['tau2'] += tau ** 2
        sums['omega_tau2'] += lat.omega * (tau ** 2)[None, :]
        sums['omega_tau_kappa'] += lat.omega * (tau * kappa)[None, :]
        sums['s_tau'] += (lat.s - 0.5) * tau[None, :]
        if with_bulk:
            sums['ztilde'] += lat.ztilde
            sums['w'] += lat.w
            sums['log_w'] += np.log(np.maximum(lat.w, LOG_FLOOR))

    def finish(self) -> SufficientStats:
        means = {name: value / self.count for name, value in self.sums.items()}
        return SufficientStats(n_samples=self.count, **means)


def run_estep(data: Dataset, params: ModelParams, config: EStepConfig, seed: int,
              epoch: int = 0, include_bulk: bool = True) -> SufficientStats:
    """
    Corre config.n_sweeps barridos, descarta el burn-in y promedia los
    sorteos retenidos. include_bulk=False omite la parte bulk (submodelo de
    células o ruta MAP).
    """
    if not include_bulk and data.has_bulk:
        data = data.without_bulk()
    stream = RngStream(seed, epoch=epoch)
    state = init_chain(data, params, stream)
    acc = _Accumulator(data.dims)
    for sweep in range(config.n_sweeps):
        psi = state.psi.copy() if config.debug else None
        gibbs_sweep(state, data, params, stream.at(sweep=sweep))
        if config.debug:
            state.check(data)
            cross_check_omega(state.latent.omega, psi, stream.at(sweep=sweep))
        # Elimina la deriva numérica de la suma incremental
        state.u_s = (state.profile_g * state.latent.s).sum(axis=0)
        if config.is_retained(sweep):
            acc.add(state.latent, data.has_bulk)
    stats = acc.finish()
    logger.debug("Paso E (época %d): %d sorteos retenidos de %d barridos",
                 epoch, stats.n_samples, config.n_sweeps)
    return stats
