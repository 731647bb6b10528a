"""
Primitivas aleatorias reproducibles: Polya-Gamma PG(1, c), Dirichlet,
multinomial, normal bivariada y Bernoulli

Cada unidad de trabajo (célula, muestra bulk, ...) obtiene su propio
generador Philox derivado de (semilla, tipo de unidad, índice, barrido,
época), de modo que el resultado no depende del orden de ejecución.
"""
import logging
from dataclasses import dataclass, replace
from typing import Union

import numpy as np
from scipy.special import erfcx, expit, log_ndtr

logger = logging.getLogger(__name__)

# Códigos numéricos de los tipos de unidad (parte de la clave del flujo)
UNIT_KINDS = {
    'root': 0,
    'omega': 1,
    'kappa_tau': 2,
    's': 3,
    'ztilde': 4,
    'w': 5,
    'init': 6,
    'sim_profile': 7,
    'sim_bulk': 8,
    'sim_cell': 9,
    'nmf': 10,
    'test': 11,
    'pg_check': 12
}

# Punto de corte del método de series alternantes
PG_TRUNCATION = 0.64
PG_MAX_TERMS = 200
PG_GAMMA_TERMS = 200


class SamplerError(ValueError):
    """Parámetros fuera del dominio de un muestreador"""


# ==================== FLUJOS ====================

@dataclass(frozen=True)
class RngStream:
    """
    Identificador de un flujo aleatorio

    La misma (seed, kind, index, sweep, epoch) produce siempre la misma
    secuencia; identificadores distintos dan flujos independientes.
    """
    seed: int
    kind: str = 'root'
    index: int = 0
    sweep: int = 0
    epoch: int = 0

    def __post_init__(self):
        if self.kind not in UNIT_KINDS:
            raise SamplerError(f"Tipo de unidad desconocido: {self.kind}")

    def key(self) -> tuple:
        return (UNIT_KINDS[self.kind], int(self.index), int(self.sweep), int(self.epoch))

    def generator(self) -> np.random.Generator:
        """Generador Philox (basado en contador) de este flujo"""
        seq = np.random.SeedSequence(entropy=int(self.seed) & (2 ** 64 - 1), spawn_key=self.key())
        return np.random.Generator(np.random.Philox(seq))

    def unit(self, kind: str, index: int) -> 'RngStream':
        """Subflujo de una unidad dentro del mismo barrido"""
        return replace(self, kind=kind, index=index)

    def at(self, sweep: int = None, epoch: int = None) -> 'RngStream':
        return replace(self, sweep=self.sweep if sweep is None else sweep,
                       epoch=self.epoch if epoch is None else epoch)


Stream = Union[RngStream, np.random.Generator]


def as_generator(stream: Stream) -> np.random.Generator:
    """Acepta un RngStream o un Generator ya construido"""
    if isinstance(stream, RngStream):
        return stream.generator()
    if isinstance(stream, np.random.Generator):
        return stream
    raise SamplerError(f"Se esperaba RngStream o Generator, recibido {type(stream).__name__}")


# ==================== POLYA-GAMMA ====================

def pg_mean(c):
    """E[PG(1, c)] = tanh(c/2) / (2c), 1/4 en c = 0"""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-6
    safe = np.where(small, 1.0, c)
    return np.where(small, 0.25 - c ** 2 / 48.0, np.tanh(safe / 2) / (2 * safe))


def pg_variance(c):
    """Var[PG(1, c)] = (2 tanh(c/2) - c sech^2(c/2)) / (4 c^3), 1/24 en c = 0"""
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    safe = np.where(small, 1.0, c)
    with np.errstate(over='ignore'):
        sech2 = 1.0 / np.cosh(safe / 2) ** 2
    exact = (2.0 * np.tanh(safe / 2) - safe * sech2) / (4 * safe ** 3)
    return np.where(small, 1.0 / 24.0 - c ** 2 / 120.0, exact)


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """Término a_n(x) de la serie alternante de J*(1)"""
    a = n + 0.5
    right = np.pi * a * np.exp(-0.5 * a * a * np.pi * np.pi * x)
    with np.errstate(divide='ignore', over='ignore', invalid='ignore'):
        left = np.pi * a * np.exp(1.5 * np.log(2.0 / (np.pi * x)) - 2.0 * a * a / x)
    return np.where(x > PG_TRUNCATION, right, left)


def _until_accepted(size: int, propose) -> np.ndarray:
    """Repite propose(idx) sobre los pendientes hasta aceptar todos"""
    out = np.empty(size)
    pending = np.arange(size)
    while pending.size:
        values, accepted = propose(pending)
        out[pending[accepted]] = values[accepted]
        pending = pending[~accepted]
    return out


def _truncated_inverse_gaussian(rng: np.random.Generator, z: np.ndarray) -> np.ndarray:
    """IG(1/z, 1) truncada a (0, PG_TRUNCATION), vectorizada"""
    t = PG_TRUNCATION
    out = np.empty(z.shape[0])
    low = z < 1.0 / t

    if np.any(low):
        zl = z[low]

        def propose_low(idx):
            def propose_e(jdx):
                e1 = rng.standard_exponential(jdx.size)
                e2 = rng.standard_exponential(jdx.size)
                return e1, e1 * e1 <= 2.0 * e2 / t
            e1 = _until_accepted(idx.size, propose_e)
            x = t / (1.0 + t * e1) ** 2
            u = rng.random(idx.size)
            return x, u <= np.exp(-0.5 * zl[idx] ** 2 * x)

        out[low] = _until_accepted(zl.size, propose_low)

    if np.any(~low):
        mu = 1.0 / z[~low]

        def propose_high(idx):
            m = mu[idx]
            y = rng.standard_normal(idx.size) ** 2
            x = m + 0.5 * m * m * y - 0.5 * m * np.sqrt(4.0 * m * y + (m * y) ** 2)
            u = rng.random(idx.size)
            x = np.where(u > m / (m + x), m * m / x, x)
            return x, x < t

        out[~low] = _until_accepted(mu.size, propose_high)
    return out


def pg_draw(stream: Stream, c) -> np.ndarray:
    """
    Muestras exactas de PG(1, c) por el método de series alternantes

    c puede ser escalar o arreglo; se devuelve un arreglo de la misma forma.
    """
    c = np.asarray(c, dtype=float)
    if not np.all(np.isfinite(c)):
        raise SamplerError("El parámetro c de Polya-Gamma debe ser finito")
    rng = as_generator(stream)
    shape = c.shape
    z = 0.5 * np.abs(c.ravel())
    t = PG_TRUNCATION

    k = np.pi ** 2 / 8.0 + 0.5 * z * z
    a, b = 1.0 / np.sqrt(2.0 * t), z * np.sqrt(t / 2.0)
    # pesos de las dos partes de la propuesta en escala log; en lineal
    # ambos se anulan para |c| grandes
    log_p = np.log(np.pi / 2.0) - np.log(k) - k * t
    log_q = np.logaddexp(-z + np.log(2.0) + log_ndtr(np.sqrt(2.0) * (b - a)),
                         np.log(erfcx(a + b)) + z - (a + b) ** 2)
    prob_ig = expit(log_q - log_p)

    def propose(idx):
        n = idx.size
        use_ig = rng.random(n) < prob_ig[idx]
        x = np.empty(n)
        if np.any(use_ig):
            x[use_ig] = _truncated_inverse_gaussian(rng, z[idx][use_ig])
        if np.any(~use_ig):
            x[~use_ig] = t + rng.standard_exponential(int((~use_ig).sum())) / k[idx][~use_ig]

        total = _series_coef(0, x)
        threshold = rng.random(n) * total
        accepted = np.zeros(n, dtype=bool)
        undecided = np.ones(n, dtype=bool)
        for term in range(1, PG_MAX_TERMS):
            coef = _series_coef(term, x)
            if term % 2:
                total = total - coef
                hit = undecided & (threshold <= total)
                accepted |= hit
            else:
                total = total + coef
                hit = undecided & (threshold > total)
            undecided &= ~hit
            if not undecided.any():
                break
        else:
            logger.debug("Serie PG sin decidir tras %d términos", PG_MAX_TERMS)
        return 0.25 * x, accepted

    draws = _until_accepted(z.size, propose)
    return draws.reshape(shape)


def pg_draw_truncated(stream: Stream, c, terms: int = PG_GAMMA_TERMS) -> np.ndarray:
    """
    Aproximación por suma truncada de gammas (sólo para modo depuración)
    Se corrige la media para que coincida con la media exacta.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if not np.all(np.isfinite(c)):
        raise SamplerError("El parámetro c de Polya-Gamma debe ser finito")
    rng = as_generator(stream)
    flat = c.ravel()
    ksq = (np.arange(terms) + 0.5) ** 2
    denom = ksq[None, :] + flat[:, None] ** 2 / (4.0 * np.pi ** 2)
    gammas = rng.gamma(1.0, 1.0, size=denom.shape)
    draws = 0.5 / np.pi ** 2 * np.sum(gammas / denom, axis=1)
    truncated_mean = 0.5 / np.pi ** 2 * np.sum(1.0 / denom, axis=1)
    draws = draws * pg_mean(flat) / truncated_mean
    return draws.reshape(c.shape)


# ==================== OTRAS DISTRIBUCIONES ====================

def dirichlet_draw(stream: Stream, params) -> np.ndarray:
    """Vector en el símplex con parámetros positivos"""
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or params.size == 0:
        raise SamplerError("Los parámetros de Dirichlet deben ser un vector")
    if np.any(~np.isfinite(params)) or np.any(params <= 0):
        raise SamplerError(f"Parámetros de Dirichlet no positivos: {params}")
    draw = as_generator(stream).dirichlet(params)
    return draw / draw.sum()


def _check_simplex(probs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    probs = np.asarray(probs, dtype=float)
    if np.any(~np.isfinite(probs)) or np.any(probs < 0):
        raise SamplerError("Probabilidades negativas o no finitas")
    if np.any(np.abs(probs.sum(axis=-1) - 1.0) > tol):
        raise SamplerError("Las probabilidades deben sumar 1")
    return probs


def multinomial_draw(stream: Stream, trials, probs) -> np.ndarray:
    """
    Conteos multinomiales; trials y probs se difunden por filas
    (probs puede ser una matriz con una distribución por fila)
    """
    trials = np.asarray(trials)
    if np.any(trials < 0) or np.any(trials != np.round(trials)):
        raise SamplerError(f"Número de ensayos inválido: {trials}")
    probs = _check_simplex(probs)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    return as_generator(stream).multinomial(trials.astype(np.int64), probs)


def mvn2_draw(stream: Stream, mean, precision) -> np.ndarray:
    """Normal bivariada con media y matriz de precisión (covarianza = inversa)"""
    mean = np.asarray(mean, dtype=float)
    precision = np.asarray(precision, dtype=float)
    if mean.shape != (2,) or precision.shape != (2, 2):
        raise SamplerError("mvn2_draw requiere media de tamaño 2 y precisión 2x2")
    if not np.allclose(precision, precision.T, rtol=1e-12, atol=0.0):
        raise SamplerError("La matriz de precisión debe ser simétrica")
    try:
        chol = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise SamplerError(f"Precisión no definida positiva: {precision.tolist()}") from exc
    z = as_generator(stream).standard_normal(2)
    # x = m + L^{-T} z tiene covarianza (L L^T)^{-1}
    return mean + np.linalg.solve(chol.T, z)


def bernoulli_draw(stream: Stream, probs) -> np.ndarray:
    """Variables 0/1 con probabilidades dadas"""
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1) or np.any(~np.isfinite(probs)):
        raise SamplerError("Probabilidades de Bernoulli fuera de [0, 1]")
    return (as_generator(stream).random(probs.shape) < probs).astype(np.int8)
