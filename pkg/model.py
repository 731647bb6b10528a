"""
Tipos del modelo, validación de datos y fórmulas deterministas compartidas

Las etiquetas de tipo celular se manejan internamente con base 0
(0..K-1); los archivos y la línea de comandos usan 1..K.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from config import MSTEP_DEFAULTS
from utils import logistic

logger = logging.getLogger(__name__)

# Matriz N x K, columnas estocásticas, entradas >= eps_A
ProfileMatrix = np.ndarray

COLUMN_SUM_TOL = 1e-9

# Categorías de classify_zeros
DROPOUT = 0
STRUCTURAL_ZERO = 1
OBSERVED = 2


# ==================== ERRORES ====================

class UrsmError(ValueError):
    """Error base del modelo"""


class DatasetError(UrsmError):
    """Datos de entrada inválidos"""


class DimensionError(DatasetError):
    pass


class LabelError(DatasetError):
    pass


class DepthError(DatasetError):
    pass


class CountError(DatasetError):
    pass


class ProfileError(UrsmError):
    """La matriz de perfiles no es estocástica o viola el piso eps_A"""


class ParamsError(UrsmError):
    pass


class StateError(UrsmError):
    """Estado latente inconsistente con los datos"""


class ConfigError(UrsmError):
    """Configuración inválida (se detecta antes de cualquier cómputo)"""


# ==================== TIPOS ====================

@dataclass(frozen=True)
class Dimensions:
    """
    Tamaños del problema: N genes, K tipos, L células, M muestras bulk
    n_bulk = 0 sólo cuando no hay datos bulk (submodelo de células)
    """
    n_genes: int
    n_cell_types: int
    n_cells: int
    n_bulk: int

    def __post_init__(self):
        for name in ('n_genes', 'n_cell_types', 'n_cells'):
            if int(getattr(self, name)) <= 0:
                raise DimensionError(f"{name} debe ser positivo (recibido {getattr(self, name)})")
        if int(self.n_bulk) < 0:
            raise DimensionError(f"n_bulk no puede ser negativo (recibido {self.n_bulk})")
        if self.n_cell_types > self.n_genes:
            raise DimensionError(
                f"Más tipos celulares ({self.n_cell_types}) que genes ({self.n_genes})")


@dataclass(frozen=True)
class BulkCounts:
    """Conteos bulk X (N x M) con profundidades R_j"""
    counts: np.ndarray
    depths: np.ndarray


@dataclass(frozen=True)
class SingleCellCounts:
    """Conteos de células Y (N x L), profundidades R_l y etiquetas G_l (base 0)"""
    counts: np.ndarray
    depths: np.ndarray
    labels: np.ndarray


@dataclass(frozen=True)
class Dataset:
    """Datos validados; bulk es None en el submodelo de células"""
    single_cell: SingleCellCounts
    bulk: Optional[BulkCounts]
    dims: Dimensions
    gene_ids: Tuple[str, ...] = ()
    cell_ids: Tuple[str, ...] = ()
    sample_ids: Tuple[str, ...] = ()

    @property
    def has_bulk(self) -> bool:
        return self.bulk is not None and self.dims.n_bulk > 0

    def without_bulk(self) -> 'Dataset':
        dims = Dimensions(self.dims.n_genes, self.dims.n_cell_types, self.dims.n_cells, 0)
        return Dataset(self.single_cell, None, dims, self.gene_ids, self.cell_ids, ())


@dataclass
class ModelParams:
    """theta = (A, alpha, mu_kappa, sigma2_kappa, mu_tau, sigma2_tau)"""
    profile: ProfileMatrix
    alpha: np.ndarray
    mu_kappa: float
    sigma2_kappa: float
    mu_tau: float
    sigma2_tau: float

    def copy(self) -> 'ModelParams':
        return ModelParams(self.profile.copy(), self.alpha.copy(), self.mu_kappa,
                           self.sigma2_kappa, self.mu_tau, self.sigma2_tau)

    def validate(self, eps_a: float, eps_alpha: float = MSTEP_DEFAULTS['eps_alpha']) -> 'ModelParams':
        """Verifica todas las invariantes de los parámetros"""
        check_profile(self.profile, eps_a)
        alpha = np.asarray(self.alpha, dtype=float)
        if alpha.shape != (self.profile.shape[1],):
            raise ParamsError(f"alpha debe tener {self.profile.shape[1]} componentes")
        if np.any(alpha < eps_alpha * (1 - 1e-12)):
            raise ParamsError(f"alpha por debajo de eps_alpha={eps_alpha}: {alpha}")
        for name in ('sigma2_kappa', 'sigma2_tau'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParamsError(f"{name} debe ser positivo (recibido {value})")
        for name in ('mu_kappa', 'mu_tau'):
            if not np.isfinite(getattr(self, name)):
                raise ParamsError(f"{name} no es finito")
        return self


@dataclass
class LatentState:
    """
    Una configuración de Gibbs: W (K x M), Z~ (N x M x K), S (N x L),
    kappa y tau por célula, omega (N x L)
    """
    w: np.ndarray
    ztilde: np.ndarray
    s: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    omega: np.ndarray


@dataclass
class SufficientStats:
    """
    Esperanzas posteriores que necesitan las ecuaciones del paso M

    ztilde (N,M,K), s (N,L), log_w y w (K,M), kappa/tau/kappa2/tau2 (L,),
    omega_tau2 = E[w tau^2], omega_tau_kappa = E[w tau kappa] y
    s_tau = E[(S - 1/2) tau], todas (N,L)
    """
    ztilde: np.ndarray
    s: np.ndarray
    log_w: np.ndarray
    w: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    kappa2: np.ndarray
    tau2: np.ndarray
    omega_tau2: np.ndarray
    omega_tau_kappa: np.ndarray
    s_tau: np.ndarray
    n_samples: int = 0

    def check(self, data: Dataset, tol: float = 1e-9) -> 'SufficientStats':
        """Invariantes: E[S] en [0,1], E[S]=1 si Y>0, sumas de Z~, Jensen"""
        y = data.single_cell.counts
        if np.any(self.s < -tol) or np.any(self.s > 1 + tol):
            raise StateError("E[S] fuera de [0, 1]")
        if np.any(np.abs(self.s[y > 0] - 1.0) > tol):
            raise StateError("E[S] debe valer 1 donde Y > 0")
        if data.has_bulk:
            sums = self.ztilde.sum(axis=2)
            if np.max(np.abs(sums - data.bulk.counts)) > tol * max(1.0, data.bulk.counts.max()):
                raise StateError("La suma de E[Z~] sobre tipos no coincide con X")
            if np.any(self.log_w > np.log(np.maximum(self.w, 1e-300)) + 1e-9):
                raise StateError("E[log W] > log E[W] (viola Jensen)")
        return self


# ==================== VALIDACIÓN ====================

def default_eps_a(n_genes: int, scale: float = MSTEP_DEFAULTS['eps_a_scale']) -> float:
    """Piso de A relativo a la escala 1/N de cada columna"""
    return 1.0 / (scale * n_genes)


def check_profile(profile: np.ndarray, eps_a: float = 0.0) -> ProfileMatrix:
    """Verifica que A sea estocástica por columnas con entradas >= eps_A"""
    profile = np.asarray(profile, dtype=float)
    if profile.ndim != 2:
        raise ProfileError(f"A debe ser una matriz, recibido ndim={profile.ndim}")
    if not np.all(np.isfinite(profile)):
        raise ProfileError("A contiene valores no finitos")
    if np.any(profile < eps_a - 1e-15):
        raise ProfileError(f"A tiene entradas menores que eps_A={eps_a:.3g}: mínimo {profile.min():.3g}")
    sums = profile.sum(axis=0)
    if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL):
        raise ProfileError(f"Las columnas de A deben sumar 1: {sums}")
    return profile


def _as_count_matrix(values, name: str) -> np.ndarray:
    matrix = np.asarray(values)
    if matrix.ndim != 2:
        raise DimensionError(f"{name} debe ser una matriz (ndim={matrix.ndim})")
    if not np.issubdtype(matrix.dtype, np.number):
        raise CountError(f"{name} contiene valores no numéricos")
    as_float = matrix.astype(float)
    bad = ~np.isfinite(as_float) | (as_float < 0) | (as_float != np.round(as_float))
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        raise CountError(
            f"{name}[{row}, {col}] = {matrix[row, col]!r} no es un conteo entero no negativo")
    return as_float.astype(np.int64)


def _depths(counts: np.ndarray, name: str) -> np.ndarray:
    depths = counts.sum(axis=0)
    if np.any(depths <= 0):
        col = int(np.flatnonzero(depths <= 0)[0])
        raise DepthError(f"La columna {col} de {name} tiene profundidad cero")
    return depths


def validate_dataset(bulk, single_cell, labels: Sequence[int],
                     dims: Optional[Dimensions] = None,
                     gene_ids: Sequence[str] = (), cell_ids: Sequence[str] = (),
                     sample_ids: Sequence[str] = ()) -> Dataset:
    """
    Valida las matrices y calcula las profundidades

    bulk puede ser None (submodelo de células). Las etiquetas llegan en
    1..K; si dims es None, K se toma como la etiqueta máxima.
    Las profundidades siempre se recalculan a partir de las matrices.
    """
    y = _as_count_matrix(single_cell, 'Y')
    n_genes, n_cells = y.shape
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != n_cells:
        raise DimensionError(f"Se esperaban {n_cells} etiquetas, recibidas {labels.size}")
    if labels.size and not np.all(labels == np.round(labels.astype(float))):
        raise LabelError("Las etiquetas deben ser enteros 1..K")
    labels = labels.astype(np.int64)

    x = None
    if bulk is not None:
        x = _as_count_matrix(bulk, 'X')
        if x.shape[0] != n_genes:
            raise DimensionError(f"X tiene {x.shape[0]} genes y Y tiene {n_genes}")

    n_types = int(labels.max()) if dims is None else dims.n_cell_types
    if dims is None:
        dims = Dimensions(n_genes, n_types, n_cells, 0 if x is None else x.shape[1])
    expected = (dims.n_genes, dims.n_cells)
    if y.shape != expected:
        raise DimensionError(f"Y tiene forma {y.shape}, se esperaba {expected}")
    if x is not None and x.shape != (dims.n_genes, dims.n_bulk):
        raise DimensionError(f"X tiene forma {x.shape}, se esperaba {(dims.n_genes, dims.n_bulk)}")
    if x is None and dims.n_bulk != 0:
        raise DimensionError("dims indica muestras bulk pero no se recibió X")

    bad = (labels < 1) | (labels > dims.n_cell_types)
    if np.any(bad):
        cell = int(np.flatnonzero(bad)[0])
        raise LabelError(
            f"La célula {cell} tiene etiqueta {labels[cell]} fuera de 1..{dims.n_cell_types}")

    sc = SingleCellCounts(y, _depths(y, 'Y'), labels - 1)
    bk = None if x is None else BulkCounts(x, _depths(x, 'X'))
    logger.debug("Datos validados: N=%d K=%d L=%d M=%d", dims.n_genes, dims.n_cell_types,
                 dims.n_cells, dims.n_bulk)
    return Dataset(sc, bk, dims, tuple(gene_ids), tuple(cell_ids), tuple(sample_ids))


# ==================== FÓRMULAS DEL MODELO ====================

def observation_prob(profile: ProfileMatrix, kappa: float, tau: float, gene, cell_type: int):
    """
    pi_il = logistic(kappa_l + tau_l * A[i, k])

    gene puede ser un índice (devuelve float) o un slice/arreglo de índices
    (devuelve un arreglo).
    """
    if not (np.isfinite(kappa) and np.isfinite(tau)):
        raise ParamsError(f"kappa y tau deben ser finitos (kappa={kappa}, tau={tau})")
    value = logistic(kappa + tau * np.asarray(profile)[gene, cell_type])
    return float(value) if np.ndim(value) == 0 else value


def classify_zeros(y: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Clasifica cada entrada (i, l) en dropout, cero estructural u observada

    Devuelve una matriz de códigos DROPOUT / STRUCTURAL_ZERO / OBSERVED.
    """
    y = np.asarray(y)
    s = np.asarray(s)
    if y.shape != s.shape:
        raise DimensionError(f"Y {y.shape} y S {s.shape} difieren en forma")
    if np.any((s == 0) & (y > 0)):
        row, col = np.argwhere((s == 0) & (y > 0))[0]
        raise StateError(f"S[{row}, {col}] = 0 con Y > 0")
    codes = np.full(y.shape, STRUCTURAL_ZERO, dtype=np.int8)
    codes[s == 0] = DROPOUT
    codes[y > 0] = OBSERVED
    return codes


def profile_by_cell(profile: ProfileMatrix, labels: np.ndarray) -> np.ndarray:
    """A[:, G_l] para cada célula, matriz N x L"""
    return profile[:, labels]


def cell_type_indicator(labels: np.ndarray, n_types: int) -> np.ndarray:
    """Matriz one-hot L x K de las etiquetas"""
    onehot = np.zeros((labels.shape[0], n_types))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    return onehot
