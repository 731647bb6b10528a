"""
Generador de datos sintéticos con verdad conocida

Perfiles log-normales con genes marcadores, anti-marcadores y de
mantenimiento; muestras bulk con proporciones Dirichlet y profundidad
Poisson; células con dropouts logísticos y profundidad binomial negativa.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from config import SIM_DEFAULTS
from model import (BulkCounts, ConfigError, Dataset, Dimensions, SingleCellCounts,
                   default_eps_a, observation_prob, validate_dataset)
from mstep import project_profile
from samplers import RngStream, bernoulli_draw, dirichlet_draw, multinomial_draw

logger = logging.getLogger(__name__)

GENE_ROLES = ('marker', 'anti-marker', 'housekeeping', 'other')
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SimConfig:
    """
    Diseño de la simulación

    n_cell_types es el número de tipos con células; bulk_cell_types (si se
    da) agrega tipos presentes sólo en las muestras bulk. cell_type_counts
    reemplaza a cell_type_proportions cuando se quiere fijar cada conteo.
    """
    n_genes: int = SIM_DEFAULTS['n_genes']
    n_cells: int = SIM_DEFAULTS['n_cells']
    n_bulk: int = SIM_DEFAULTS['n_bulk']
    n_cell_types: int = SIM_DEFAULTS['n_cell_types']
    cell_type_proportions: Tuple[float, ...] = tuple(SIM_DEFAULTS['cell_type_proportions'])
    alpha_true: Tuple[float, ...] = tuple(SIM_DEFAULTS['alpha_true'])
    n_marker: int = SIM_DEFAULTS['n_marker']
    n_anti_marker: int = SIM_DEFAULTS['n_anti_marker']
    n_housekeeping: int = SIM_DEFAULTS['n_housekeeping']
    kappa_mean: float = SIM_DEFAULTS['kappa_mean']
    kappa_sd: float = SIM_DEFAULTS['kappa_sd']
    tau_mean_per_gene: float = SIM_DEFAULTS['tau_mean_per_gene']
    tau_sd_per_gene: float = SIM_DEFAULTS['tau_sd_per_gene']
    bulk_depth_per_gene: float = SIM_DEFAULTS['bulk_depth_per_gene']
    sc_depth_per_gene: float = SIM_DEFAULTS['sc_depth_per_gene']
    sc_dispersion: float = SIM_DEFAULTS['sc_dispersion']
    seed: int = SIM_DEFAULTS['seed']
    bulk_cell_types: Optional[int] = None
    cell_type_counts: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        for name in ('cell_type_proportions', 'alpha_true'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.cell_type_counts is not None:
            object.__setattr__(self, 'cell_type_counts', tuple(int(v) for v in self.cell_type_counts))

        if min(self.n_genes, self.n_cells, self.n_cell_types) < 1 or self.n_bulk < 0:
            raise ConfigError("Dimensiones de la simulación inválidas")
        if self.total_types < self.n_cell_types:
            raise ConfigError("bulk_cell_types no puede ser menor que n_cell_types")
        roles = self.total_types * (self.n_marker + self.n_anti_marker) + self.n_housekeeping
        if min(self.n_marker, self.n_anti_marker, self.n_housekeeping) < 0 or roles > self.n_genes:
            raise ConfigError(
                f"Roles de genes infactibles: {roles} genes con rol para N={self.n_genes}")
        if self.n_housekeeping == self.n_genes:
            raise ConfigError("Se necesita al menos un gen fuera del bloque de mantenimiento")
        if self.cell_type_counts is None:
            props = np.asarray(self.cell_type_proportions)
            if props.shape != (self.n_cell_types,) or np.any(props < 0) or abs(props.sum() - 1) > 1e-9:
                raise ConfigError("cell_type_proportions debe ser un vector de K proporciones")
        elif (len(self.cell_type_counts) != self.n_cell_types or min(self.cell_type_counts) < 1
              or sum(self.cell_type_counts) != self.n_cells):
            raise ConfigError("cell_type_counts debe tener K conteos positivos que sumen n_cells")
        if len(self.alpha_true) != self.total_types or min(self.alpha_true) <= 0:
            raise ConfigError(f"alpha_true debe tener {self.total_types} valores positivos")
        if min(self.kappa_sd, self.tau_sd_per_gene, self.sc_dispersion) <= 0:
            raise ConfigError("Desviaciones y dispersión deben ser positivas")
        if self.bulk_depth_per_gene <= 0 or self.sc_depth_per_gene <= 0:
            raise ConfigError("Las profundidades medias deben ser positivas")

    @property
    def total_types(self) -> int:
        return self.n_cell_types if self.bulk_cell_types is None else int(self.bulk_cell_types)

    def counts_per_type(self) -> np.ndarray:
        """Células por tipo: conteos fijos o proporciones con mayor resto"""
        if self.cell_type_counts is not None:
            return np.asarray(self.cell_type_counts)
        exact = np.asarray(self.cell_type_proportions) * self.n_cells
        counts = np.floor(exact).astype(int)
        remainder = self.n_cells - counts.sum()
        counts[np.argsort(-(exact - counts), kind='stable')[:remainder]] += 1
        return counts


@dataclass
class GroundTruth:
    """Verdad de la simulación; labels con base 0"""
    profile: np.ndarray
    model_profile: np.ndarray
    proportions: np.ndarray
    dropouts: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray
    gene_roles: np.ndarray
    role_types: np.ndarray
    labels: np.ndarray


# ==================== PERFILES ====================

def simulate_profile(config: SimConfig, stream: RngStream) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Matriz A (N x K_total) con bloques disjuntos de genes:
    marcadores, anti-marcadores, mantenimiento y libres.
    Devuelve (A, roles, tipo asociado a cada rol o -1)
    """
    n, k = config.n_genes, config.total_types
    rng = stream.generator()
    profile = rng.lognormal(0.0, 1.0, size=(n, k))
    roles = np.full(n, 'other', dtype=object)
    role_types = np.full(n, -1)

    start = 0
    for cell_type in range(k):
        block = slice(start, start + config.n_marker)
        profile[block, np.arange(k) != cell_type] = 0.0
        roles[block], role_types[block] = 'marker', cell_type
        start += config.n_marker
    for cell_type in range(k):
        block = slice(start, start + config.n_anti_marker)
        profile[block, cell_type] = 0.0
        roles[block], role_types[block] = 'anti-marker', cell_type
        start += config.n_anti_marker
    housekeeping = slice(start, start + config.n_housekeeping)
    profile[housekeeping, :] = rng.lognormal(0.0, 1.0, size=config.n_housekeeping)[:, None]
    roles[housekeeping] = 'housekeeping'

    is_hk = roles == 'housekeeping'
    share = config.n_housekeeping / n
    if is_hk.any():
        profile[is_hk] *= share / profile[is_hk].sum(axis=0, keepdims=True)
    profile[~is_hk] *= (1.0 - share) / profile[~is_hk].sum(axis=0, keepdims=True)
    return profile, roles, role_types


# ==================== DATOS ====================

def _bulk_sample(config: SimConfig, profile: np.ndarray, stream: RngStream):
    rng = stream.generator()
    w = dirichlet_draw(rng, config.alpha_true)
    depth = rng.poisson(config.bulk_depth_per_gene * config.n_genes)
    mixture = profile @ w
    return w, multinomial_draw(rng, depth, mixture / mixture.sum())


def negative_binomial_depths(rng: np.random.Generator, mean: float, dispersion: float,
                             size: int) -> np.ndarray:
    """
    Profundidades NB con media `mean` y varianza mean + mean^2 / dispersion
    Los ceros se vuelven a sortear.
    """
    p = dispersion / (dispersion + mean)
    depths = rng.negative_binomial(dispersion, p, size=size)
    for _ in range(MAX_REDRAWS):
        zero = depths == 0
        if not zero.any():
            return depths
        depths[zero] = rng.negative_binomial(dispersion, p, size=int(zero.sum()))
    raise ConfigError("Profundidad de célula nula tras varios sorteos")


def _cell(config: SimConfig, profile: np.ndarray, cell_type: int, stream: RngStream):
    rng = stream.generator()
    n = config.n_genes
    column = profile[:, cell_type]
    kappa = rng.normal(config.kappa_mean, config.kappa_sd)
    tau = rng.normal(config.tau_mean_per_gene * n, config.tau_sd_per_gene * n)
    mean = config.sc_depth_per_gene * n
    r = config.sc_dispersion
    probs = observation_prob(profile, kappa, tau, slice(None), cell_type)
    for _ in range(MAX_REDRAWS):
        s = bernoulli_draw(rng, probs)
        weights = column * s
        if weights.sum() > 0:
            break
    else:
        raise ConfigError("No se pudo simular una célula con genes expresados")
    depth = int(negative_binomial_depths(rng, mean, r, 1)[0])
    counts = multinomial_draw(rng, depth, weights / weights.sum())
    return kappa, tau, s, depth, counts


def simulate(config: SimConfig = SimConfig()) -> Tuple[BulkCounts, SingleCellCounts, GroundTruth]:
    """Genera datos bulk y de células junto con la verdad"""
    root = RngStream(config.seed)
    profile, roles, role_types = simulate_profile(config, root.unit('sim_profile', 0))
    n, cells, m = config.n_genes, config.n_cells, config.n_bulk

    labels = np.repeat(np.arange(config.n_cell_types), config.counts_per_type())
    sc = [_cell(config, profile, labels[l], root.unit('sim_cell', l)) for l in range(cells)]
    kappa = np.array([c[0] for c in sc])
    tau = np.array([c[1] for c in sc])
    dropouts = np.column_stack([c[2] for c in sc])
    y = np.column_stack([c[4] for c in sc]).astype(np.int64)

    bulk = [_bulk_sample(config, profile, root.unit('sim_bulk', j)) for j in range(m)]
    w = np.column_stack([b[0] for b in bulk]) if m else np.zeros((config.total_types, 0))
    x = np.column_stack([b[1] for b in bulk]).astype(np.int64) if m else np.zeros((n, 0), np.int64)

    model_profile = project_profile(profile, default_eps_a(n))
    truth = GroundTruth(profile=profile, model_profile=model_profile, proportions=w,
                        dropouts=dropouts, kappa=kappa, tau=tau, gene_roles=roles,
                        role_types=role_types, labels=labels)
    logger.info("Simulación: N=%d L=%d M=%d K=%d, %.1f%% de ceros en Y",
                n, cells, m, config.n_cell_types, 100.0 * (y == 0).mean())
    return (BulkCounts(x, x.sum(axis=0)), SingleCellCounts(y, y.sum(axis=0), labels), truth)


def simulated_dataset(config: SimConfig = SimConfig()) -> Tuple[Dataset, GroundTruth]:
    """simulate() validado como Dataset (K = tipos con células)"""
    bulk, sc, truth = simulate(config)
    dims = Dimensions(config.n_genes, config.n_cell_types, config.n_cells, config.n_bulk)
    data = validate_dataset(bulk.counts if config.n_bulk else None, sc.counts, sc.labels + 1, dims)
    return data, truth


def dropout_rate(single_cell: SingleCellCounts, truth: GroundTruth) -> dict:
    """Fracción de ceros en Y, fracción de dropouts y fracción de ceros que son dropouts"""
    zeros = single_cell.counts == 0
    dropped = truth.dropouts == 0
    return {
        'zero_fraction': float(zeros.mean()),
        'dropout_fraction': float(dropped.mean()),
        'dropout_share_of_zeros': float(dropped.sum() / max(zeros.sum(), 1)),
    }
