"""
Protocolo de comparación sobre datos simulados: perfil ingenuo, submodelo
de células, modelo conjunto (y opcionalmente la ruta MAP) contra una NMF de
divergencia, repetido sobre varias semillas
"""
import logging
import time
from dataclasses import dataclass, field, replace
from functools import partial
from typing import List, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm
from tqdm.contrib.concurrent import process_map

from baselines import l1_loss, naive_profile, nmf_divergence, nmf_dropout_scores, nmf_profile, roc_auc
from config import BENCHMARK_DEFAULTS, MODES
from gem import FitConfig, fit_gem, fit_map_fast, fit_single_cell_only
from model import ConfigError, UrsmError
from posterior import deconvolve, dropout_posterior
from samplers import RngStream
from simulation import SimConfig, simulated_dataset

logger = logging.getLogger(__name__)

METHODS = ('naive',) + MODES
METRICS = ['l1_profile', 'l1_profile_per_column', 'l1_proportions', 'auc',
           'seconds_per_iteration', 'n_iterations']
FITTERS = {'joint': fit_gem, 'sc-only': fit_single_cell_only, 'map-fast': fit_map_fast}


@dataclass(frozen=True)
class BenchmarkConfig:
    seeds: Tuple[int, ...] = tuple(BENCHMARK_DEFAULTS['seeds'])
    methods: Tuple[str, ...] = tuple(BENCHMARK_DEFAULTS['methods'])
    nmf_rank: int = BENCHMARK_DEFAULTS['nmf_rank']
    nmf_iterations: int = BENCHMARK_DEFAULTS['nmf_iterations']
    workers: int = BENCHMARK_DEFAULTS['workers']

    def __post_init__(self):
        object.__setattr__(self, 'seeds', tuple(int(s) for s in self.seeds))
        object.__setattr__(self, 'methods', tuple(self.methods))
        if not self.seeds:
            raise ConfigError("Se necesita al menos una semilla")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"Métodos desconocidos: {sorted(unknown)}")
        if self.nmf_rank < 1 or self.nmf_iterations < 1 or self.workers < 1:
            raise ConfigError("nmf_rank, nmf_iterations y workers deben ser positivos")


@dataclass
class BenchmarkResult:
    table: pd.DataFrame
    partial: bool
    errors: List[str] = field(default_factory=list)


def _zero_entry_auc(scores: np.ndarray, y: np.ndarray, truth_dropouts: np.ndarray) -> float:
    """AUC de identificar dropouts (S = 0) entre las entradas cero de Y"""
    zeros = y == 0
    labels = truth_dropouts[zeros] == 0
    if labels.all() or not labels.any():
        return float('nan')
    return roc_auc(scores, labels)


def _row(seed, method, **values) -> dict:
    row = {'seed': str(seed), 'method': method, 'status': 'ok', 'error': ''}
    row.update({metric: np.nan for metric in METRICS})
    row.update(values)
    return row


def benchmark_seed(seed: int, sim_config: SimConfig, fit_config: FitConfig,
                   config: BenchmarkConfig) -> List[dict]:
    """Simula con la semilla dada y evalúa cada método; los fallos quedan marcados"""
    data, truth = simulated_dataset(replace(sim_config, seed=seed))
    k = data.dims.n_cell_types
    true_profile = truth.profile[:, :k]
    y = data.single_cell.counts
    rows = []

    for method in config.methods:
        try:
            if method == 'naive':
                est = naive_profile(y, data.single_cell.labels, k)
                rows.append(_row(seed, method, l1_profile=l1_loss(est, true_profile),
                                 l1_profile_per_column=l1_loss(est, true_profile, 'per-column')))
                continue
            result = FITTERS[method](data, replace(fit_config, seed=seed, mode=method))
            values = {
                'l1_profile': l1_loss(result.params.profile, true_profile),
                'l1_profile_per_column': l1_loss(result.params.profile, true_profile, 'per-column'),
                'auc': _zero_entry_auc(1.0 - dropout_posterior(result)[y == 0], y, truth.dropouts),
                'seconds_per_iteration': float(np.mean(result.iteration_seconds)),
                'n_iterations': result.n_iterations,
            }
            if method != 'sc-only' and truth.proportions.shape[0] == k:
                values['l1_proportions'] = l1_loss(deconvolve(result).proportions, truth.proportions,
                                                   'per-column')
            rows.append(_row(seed, method, status=result.status, **values))
        except (UrsmError, ValueError, FloatingPointError) as exc:
            logger.error("Semilla %d, método %s: %s", seed, method, exc)
            rows.append(_row(seed, method, status='failed', error=str(exc)))

    try:
        start = time.perf_counter()
        nmf = nmf_divergence(y, config.nmf_rank, config.nmf_iterations,
                             RngStream(seed).unit('nmf', 0))
        est = nmf_profile(nmf, data.single_cell.labels, k)
        rows.append(_row(seed, 'nmf', l1_profile=l1_loss(est, true_profile),
                         l1_profile_per_column=l1_loss(est, true_profile, 'per-column'),
                         auc=_zero_entry_auc(nmf_dropout_scores(y, nmf), y, truth.dropouts),
                         seconds_per_iteration=(time.perf_counter() - start) / (len(nmf.divergence) - 1 or 1),
                         n_iterations=len(nmf.divergence) - 1))
    except (UrsmError, ValueError, FloatingPointError) as exc:
        logger.error("Semilla %d, NMF: %s", seed, exc)
        rows.append(_row(seed, 'nmf', status='failed', error=str(exc)))
    return rows


def aggregate(table: pd.DataFrame) -> pd.DataFrame:
    """Una fila 'aggregate' por método con la media y columnas *_sd"""
    done = table[table['status'] != 'failed']
    groups = done.groupby('method', sort=False)[METRICS]
    means = groups.mean()
    sds = groups.std(ddof=1).add_suffix('_sd')
    summary = pd.concat([means, sds], axis=1).reset_index()
    summary.insert(0, 'seed', 'aggregate')
    summary['status'] = 'aggregate'
    summary['error'] = ''
    return summary


def ordering_count(table: pd.DataFrame) -> Tuple[int, int]:
    """Semillas con joint < sc-only < naive en pérdida L1 de A, y semillas evaluadas"""
    pivot = table[table['seed'] != 'aggregate'].pivot_table(
        index='seed', columns='method', values='l1_profile')
    needed = {'joint', 'sc-only', 'naive'}
    if not needed.issubset(pivot.columns):
        return 0, 0
    pivot = pivot.dropna(subset=list(needed))
    ordered = (pivot['joint'] < pivot['sc-only']) & (pivot['sc-only'] < pivot['naive'])
    return int(ordered.sum()), int(len(pivot))


def run_benchmark(sim_config: SimConfig, fit_config: FitConfig, config: BenchmarkConfig,
                  progress: bool = False) -> BenchmarkResult:
    """Corre todas las semillas (en procesos si workers > 1) y agrega"""
    rows = []
    if config.workers > 1:
        task = partial(benchmark_seed, sim_config=sim_config, fit_config=fit_config, config=config)
        for seed_rows in process_map(task, config.seeds, max_workers=config.workers,
                                     desc="Semillas", disable=not progress):
            rows.extend(seed_rows)
    else:
        for seed in tqdm(config.seeds, desc="Semillas", disable=not progress):
            rows.extend(benchmark_seed(seed, sim_config, fit_config, config))

    table = pd.DataFrame(rows)
    errors = [f"semilla {r['seed']} / {r['method']}: {r['error']}" for r in rows if r['status'] == 'failed']
    table = pd.concat([table, aggregate(table)], ignore_index=True)
    if errors:
        logger.warning("Benchmark parcial: %d evaluaciones fallidas", len(errors))
    return BenchmarkResult(table, bool(errors), errors)
