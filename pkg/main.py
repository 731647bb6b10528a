"""
Aplicación principal de URSM: línea de comandos
simulate | fit | impute | deconvolve | benchmark
"""
import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np
import pandas as pd

from benchmark import ordering_count, run_benchmark
from config import EXIT_CODES, MODES
from gem import fit
from model import DimensionError, UrsmError, validate_dataset
from posterior import (ProductError, call_dropouts, dropout_calls_summary, dropout_posterior,
                       deconvolve, impute, summarize_proportions)
from report import benchmark_report
from simulation import dropout_rate, simulate
from storage import (RunConfig, RunDirectory, load_fit, load_run_config, params_document,
                     read_labels, read_matrix, type_ids)
from utils import setup_logging

logger = logging.getLogger('ursm')


def _ids(prefix: str, n: int) -> List[str]:
    return [f"{prefix}_{i + 1}" for i in range(n)]


def _apply_overrides(run: RunConfig, mode=None, sweeps=None, em_iters=None) -> RunConfig:
    """Banderas de la línea de comandos sobre la configuración del ajuste"""
    fit_config = run.fit
    if sweeps is not None:
        fit_config = replace(fit_config, estep=replace(fit_config.estep, n_sweeps=sweeps))
    if em_iters is not None:
        fit_config = replace(fit_config, max_em_iterations=em_iters)
    if mode is not None:
        fit_config = replace(fit_config, mode=mode)
    return replace(run, fit=fit_config)


# ==================== COMANDOS ====================

def cmd_simulate(config_path: Optional[str], out: str, seed: Optional[int] = None) -> int:
    """Escribe datos simulados, verdad y manifiesto"""
    run = load_run_config(config_path, seed)
    sim = run.simulation
    bulk, sc, truth = simulate(sim)
    directory = RunDirectory(out)

    genes = _ids('gene', sim.n_genes)
    cells = _ids('cell', sim.n_cells)
    samples = _ids('sample', sim.n_bulk)
    types = type_ids(sim.total_types)
    directory.write_matrix('bulk', bulk.counts, genes, samples)
    directory.write_matrix('single_cell', sc.counts, genes, cells)
    directory.write_labels('labels', cells, sc.labels + 1)
    directory.write_matrix('truth_profile', truth.profile, genes, types)
    directory.write_matrix('truth_proportions', truth.proportions, types, samples, index_label='type')
    directory.write_matrix('truth_dropouts', truth.dropouts, genes, cells)
    directory.write_table('truth_cells', pd.DataFrame({
        'cell': cells, 'label': sc.labels + 1, 'kappa': truth.kappa, 'tau': truth.tau,
        'depth': sc.depths}))
    directory.write_table('truth_genes', pd.DataFrame({
        'gene': genes, 'role': truth.gene_roles, 'role_type': truth.role_types + 1}))

    rates = dropout_rate(sc, truth)
    directory.write_manifest('simulate', run, sim.seed, 'ok', extra={'summary': rates})
    logger.info("Simulación escrita en %s (%.1f%% de ceros)", out, 100 * rates['zero_fraction'])
    return EXIT_CODES['converged']


def cmd_fit(sc_path: str, labels_path: str, out: str, bulk_path: Optional[str] = None,
            config_path: Optional[str] = None, mode: Optional[str] = None,
            seed: Optional[int] = None, sweeps: Optional[int] = None,
            em_iters: Optional[int] = None) -> int:
    """Ajusta el modo elegido y escribe perfiles, parámetros, traza y productos"""
    run = _apply_overrides(load_run_config(config_path, seed), mode, sweeps, em_iters)
    y, gene_ids, cell_ids = read_matrix(sc_path)
    _, labels = read_labels(labels_path, cell_ids)
    x, sample_ids = None, []
    if bulk_path is not None:
        x, bulk_genes, sample_ids = read_matrix(bulk_path)
        if bulk_genes != gene_ids:
            raise DimensionError("Los genes del archivo bulk no coinciden con los de células")
    elif run.fit.mode != 'sc-only':
        logger.info("Sin --bulk: se ajusta el submodelo de células")
        run = _apply_overrides(run, mode='sc-only')

    data = validate_dataset(x, y, labels, gene_ids=gene_ids, cell_ids=cell_ids, sample_ids=sample_ids)
    directory = RunDirectory(out)
    result = fit(data, run.fit, run.prior_proportions, progress=True)

    types = type_ids(data.dims.n_cell_types)
    directory.write_matrix('profile', result.params.profile, gene_ids, types)
    directory.write_json('params', params_document(result))
    directory.write_table('elbo_trace', pd.DataFrame({
        'iteration': np.arange(1, result.n_iterations + 1), 'elbo': result.elbo_trace,
        'seconds': result.iteration_seconds}))
    directory.write_matrix('dropout_posterior', dropout_posterior(result), gene_ids, cell_ids)
    directory.write_labels('labels', cell_ids, data.single_cell.labels + 1)
    if result.mode != 'sc-only':
        directory.write_matrix('proportions', deconvolve(result).proportions, types, sample_ids,
                               index_label='type')

    directory.write_manifest('fit', run, run.fit.seed, result.status,
                             extra={'mode': result.mode, 'n_iterations': result.n_iterations})
    return EXIT_CODES[result.status]


def cmd_impute(fit_dir: str, sc_path: str, out: Optional[str] = None,
               threshold: Optional[float] = None, config_path: Optional[str] = None,
               round_values: bool = False) -> int:
    """Imputa los dropouts llamados de un ajuste guardado"""
    run = load_run_config(config_path)
    threshold = run.threshold if threshold is None else threshold
    artifacts = load_fit(fit_dir)
    y, gene_ids, cell_ids = read_matrix(sc_path)
    if gene_ids != artifacts.gene_ids or cell_ids != artifacts.cell_ids:
        raise DimensionError("La matriz de células no coincide con la del ajuste")

    calls = call_dropouts(artifacts.posterior, y, threshold)
    imputed = impute(y, calls, artifacts.profile, artifacts.labels, y.sum(axis=0),
                     round_values=round_values or run.round_imputed)
    directory = RunDirectory(out or fit_dir)
    directory.write_matrix('imputed', imputed.values, gene_ids, cell_ids)
    directory.write_matrix('mask', imputed.mask_labels(), gene_ids, cell_ids)
    directory.write_manifest('impute', run, None, 'ok', key='manifest_impute.json',
                             extra={'threshold': threshold, 'calls': dropout_calls_summary(calls, y)})
    return EXIT_CODES['converged']


def cmd_deconvolve(fit_dir: str, out: Optional[str] = None) -> int:
    """Resumen por muestra de las proporciones de un ajuste conjunto o MAP"""
    artifacts = load_fit(fit_dir)
    if artifacts.mode == 'sc-only' or artifacts.proportions is None:
        raise ProductError(f"El ajuste en {fit_dir} no tiene proporciones bulk")
    result = summarize_proportions(artifacts.proportions, artifacts.sample_ids)
    directory = RunDirectory(out or fit_dir)
    directory.write_table('deconvolution', result.summary)
    directory.write_manifest('deconvolve', load_run_config(None), None, 'ok',
                             key='manifest_deconvolve.json')
    return EXIT_CODES['converged']


def cmd_benchmark(config_path: Optional[str], out: str, seed: Optional[int] = None,
                  sweeps: Optional[int] = None, em_iters: Optional[int] = None) -> int:
    """Compara métodos sobre varias semillas; escribe benchmark.tsv y report.pdf"""
    run = _apply_overrides(load_run_config(config_path), None, sweeps, em_iters)
    if seed is not None:
        run = replace(run, benchmark=replace(run.benchmark, seeds=(seed,)))
    directory = RunDirectory(out)
    result = run_benchmark(run.simulation, run.fit, run.benchmark, progress=True)

    directory.write_table('benchmark', result.table)
    benchmark_report.generate_report_pdf({
        'table': result.table,
        'ordering': ordering_count(result.table),
        'config_hash': run.hash,
        'errors': result.errors,
    }, directory.file('report'))
    directory.record('report')
    status = 'partial' if result.partial else 'converged'
    directory.write_manifest('benchmark', run, None, status,
                             extra={'seeds': list(run.benchmark.seeds), 'errors': result.errors})
    return EXIT_CODES[status]


# ==================== LÍNEA DE COMANDOS ====================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='ursm', description="Modelo conjunto de RNA-seq de células y bulk")
    parser.add_argument('--log-level', default=None, help="DEBUG, INFO, WARNING, ...")
    commands = parser.add_subparsers(dest='command', required=True)

    simulate_cmd = commands.add_parser('simulate', help="Genera datos sintéticos")
    simulate_cmd.add_argument('--config')
    simulate_cmd.add_argument('--out', required=True)
    simulate_cmd.add_argument('--seed', type=int)

    fit_cmd = commands.add_parser('fit', help="Ajusta el modelo")
    fit_cmd.add_argument('--bulk')
    fit_cmd.add_argument('--sc', required=True)
    fit_cmd.add_argument('--labels', required=True)
    fit_cmd.add_argument('--config')
    fit_cmd.add_argument('--out', required=True)
    fit_cmd.add_argument('--mode', choices=MODES)
    fit_cmd.add_argument('--seed', type=int)
    fit_cmd.add_argument('--sweeps', type=int)
    fit_cmd.add_argument('--em-iters', type=int)

    impute_cmd = commands.add_parser('impute', help="Imputa dropouts de un ajuste")
    impute_cmd.add_argument('--fit', required=True, dest='fit_dir')
    impute_cmd.add_argument('--sc', required=True)
    impute_cmd.add_argument('--out')
    impute_cmd.add_argument('--threshold', type=float)
    impute_cmd.add_argument('--config')
    impute_cmd.add_argument('--round', action='store_true')

    deconvolve_cmd = commands.add_parser('deconvolve', help="Resume las proporciones de un ajuste")
    deconvolve_cmd.add_argument('--fit', required=True, dest='fit_dir')
    deconvolve_cmd.add_argument('--out')

    benchmark_cmd = commands.add_parser('benchmark', help="Compara métodos sobre datos simulados")
    benchmark_cmd.add_argument('--config')
    benchmark_cmd.add_argument('--out', required=True)
    benchmark_cmd.add_argument('--seed', type=int)
    benchmark_cmd.add_argument('--sweeps', type=int)
    benchmark_cmd.add_argument('--em-iters', type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.command == 'simulate':
            return cmd_simulate(args.config, args.out, args.seed)
        if args.command == 'fit':
            return cmd_fit(args.sc, args.labels, args.out, args.bulk, args.config, args.mode,
                           args.seed, args.sweeps, args.em_iters)
        if args.command == 'impute':
            return cmd_impute(args.fit_dir, args.sc, args.out, args.threshold, args.config, args.round)
        if args.command == 'deconvolve':
            return cmd_deconvolve(args.fit_dir, args.out)
        return cmd_benchmark(args.config, args.out, args.seed, args.sweeps, args.em_iters)
    except (UrsmError, ValueError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CODES['input_error']


if __name__ == '__main__':
    sys.exit(main())
