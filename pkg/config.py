"""
Configuración global del sistema URSM (perfiles, dropouts y deconvolución)
"""

# Parámetros del paso E (muestreo de Gibbs)
ESTEP_DEFAULTS = {
    'n_sweeps': 200,            # "unos cientos" de barridos de Gibbs
    'burn_in_fraction': 0.2,
    'thinning': 1,
    'debug': False              # revalida cachés en cada barrido
}

# Parámetros del paso M (ascenso de gradiente proyectado)
MSTEP_DEFAULTS = {
    'max_iterations': 50,
    'initial_step': 1.0,
    'backtracking': 0.5,
    'armijo': 1e-4,
    'max_halvings': 30,
    'scaled_direction': True,   # dirección A * grad para las columnas de A
    'eps_alpha': 1e-3,
    'eps_a_scale': 100.0,       # eps_A = 1 / (eps_a_scale * N)
    'variance_floor': 1e-6
}

# Parámetros del algoritmo Gibbs-EM
FIT_DEFAULTS = {
    'max_em_iterations': 100,
    'tolerance': 1e-4,          # cambio relativo del ELBO
    'patience': 3,
    'mode': 'joint',            # joint | sc-only | map-fast
    'seed': 20171,
    'max_dropout_init': 0.6,    # logit(0.4) para mu_kappa inicial
    'mean_observed_init': 0.7,  # logit(0.7) en el gen promedio
    'sigma2_kappa_init': 0.5,
    'tau_cv_init': 0.1,         # sigma_tau = 0.1 * mu_tau
    'map_floor': 1e-12
}

MODES = ('joint', 'sc-only', 'map-fast')

# Diseño de la simulación (perfiles log-normales, marcadores, etc.)
SIM_DEFAULTS = {
    'n_genes': 200,
    'n_cells': 100,
    'n_bulk': 150,
    'n_cell_types': 3,
    'cell_type_proportions': [0.3, 0.3, 0.4],
    'alpha_true': [1.0, 2.0, 3.0],
    'n_marker': 10,
    'n_anti_marker': 10,
    'n_housekeeping': 30,
    'kappa_mean': -1.0,
    'kappa_sd': 0.5,
    'tau_mean_per_gene': 1.5,   # tau ~ Normal(1.5 N, (0.15 N)^2)
    'tau_sd_per_gene': 0.15,
    'bulk_depth_per_gene': 50,  # R_j ~ Poisson(50 N)
    'sc_depth_per_gene': 2,     # R_l ~ NB(media 2 N, dispersión 2)
    'sc_dispersion': 2.0,
    'seed': 1
}

# Protocolo de comparación
BENCHMARK_DEFAULTS = {
    'seeds': [1, 2, 3],
    'methods': ['naive', 'sc-only', 'joint'],
    'nmf_rank': 3,
    'nmf_iterations': 500,
    'workers': 1
}

# Archivos de entrada/salida
IO_CONFIG = {
    'sep': '\t',
    'float_format': '%.17g',
    'bulk': 'bulk.tsv',
    'single_cell': 'sc.tsv',
    'labels': 'labels.tsv',
    'truth_profile': 'truth_profile.tsv',
    'truth_proportions': 'truth_proportions.tsv',
    'truth_dropouts': 'truth_dropouts.tsv',
    'truth_cells': 'truth_cells.tsv',
    'truth_genes': 'truth_genes.tsv',
    'profile': 'profile.tsv',
    'params': 'params.json',
    'elbo_trace': 'elbo_trace.tsv',
    'dropout_posterior': 'dropout_posterior.tsv',
    'proportions': 'proportions.tsv',
    'deconvolution': 'deconvolution_summary.tsv',
    'imputed': 'imputed.tsv',
    'mask': 'imputation_mask.tsv',
    'benchmark': 'benchmark.tsv',
    'report': 'report.pdf',
    'manifest': 'manifest.json',
    'artifact_version': '1.0.0'
}

# Reporte PDF del benchmark (antes configuración de tickets)
REPORT_CONFIG = {
    'width_mm': 210,
    'height_mm': 297,
    'margin_mm': 15,
    'font_size_title': 14,
    'font_size_normal': 9,
    'font_size_small': 7,
    'line_spacing': 1.3,
    'title': 'URSM - Resumen del benchmark'
}

# Códigos de salida de la línea de comandos
EXIT_CODES = {
    'converged': 0,
    'input_error': 2,
    'max_iterations': 3,
    'partial': 4
}

LOG_CONFIG = {
    'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
    'datefmt': '%d/%m/%Y %H:%M:%S',
    'level': 'INFO'
}
