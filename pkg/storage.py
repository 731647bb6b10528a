"""
Persistencia en archivos: matrices TSV, configuración JSON, artefactos de
ajuste y manifiestos reproducibles
"""
import json
import logging
import os
from dataclasses import dataclass, field, fields
from importlib import metadata
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from benchmark import BenchmarkConfig
from config import IO_CONFIG
from gem import FitConfig, FitResult
from gibbs import EStepConfig
from model import ConfigError, ModelParams, UrsmError
from mstep import MStepConfig
from simulation import SimConfig
from utils import config_hash, to_builtin

logger = logging.getLogger(__name__)

PACKAGES = ('numpy', 'scipy', 'pandas', 'numba', 'reportlab', 'tqdm')


class MatrixFileError(UrsmError):
    """Archivo TSV mal formado; el mensaje nombra la fila y la columna"""


# ==================== MATRICES ====================

def read_matrix(path: str, integer: bool = True) -> Tuple[np.ndarray, List[str], List[str]]:
    """
    Lee un TSV con encabezado (identificadores de columna) y primera columna
    de identificadores de gen. Devuelve (valores, ids de fila, ids de columna).
    """
    if not os.path.exists(path):
        raise MatrixFileError(f"No existe el archivo {path}")
    try:
        frame = pd.read_csv(path, sep=IO_CONFIG['sep'], index_col=0, dtype=str,
                            keep_default_na=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise MatrixFileError(f"{path}: no es una tabla rectangular ({exc})") from exc
    if frame.shape[1] == 0:
        raise MatrixFileError(f"{path}: la tabla no tiene columnas")

    raw = frame.to_numpy(dtype=object)
    numeric = frame.apply(pd.to_numeric, errors='coerce').to_numpy(dtype=float)
    bad = ~np.isfinite(numeric)
    if integer:
        with np.errstate(invalid='ignore'):
            bad |= (numeric < 0) | (numeric != np.round(numeric))
    if np.any(bad):
        row, col = np.argwhere(bad)[0]
        kind = "conteo entero no negativo" if integer else "número finito"
        raise MatrixFileError(
            f"{path}: valor {raw[row, col]!r} en la fila {row + 2} (gen {frame.index[row]}), "
            f"columna {col + 2} ({frame.columns[col]}) no es un {kind}")
    values = numeric.astype(np.int64) if integer else numeric
    return values, [str(v) for v in frame.index], [str(v) for v in frame.columns]


def write_matrix(path: str, values: np.ndarray, row_ids: Sequence[str], col_ids: Sequence[str],
                 index_label: str = 'gene'):
    """Escribe un TSV; los reales con 17 dígitos significativos"""
    frame = pd.DataFrame(np.asarray(values), index=list(row_ids), columns=list(col_ids))
    frame.index.name = index_label
    frame.to_csv(path, sep=IO_CONFIG['sep'], float_format=IO_CONFIG['float_format'],
                 lineterminator='\n')


def read_labels(path: str, cell_ids: Optional[Sequence[str]] = None) -> Tuple[List[str], np.ndarray]:
    """
    Etiquetas 1..K en un TSV de dos columnas (célula, etiqueta)
    Si se dan cell_ids, se reordenan para coincidir con las columnas de Y.
    """
    if not os.path.exists(path):
        raise MatrixFileError(f"No existe el archivo de etiquetas {path}")
    frame = pd.read_csv(path, sep=IO_CONFIG['sep'], dtype=str, keep_default_na=False)
    if frame.shape[1] != 2:
        raise MatrixFileError(f"{path}: se esperaban dos columnas (célula, etiqueta)")
    labels = pd.to_numeric(frame.iloc[:, 1], errors='coerce')
    if labels.isna().any():
        row = int(np.flatnonzero(labels.isna().to_numpy())[0])
        raise MatrixFileError(f"{path}: etiqueta {frame.iloc[row, 1]!r} inválida en la fila {row + 2}")
    ids = [str(v) for v in frame.iloc[:, 0]]
    values = labels.to_numpy()
    if cell_ids is not None:
        lookup = dict(zip(ids, values))
        missing = [cell for cell in cell_ids if cell not in lookup]
        if missing:
            raise MatrixFileError(f"{path}: faltan etiquetas para {len(missing)} células (p. ej. {missing[0]})")
        ids, values = list(cell_ids), np.array([lookup[cell] for cell in cell_ids])
    return ids, values


def write_labels(path: str, cell_ids: Sequence[str], labels: np.ndarray):
    """labels en base 1"""
    frame = pd.DataFrame({'cell': list(cell_ids), 'label': np.asarray(labels, dtype=np.int64)})
    frame.to_csv(path, sep=IO_CONFIG['sep'], index=False, lineterminator='\n')


# ==================== CONFIGURACIÓN ====================

@dataclass(frozen=True)
class RunConfig:
    """Documento de configuración ya validado"""
    simulation: SimConfig = field(default_factory=SimConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    threshold: float = 0.5
    round_imputed: bool = False
    prior_proportions: Optional[Tuple[float, ...]] = None
    paths: Dict[str, str] = field(default_factory=dict)
    document: Dict[str, Any] = field(default_factory=dict)

    @property
    def hash(self) -> str:
        return config_hash(self.document)


SECTIONS = {'seed', 'simulation', 'fit', 'benchmark', 'impute', 'paths'}
PATH_KEYS = {'bulk', 'sc', 'labels', 'out', 'fit_dir'}


def _check_value(section: str, name: str, value, default):
    """Verifica el tipo contra el valor por defecto del campo"""
    where = f"{section}.{name}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, (tuple, list)):
        ok = isinstance(value, list)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    else:
        ok = value is None or isinstance(value, (int, float, list)) and not isinstance(value, bool)
    if not ok:
        raise ConfigError(f"Tipo inválido para {where}: {value!r}")
    return tuple(value) if isinstance(value, list) else value


def _build(cls, section: str, document: dict, exclude=(), **overrides):
    """Construye un dataclass de configuración rechazando claves desconocidas"""
    if not isinstance(document, dict):
        raise ConfigError(f"La sección {section} debe ser un objeto")
    defaults = {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in exclude}
    unknown = set(document) - set(defaults) - set(overrides)
    if unknown:
        raise ConfigError(f"Claves desconocidas en {section}: {sorted(unknown)}")
    kwargs = {name: _check_value(section, name, value, defaults[name])
              for name, value in document.items() if name in defaults}
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"Configuración inválida en {section}: {exc}") from exc


def parse_run_config(document: dict, seed: Optional[int] = None) -> RunConfig:
    """Valida el documento completo y construye todos los objetos de configuración"""
    if not isinstance(document, dict):
        raise ConfigError("La configuración debe ser un objeto JSON")
    unknown = set(document) - SECTIONS
    if unknown:
        raise ConfigError(f"Secciones desconocidas: {sorted(unknown)}")
    if seed is None:
        seed = document.get('seed')
    if seed is not None and (not isinstance(seed, int) or isinstance(seed, bool)):
        raise ConfigError(f"La semilla debe ser un entero: {seed!r}")
    seed_override = {} if seed is None else {'seed': seed}

    fit_doc = dict(document.get('fit', {}))
    prior = fit_doc.pop('prior_proportions', None)
    estep = _build(EStepConfig, 'fit.estep', fit_doc.pop('estep', {}))
    mstep = _build(MStepConfig, 'fit.mstep', fit_doc.pop('mstep', {}))
    fit = _build(FitConfig, 'fit', fit_doc, exclude=('estep', 'mstep'),
                 estep=estep, mstep=mstep, **seed_override)
    if prior is not None and (not isinstance(prior, list) or not prior):
        raise ConfigError("fit.prior_proportions debe ser una lista de números")

    simulation = _build(SimConfig, 'simulation', document.get('simulation', {}), **seed_override)
    benchmark = _build(BenchmarkConfig, 'benchmark', document.get('benchmark', {}))

    impute_doc = document.get('impute', {})
    unknown = set(impute_doc) - {'threshold', 'round'}
    if unknown:
        raise ConfigError(f"Claves desconocidas en impute: {sorted(unknown)}")
    threshold = _check_value('impute', 'threshold', impute_doc.get('threshold', 0.5), 0.5)
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError("impute.threshold debe estar en [0, 1]")
    round_imputed = _check_value('impute', 'round', impute_doc.get('round', False), False)

    paths = document.get('paths', {})
    if set(paths) - PATH_KEYS or not all(isinstance(v, str) for v in paths.values()):
        raise ConfigError(f"paths admite sólo cadenas en {sorted(PATH_KEYS)}")

    resolved = dict(document)
    if seed is not None:
        resolved['seed'] = seed
    return RunConfig(simulation=simulation, fit=fit, benchmark=benchmark, threshold=float(threshold),
                     round_imputed=round_imputed,
                     prior_proportions=None if prior is None else tuple(float(p) for p in prior),
                     paths=dict(paths), document=to_builtin(resolved))


def load_run_config(path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    """Lee y valida el JSON de configuración; sin archivo usa los valores por defecto"""
    if path is None:
        return parse_run_config({}, seed)
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            document = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"No existe el archivo de configuración {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON inválido en la línea {exc.lineno}, columna {exc.colno}") from exc
    return parse_run_config(document, seed)


# ==================== DIRECTORIOS DE SALIDA ====================

class RunDirectory:
    """Directorio de salida de un comando: archivos más manifiesto"""

    def __init__(self, path: str):
        try:
            os.makedirs(path, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"No se puede crear el directorio {path}: {exc}") from exc
        if not os.access(path, os.W_OK):
            raise ConfigError(f"No se puede escribir en {path}")
        self.path = path
        self.files: List[str] = []

    def file(self, key: str) -> str:
        return os.path.join(self.path, IO_CONFIG.get(key, key))

    def write_matrix(self, key: str, values, row_ids, col_ids, index_label: str = 'gene'):
        write_matrix(self.file(key), values, row_ids, col_ids, index_label)
        self.record(key)

    def write_labels(self, key: str, cell_ids, labels):
        write_labels(self.file(key), cell_ids, labels)
        self.record(key)

    def write_table(self, key: str, frame: pd.DataFrame):
        frame.to_csv(self.file(key), sep=IO_CONFIG['sep'], index=False,
                     float_format=IO_CONFIG['float_format'], lineterminator='\n')
        self.record(key)

    def write_json(self, key: str, document):
        with open(self.file(key), 'w', encoding='utf-8') as handle:
            json.dump(to_builtin(document), handle, indent=2, sort_keys=True)
            handle.write('\n')
        self.record(key)

    def record(self, key: str):
        name = IO_CONFIG.get(key, key)
        if name not in self.files:
            self.files.append(name)

    def write_manifest(self, command: str, config: RunConfig, seed: Optional[int], status: str,
                       extra: Optional[dict] = None, key: str = 'manifest'):
        """Todo lo necesario para reproducir la ejecución"""
        manifest = {
            'command': command,
            'artifact_version': IO_CONFIG['artifact_version'],
            'config_hash': config.hash,
            'config': config.document,
            'seed': seed,
            'status': status,
            'files': sorted(self.files),
            'versions': package_versions(),
        }
        manifest.update(extra or {})
        self.write_json(key, manifest)
        return manifest


def package_versions() -> Dict[str, str]:
    versions = {}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = 'desconocida'
    return versions


# ==================== ARTEFACTOS DE AJUSTE ====================

def type_ids(n_types: int) -> List[str]:
    return [f"type_{k + 1}" for k in range(n_types)]


def params_document(result: FitResult) -> dict:
    params = result.params
    return {
        'mode': result.mode,
        'alpha': params.alpha,
        'mu_kappa': params.mu_kappa,
        'sigma2_kappa': params.sigma2_kappa,
        'mu_tau': params.mu_tau,
        'sigma2_tau': params.sigma2_tau,
        'converged': result.converged,
        'n_iterations': result.n_iterations,
        'n_samples': result.stats.n_samples,
    }


@dataclass
class FitArtifacts:
    """Lo que cmd_impute y cmd_deconvolve necesitan de un ajuste guardado"""
    profile: np.ndarray
    params: ModelParams
    posterior: np.ndarray
    labels: np.ndarray
    gene_ids: List[str]
    cell_ids: List[str]
    mode: str
    proportions: Optional[np.ndarray] = None
    sample_ids: List[str] = field(default_factory=list)


def load_fit(fit_dir: str) -> FitArtifacts:
    """Lee profile.tsv, params.json, dropout_posterior.tsv y labels.tsv"""
    def path(key):
        name = os.path.join(fit_dir, IO_CONFIG[key])
        if not os.path.exists(name):
            raise MatrixFileError(f"Falta el artefacto {IO_CONFIG[key]} en {fit_dir}")
        return name

    profile, gene_ids, _ = read_matrix(path('profile'), integer=False)
    posterior, _, cell_ids = read_matrix(path('dropout_posterior'), integer=False)
    with open(path('params'), 'r', encoding='utf-8') as handle:
        doc = json.load(handle)
    _, labels = read_labels(path('labels'), cell_ids)
    params = ModelParams(profile, np.asarray(doc['alpha'], dtype=float), doc['mu_kappa'],
                         doc['sigma2_kappa'], doc['mu_tau'], doc['sigma2_tau'])
    artifacts = FitArtifacts(profile, params, posterior, labels.astype(np.int64) - 1,
                             gene_ids, cell_ids, doc['mode'])
    proportions_file = os.path.join(fit_dir, IO_CONFIG['proportions'])
    if os.path.exists(proportions_file):
        artifacts.proportions, _, artifacts.sample_ids = read_matrix(proportions_file, integer=False)
    return artifacts
