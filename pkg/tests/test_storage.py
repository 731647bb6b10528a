import json

import numpy as np
import pytest

from model import ConfigError
from storage import (MatrixFileError, RunDirectory, load_run_config, parse_run_config, read_labels,
                     read_matrix, write_labels, write_matrix)


def test_matrix_round_trip(tmp_path):
    counts = np.array([[0, 5], [12, 1], [3, 0]])
    path = str(tmp_path / 'counts.tsv')
    write_matrix(path, counts, ['g1', 'g2', 'g3'], ['c1', 'c2'])
    values, rows, cols = read_matrix(path)
    assert np.array_equal(values, counts)
    assert rows == ['g1', 'g2', 'g3'] and cols == ['c1', 'c2']

    reals = np.array([[0.1, 1.0 / 3.0], [2.0 ** -40, 1e-300]])
    write_matrix(path, reals, ['g1', 'g2'], ['t1', 't2'])
    values, _, _ = read_matrix(path, integer=False)
    assert np.array_equal(values, reals)


@pytest.mark.parametrize('value', ['abc', '-2', '1.5', ''])
def test_malformed_matrix_names_row_and_column(tmp_path, value):
    path = tmp_path / 'bad.tsv'
    path.write_text(f"gene\tc1\tc2\ng1\t1\t2\ng2\t3\t{value}\n")
    with pytest.raises(MatrixFileError) as info:
        read_matrix(str(path))
    message = str(info.value)
    assert 'g2' in message and 'c2' in message


def test_missing_file(tmp_path):
    with pytest.raises(MatrixFileError):
        read_matrix(str(tmp_path / 'nope.tsv'))


def test_labels_are_reordered_to_cells(tmp_path):
    path = str(tmp_path / 'labels.tsv')
    write_labels(path, ['c2', 'c1'], np.array([2, 1]))
    ids, labels = read_labels(path, ['c1', 'c2'])
    assert ids == ['c1', 'c2']
    assert labels.tolist() == [1, 2]
    with pytest.raises(MatrixFileError):
        read_labels(path, ['c1', 'c3'])


def test_run_config_sections():
    run = parse_run_config({
        'seed': 9,
        'simulation': {'n_genes': 100, 'n_marker': 5, 'n_anti_marker': 5},
        'fit': {'mode': 'map-fast', 'estep': {'n_sweeps': 50}, 'mstep': {'eps_alpha': 0.01},
                'prior_proportions': [1, 2, 3]},
        'impute': {'threshold': 0.3, 'round': True},
    })
    assert run.simulation.seed == 9 and run.fit.seed == 9
    assert run.simulation.n_genes == 100
    assert run.fit.mode == 'map-fast'
    assert run.fit.estep.n_sweeps == 50
    assert run.fit.mstep.eps_alpha == 0.01
    assert run.prior_proportions == (1.0, 2.0, 3.0)
    assert run.threshold == 0.3 and run.round_imputed


def test_seed_override_changes_hash():
    base = parse_run_config({'seed': 1})
    assert parse_run_config({'seed': 1}).hash == base.hash
    overridden = parse_run_config({'seed': 1}, seed=2)
    assert overridden.fit.seed == 2
    assert overridden.hash != base.hash


@pytest.mark.parametrize('document', [
    {'fitting': {}},
    {'fit': {'sweeps': 10}},
    {'fit': {'estep': {'n_sweeps': 'many'}}},
    {'simulation': {'n_genes': 50}},
    {'impute': {'threshold': 2.0}},
    {'benchmark': {'methods': ['naive', 'magic']}},
    {'seed': 1.5},
])
def test_invalid_config_documents(document):
    with pytest.raises(ConfigError):
        parse_run_config(document)


def test_load_run_config_reports_json_errors(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text('{"seed": 1,,}')
    with pytest.raises(ConfigError, match='línea 1'):
        load_run_config(str(path))
    path.write_text(json.dumps({'seed': 4}))
    assert load_run_config(str(path)).simulation.seed == 4


def test_run_directory_manifest(tmp_path):
    directory = RunDirectory(str(tmp_path / 'out'))
    directory.write_matrix('profile', np.eye(2), ['g1', 'g2'], ['type_1', 'type_2'])
    manifest = directory.write_manifest('fit', parse_run_config({}), 5, 'converged')
    saved = json.loads((tmp_path / 'out' / 'manifest.json').read_text())
    assert saved == json.loads(json.dumps(manifest))
    assert saved['files'] == ['profile.tsv']
    assert saved['seed'] == 5 and saved['status'] == 'converged'
    assert set(saved['versions']) >= {'numpy', 'scipy', 'pandas'}
