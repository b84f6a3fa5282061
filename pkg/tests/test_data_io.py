import json

import numpy as np
import pandas as pd
import pytest

from bdpd_errors import DataFormatError, InvalidInputError
from bridge_divergence import ModelComponent, PointMass, UniformSlab
from data_io import gspec_from_json, read_data, to_json_text, write_results


def _write(tmp_path, text, name='data.csv'):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_fixture_values(normal20, mixture20):
    assert normal20.shape == (20,)
    assert normal20[-1] == 1.048653e-5
    assert normal20[0] == -1.120900
    assert mixture20.shape == (20,)
    assert mixture20[0] == 10.73402487


def test_header_is_optional(tmp_path):
    with_header = read_data(_write(tmp_path, "x\n1.5\n-2\n3e-4\n", 'a.csv'))
    without = read_data(_write(tmp_path, "1.5\n-2\n3e-4\n", 'b.csv'))
    np.testing.assert_array_equal(with_header, without)
    np.testing.assert_array_equal(without, [1.5, -2.0, 3e-4])


def test_blank_lines_are_skipped(tmp_path):
    values = read_data(_write(tmp_path, "x\n1.0\n\n2.0\n\n"))
    np.testing.assert_array_equal(values, [1.0, 2.0])


def test_non_numeric_cell_reports_its_line(tmp_path):
    path = _write(tmp_path, "x\n1.0\nabc\n2.0\n")
    with pytest.raises(DataFormatError, match=":3:") as info:
        read_data(path)
    assert "non-numeric value 'abc'" in str(info.value)


@pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
def test_non_finite_values_rejected(tmp_path, cell):
    with pytest.raises(DataFormatError, match="non-finite"):
        read_data(_write(tmp_path, f"1.0\n{cell}\n"))


@pytest.mark.parametrize("text", ["", "x\n", "\n\n"])
def test_empty_files(tmp_path, text):
    with pytest.raises(DataFormatError, match="empty dataset"):
        read_data(_write(tmp_path, text))


def test_two_columns_rejected(tmp_path):
    with pytest.raises(DataFormatError, match=":2:"):
        read_data(_write(tmp_path, "1.0\n2.0,3.0\n"))


def test_missing_file(tmp_path):
    with pytest.raises(InvalidInputError):
        read_data(str(tmp_path / 'missing.csv'))


def test_json_round_trip_keeps_floats():
    payload = {'theta': np.array([1.2083300000000001, 1e-17]), 'ok': np.bool_(True), 'n': np.int64(20)}
    decoded = json.loads(to_json_text(payload))
    assert decoded == {'theta': [1.2083300000000001, 1e-17], 'ok': True, 'n': 20}


def test_json_to_stdout(capsys):
    assert write_results({'a': 1.5}, 'json') is None
    assert json.loads(capsys.readouterr().out) == {'a': 1.5}


def test_profile_csv(tmp_path):
    frame = pd.DataFrame({'sigma': [0.5, 1.0, 2.0], 'objective': [0.1, 1.0 / 3.0, 0.2]})
    path = str(tmp_path / 'profile.csv')
    assert write_results(frame, 'csv', path) == path
    back = pd.read_csv(path)
    assert list(back.columns) == ['sigma', 'objective']
    assert len(back) == 3
    assert back['objective'][1] == 1.0 / 3.0


def test_supplement_csv_header(tmp_path):
    index = pd.MultiIndex.from_tuples([(0.0, 'bias'), (0.0, 'MSE')], names=['alpha', 'metric'])
    table = pd.DataFrame([[0.1, 0.2, 0.3], [1.0, 1.1, 1.2]], columns=['1', '0.5', '0'], index=index)
    path = str(tmp_path / 'table.csv')
    write_results(table, 'csv', path)
    with open(path) as fh:
        assert fh.readline().strip() == "alpha,metric,1,0.5,0"


def test_tabular_output_needs_a_table():
    with pytest.raises(InvalidInputError):
        write_results({'a': 1}, 'csv')


def test_xlsx_needs_a_path():
    with pytest.raises(InvalidInputError):
        write_results(pd.DataFrame({'a': [1]}), 'xlsx')


def test_unknown_format():
    with pytest.raises(InvalidInputError):
        write_results({'a': 1}, 'yaml')


def test_gspec_from_json(tmp_path):
    spec = {'components': [
        {'weight': 0.8, 'type': 'model', 'family': 'normal-scale', 'fixed_mean': 0.0, 'theta': [1.0]},
        {'weight': 0.1, 'type': 'slab', 'lo': 3.0, 'hi': 4.0},
        {'weight': 0.1, 'type': 'point', 'location': 6.0},
    ]}
    g = gspec_from_json(_write(tmp_path, json.dumps(spec), 'g.json'))
    kinds = [type(c) for _, c in g.components]
    assert kinds == [ModelComponent, UniformSlab, PointMass]
    assert g.has_point_mass
    assert g.components[0][1].theta == (1.0,)


def test_gspec_from_json_errors(tmp_path):
    with pytest.raises(DataFormatError):
        gspec_from_json(_write(tmp_path, "{not json", 'bad.json'))
    with pytest.raises(InvalidInputError):
        gspec_from_json(_write(tmp_path, json.dumps({'components': [{'weight': 1.0, 'type': 'slab'}]}),
                               'incomplete.json'))
    with pytest.raises(InvalidInputError):
        gspec_from_json(_write(tmp_path, json.dumps({'components': [{'weight': 1.0, 'type': 'cloud'}]}),
                               'unknown.json'))
