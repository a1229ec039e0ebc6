import json

import numpy as np
import pytest

from mdfa import example_data_path
from mdfa.errors import InvalidInput
from mdfa.io import matrix_to_json, read_csv_matrix, read_json_matrix, read_matrix


def test_csv_round_trip(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("a,b\n1,2\n3,4.5\n")
    np.testing.assert_array_equal(read_csv_matrix(f, header=True), [[1, 2], [3, 4.5]])
    np.testing.assert_array_equal(read_matrix(f, header=True), [[1, 2], [3, 4.5]])


def test_json_round_trip(tmp_path):
    X = np.arange(6.0).reshape(3, 2)
    f = tmp_path / "x.json"
    f.write_text(json.dumps(matrix_to_json(X)))
    np.testing.assert_array_equal(read_json_matrix(f), X)
    g = tmp_path / "noext"
    g.write_text(json.dumps(matrix_to_json(X)))
    np.testing.assert_array_equal(read_matrix(g, fmt="json"), X)


@pytest.mark.parametrize("text", ["1,2\n3\n", "1,x\n2,3\n", "", "1,nan\n2,3\n"])
def test_csv_bad_input(tmp_path, text):
    f = tmp_path / "bad.csv"
    f.write_text(text)
    with pytest.raises(InvalidInput):
        read_csv_matrix(f)


def test_json_bad_shape(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text(json.dumps({"rows": 2, "cols": 2, "data": [1, 2, 3]}))
    with pytest.raises(InvalidInput):
        read_json_matrix(f)


def test_shipped_example():
    X = read_matrix(str(example_data_path()))
    assert X.shape == (100, 6)
