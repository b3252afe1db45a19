import numpy as np
import pytest

from flatcl.params import ParameterSet


def _ps():
    return ParameterSet({"a": [1.0, 2.0], "b": [[3.0], [4.0]]})


def test_construction_casts_to_float64():
    ps = ParameterSet({"a": [1, 2]})
    assert ps["a"].dtype == np.float64


def test_order_preserved():
    ps = ParameterSet([("z", [1.0]), ("a", [2.0])])
    assert ps.names() == ["z", "a"]


def test_copy_is_independent():
    ps = _ps()
    cp = ps.copy()
    cp["a"][0] = 99.0
    assert ps["a"][0] == 1.0


def test_flatten_and_sizes():
    ps = _ps()
    assert ps.total_size() == 4
    assert ps.flatten().tolist() == [1.0, 2.0, 3.0, 4.0]
    assert ParameterSet().flatten().tolist() == []


def test_norm_and_dot():
    ps = _ps()
    assert abs(ps.norm() - np.sqrt(30)) <= 1e-15
    assert ps.dot(ps) == pytest.approx(30.0)


def test_arithmetic():
    ps = _ps()
    assert ps.add(ps)["a"].tolist() == [2.0, 4.0]
    assert ps.sub(ps)["b"].tolist() == [[0.0], [0.0]]
    assert ps.scale(2.0)["a"].tolist() == [2.0, 4.0]
    assert ps.add_scaled(ps, -1.0)["a"].tolist() == [0.0, 0.0]


def test_misalignment_rejected_with_context():
    ps = _ps()
    other = ParameterSet({"a": [1.0, 2.0]})
    with pytest.raises(ValueError, match="somewhere"):
        ps.require_aligned(other, "somewhere")
    with pytest.raises(ValueError):
        ps.dot(other)


def test_shape_mismatch_not_aligned():
    a = ParameterSet({"w": np.zeros(3)})
    b = ParameterSet({"w": np.zeros(4)})
    assert not a.aligned_with(b)


def test_subset_shares_memory():
    ps = _ps()
    sub = ps.subset(["b"])
    sub["b"][0, 0] = 7.0
    assert ps["b"][0, 0] == 7.0


def test_all_finite():
    ps = _ps()
    assert ps.all_finite()
    ps["a"][1] = np.nan
    assert not ps.all_finite()
