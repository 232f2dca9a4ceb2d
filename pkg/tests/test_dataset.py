import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bfda.dataset import (Curve, DatasetError, FunctionalDataset, canonical_round, load_dataset,
                          pool_grids, save_dataset)
from bfda.simulation import SimSpec, simulate


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_csv_long(tmp_path):
    p = _write(tmp_path / "d.csv", "curve_id,t,y\n1,0.0,1.0\n1,0.5,2.0\n2,0.0,0.5\n")
    data = load_dataset(p)
    assert data.n == 2
    np.testing.assert_array_equal(data.sizes, [2, 1])
    np.testing.assert_array_equal(data.curves[0].y, [1.0, 2.0])


def test_duplicate_grid_point(tmp_path):
    p = _write(tmp_path / "d.csv", "curve_id,t,y\n1,0.0,1.0\n1,0.0,2.0\n1,1.0,0.0\n")
    with pytest.raises(DatasetError, match="duplicate grid point"):
        load_dataset(p)


@pytest.mark.parametrize("text", [
    "curve_id,t,y\n1,0.0,nan\n1,1.0,0.0\n",
    "curve_id,t,y\n1,0.0,abc\n",
    "t,y\n0.0,1.0\n",
])
def test_bad_csv(tmp_path, text):
    with pytest.raises(DatasetError):
        load_dataset(_write(tmp_path / "d.csv", text))


def test_empty_curve():
    with pytest.raises(DatasetError, match="empty"):
        Curve("a", [], [])


def test_curves_sorted_by_id_and_grids_ascending():
    data = FunctionalDataset.from_arrays([[1.0, 0.0], [0.0, 2.0]], [[10, 20], [1, 2]], ids=["10", "2"])
    assert data.ids == ["2", "10"]
    np.testing.assert_array_equal(data.curves[1].t, [0.0, 1.0])
    np.testing.assert_array_equal(data.curves[1].y, [20, 10])


def test_json_round_trip_sim(tmp_path):
    _, data = simulate(SimSpec(n=5, p=12, seed=3))
    save_dataset(data, tmp_path / "d.json")
    assert load_dataset(tmp_path / "d.json", domain=data.domain) == data


def test_csv_round_trip_sparse(tmp_path):
    _, data = simulate(SimSpec(n=6, p=20, seed=4, retain_fraction=0.6))
    save_dataset(data, tmp_path / "d.csv")
    again = load_dataset(tmp_path / "d.csv", domain=data.domain)
    assert again == data
    save_dataset(again, tmp_path / "e.csv")
    assert (tmp_path / "d.csv").read_bytes() == (tmp_path / "e.csv").read_bytes()


def test_pool_union():
    data = FunctionalDataset.from_arrays([[0, 1], [1, 2]], [[0, 0], [0, 0]])
    g = pool_grids(data)
    np.testing.assert_array_equal(g.points, [0, 1, 2])
    np.testing.assert_array_equal(g.obs[0], [0, 1])
    np.testing.assert_array_equal(g.mis[0], [2])
    assert not g.is_common()


def test_pool_common(small_common):
    g = pool_grids(small_common)
    assert g.is_common()
    assert all(m.size == 0 for m in g.mis)


def test_canonical_rounding_merges_near_ties():
    a = FunctionalDataset.from_arrays([[0.1 + 0.2, 1.0], [0.3, 1.0]], [[1, 2], [3, 4]])
    assert pool_grids(a).p == 2


def test_sparse_pool_at_most_p():
    for seed in range(5):
        _, data = simulate(SimSpec(n=50, p=80, seed=seed, retain_fraction=0.6))
        assert pool_grids(data).p <= 80


def test_domain_violation():
    with pytest.raises(DatasetError, match="outside domain"):
        FunctionalDataset.from_arrays([[0.0, 2.0]], [[1, 2]], domain=(0.0, 1.0))


def test_value_matrix_requires_common():
    data = FunctionalDataset.from_arrays([[0, 1], [1, 2]], [[0, 0], [0, 0]])
    with pytest.raises(DatasetError):
        data.value_matrix()


grids = st.lists(
    st.lists(st.integers(0, 30), min_size=1, max_size=12, unique=True), min_size=1, max_size=6
).filter(lambda gs: len({v for g in gs for v in g}) >= 2)


@given(grids)
def test_pool_index_invariants(gs):
    data = FunctionalDataset.from_arrays([np.array(g) / 7.0 for g in gs], [np.zeros(len(g)) for g in gs])
    pg = pool_grids(data)
    assert np.all(np.diff(pg.points) > 0)
    for c, o, m in zip(data.curves, pg.obs, pg.mis):
        assert o.size == len(c)
        assert np.intersect1d(o, m).size == 0
        np.testing.assert_array_equal(np.sort(np.concatenate([o, m])), np.arange(pg.p))
        np.testing.assert_array_equal(pg.points[o], c.t)


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_canonical_round_idempotent(x):
    once = canonical_round(x)
    np.testing.assert_array_equal(canonical_round(once), once)
