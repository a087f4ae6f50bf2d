from pathlib import Path

import numpy as np
import pytest

from erv_mixture.dataset import (
    CountMatrix,
    load_count_matrix,
    load_metadata,
    save_count_matrix,
    save_metadata,
    summarize_counts,
)
from erv_mixture.utils.errors import ParseError, ValidationError

CURRENT_DIR = Path(__file__).parent.absolute()
DATA_DIR = CURRENT_DIR / "data"


def test_load_count_matrix():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    assert (cm.m, cm.n) == (4, 5)
    assert cm.virus_ids == ("v1", "v2", "v3", "v4")
    assert cm.animal_column_ids == ("c1", "c2", "c3", "c4", "c5")
    assert cm.counts[1, 0] == 20
    assert cm.counts[3, 3] == 15
    assert not cm.counts.flags.writeable


def test_negative_count_is_located():
    with pytest.raises(ParseError, match="negative count") as e:
        load_count_matrix(DATA_DIR / "bad_negative.csv")
    assert (e.value.row, e.value.column) == (3, 3)


def test_non_integer_count_is_located():
    with pytest.raises(ParseError, match="not a non-negative integer") as e:
        load_count_matrix(DATA_DIR / "bad_text.csv")
    assert (e.value.row, e.value.column) == (3, 2)


def test_duplicate_virus_id(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("virus_id,a,b\nv1,0,1\nv1,2,3\n")
    with pytest.raises(ValidationError, match="duplicate virus id"):
        load_count_matrix(path)


def test_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="not exists"):
        load_count_matrix(tmp_path / "nothing.csv")


def test_count_matrix_rejects_bad_shapes():
    with pytest.raises(ValidationError):
        CountMatrix(("v1",), ("a", "b"), np.zeros((2, 2), dtype=int))
    with pytest.raises(ValidationError, match="negative count"):
        CountMatrix(("v1",), ("a",), np.array([[-1]]))
    with pytest.raises(ValidationError, match="integers"):
        CountMatrix(("v1",), ("a",), np.array([[0.5]]))


def test_save_then_load_keeps_counts(tmp_path):
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    save_count_matrix(cm, tmp_path / "counts.csv")
    again = load_count_matrix(tmp_path / "counts.csv")
    assert np.array_equal(cm.counts, again.counts)
    assert cm.digest() == again.digest()


def test_load_metadata():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    meta = load_metadata(DATA_DIR / "meta.csv", cm)

    assert meta.replicate_groups == ((0, 2), (1,), (3,), (4,))
    assert meta.unique_set == (0, 1, 3, 4)
    assert meta.has_replicates
    assert meta.K == 2
    assert meta.experiment_labels == ("E1", "E2")
    assert meta.experiment_of_column.tolist() == [0, 0, 1, 1, 0]
    assert meta.group_of_column.tolist() == [0, 1, 0, 2, 3]
    assert meta.population == ("OR", "MT", "OR", "WY", "WY")

    assert np.isnan(meta.geo[3]).all()
    assert not meta.has_complete_geo(meta.unique_set)
    assert meta.has_complete_geo([0, 1, 4])


def test_metadata_unknown_column():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    with pytest.raises(ValidationError, match="unknown column 'c9'"):
        load_metadata(DATA_DIR / "meta_unknown_column.csv", cm)


def test_metadata_missing_column(tmp_path):
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    path = tmp_path / "meta.csv"
    path.write_text("column_id,animal_id,experiment_id\nc1,A1,E1\nc2,A2,E1\n")
    with pytest.raises(ValidationError, match="columns without metadata"):
        load_metadata(path, cm)


def test_as_independent():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    meta = load_metadata(DATA_DIR / "meta.csv", cm).as_independent()
    assert meta.replicate_groups == tuple((j,) for j in range(5))
    assert meta.unique_set == (0, 1, 2, 3, 4)
    assert not meta.has_replicates


def test_summarize_counts():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    summary = summarize_counts(cm)
    assert summary.zero_fraction == pytest.approx(11 / 20)
    assert summary.low_fraction == pytest.approx(6 / 20)
    assert summary.mean_nonzero == pytest.approx(73 / 9)
    assert summary.dims == (4, 5)


def test_filter_rows():
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    kept = cm.filter_rows(min_animals=2, min_count=5)
    assert kept.virus_ids == ("v1", "v4")
    assert kept.animal_column_ids == cm.animal_column_ids

    with pytest.raises(ValidationError):
        cm.filter_rows(min_animals=5, min_count=100)


def test_summarize_small_matrices():
    summary = summarize_counts(CountMatrix(("a", "b"), ("c", "d"), np.array([[0, 5], [3, 0]])))
    assert (summary.zero_fraction, summary.low_fraction, summary.mean_nonzero) == (0.5, 0.5, 4.0)

    summary = summarize_counts(CountMatrix(("a",), ("c", "d"), np.zeros((1, 2), dtype=int)))
    assert (summary.zero_fraction, summary.mean_nonzero) == (1.0, 0.0)


def test_saved_metadata_keeps_groups(tmp_path):
    cm = load_count_matrix(DATA_DIR / "counts.csv")
    meta = load_metadata(DATA_DIR / "meta.csv", cm)
    save_metadata(meta, cm, tmp_path / "meta.csv")
    again = load_metadata(tmp_path / "meta.csv", cm)
    assert again.replicate_groups == meta.replicate_groups
    assert again.experiment_labels == meta.experiment_labels
    assert again.population == meta.population
    np.testing.assert_array_equal(np.isnan(again.geo), np.isnan(meta.geo))


def test_saved_matrix_is_canonical(tmp_path):
    rng = np.random.default_rng(0)
    for k in range(30):
        m, n = rng.integers(1, 12, size=2)
        counts = rng.negative_binomial(0.5, rng.uniform(0.01, 0.9), size=(m, n))
        cm = CountMatrix(
            tuple(f"v{i}" for i in range(m)), tuple(f"d{k}_{j}" for j in range(n)), counts
        )
        path = tmp_path / f"counts_{k}.csv"
        save_count_matrix(cm, path)
        again = load_count_matrix(path)
        assert np.array_equal(again.counts, cm.counts)
        assert again.to_csv_bytes() == cm.to_csv_bytes() == path.read_bytes()


def test_count_out_of_int64_range_is_located(tmp_path):
    path = tmp_path / "huge.csv"
    path.write_text("virus_id,a,b\nv1,0,3\nv2,5,99999999999999999999\n")
    with pytest.raises(ParseError, match="out of range") as e:
        load_count_matrix(path)
    assert (e.value.row, e.value.column) == (3, 3)

    path.write_text(f"virus_id,a\nv1,{np.iinfo(np.int64).max}\n")
    assert load_count_matrix(path).counts[0, 0] == np.iinfo(np.int64).max
