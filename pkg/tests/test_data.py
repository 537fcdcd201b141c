import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedpoison.data import (DataError, LabeledDataset, Partition, SyntheticSpec, export_csv,
                            flip_labels, format_csv, generate_synthetic, load_csv, paired_centers,
                            parse_csv, partition_iid)


def _dataset(n, n_classes=4, n_features=3, seed=0):
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.normal(size=(n, n_features)), rng.integers(n_classes, size=n), n_classes)


def _sorted_rows(ds):
    rows = np.column_stack([ds.features, ds.labels])
    return rows[np.lexsort(rows.T[::-1])]


class TestLabeledDataset:
    def test_rejects_label_out_of_range(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 1)), [0, 2], 2)

    def test_rejects_row_mismatch(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((3, 1)), [0, 1], 2)

    def test_rejects_single_class(self):
        with pytest.raises(DataError):
            LabeledDataset(np.zeros((2, 1)), [0, 0], 1)

    def test_arrays_are_read_only(self):
        ds = _dataset(5)
        with pytest.raises(ValueError):
            ds.labels[0] = 1


class TestGenerateSynthetic:
    def test_two_class_construction(self):
        ds = generate_synthetic(SyntheticSpec([[0, 0], [10, 10]], 0.1, 5, seed=3))
        assert ds.features.shape == (10, 2)
        assert ds.labels.tolist() == [0] * 5 + [1] * 5

    def test_same_seed_bit_identical(self):
        spec = SyntheticSpec([[0, 0], [10, 10]], 0.1, 5, seed=3)
        a, b = generate_synthetic(spec), generate_synthetic(spec)
        assert a.features.tobytes() == b.features.tobytes()
        assert np.array_equal(a.labels, b.labels)

    def test_square_corners_nearest_centroid_is_perfect(self):
        centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
        ds = generate_synthetic(SyntheticSpec(centers, 0.5, 200, seed=1))
        d = ((ds.features[:, None, :] - centers[None]) ** 2).sum(axis=2)
        assert np.array_equal(np.argmin(d, axis=1), ds.labels)

    def test_invalid_dimensions(self):
        with pytest.raises(DataError):
            SyntheticSpec([[0, 0]], 1.0, 5)
        with pytest.raises(DataError):
            SyntheticSpec([[0, 0], [1, 1]], 0.0, 5)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_pure_in_spec(self, seed):
        spec = SyntheticSpec([[0.0, 1.0], [2.0, 3.0], [4.0, 0.0]], 0.7, 4, seed=seed)
        assert generate_synthetic(spec).features.tobytes() == generate_synthetic(spec).features.tobytes()


def test_paired_centers_geometry():
    c = paired_centers(5, 6, 4.0, pair=(1, 3), pair_distance=2.0)
    assert np.isclose(np.linalg.norm(c[1] - c[3]), 2.0)
    assert np.isclose(np.linalg.norm(c[0] - c[2]), 4.0 * np.sqrt(2))
    with pytest.raises(DataError):
        paired_centers(5, 4, 4.0)


class TestPartition:
    def test_too_many_participants(self):
        with pytest.raises(DataError):
            partition_iid(_dataset(10), 50, seed=0)

    def test_single_partition_is_dataset(self):
        ds = _dataset(100)
        (only,) = partition_iid(ds, 1, seed=0)
        assert np.array_equal(_sorted_rows(only.data), _sorted_rows(ds))

    def test_four_shards_multiset_union(self):
        ds = _dataset(100)
        parts = partition_iid(ds, 4, seed=7)
        assert [len(p) for p in parts] == [25] * 4
        union = LabeledDataset(np.vstack([p.data.features for p in parts]),
                               np.concatenate([p.data.labels for p in parts]), 4)
        assert np.array_equal(_sorted_rows(union), _sorted_rows(ds))
        assert [p.owner for p in parts] == [0, 1, 2, 3]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 120), st.integers(1, 40), st.integers(0, 1000))
    def test_sizes_balanced_and_union_is_permutation(self, n, n_parts, seed):
        if n_parts > n:
            return
        ds = LabeledDataset(np.arange(n, dtype=float)[:, None], np.arange(n) % 2, 2)
        parts = partition_iid(ds, n_parts, seed)
        sizes = [len(p) for p in parts]
        assert max(sizes) - min(sizes) <= 1
        values = np.concatenate([p.data.features[:, 0] for p in parts])
        assert sorted(values) == list(range(n))


class TestFlipLabels:
    def _part(self, labels, n_classes=6):
        return Partition(0, LabeledDataset(np.zeros((len(labels), 2)), labels, n_classes))

    def test_direct_definition(self):
        assert flip_labels(self._part([5, 3, 5, 1]), 5, 3).data.labels.tolist() == [3, 3, 3, 1]

    def test_no_source_rows(self):
        part = self._part([1, 2, 4])
        out = flip_labels(part, 5, 3)
        assert np.array_equal(out.data.labels, part.data.labels)
        assert out.poisoned and not part.poisoned

    def test_label_count_oracle(self):
        rng = np.random.default_rng(11)
        labels = rng.integers(4, size=200)
        out = flip_labels(self._part(labels, 4), 0, 2).data.labels
        assert (out == 0).sum() == 0
        assert (out == 2).sum() == (labels == 0).sum() + (labels == 2).sum()

    def test_features_untouched(self):
        part = Partition(1, _dataset(30, seed=2))
        out = flip_labels(part, 0, 1)
        assert out.data.features.tobytes() == part.data.features.tobytes()

    def test_same_class_rejected(self):
        with pytest.raises(DataError):
            flip_labels(self._part([1]), 1, 1)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=50), st.integers(0, 3), st.integers(0, 3))
    def test_idempotent(self, labels, src, tgt):
        if src == tgt:
            return
        once = flip_labels(self._part(labels, 4), src, tgt)
        assert np.array_equal(flip_labels(once, src, tgt).data.labels, once.data.labels)

    @given(st.lists(st.integers(0, 3), min_size=1, max_size=50))
    def test_reverse_flip_does_not_restore(self, labels):
        labels = labels + [0, 2]
        back = flip_labels(flip_labels(self._part(labels, 4), 0, 2), 2, 0)
        assert not np.array_equal(back.data.labels, np.array(labels))


class TestCsv:
    def test_construction(self, tmp_path):
        f = tmp_path / "d.csv"
        f.write_text("1.0,2.0,0\n3.0,4.0,1")
        ds = load_csv(f)
        assert (len(ds), ds.n_features, ds.class_count) == (2, 2, 2)

    def test_empty_file(self, tmp_path):
        f = tmp_path / "e.csv"
        f.write_text("")
        with pytest.raises(DataError):
            load_csv(f)

    @pytest.mark.parametrize("text", ["1.0,a,0\n", "1.0,2.0,0.5\n", "1.0,2.0,0\n1.0,1\n", "0\n"])
    def test_malformed(self, text):
        with pytest.raises(DataError):
            parse_csv(text)

    def test_round_trip_bytes(self, tmp_path):
        ds = _dataset(40, seed=5)
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        export_csv(ds, first)
        export_csv(load_csv(first), second)
        assert first.read_bytes() == second.read_bytes()
        again = load_csv(second, class_count=4)
        assert again.features.tobytes() == ds.features.tobytes()

    @given(st.lists(st.tuples(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.integers(0, 4)),
                    min_size=1, max_size=20))
    def test_format_parse_round_trip(self, rows):
        ds = LabeledDataset([r[:2] for r in rows], [r[2] for r in rows], 5)
        back = parse_csv(format_csv(ds), class_count=5)
        assert back.features.tobytes() == ds.features.tobytes()
        assert np.array_equal(back.labels, ds.labels)
