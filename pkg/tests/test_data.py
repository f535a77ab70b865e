import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nial import data as D
from nial.errors import EmptyDatasetError, ParseError, SplitError


def write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_two_rows(tmp_path):
    ds = D.load_csv(write(tmp_path, "0.1,0.2,0.0\n0.3,0.4,1.0\n"))
    assert len(ds) == 2 and ds.length == 2
    npt.assert_array_equal(ds.labels, [0, 1])
    npt.assert_array_equal(ds.signals, [[0.1, 0.2], [0.3, 0.4]])
    assert ds.n_classes == 2


def test_ragged_row_reports_line(tmp_path):
    path = write(tmp_path, "1,2,3,0\n1,2,3,1\n1,2,0\n1,2,3,1\n")
    with pytest.raises(ParseError, match=":3:"):
        D.load_csv(path)


def test_non_integer_label(tmp_path):
    with pytest.raises(ParseError, match="label"):
        D.load_csv(write(tmp_path, "1,2,0.5\n"))


def test_empty_file(tmp_path):
    with pytest.raises(EmptyDatasetError):
        D.load_csv(write(tmp_path, "\n\n"))


def test_expected_len(tmp_path):
    path = write(tmp_path, "1,2,3,0\n")
    assert D.load_csv(path, expected_len=3).length == 3
    with pytest.raises(ParseError):
        D.load_csv(path, expected_len=187)


def test_minmax_row():
    ds = D.Dataset(np.array([[0.0, 5.0, 10.0], [7.0, 7.0, 7.0]]), np.array([0, 1]), 2)
    npt.assert_array_equal(D.normalize_minmax(ds).signals, [[0, 0.5, 1], [0, 0, 0]])


def test_standardize_row():
    ds = D.Dataset(np.array([[1.0, 2.0, 3.0], [7.0, 7.0, 7.0]]), np.array([0, 1]), 2)
    out = D.standardize(ds).signals
    npt.assert_allclose(out[0], [-1.2247, 0.0, 1.2247], atol=1e-4)
    npt.assert_array_equal(out[1], [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1e4))
def test_preprocessing_invariants(seed, scale):
    rng = np.random.default_rng(seed)
    ds = D.Dataset(rng.normal(scale=scale, size=(8, 20)) + rng.normal(size=(8, 1)), rng.integers(0, 3, 8), 3)
    mm = D.normalize_minmax(ds).signals
    assert mm.min() >= 0 and mm.max() <= 1
    z = D.standardize(ds).signals
    assert np.abs(z.mean(axis=1)).max() < 1e-10
    assert np.abs(z.std(axis=1) - 1).max() < 1e-10
    npt.assert_array_equal(D.standardize(ds).labels, ds.labels)


def test_split_exact_proportions():
    ds = D.Dataset(np.arange(20.0).reshape(10, 2), np.array([0] * 5 + [1] * 5), 2)
    train, val = D.stratified_split(ds, 0.8, seed=0)
    npt.assert_array_equal(train.class_counts(), [4, 4])
    npt.assert_array_equal(val.class_counts(), [1, 1])
    rows = np.concatenate([train.signals[:, 0], val.signals[:, 0]])
    npt.assert_array_equal(np.sort(rows), ds.signals[:, 0])


def test_split_determinism():
    rng = np.random.default_rng(0)
    ds = D.Dataset(rng.normal(size=(60, 3)), rng.integers(0, 3, 60), 3)
    a, _ = D.stratified_split(ds, 0.7, seed=1)
    b, _ = D.stratified_split(ds, 0.7, seed=1)
    c, _ = D.stratified_split(ds, 0.7, seed=2)
    assert a.signals.tobytes() == b.signals.tobytes()
    assert a.signals.tobytes() != c.signals.tobytes()
    npt.assert_array_equal(a.class_counts(), c.class_counts())


def test_split_singleton_class_named():
    ds = D.Dataset(np.zeros((5, 2)), np.array([0, 0, 1, 1, 2]), 3)
    with pytest.raises(SplitError, match="class 2"):
        D.stratified_split(ds, 0.5, 0)


def test_split_1000_random_labels():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 7, 1000)
    ds = D.Dataset(np.arange(1000.0)[:, None], labels, 7)
    train, val = D.stratified_split(ds, 0.9, seed=4)
    counts = ds.class_counts()
    # brute-force tally, independent of bincount
    for k in range(7):
        n_train = sum(1 for y in train.labels if y == k)
        n_val = sum(1 for y in val.labels if y == k)
        assert n_train + n_val == counts[k]
        assert abs(n_train - 0.9 * counts[k]) <= 1
    assert set(train.signals[:, 0]).isdisjoint(val.signals[:, 0])


def test_batch_sizes_and_coverage():
    ds = D.Dataset(np.arange(30.0).reshape(10, 3), np.arange(10) % 2, 2)
    bs = D.batches(ds, 4)
    assert [len(b) for b in bs] == [4, 4, 2]
    assert bs[0].signals.shape == (4, 1, 3)
    npt.assert_array_equal(np.concatenate([b.labels for b in bs]), ds.labels)


def test_shuffled_batches_are_permutation():
    ds = D.Dataset(np.arange(30.0).reshape(10, 3), np.arange(10) % 3, 3)
    bs = D.batches(ds, 3, shuffle_seed=5)
    rows = np.concatenate([b.signals[:, 0, 0] for b in bs])
    npt.assert_array_equal(np.sort(rows), ds.signals[:, 0])
    assert sorted(np.concatenate([b.labels for b in bs])) == sorted(ds.labels)
    assert not np.array_equal(rows, ds.signals[:, 0])


def test_synth_zero_noise_rows_identical():
    ds = D.synth_dataset(5, 40, 3, 0.0, seed=0)
    for k in range(3):
        rows = ds.signals[ds.labels == k]
        assert np.all(rows == rows[0])


def test_synth_deterministic():
    a = D.synth_dataset(10, 50, 4, 0.1, seed=9)
    b = D.synth_dataset(10, 50, 4, 0.1, seed=9)
    assert a.signals.tobytes() == b.signals.tobytes()


def test_synth_requires_two_classes():
    with pytest.raises(ValueError):
        D.synth_dataset(10, 50, 1, 0.1, seed=0)


def test_synth_one_nearest_neighbour_perfect():
    ds = D.synth_dataset(50, 64, 4, 0.05, seed=0)
    train, test = D.stratified_split(ds, 0.5, seed=0)
    dist = ((test.signals[:, None, :] - train.signals[None, :, :]) ** 2).sum(axis=-1)
    pred = train.labels[dist.argmin(axis=1)]
    assert np.mean(pred == test.labels) == 1.0


def test_csv_round_trip(tmp_path):
    ds = D.synth_dataset(3, 17, 2, 0.3, seed=1)
    path = tmp_path / "s.csv"
    D.write_csv(ds, path)
    back = D.load_csv(path)
    assert back.signals.tobytes() == ds.signals.tobytes()
    npt.assert_array_equal(back.labels, ds.labels)


def test_pipeline_loses_nothing(tmp_path):
    ds = D.synth_dataset(12, 30, 3, 0.2, seed=2)
    path = tmp_path / "p.csv"
    D.write_csv(ds, path)
    loaded = D.preprocess(D.load_csv(path))
    train, val = D.stratified_split(loaded, 0.75, seed=0)
    labels = np.concatenate([b.labels for b in D.batches(train, 5, 1) + D.batches(val, 5)])
    assert sorted(labels) == sorted(ds.labels)


def test_dataset_is_immutable():
    ds = D.synth_dataset(2, 10, 2, 0.0, seed=0)
    with pytest.raises(ValueError):
        ds.signals[0, 0] = 1.0
