"""Dataset loading, synthesis, centering and fold splitting."""

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from klsda.dataset import (
    DataValidationError,
    EpochDataset,
    SyntheticConfig,
    center_columns,
    generate_synthetic,
    indicator,
    load_epochs,
    save_epochs,
    split_kfold,
)


def write_dataset(tmp_path, X, labels, n_channels, n_times, fs=256.0, k=2):
    X = np.asarray(X, dtype=np.float64)
    (tmp_path / "epochs.f64").write_bytes(X.astype("<f8").tobytes())
    (tmp_path / "labels.txt").write_text("".join(f"{c}\n" for c in labels))
    meta = {
        "n": X.shape[0], "p": X.shape[1], "n_channels": n_channels,
        "n_times": n_times, "fs_hz": fs, "k": k,
    }
    (tmp_path / "meta.json").write_text(json.dumps(meta))
    return tmp_path / "epochs.f64", tmp_path / "labels.txt", tmp_path / "meta.json"


class TestLoadEpochs:
    def test_small_roundtrip(self, tmp_path):
        X = np.arange(8, dtype=float).reshape(4, 2)
        paths = write_dataset(tmp_path, X, [1, 1, 2, 2], n_channels=1, n_times=2)
        ds = load_epochs(*paths)
        assert ds.n == 4 and ds.p == 2
        assert ds.class_counts.tolist() == [2, 2]
        np.testing.assert_array_equal(ds.X, X)

    def test_unknown_class_id_rejected(self, tmp_path):
        paths = write_dataset(tmp_path, np.zeros((3, 2)), [1, 2, 3],
                              n_channels=1, n_times=2, k=2)
        with pytest.raises(DataValidationError, match="class id 3"):
            load_epochs(*paths)

    def test_full_speller_scale_geometry(self, tmp_path):
        # 3780 epochs of 10 channels x 256 samples, 630 targets
        n, p = 3780, 2560
        labels = [1] * 630 + [2] * 3150
        paths = write_dataset(tmp_path, np.zeros((n, p)), labels,
                              n_channels=10, n_times=256)
        ds = load_epochs(*paths)
        assert ds.class_counts.tolist() == [630, 3150]
        pi = indicator(ds).pi
        np.testing.assert_allclose(np.diag(pi), [630 / 3780, 3150 / 3780])

    def test_size_mismatch_rejected(self, tmp_path):
        paths = write_dataset(tmp_path, np.zeros((3, 2)), [1, 2, 1],
                              n_channels=1, n_times=2)
        (tmp_path / "epochs.f64").write_bytes(b"\x00" * 8 * 5)
        with pytest.raises(DataValidationError, match="expected n\\*p"):
            load_epochs(*paths)

    def test_nonfinite_rejected_with_coordinates(self, tmp_path):
        X = np.zeros((3, 4))
        X[1, 2] = np.nan
        paths = write_dataset(tmp_path, X, [1, 2, 1], n_channels=2, n_times=2)
        with pytest.raises(DataValidationError, match="row 1, column 2"):
            load_epochs(*paths)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataValidationError, match="missing file"):
            load_epochs(tmp_path / "nope.f64", tmp_path / "l.txt", tmp_path / "m.json")

    def test_save_load_roundtrip(self, tmp_path, rng):
        ds = generate_synthetic(SyntheticConfig(n_target=5, n_nontarget=9, seed=3))
        save_epochs(ds, tmp_path)
        back = load_epochs(tmp_path / "epochs.f64", tmp_path / "labels.txt",
                           tmp_path / "meta.json")
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.z, ds.z)


class TestIndicator:
    def test_two_rows(self):
        ds = EpochDataset(X=np.zeros((2, 2)), z=[1, 2], n_channels=1,
                          n_times=2, fs_hz=1.0)
        ind = indicator(ds)
        np.testing.assert_array_equal(ind.Y, [[1, 0], [0, 1]])
        np.testing.assert_allclose(np.diag(ind.pi), [0.5, 0.5])

    def test_unbalanced(self):
        ds = EpochDataset(X=np.zeros((4, 2)), z=[1, 1, 1, 2], n_channels=1,
                          n_times=2, fs_hz=1.0)
        np.testing.assert_allclose(np.diag(indicator(ds).pi), [0.75, 0.25])

    @given(st.lists(st.integers(1, 3), min_size=3, max_size=40).filter(
        lambda z: len(set(z)) == 3))
    def test_consistency(self, z):
        ds = EpochDataset(X=np.zeros((len(z), 2)), z=z, n_channels=1,
                          n_times=2, fs_hz=1.0)
        ind = indicator(ds)
        np.testing.assert_array_equal(ind.Y.sum(axis=0), ds.class_counts)
        assert ind.Y.sum(axis=1).tolist() == [1.0] * len(z)
        assert np.trace(ind.pi) == pytest.approx(1.0, abs=1e-12)


class TestCentering:
    def test_hand_column(self):
        Xc, means = center_columns(np.array([[1.0], [3.0]]))
        np.testing.assert_array_equal(Xc, [[-1.0], [1.0]])
        assert means[0] == 2.0

    def test_already_centered(self):
        X = np.array([[-1.0, 2.0], [1.0, -2.0]])
        Xc, means = center_columns(X)
        np.testing.assert_array_equal(Xc, X)
        np.testing.assert_array_equal(means, [0.0, 0.0])

    def test_random_means_vanish(self, rng):
        X = rng.normal(5.0, 3.0, size=(10, 3))
        Xc, _ = center_columns(X)
        scale = np.abs(X).max(axis=0)
        assert (np.abs(Xc.mean(axis=0)) <= 1e-12 * scale).all()

    @given(st.integers(0, 2**31))
    def test_idempotent(self, seed):
        X = np.random.default_rng(seed).normal(size=(7, 4)) * 10
        once, _ = center_columns(X)
        twice, second_means = center_columns(once)
        assert (np.abs(second_means) <= 1e-12 * max(np.abs(X).max(), 1.0)).all()
        np.testing.assert_allclose(twice, once, atol=1e-12)


class TestSynthetic:
    def test_shape_and_ratio(self):
        ds = generate_synthetic(SyntheticConfig(
            n_target=100, n_nontarget=500, n_channels=8, n_times=64, seed=1))
        assert (ds.n, ds.p) == (600, 512)
        assert ds.class_counts.tolist() == [100, 500]

    def test_deterministic(self):
        cfg = SyntheticConfig(n_target=10, n_nontarget=20, seed=7)
        a = generate_synthetic(cfg)
        b = generate_synthetic(cfg)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.z, b.z)

    def test_zero_amplitude_removes_class_contrast(self):
        cfg = SyntheticConfig(n_target=200, n_nontarget=200,
                              bump_amplitude=0.0, seed=5)
        ds = generate_synthetic(cfg)
        gap = np.abs(ds.X[ds.z == 1].mean(axis=0) - ds.X[ds.z == 2].mean(axis=0))
        # both classes are draws from the same AR process
        assert gap.max() < 1.0

    def test_bump_lands_on_active_channels(self):
        cfg = SyntheticConfig(n_target=300, n_nontarget=300, seed=9)
        ds = generate_synthetic(cfg)
        contrast = (ds.X[ds.z == 1].mean(axis=0)
                    - ds.X[ds.z == 2].mean(axis=0)).reshape(cfg.n_channels, -1)
        peak_channels = set(np.argwhere(contrast > 0.5 * cfg.bump_amplitude)[:, 0])
        assert peak_channels <= set(cfg.active_channels)
        assert peak_channels

    def test_invalid_geometry(self):
        cfg = SyntheticConfig(n_target=2, n_nontarget=2, n_times=16,
                              fs_hz=256.0, bump_center_s=0.3, seed=0)
        with pytest.raises(DataValidationError, match="does not fit"):
            generate_synthetic(cfg)

    def test_bad_ar(self):
        with pytest.raises(DataValidationError):
            generate_synthetic(SyntheticConfig(n_target=2, n_nontarget=2,
                                               ar_coefficient=1.0, seed=0))


class TestSplitKfold:
    def test_six_rows_three_folds(self):
        folds = split_kfold(6, 3, seed=0)
        tests = np.sort(np.concatenate([t for _, t in folds]))
        np.testing.assert_array_equal(tests, np.arange(6))
        assert all(len(t) == 2 for _, t in folds)

    def test_stratified_one_per_class(self):
        labels = np.array([1, 2, 1, 2, 1, 2])
        for _, test in split_kfold(6, 3, seed=4, stratify_by=labels):
            assert sorted(labels[test]) == [1, 2]

    def test_oddball_fold_counts(self):
        labels = np.array([1] * 100 + [2] * 500)
        for _, test in split_kfold(600, 3, seed=11, stratify_by=labels):
            n_targets = int((labels[test] == 1).sum())
            assert 33 <= n_targets <= 34

    def test_class_smaller_than_k(self):
        with pytest.raises(ValueError, match="fewer than k"):
            split_kfold(5, 3, seed=0, stratify_by=[1, 1, 1, 1, 2])

    def test_deterministic(self):
        a = split_kfold(20, 4, seed=3)
        b = split_kfold(20, 4, seed=3)
        for (tr1, te1), (tr2, te2) in zip(a, b):
            np.testing.assert_array_equal(tr1, tr2)
            np.testing.assert_array_equal(te1, te2)

    @given(st.integers(4, 60), st.integers(2, 5), st.integers(0, 2**31))
    def test_partition_property(self, n, k, seed):
        if n < k:
            return
        folds = split_kfold(n, k, seed)
        tests = np.concatenate([t for _, t in folds])
        assert len(tests) == n and len(set(tests.tolist())) == n
        for train, test in folds:
            assert set(train.tolist()).isdisjoint(test.tolist())
            assert len(train) + len(test) == n
