"""Epoch datasets: loading, validation, synthesis, centering and fold splits.

An epoch is one flattened channel x time window. Rows of ``X`` are epochs,
columns are channel-major samples: column ``c * n_times + t`` holds channel
``c`` at time index ``t``, so a (channel, time) coordinate maps back to a
column without any bookkeeping.

On-disk format (shared with the CLI):
  * ``epochs.f64``  raw little-endian float64, row-major n x p
  * ``labels.txt``  one 1-based integer class id per line
  * ``meta.json``   {"n", "p", "n_channels", "n_times", "fs_hz", "k"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataValidationError(ValueError):
    """Raised when input data violates the dataset contract."""


@dataclass(frozen=True)
class EpochDataset:
    """Validated n x p epoch matrix with class bookkeeping.

    Immutable after construction; safe to share across concurrent readers.
    """

    X: np.ndarray
    z: np.ndarray
    n_channels: int
    n_times: int
    fs_hz: float
    n_classes: int = 0  # 0 = infer from labels

    class_counts: np.ndarray = field(init=False)
    class_index_sets: tuple = field(init=False)

    def __post_init__(self):
        X = np.ascontiguousarray(np.asarray(self.X, dtype=np.float64))
        z = np.asarray(self.z, dtype=np.int64).ravel()
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "z", z)
        n, p = X.shape
        if len(z) != n:
            raise DataValidationError(
                f"labels length {len(z)} does not match number of epochs {n}"
            )
        if p != self.n_channels * self.n_times:
            raise DataValidationError(
                f"p={p} does not equal n_channels*n_times="
                f"{self.n_channels}*{self.n_times}={self.n_channels * self.n_times}"
            )
        bad = np.argwhere(~np.isfinite(X))
        if bad.size:
            r, c = bad[0]
            raise DataValidationError(
                f"non-finite value at row {int(r)}, column {int(c)}"
            )
        k = int(self.n_classes) if self.n_classes else int(z.max(initial=0))
        object.__setattr__(self, "n_classes", k)
        if k < 1:
            raise DataValidationError("dataset declares no classes")
        low = z < 1
        high = z > k
        if low.any() or high.any():
            i = int(np.argmax(low | high))
            raise DataValidationError(
                f"class id {int(z[i])} at row {i} outside 1..{k}"
            )
        counts = np.bincount(z, minlength=k + 1)[1:]
        if (counts == 0).any():
            empty = int(np.argmax(counts == 0)) + 1
            raise DataValidationError(f"class {empty} has no members")
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(
            self,
            "class_index_sets",
            tuple(np.flatnonzero(z == kk + 1) for kk in range(k)),
        )
        X.flags.writeable = False
        z.flags.writeable = False

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "EpochDataset":
        """Row subset carrying the same geometry and declared class count."""
        idx = np.asarray(indices, dtype=np.intp)
        return EpochDataset(
            X=self.X[idx],
            z=self.z[idx],
            n_channels=self.n_channels,
            n_times=self.n_times,
            fs_hz=self.fs_hz,
            n_classes=self.n_classes,
        )


@dataclass(frozen=True)
class IndicatorMatrix:
    """Binary class-membership matrix Y and class-proportion diagonal pi."""

    Y: np.ndarray
    pi: np.ndarray  # K x K diagonal, trace 1

    @property
    def pi_diag(self) -> np.ndarray:
        return np.diag(self.pi)


def indicator(dataset: EpochDataset) -> IndicatorMatrix:
    """Build the n x K indicator matrix and pi = Y'Y / n."""
    n, k = dataset.n, dataset.n_classes
    Y = np.zeros((n, k), dtype=np.float64)
    Y[np.arange(n), dataset.z - 1] = 1.0
    pi = np.diag(dataset.class_counts / n)
    return IndicatorMatrix(Y=Y, pi=pi)


def center_columns(X: np.ndarray):
    """Subtract column means; returns (centered matrix, means).

    Means are returned so held-out rows can be centered with training
    statistics instead of their own.
    """
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    return X - means, means


@dataclass(frozen=True)
class SyntheticConfig:
    """Oddball-style epoch generator settings.

    Non-target epochs are per-channel AR(1) noise; target epochs add a
    Gaussian-in-time bump on the active channels, mimicking a short
    stereotyped deflection at a fixed post-stimulus latency.
    """

    n_target: int
    n_nontarget: int
    n_channels: int = 8
    n_times: int = 64
    fs_hz: float = 256.0
    bump_amplitude: float = 1.0
    bump_center_s: float = 0.15
    bump_width_s: float = 0.03
    active_channels: tuple = (2, 3, 4)
    noise_sigma: float = 1.0
    ar_coefficient: float = 0.5
    seed: int = 0

    def validate(self):
        if self.n_target < 1 or self.n_nontarget < 1:
            raise DataValidationError("both classes need at least one epoch")
        if self.noise_sigma <= 0:
            raise DataValidationError("noise_sigma must be positive")
        if not (0.0 <= self.ar_coefficient < 1.0):
            raise DataValidationError("ar_coefficient must lie in [0, 1)")
        duration = self.n_times / self.fs_hz
        if not self.bump_center_s + 2.0 * self.bump_width_s < duration:
            raise DataValidationError(
                f"bump (center {self.bump_center_s}s + 2*width "
                f"{self.bump_width_s}s) does not fit in the {duration}s epoch"
            )
        for c in self.active_channels:
            if not 0 <= c < self.n_channels:
                raise DataValidationError(f"active channel {c} out of range")


def generate_synthetic(cfg: SyntheticConfig) -> EpochDataset:
    """Deterministic synthetic oddball dataset; identical seed, identical bits.

    Targets are class 1 (first ``n_target`` rows), non-targets class 2.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_target + cfg.n_nontarget
    ch, T = cfg.n_channels, cfg.n_times
    a, sig = cfg.ar_coefficient, cfg.noise_sigma

    eps = rng.standard_normal((n, ch, T))
    data = np.empty((n, ch, T))
    # stationary AR(1) start so early samples match the rest in variance
    data[:, :, 0] = sig * eps[:, :, 0] / np.sqrt(1.0 - a * a)
    for t in range(1, T):
        data[:, :, t] = a * data[:, :, t - 1] + sig * eps[:, :, t]

    if cfg.bump_amplitude != 0.0:
        t_s = np.arange(T) / cfg.fs_hz
        bump = cfg.bump_amplitude * np.exp(
            -0.5 * ((t_s - cfg.bump_center_s) / cfg.bump_width_s) ** 2
        )
        for c in cfg.active_channels:
            data[: cfg.n_target, c, :] += bump

    z = np.concatenate(
        [np.ones(cfg.n_target, dtype=np.int64), np.full(cfg.n_nontarget, 2, dtype=np.int64)]
    )
    return EpochDataset(
        X=data.reshape(n, ch * T),
        z=z,
        n_channels=ch,
        n_times=T,
        fs_hz=cfg.fs_hz,
        n_classes=2,
    )


def split_kfold(n: int, k: int, seed: int, stratify_by=None):
    """Deterministic k-fold split; test sets partition range(n).

    With ``stratify_by`` the per-class test counts across folds differ by
    at most one. Every class must then have at least k members.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < k:
        raise ValueError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    test_sets = [[] for _ in range(k)]
    if stratify_by is None:
        perm = rng.permutation(n)
        for f, chunk in enumerate(np.array_split(perm, k)):
            test_sets[f].extend(chunk.tolist())
    else:
        labels = np.asarray(stratify_by).ravel()
        if len(labels) != n:
            raise ValueError("stratify_by length must equal n")
        for lab in np.unique(labels):
            idx = np.flatnonzero(labels == lab)
            if len(idx) < k:
                raise ValueError(
                    f"class {lab} has {len(idx)} members, fewer than k={k}"
                )
            idx = idx[rng.permutation(len(idx))]
            for f in range(k):
                test_sets[f].extend(idx[f::k].tolist())
    folds = []
    all_idx = np.arange(n)
    for f in range(k):
        test = np.sort(np.asarray(test_sets[f], dtype=np.intp))
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        folds.append((all_idx[mask], test))
    return folds


def load_epochs(data_path, labels_path, meta_path) -> EpochDataset:
    """Load and validate a dataset from the three-file on-disk format."""
    meta_path = Path(meta_path)
    data_path = Path(data_path)
    labels_path = Path(labels_path)
    for path in (data_path, labels_path, meta_path):
        if not path.exists():
            raise DataValidationError(f"missing file: {path}")
    with open(meta_path, encoding="utf-8") as f:
        meta = json.load(f)
    for key in ("n", "p", "n_channels", "n_times", "fs_hz", "k"):
        if key not in meta:
            raise DataValidationError(f"{meta_path}: missing meta field {key!r}")
    n, p = int(meta["n"]), int(meta["p"])

    raw = np.fromfile(data_path, dtype="<f8")
    if raw.size != n * p:
        raise DataValidationError(
            f"{data_path}: has {raw.size} values, expected n*p = {n}*{p} = {n * p}"
        )
    X = raw.reshape(n, p)

    labels = []
    with open(labels_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise DataValidationError(
                    f"{labels_path}:{lineno}: not an integer class id: {line!r}"
                ) from None
    if len(labels) != n:
        raise DataValidationError(
            f"{labels_path}: {len(labels)} labels, expected {n}"
        )
    return EpochDataset(
        X=X,
        z=np.asarray(labels, dtype=np.int64),
        n_channels=int(meta["n_channels"]),
        n_times=int(meta["n_times"]),
        fs_hz=float(meta["fs_hz"]),
        n_classes=int(meta["k"]),
    )


def save_epochs(dataset: EpochDataset, out_dir) -> dict:
    """Write the three-file format into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_path = out / "epochs.f64"
    labels_path = out / "labels.txt"
    meta_path = out / "meta.json"
    dataset.X.astype("<f8").tofile(data_path)
    labels_path.write_text(
        "".join(f"{int(c)}\n" for c in dataset.z), encoding="utf-8"
    )
    meta = {
        "n": dataset.n,
        "p": dataset.p,
        "n_channels": dataset.n_channels,
        "n_times": dataset.n_times,
        "fs_hz": dataset.fs_hz,
        "k": dataset.n_classes,
    }
    meta_path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return {"data": data_path, "labels": labels_path, "meta": meta_path}
