"""Class-discrepancy weighting from Kullback-Leibler divergence.

Per feature, the class-conditional distributions are estimated with
equal-width histograms over the pooled training range, compared with the
symmetrized KL divergence (J-divergence), and turned into a diagonal
anisotropy matrix D with det(D) = 1: features carrying little class
information receive large penalty weights, discriminative ones small.
All logarithms are natural (values in nats).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import EpochDataset

#: additive per-bin smoothing applied before normalization; keeps every
#: bin probability positive so KL never hits log(0) on estimated pairs
EPS_BIN = 1e-6

DEFAULT_N_BINS = 20
DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class HistogramPair:
    """Shared bin edges plus one probability row per class."""

    bin_edges: np.ndarray  # (B+1,), strictly increasing
    probs: np.ndarray      # (K, B), rows sum to 1


@dataclass(frozen=True)
class JMap:
    """Per-feature J-divergence values with the channel/time layout."""

    values: np.ndarray   # (p,), finite, >= 0
    layout: tuple        # (n_channels, n_times)

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.layout)


@dataclass(frozen=True)
class AnisotropyMatrix:
    """Diagonal of a positive-definite penalty weighting with unit determinant."""

    diag: np.ndarray
    epsilon_used: float

    @classmethod
    def identity(cls, p: int) -> "AnisotropyMatrix":
        return cls(diag=np.ones(p), epsilon_used=0.0)


def estimate_class_histograms(values, labels, n_bins, n_classes=None,
                              eps_bin=EPS_BIN) -> HistogramPair:
    """Per-class histograms on shared equal-width bins over the pooled range.

    A constant feature degenerates to a single bin; every class then gets
    the same (trivially uniform) distribution and contributes zero
    divergence downstream.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(values) < 2:
        raise ValueError("need at least two values")
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    k = int(n_classes) if n_classes else int(labels.max())
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        edges = np.array([lo - 0.5, hi + 0.5])
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    probs = np.empty((k, len(edges) - 1))
    for cls in range(1, k + 1):
        sel = values[labels == cls]
        if sel.size == 0:
            raise ValueError(f"class {cls} has no values")
        counts, _ = np.histogram(sel, bins=edges)
        smoothed = counts.astype(np.float64) + eps_bin
        probs[cls - 1] = smoothed / smoothed.sum()
    return HistogramPair(bin_edges=edges, probs=probs)


def kl_divergence(f1, f2) -> float:
    """sum f1 * log(f1/f2) in nats, with 0*log(0) = 0.

    Returns +inf when some bin has f1 > 0 but f2 = 0 (never the case for
    smoothed histogram estimates).
    """
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ValueError(f"length mismatch: {f1.shape} vs {f2.shape}")
    if (f1 < 0).any() or (f2 < 0).any():
        raise ValueError("probabilities must be non-negative")
    mask = f1 > 0
    if (f2[mask] == 0).any():
        return float("inf")
    return float(np.sum(f1[mask] * np.log(f1[mask] / f2[mask])))


def j_divergence(f1, f2) -> float:
    """Symmetrized KL: mean of both divergence orders."""
    return (kl_divergence(f1, f2) + kl_divergence(f2, f1)) / 2.0


def j_divergence_multi(distributions) -> float:
    """Sum of pairwise J-divergences over all distribution pairs."""
    dists = [np.asarray(f, dtype=np.float64) for f in distributions]
    if len(dists) < 2:
        raise ValueError("need at least two distributions")
    total = 0.0
    for i in range(len(dists) - 1):
        for j in range(i + 1, len(dists)):
            total += j_divergence(dists[i], dists[j])
    return total


def j_map(dataset: EpochDataset, n_bins=DEFAULT_N_BINS) -> JMap:
    """Column-wise class discrepancy of a (training) dataset.

    Caller is responsible for passing training rows only when the map
    feeds a fit that will later be scored on held-out rows.
    """
    p = dataset.p
    values = np.empty(p)
    for i in range(p):
        hist = estimate_class_histograms(
            dataset.X[:, i], dataset.z, n_bins, n_classes=dataset.n_classes
        )
        values[i] = j_divergence_multi(hist.probs)
    return JMap(values=values, layout=(dataset.n_channels, dataset.n_times))


def anisotropy_from_jmap(jmap: JMap, epsilon=DEFAULT_EPSILON) -> AnisotropyMatrix:
    """Diagonal weights d_i = C / (J_i + epsilon) with C fixing det = 1.

    C is the geometric mean of the guarded J values; the product is taken
    in log space so p in the thousands cannot overflow or underflow.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    j = np.asarray(jmap.values, dtype=np.float64)
    if not np.isfinite(j).all() or (j < 0).any():
        raise ValueError("J map must be finite and non-negative")
    log_guarded = np.log(j + epsilon)
    log_c = log_guarded.mean()
    diag = np.exp(log_c - log_guarded)
    return AnisotropyMatrix(diag=diag, epsilon_used=float(epsilon))
