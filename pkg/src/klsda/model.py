"""Alternating optimal-scoring fit with automatic regularization selection.

For each discriminant direction the loop alternates between (a) solving
the weighted elastic-net path for every ridge value on the grid, keeping
the full table of fit residuals indexed by (lambda2, step count), then
picking the entry with the smallest residual, and (b) refreshing the
score vector and renormalizing it against the class-proportion metric.
The residual-minimizing pick approximates the point of maximal curvature
of the multi-parameter L-hypersurface; the l1 budget in ``SolverLimits``
is the counterweight that keeps it from racing to the least-regularized
end of the path.

Four configurations control where the anisotropy matrix D enters:

    config    l1 weight   l2 weight
    KLSDA0        I           I        (plain sparse discriminant analysis)
    KLSDA1        D           I
    KLSDA2        I           D
    KLSDA3        D           D
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import EpochDataset, center_columns, indicator
from .divergence import (
    DEFAULT_EPSILON,
    DEFAULT_N_BINS,
    AnisotropyMatrix,
    anisotropy_from_jmap,
    j_map,
)
from .larsen import PenaltyPair, SolverLimits, generalized_enet

logger = logging.getLogger(__name__)

CONFIG_IDS = ("KLSDA0", "KLSDA1", "KLSDA2", "KLSDA3")

#: which of (l1, l2) carries the anisotropy matrix, per configuration
_D_PLACEMENT = {
    "KLSDA0": (False, False),
    "KLSDA1": (True, False),
    "KLSDA2": (False, True),
    "KLSDA3": (True, True),
}

#: slack allowed before an outer-iteration residual counts as increasing
_PROGRESS_SLACK = 1e-9


class DegenerateDirectionError(RuntimeError):
    """A direction collapsed to zero (projection or score update vanished)."""


@dataclass(frozen=True)
class KlsdaConfig:
    """Everything a fit needs besides the data and the anisotropy matrix."""

    config_id: str
    lambda2_grid: tuple
    limits: SolverLimits
    q: int = 1
    max_outer_iters: int = 30
    convergence_tol: float = 1e-6
    n_bins: int = DEFAULT_N_BINS
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.config_id not in _D_PLACEMENT:
            raise ValueError(f"unknown config id {self.config_id!r}")
        grid = tuple(float(v) for v in self.lambda2_grid)
        if not grid:
            raise ValueError("lambda2 grid must be non-empty")
        if any(v <= 0 for v in grid):
            raise ValueError("lambda2 grid values must be positive")
        if list(grid) != sorted(grid):
            raise ValueError("lambda2 grid must be sorted ascending")
        object.__setattr__(self, "lambda2_grid", grid)
        if self.q < 1:
            raise ValueError("q must be at least 1")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.convergence_tol <= 0 or self.epsilon <= 0:
            raise ValueError("tolerances must be positive")

    @property
    def uses_anisotropy(self) -> bool:
        return any(_D_PLACEMENT[self.config_id])


def default_lambda2_grid(n_points: int = 8, lo: float = 1e-8, hi: float = 1e-1):
    """Log-spaced ridge grid, endpoints included."""
    return tuple(np.logspace(np.log10(lo), np.log10(hi), n_points))


@dataclass(frozen=True)
class ResidualTable:
    """Fit residuals indexed by (lambda2 grid position, path step kappa).

    ``residuals[g, k]`` holds the squared residual at step ``k + 1`` of the
    path solved with ``lambda2_values[g]``; NaN marks steps the path never
    reached.
    """

    lambda2_values: tuple
    residuals: np.ndarray

    def n_finite(self) -> int:
        return int(np.isfinite(self.residuals).sum())


def select_optimal(table: ResidualTable):
    """(lambda2, kappa) of the smallest residual.

    Ties break toward larger lambda2, then smaller kappa, preferring the
    more regularized of otherwise equal solutions.
    """
    res = table.residuals
    if res.size == 0 or not np.isfinite(res).any():
        raise ValueError("residual table has no finite entries")
    best = None
    for gi, lam2 in enumerate(table.lambda2_values):
        row = res[gi]
        for ki in np.flatnonzero(np.isfinite(row)):
            r = float(row[ki])
            kappa = int(ki) + 1
            if best is None:
                best = (r, lam2, kappa)
                continue
            br, blam, bk = best
            if r < br or (r == br and (lam2 > blam or (lam2 == blam and kappa < bk))):
                best = (r, lam2, kappa)
    return best[1], best[2]


def build_penalties(config_id: str, d: AnisotropyMatrix | None, p: int):
    """Penalty-pair factory implementing the configuration table above.

    Returns a callable mapping lambda2 to a ``PenaltyPair``.
    """
    if config_id not in _D_PLACEMENT:
        raise ValueError(f"unknown config id {config_id!r}")
    use1, use2 = _D_PLACEMENT[config_id]
    if (use1 or use2) and d is None:
        raise ValueError(f"{config_id} needs an anisotropy matrix")
    ident = AnisotropyMatrix.identity(p)
    d1 = d if use1 else ident
    d2 = d if use2 else ident

    def factory(lambda2: float) -> PenaltyPair:
        return PenaltyPair(d1=d1, d2=d2, lambda2=float(lambda2))

    return factory


def init_theta(n_classes: int, q: int) -> np.ndarray:
    """Score-matrix start: ones on the main diagonal of a K x q matrix."""
    if q > n_classes:
        raise ValueError(f"q={q} exceeds number of classes {n_classes}")
    return np.eye(n_classes, q)


def update_theta(Y, x_proj, theta_prev, pi) -> np.ndarray:
    """Score update: class-proportion-whitened projection of ``x_proj``,
    deflated against previously fixed score vectors, normalized so that
    theta' pi theta = 1. ``theta_prev`` is K x (j-1); pass an empty matrix
    for the first direction, where the orthogonality constraint is vacuous.
    """
    Y = np.asarray(Y, dtype=np.float64)
    x_proj = np.asarray(x_proj, dtype=np.float64).ravel()
    pi_diag = np.diag(np.asarray(pi, dtype=np.float64))
    if (pi_diag <= 0).any():
        raise ValueError("every class must be non-empty")
    t = (Y.T @ x_proj) / pi_diag
    pre_norm = np.sqrt(float(t @ (pi_diag * t)))
    if theta_prev is not None and theta_prev.size:
        t = t - theta_prev @ (theta_prev.T @ (pi_diag * t))
    norm = np.sqrt(float(t @ (pi_diag * t)))
    if not norm > 1e-12 * max(pre_norm, 1e-300):
        raise DegenerateDirectionError(
            "score update vanished (projection carries no class contrast)"
        )
    return t / norm


@dataclass(frozen=True)
class KlsdaModel:
    """Fitted discriminant directions plus everything needed to reuse them."""

    B: np.ndarray            # p x q sparse directions
    Theta: np.ndarray        # K x q score matrix
    selected: tuple          # per direction (lambda2_hat, kappa_hat)
    selected_residuals: tuple
    pi: np.ndarray
    config: KlsdaConfig
    d_matrix: AnisotropyMatrix | None
    column_means: np.ndarray
    converged: tuple = ()
    n_outer_iters: tuple = ()
    warnings: tuple = ()
    n_channels: int = 0
    n_times: int = 0

    @property
    def q(self) -> int:
        return self.B.shape[1]


def _solve_grid(X, y_resp, factory, grid, limits, n_jobs):
    if n_jobs > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [
                pool.submit(generalized_enet, X, y_resp, factory(lam2), limits)
                for lam2 in grid
            ]
            return [f.result() for f in futures]  # reduced in grid order
    return [generalized_enet(X, y_resp, factory(lam2), limits) for lam2 in grid]


def _residual_table(grid, paths) -> ResidualTable:
    width = max(path.kappa for path in paths)
    res = np.full((len(grid), max(width, 1)), np.nan)
    for gi, path in enumerate(paths):
        for ki in range(path.kappa):
            res[gi, ki] = path.step(ki + 1).residual_sq
    return ResidualTable(lambda2_values=tuple(grid), residuals=res)


def fit(X_centered, Y, cfg: KlsdaConfig, d: AnisotropyMatrix | None = None,
        column_means=None, n_jobs: int = 1) -> KlsdaModel:
    """Fit ``cfg.q`` sparse discriminant directions on centered data.

    Per direction, outer iterations alternate the grid-of-paths solve /
    residual-argmin selection with the score update, until the direction
    moves less than ``convergence_tol`` in max norm or the iteration cap
    is hit. The selected residual is tracked across outer iterations; if
    it ever increases beyond slack the loop is cut and the best iterate
    kept (logged, and flagged on the model).
    """
    X = np.asarray(X_centered, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, p = X.shape
    K = Y.shape[1]
    if cfg.q > K - 1:
        raise ValueError(f"q={cfg.q} exceeds K-1={K - 1}")
    if cfg.uses_anisotropy and d is None:
        raise ValueError(f"{cfg.config_id} requires an anisotropy matrix")

    pi = (Y.T @ Y) / n
    pi_diag = np.diag(pi)
    factory = build_penalties(cfg.config_id, d if cfg.uses_anisotropy else None, p)
    Theta = init_theta(K, cfg.q)
    B = np.zeros((p, cfg.q))
    selected = []
    selected_residuals = []
    converged_flags = []
    iters_used = []
    warnings = []

    for j in range(cfg.q):
        # rescale the working init column to theta' pi theta = 1, the
        # constraint every updated score satisfies; otherwise residuals of
        # the first outer iteration live on a different response scale
        theta_j = Theta[:, j] / np.sqrt(
            float(Theta[:, j] @ (pi_diag * Theta[:, j]))
        )
        theta_fixed = Theta[:, :j]
        beta_prev = np.zeros(p)
        best = None  # (residual, beta, theta_after, lam2, kappa)
        converged = False
        stopped_on_regression = False
        it = 0
        delta = np.inf

        for it in range(1, cfg.max_outer_iters + 1):
            y_resp = Y @ theta_j
            paths = _solve_grid(X, y_resp, factory, cfg.lambda2_grid, cfg.limits, n_jobs)
            table = _residual_table(cfg.lambda2_grid, paths)
            if table.n_finite() == 0:
                raise DegenerateDirectionError(
                    f"direction {j + 1}: no path vertex within the l1 budget"
                )
            lam2_hat, kappa_hat = select_optimal(table)
            gi = cfg.lambda2_grid.index(lam2_hat)
            step = paths[gi].step(kappa_hat)
            beta_j = step.beta
            if not np.any(beta_j):
                raise DegenerateDirectionError(
                    f"direction {j + 1}: selected vertex is the zero vector"
                )
            theta_new = update_theta(Y, X @ beta_j, theta_fixed, pi)
            resid = step.residual_sq

            if best is not None and resid > best[0] + _PROGRESS_SLACK:
                msg = (
                    f"direction {j + 1}: residual rose from {best[0]:.6e} to "
                    f"{resid:.6e} at outer iteration {it}; keeping best iterate"
                )
                logger.warning(msg)
                warnings.append(msg)
                stopped_on_regression = True
                break
            if best is None or resid < best[0]:
                best = (resid, beta_j, theta_new, lam2_hat, kappa_hat)

            delta = float(np.abs(beta_j - beta_prev).max())
            beta_prev = beta_j
            theta_j = theta_new
            if delta < cfg.convergence_tol:
                converged = True
                break

        if (not converged and not stopped_on_regression
                and it >= cfg.max_outer_iters):
            msg = (
                f"direction {j + 1}: no convergence within "
                f"{cfg.max_outer_iters} outer iterations (last delta "
                f"{delta:.6e}, best residual {best[0]:.6e}); "
                f"returning best iterate"
            )
            logger.warning(msg)
            warnings.append(msg)

        _, beta_j, theta_j, lam2_hat, kappa_hat = best
        B[:, j] = beta_j
        Theta[:, j] = theta_j
        selected.append((lam2_hat, kappa_hat))
        # stored against the returned (theta, beta) pair, so it can be
        # recomputed bit-for-bit from the model alone
        final_resid = Y @ theta_j - X @ beta_j
        selected_residuals.append(float(final_resid @ final_resid))
        converged_flags.append(converged)
        iters_used.append(it)

    means = (
        np.zeros(p) if column_means is None
        else np.asarray(column_means, dtype=np.float64)
    )
    return KlsdaModel(
        B=B,
        Theta=Theta,
        selected=tuple(selected),
        selected_residuals=tuple(selected_residuals),
        pi=pi,
        config=cfg,
        d_matrix=d if cfg.uses_anisotropy else None,
        column_means=means,
        converged=tuple(converged_flags),
        n_outer_iters=tuple(iters_used),
        warnings=tuple(warnings),
    )


def fit_dataset(dataset: EpochDataset, cfg: KlsdaConfig, n_jobs: int = 1) -> KlsdaModel:
    """Center, derive the anisotropy matrix when needed, and fit.

    The class-discrepancy map is computed from exactly the rows being fit,
    so callers holding out rows for scoring get leak-free weights for free.
    """
    Xc, means = center_columns(dataset.X)
    ind = indicator(dataset)
    d = None
    if cfg.uses_anisotropy:
        jm = j_map(dataset, n_bins=cfg.n_bins)
        d = anisotropy_from_jmap(jm, epsilon=cfg.epsilon)
    model = fit(Xc, ind.Y, cfg, d=d, column_means=means)
    return KlsdaModel(
        B=model.B,
        Theta=model.Theta,
        selected=model.selected,
        selected_residuals=model.selected_residuals,
        pi=model.pi,
        config=model.config,
        d_matrix=model.d_matrix,
        column_means=model.column_means,
        converged=model.converged,
        n_outer_iters=model.n_outer_iters,
        warnings=model.warnings,
        n_channels=dataset.n_channels,
        n_times=dataset.n_times,
    )


def model_to_json_dict(model: KlsdaModel, seed: int | None = None) -> dict:
    """Serializable view of a fitted model (sparse directions)."""
    betas = []
    for j in range(model.q):
        col = model.B[:, j]
        idx = np.flatnonzero(col)
        betas.append(
            {"indices": idx.tolist(), "values": col[idx].tolist()}
        )
    d_diag = model.d_matrix.diag if model.d_matrix is not None else np.ones(model.B.shape[0])
    return {
        "config_id": model.config.config_id,
        "q": model.q,
        "lambda2_selected": [lam for lam, _ in model.selected],
        "kappa_selected": [int(k) for _, k in model.selected],
        "beta": betas,
        "theta": model.Theta.tolist(),
        "pi": np.diag(model.pi).tolist(),
        "d_diag_summary": {
            "min": float(d_diag.min()),
            "max": float(d_diag.max()),
            "geometric_mean": float(np.exp(np.log(d_diag).mean())),
        },
        "column_means": model.column_means.tolist(),
        "t_max": model.config.limits.t_max,
        "n_bins": model.config.n_bins,
        "epsilon": model.config.epsilon,
        "seed": seed,
        "n_channels": model.n_channels,
        "n_times": model.n_times,
        "selected_residuals": list(model.selected_residuals),
        "converged": list(model.converged),
        "warnings": list(model.warnings),
    }


def save_model_json(model: KlsdaModel, path, seed: int | None = None) -> None:
    payload = model_to_json_dict(model, seed=seed)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )


def load_model_json(path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)
