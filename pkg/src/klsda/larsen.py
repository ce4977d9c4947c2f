"""Generalized elastic-net solution paths via least-angle regression.

The weighted problem

    min_b ||y - X b||^2 + lam1 * ||D1 b||_1 + lam2 * ||D2 b||_2^2

(D1, D2 positive diagonal, no 1/(2n) factor anywhere) is reduced to a
plain LASSO: stack sqrt(lam2)*D2 under X and p zeros under y, rescale
columns by D1^{-1}, run LARS with the drop-step modification, and map
each path point back through D1^{-1}. Every recorded vertex satisfies
the LASSO optimality conditions for its implied lam1, so the path
doubles as the grid of candidate solutions indexed by step count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .divergence import AnisotropyMatrix

#: active-set Gram factors are rebuilt from scratch this often to bound drift
REFACTOR_EVERY = 50

#: condition-number estimate above which a step is refused as degenerate
COND_LIMIT = 1e12


class DegenerateStepError(RuntimeError):
    """Active-set Gram matrix became numerically singular."""

    def __init__(self, feature: int, message: str):
        super().__init__(message)
        self.feature = feature


class ConvergenceError(RuntimeError):
    """Iterative solve stopped short of its tolerance."""

    def __init__(self, delta: float, message: str):
        super().__init__(message)
        self.delta = delta


@dataclass(frozen=True)
class PenaltyPair:
    """Diagonal l1/l2 penalty weights plus the ridge strength."""

    d1: AnisotropyMatrix
    d2: AnisotropyMatrix
    lambda2: float

    def __post_init__(self):
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be non-negative")
        if (self.d1.diag <= 0).any() or (self.d2.diag <= 0).any():
            raise ValueError("penalty diagonals must be strictly positive")


@dataclass(frozen=True)
class SolverLimits:
    """Path termination knobs; t_max has no default on purpose.

    ``max_nonzeros=None`` resolves per problem: no cap when the data has
    at least as many rows as features (the path ends at an honest
    least-squares fit), a quarter of the row count otherwise, where the
    tail of the path interpolates noise.
    """

    t_max: float
    max_steps: int = 500
    max_nonzeros: int | None = None
    tie_tol: float = 1e-12

    def __post_init__(self):
        if self.t_max <= 0 or self.max_steps <= 0:
            raise ValueError("limits must be positive")
        if self.max_nonzeros is not None and self.max_nonzeros <= 0:
            raise ValueError("limits must be positive")
        if self.tie_tol <= 0:
            raise ValueError("tie_tol must be positive")

    def resolve_max_nonzeros(self, n_rows: int, p: int) -> int:
        if self.max_nonzeros is not None:
            return self.max_nonzeros
        return p if p <= n_rows else max(1, n_rows // 4)


@dataclass(frozen=True)
class PathStep:
    beta: np.ndarray
    l1_mass: float
    active_set: tuple
    residual_sq: float
    implied_lambda1: float


@dataclass(frozen=True)
class SolverPath:
    steps: list = field(default_factory=list)

    @property
    def kappa(self) -> int:
        return len(self.steps) - 1

    def step(self, kappa: int) -> PathStep:
        """Vertex by 1-based step count; 0 is the all-zero start."""
        return self.steps[kappa]


def save_path_csv(path: SolverPath, destination) -> None:
    """Dump a solution path as CSV: one row per vertex."""
    import csv
    from pathlib import Path as _Path

    with open(_Path(destination), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["step", "implied_lambda1", "l1_mass", "n_nonzero", "residual_sq"]
        )
        for k, st in enumerate(path.steps):
            writer.writerow([
                k, repr(st.implied_lambda1), repr(st.l1_mass),
                len(st.active_set), repr(st.residual_sq),
            ])


def augment(X, y_response, pp: PenaltyPair):
    """Stack sqrt(lam2)*D2 under X and zeros under y.

    For lam2 = 0 the ridge block is all zeros and is omitted entirely.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y_response, dtype=np.float64).ravel()
    n, p = X.shape
    if len(y) != n:
        raise ValueError(f"response length {len(y)} != n rows {n}")
    if len(pp.d2.diag) != p:
        raise ValueError("d2 length does not match feature count")
    if pp.lambda2 == 0.0:
        return X, y
    ridge = np.zeros((p, p))
    np.fill_diagonal(ridge, np.sqrt(pp.lambda2) * pp.d2.diag)
    return np.vstack([X, ridge]), np.concatenate([y, np.zeros(p)])


class _ActiveChol:
    """Incrementally maintained Cholesky factor of the active-set Gram."""

    def __init__(self, X):
        self.X = X
        self.active = []
        self.L = np.zeros((0, 0))
        self._events = 0

    def insert(self, j: int):
        xj = self.X[:, j]
        g_jj = float(xj @ xj)
        m = len(self.active)
        if m == 0:
            if g_jj <= 0:
                raise DegenerateStepError(j, f"feature {j} has zero norm")
            self.L = np.array([[np.sqrt(g_jj)]])
        else:
            g = self.X[:, self.active].T @ xj
            l_row = solve_triangular(self.L, g, lower=True)
            d2 = g_jj - float(l_row @ l_row)
            if d2 <= 0:
                raise DegenerateStepError(
                    j, f"active Gram singular when adding feature {j}"
                )
            L_next = np.zeros((m + 1, m + 1))
            L_next[:m, :m] = self.L
            L_next[m, :m] = l_row
            L_next[m, m] = np.sqrt(d2)
            self.L = L_next
        self.active.append(j)
        self._check_condition(j)
        self._bump()

    def delete(self, j: int):
        k = self.active.index(j)
        self.active.pop(k)
        m = self.L.shape[0]
        L2 = np.delete(self.L, k, axis=0)
        # rows below the removed one gain a superdiagonal entry; chase it
        # away with Givens rotations applied from the right
        for col in range(k, m - 1):
            a, b = L2[col, col], L2[col, col + 1]
            r = float(np.hypot(a, b))
            if r > 0.0:
                c, s = a / r, b / r
                lo = L2[col:, col].copy()
                hi = L2[col:, col + 1].copy()
                L2[col:, col] = c * lo + s * hi
                L2[col:, col + 1] = -s * lo + c * hi
            L2[col, col] = r
            L2[col, col + 1] = 0.0
        self.L = L2[:, : m - 1]
        self._bump()

    def solve(self, rhs):
        z = solve_triangular(self.L, rhs, lower=True)
        return solve_triangular(self.L.T, z, lower=False)

    def _check_condition(self, j: int):
        d = np.diag(self.L)
        cond_est = (d.max() / d.min()) ** 2
        if cond_est > COND_LIMIT:
            raise DegenerateStepError(
                j,
                f"active Gram condition estimate {cond_est:.3g} exceeds "
                f"{COND_LIMIT:.0e} after adding feature {j}",
            )

    def _bump(self):
        self._events += 1
        if self._events % REFACTOR_EVERY == 0 and self.active:
            gram = self.X[:, self.active].T @ self.X[:, self.active]
            try:
                self.L = np.linalg.cholesky(gram)
            except np.linalg.LinAlgError:
                raise DegenerateStepError(
                    self.active[-1], "active Gram lost positive definiteness"
                ) from None


def lars_lasso_path(X_work, y_work, limits: SolverLimits,
                    max_nonzeros: int | None = None) -> SolverPath:
    """LASSO solution path on (X_work, y_work) by LARS with drop steps.

    Vertices are appended in order of nondecreasing l1 mass; the path stops
    at the l1 budget (final segment cut exactly at ``t_max`` by linear
    interpolation), at ``max_steps``/``max_nonzeros``, or when correlations
    vanish. Zero columns never become candidates. A coefficient that hits
    zero is dropped and barred from re-entering for one step.
    """
    X = np.asarray(X_work, dtype=np.float64)
    y = np.asarray(y_work, dtype=np.float64).ravel()
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("solver input contains non-finite values")
    n, p = X.shape
    if max_nonzeros is None:
        max_nonzeros = limits.resolve_max_nonzeros(n, p)
    col_ok = np.einsum("ij,ij->j", X, X) > 0.0
    tie_tol = limits.tie_tol

    alpha = np.zeros(p)
    active_alpha = np.zeros(0)
    Xa = np.empty((n, 0))
    chol = _ActiveChol(X)
    barred = -1
    steps = []

    def correlations():
        r = y - Xa @ active_alpha if chol.active else y
        return X.T @ r, r

    c, r = correlations()
    scale = max(float(np.abs(c[col_ok]).max(initial=0.0)), 1.0)
    tol_zero = 1e-12 * scale

    free_mask = col_ok.copy()
    c0 = float(np.abs(c[col_ok]).max(initial=0.0))
    steps.append(
        PathStep(
            beta=alpha.copy(),
            l1_mass=0.0,
            active_set=(),
            residual_sq=float(r @ r),
            implied_lambda1=2.0 * c0,
        )
    )

    while len(steps) - 1 < limits.max_steps:
        active = chol.active
        cand = free_mask.copy()
        if barred >= 0:
            cand[barred] = False
        abs_c = np.abs(c)
        if active:
            level = float(abs_c[active].max())
        else:
            level = float(abs_c[cand].max(initial=0.0))
        if level <= tol_zero:
            break

        # entry: the first free feature whose correlation reached the level
        at_level = cand & (abs_c >= level - tie_tol * scale)
        enter = int(np.argmax(at_level)) if at_level.any() else -1
        if enter >= 0:
            if len(active) + 1 > max_nonzeros:
                break
            chol.insert(enter)
            active = chol.active
            free_mask[enter] = False
            Xa = np.column_stack([Xa, X[:, enter]])
            active_alpha = np.append(active_alpha, 0.0)
        barred = -1

        s = np.sign(c[active])
        s[s == 0.0] = 1.0
        w = chol.solve(s)
        u = Xa @ w
        a = X.T @ u

        # smallest positive gamma at which a free feature catches up; the
        # just-dropped feature stays in this scan (its immediate zero-length
        # crossing is filtered out by the positivity guards) so the segment
        # cannot overshoot the point where it re-enters with flipped sign
        cand = free_mask.copy()
        gamma_enter = np.inf
        if cand.any():
            cf, af = c[cand], a[cand]
            with np.errstate(divide="ignore", invalid="ignore"):
                g1 = (level - cf) / (1.0 - af)
                g2 = (level + cf) / (1.0 + af)
            g12 = np.concatenate([g1, g2])
            ok = np.concatenate([
                (1.0 - af > 1e-15) & (level - cf > 1e-15 * scale),
                (1.0 + af > 1e-15) & (level + cf > 1e-15 * scale),
            ])
            if ok.any():
                gamma_enter = float(g12[ok].min())

        gamma = min(gamma_enter, level)

        # first active coefficient whose sign would flip
        drop_pos = -1
        nz = active_alpha != 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            g_drop = np.where(nz & (w != 0.0), -active_alpha / w, np.inf)
        g_drop[g_drop <= 0.0] = np.inf
        k_min = int(np.argmin(g_drop)) if len(g_drop) else -1
        if k_min >= 0 and g_drop[k_min] < gamma:
            gamma = float(g_drop[k_min])
            drop_pos = k_min

        slope = float(np.sign(active_alpha)[nz] @ w[nz]) + float(np.abs(w[~nz]).sum())

        t_cur = float(np.abs(active_alpha).sum())
        truncated = False
        if slope > 0.0 and t_cur + gamma * slope >= limits.t_max:
            gamma = (limits.t_max - t_cur) / slope
            truncated = True
            drop_pos = -1

        active_alpha = active_alpha + gamma * w
        if drop_pos >= 0:
            k = active[drop_pos]
            active_alpha = np.delete(active_alpha, drop_pos)
            Xa = np.delete(Xa, drop_pos, axis=1)
            chol.delete(k)
            free_mask[k] = True
            barred = k
        alpha[:] = 0.0
        alpha[chol.active] = active_alpha

        c, r = correlations()
        act = chol.active
        level_now = float(np.abs(c[act]).max()) if act else 0.0
        steps.append(
            PathStep(
                beta=alpha.copy(),
                l1_mass=float(np.abs(active_alpha).sum()),
                active_set=tuple(act),
                residual_sq=float(r @ r),
                implied_lambda1=2.0 * level_now,
            )
        )
        if truncated:
            break

    return SolverPath(steps=steps)


def generalized_enet(X, y_response, pp: PenaltyPair, limits: SolverLimits) -> SolverPath:
    """Weighted elastic-net path in the original beta coordinates.

    Composes the ridge augmentation, the D1^{-1} column rescaling, the
    LASSO path, and the back-map beta = D1^{-1} alpha. ``residual_sq`` and
    ``l1_mass`` of every step refer to the unaugmented data and the
    D1-weighted l1 norm respectively.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y_response, dtype=np.float64).ravel()
    d1 = pp.d1.diag
    if len(d1) != X.shape[1]:
        raise ValueError("d1 length does not match feature count")
    X_tilde, y_tilde = augment(X, y, pp)
    X_w = X_tilde / d1[None, :]
    # cap resolution uses the true sample count, not the augmented one
    cap = limits.resolve_max_nonzeros(X.shape[0], X.shape[1])
    path = lars_lasso_path(X_w, y_tilde, limits, max_nonzeros=cap)

    steps = []
    for st in path.steps:
        beta = st.beta / d1
        resid = y - X @ beta
        steps.append(
            PathStep(
                beta=beta,
                l1_mass=st.l1_mass,
                active_set=st.active_set,
                residual_sq=float(resid @ resid),
                implied_lambda1=st.implied_lambda1,
            )
        )
    return SolverPath(steps=steps)


def cd_reference_solver(X, y_response, pp: PenaltyPair, lambda1,
                        tol=1e-10, max_sweeps=100_000) -> np.ndarray:
    """Cyclic coordinate descent on the weighted elastic-net objective.

    Intended as an independent cross-check on small instances (p <= 16
    recommended); runs on plain Python floats via the Gram matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y_response, dtype=np.float64).ravel()
    p = X.shape[1]
    gram = (X.T @ X).tolist()
    xy = (X.T @ y).tolist()
    lam2 = pp.lambda2
    denom = [gram[j][j] + lam2 * float(pp.d2.diag[j]) ** 2 for j in range(p)]
    thr = [lambda1 * float(pp.d1.diag[j]) / 2.0 for j in range(p)]
    beta = [0.0] * p

    delta = 0.0
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(p):
            gj = gram[j]
            rho = xy[j] - sum(gj[k] * beta[k] for k in range(p)) + gj[j] * beta[j]
            if denom[j] == 0.0:
                new = 0.0
            elif rho > thr[j]:
                new = (rho - thr[j]) / denom[j]
            elif rho < -thr[j]:
                new = (rho + thr[j]) / denom[j]
            else:
                new = 0.0
            d = abs(new - beta[j])
            if d > delta:
                delta = d
            beta[j] = new
        if delta < tol:
            return np.asarray(beta)
    raise ConvergenceError(
        delta, f"coordinate descent stalled at delta={delta:.3e} after {max_sweeps} sweeps"
    )
