"""Diagonal-unpenalized graphical lasso via proximal Newton, plus debiasing.

The solver restricts each Newton update to the free set (current nonzeros
plus entries whose gradient violates the l1 threshold), solves the LASSO
subproblem by cyclic coordinate descent with exact soft-threshold updates,
and line-searches the penalized objective under an SPD guard.

Debiasing keeps only the support of the lasso estimate and re-solves the
support-constrained MLE, warm-started at the lasso iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, LineSearchFailed, NotSpd
from .matrices import SparseSpd, SupportPattern, check_symmetric, cholesky
from .mle import (
    MleConfig,
    MleResult,
    default_q0,
    estimate_known_support,
    neg_log_likelihood,
    pattern_trace,
)


@dataclass
class GlassoConfig:
    lam: float = 0.1
    penalize_diagonal: bool = False
    newton_tol: float = 1e-5
    max_newton_iters: int = 100
    lasso_inner_iters: int = 20
    sub_tol: float = 1e-6
    prune_eps: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.newton_tol <= 0 or self.sub_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class GlassoResult:
    q: SparseSpd
    objective_trace: list[float] = field(default_factory=list)
    kkt_residual: float = np.inf
    converged: bool = False
    iterations: int = 0


def _l1_penalty(q: np.ndarray, cfg: GlassoConfig) -> float:
    total = float(np.sum(np.abs(q)))
    if not cfg.penalize_diagonal:
        total -= float(np.sum(np.abs(np.diag(q))))
    return cfg.lam * total


def glasso_objective(q: SparseSpd, s: np.ndarray, cfg: GlassoConfig) -> float:
    """Negative log-likelihood plus the (off-diagonal, unless configured) l1 term."""
    return neg_log_likelihood(q, s) + _l1_penalty(q.dense, cfg)


def free_set(q: SparseSpd, s: np.ndarray, lam: float) -> SupportPattern:
    """Entries allowed to move in one proximal-Newton iteration.

    Current nonzeros of Q plus entries where |S_ij - W_ij| exceeds lambda;
    the diagonal is always included since it is unpenalized and must stay
    free.
    """
    s = check_symmetric(s)
    if s.shape[0] != q.n:
        raise DimensionMismatch("covariance dimension differs from precision")
    w = np.linalg.inv(q.dense)
    viol = np.abs(s - 0.5 * (w + w.T)) > lam
    return SupportPattern.from_mask((q.dense != 0.0) | viol)


def _soft(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso_newton_direction(
    q: SparseSpd,
    s: np.ndarray,
    free: SupportPattern,
    cfg: GlassoConfig,
    w: np.ndarray | None = None,
) -> np.ndarray:
    """Coordinate-descent solution of the LASSO Newton subproblem.

    Minimizes tr(G D) + 0.5 tr(D W D W) + lam * |Q + D|_1 over directions D
    supported on the free set (G = S - W, W = Q^{-1}). Each coordinate gets
    an exact soft-threshold update; sweeps stop after lasso_inner_iters or
    when the largest coordinate change falls below sub_tol.
    """
    s = check_symmetric(s)
    if w is None:
        w = np.linalg.inv(q.dense)
        w = 0.5 * (w + w.T)
    n = q.n
    qd = q.dense
    lam = cfg.lam
    rows, cols = free.index_arrays()
    coords = list(zip(rows.tolist(), cols.tolist()))

    delta = np.zeros((n, n))
    u = np.zeros((n, n))  # u = delta @ w, kept in sync by rank-one row updates
    w_diag = np.diag(w)
    for _ in range(cfg.lasso_inner_iters):
        max_change = 0.0
        for i, j in coords:
            if i == j:
                a = w_diag[i] * w_diag[i]
                b = s[i, i] - w[i, i] + float(w[i] @ u[:, i])
                c = qd[i, i] + delta[i, i]
                if cfg.penalize_diagonal:
                    mu = -c + _soft(c - b / a, lam / a)
                else:
                    mu = -b / a
                if mu != 0.0:
                    delta[i, i] += mu
                    u[i] += mu * w[i]
            else:
                a = w[i, j] * w[i, j] + w_diag[i] * w_diag[j]
                b = s[i, j] - w[i, j] + float(w[i] @ u[:, j])
                c = qd[i, j] + delta[i, j]
                mu = -c + _soft(c - b / a, lam / a)
                if mu != 0.0:
                    delta[i, j] += mu
                    delta[j, i] += mu
                    u[i] += mu * w[j]
                    u[j] += mu * w[i]
            max_change = max(max_change, abs(mu))
        if max_change <= cfg.sub_tol:
            break
    return delta


def kkt_residual(q: np.ndarray, w: np.ndarray, s: np.ndarray, cfg: GlassoConfig) -> float:
    """Max violation of the stationarity conditions of the penalized problem.

    For unpenalized entries: |W_ij - S_ij|. For penalized nonzero entries:
    |W_ij - S_ij - lam * sign(Q_ij)|. For penalized zero entries:
    max(0, |W_ij - S_ij| - lam).
    """
    lam = cfg.lam
    resid = w - s
    penalized = ~np.eye(q.shape[0], dtype=bool)
    if cfg.penalize_diagonal:
        penalized = np.ones_like(penalized)
    nonzero = q != 0.0

    viol = np.abs(resid)  # unpenalized entries
    pen_nz = penalized & nonzero
    pen_z = penalized & ~nonzero
    out = 0.0
    if np.any(~penalized):
        out = float(np.max(viol[~penalized]))
    if np.any(pen_nz):
        out = max(out, float(np.max(np.abs(resid - lam * np.sign(q))[pen_nz])))
    if np.any(pen_z):
        out = max(out, float(np.max(np.maximum(0.0, viol - lam)[pen_z])))
    return out


def _prune(q: np.ndarray, eps: float) -> SparseSpd:
    kept = np.abs(q) > eps
    np.fill_diagonal(kept, True)
    pattern = SupportPattern.from_mask(kept)
    return SparseSpd(np.where(kept, q, 0.0), pattern)


def glasso_solve(
    s: np.ndarray, cfg: GlassoConfig, q0: SparseSpd | None = None
) -> GlassoResult:
    """Proximal-Newton graphical lasso.

    Converged when the KKT max-violation drops below newton_tol. The result
    pattern has numerically-zero entries pruned (diagonal always kept).
    """
    s = check_symmetric(s)
    n = s.shape[0]
    if q0 is None:
        q0 = default_q0(s, SupportPattern.diagonal(n))
    q = q0.dense.copy()

    def penalized_objective(mat: np.ndarray) -> float:
        chol = cholesky(mat)  # raises NotSpd for bad steps
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return -logdet + float(np.sum(mat * s)) + _l1_penalty(mat, cfg)

    trace = [penalized_objective(q)]
    kkt = np.inf
    converged = False
    iters = 0
    for t in range(cfg.max_newton_iters):
        w = np.linalg.inv(q)
        w = 0.5 * (w + w.T)
        kkt = kkt_residual(q, w, s, cfg)
        if kkt <= cfg.newton_tol:
            converged = True
            break
        q_spd = SparseSpd(q, SupportPattern.from_matrix(q))
        free = free_set(q_spd, s, cfg.lam)
        delta = lasso_newton_direction(q_spd, s, free, cfg, w=w)

        g = s - w
        descent = pattern_trace(g, delta) + _l1_penalty(q + delta, cfg) - _l1_penalty(q, cfg)
        if descent >= 0.0:
            # subproblem produced no usable direction; report where we are
            break
        f0 = trace[-1]
        alpha = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand = q + alpha * delta
            try:
                f_new = penalized_objective(cand)
            except NotSpd:
                alpha *= cfg.backtrack_factor
                continue
            if f_new <= f0 + cfg.armijo_c * alpha * descent:
                q = cand
                trace.append(f_new)
                accepted = True
                break
            alpha *= cfg.backtrack_factor
        if not accepted:
            raise LineSearchFailed("no acceptable step in the penalized line search")
        iters = t + 1

    result_q = _prune(q, cfg.prune_eps)
    if converged:
        # recompute against the pruned iterate so the reported residual is honest
        w = np.linalg.inv(result_q.dense)
        kkt = kkt_residual(result_q.dense, 0.5 * (w + w.T), s, cfg)
    return GlassoResult(
        q=result_q,
        objective_trace=trace,
        kkt_residual=float(kkt),
        converged=converged,
        iterations=iters,
    )


def debias(
    s: np.ndarray,
    cfg: GlassoConfig,
    mle_cfg: MleConfig | None = None,
    q0: SparseSpd | None = None,
) -> MleResult:
    """Two-step debiased estimate.

    Step 1 runs the graphical lasso; step 2 discards its values, keeps the
    support, and re-solves the support-constrained MLE warm-started at the
    lasso iterate.
    """
    first = glasso_solve(s, cfg, q0=q0)
    support = first.q.pattern
    return estimate_known_support(s, support, q0=first.q, cfg=mle_cfg or MleConfig())
