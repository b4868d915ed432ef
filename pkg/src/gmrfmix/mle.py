"""Support-constrained maximum-likelihood estimation of a precision matrix.

The estimator minimizes -log det Q + tr(Q S) over SPD matrices whose
support is restricted to a given pattern. The Newton direction is obtained
by solving W @ Delta @ W = -G (W = Q^{-1}) with a projected, diagonally
preconditioned conjugate gradient, followed by an Armijo backtracking line
search that also guards positive-definiteness via Cholesky.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, LineSearchFailed, SingularCovariance, NotSpd
from .matrices import (
    SparseSpd,
    SupportPattern,
    check_symmetric,
    project_to_pattern,
    spd_inverse,
)

RIDGE_EPS = 1e-6


@dataclass
class MleConfig:
    outer_tol: float = 1e-6
    max_outer_iters: int = 200
    pcg_tol: float = 1e-2
    max_pcg_iters: int = 200
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40

    def __post_init__(self):
        if self.outer_tol <= 0 or self.pcg_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack_factor < 1):
            raise ValueError("armijo_c and backtrack_factor must lie in (0,1)")
        if min(self.max_outer_iters, self.max_pcg_iters, self.max_backtracks) < 1:
            raise ValueError("iteration counts must be >= 1")


@dataclass
class MleResult:
    q: SparseSpd
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def pattern_trace(a: np.ndarray, b: np.ndarray) -> float:
    """tr(A B) for symmetric operands supported on a common pattern.

    Equals sum(A * B) elementwise, which counts each off-diagonal pair
    twice, exactly as the trace does.
    """
    return float(np.sum(a * b))


def neg_log_likelihood(q: SparseSpd, s: np.ndarray) -> float:
    """-log det Q + tr(Q S), the trace taken over the pattern entries only."""
    s = check_symmetric(s)
    if s.shape[0] != q.n:
        raise DimensionMismatch("covariance dimension differs from precision")
    vals = q.values()
    srow = s[q.pair_rows, q.pair_cols]
    doubled = np.where(q.pair_rows != q.pair_cols, 2.0, 1.0)
    return -q.log_det + float(np.sum(vals * srow * doubled))


def gradient(q: SparseSpd, s: np.ndarray) -> np.ndarray:
    """Gradient S - Q^{-1} of the negative log-likelihood, dense."""
    s = check_symmetric(s)
    if s.shape[0] != q.n:
        raise DimensionMismatch("covariance dimension differs from precision")
    return s - spd_inverse(q)


def _ridge(s: np.ndarray, eps: float = RIDGE_EPS) -> np.ndarray:
    return s + eps * float(np.mean(np.diag(s))) * np.eye(s.shape[0])


def dense_mle(s: np.ndarray, ridge: bool = True) -> SparseSpd:
    """Closed-form MLE S^{-1} on the full pattern.

    When S itself fails Cholesky and ridge is enabled, a tiny multiple of
    mean(diag S) is added to the diagonal before inverting.
    """
    s = check_symmetric(s)
    full = SupportPattern.full(s.shape[0])
    try:
        s_spd = SparseSpd(s, full)
    except NotSpd:
        if not ridge:
            raise SingularCovariance("empirical covariance is not SPD")
        try:
            s_spd = SparseSpd(_ridge(s), full)
        except NotSpd as exc:
            raise SingularCovariance(
                "empirical covariance is not SPD even after the ridge floor"
            ) from exc
    return SparseSpd(spd_inverse(s_spd), full)


def hessian_apply(
    w: np.ndarray, delta: np.ndarray, pattern: SupportPattern
) -> np.ndarray:
    """Apply the Newton operator: project(W Delta W) onto the pattern.

    The n^2 x n^2 Hessian W (x) W is never materialized.
    """
    w = check_symmetric(w)
    if w.shape[0] != pattern.n or delta.shape != w.shape:
        raise DimensionMismatch("operand dimensions differ")
    wdw = w @ delta @ w
    # the product is symmetric in exact arithmetic; enforce it so rounding
    # noise cannot accumulate across PCG iterations
    return project_to_pattern(0.5 * (wdw + wdw.T), pattern)


def precond_weights(w: np.ndarray, pattern: SupportPattern) -> np.ndarray:
    """Diagonal preconditioner weights per pattern entry.

    M_ij = W_ii W_jj + W_ij^2 off the diagonal, M_ii = W_ii^2; returned as a
    dense matrix (entries outside the pattern are set to 1 so division is
    always safe).
    """
    w = check_symmetric(w)
    d = np.diag(w)
    m = np.outer(d, d) + w * w
    np.fill_diagonal(m, d * d)
    return np.where(pattern.mask(), m, 1.0)


def proj_pcg(
    q: SparseSpd,
    g: np.ndarray,
    pattern: SupportPattern,
    cfg: MleConfig,
    w: np.ndarray | None = None,
):
    """Solve project(W Delta W) = -G over the pattern subspace by PCG.

    Returns (delta, converged). Every iterate is supported on the pattern;
    the preconditioner divides residuals entrywise by precond_weights. Even
    a truncated solution is a descent direction because the operator is SPD
    on the pattern subspace.
    """
    if w is None:
        w = spd_inverse(q)
    mask = pattern.mask()
    g = np.where(mask, g, 0.0)
    m = precond_weights(w, pattern)

    x = np.zeros_like(g)
    r = -g  # residual of A x = -g at x = 0
    g_norm = np.linalg.norm(g)
    if g_norm == 0.0:
        return x, True
    z = np.where(mask, r / m, 0.0)
    p = z.copy()
    rz = pattern_trace(r, z)
    for _ in range(cfg.max_pcg_iters):
        wpw = w @ p @ w
        ap = project_to_pattern(0.5 * (wpw + wpw.T), pattern)
        p_ap = pattern_trace(p, ap)
        if p_ap <= 0.0:
            break  # numerical loss of positive-definiteness; keep current x
        alpha = rz / p_ap
        x = x + alpha * p
        r = r - alpha * ap
        if np.linalg.norm(r) <= cfg.pcg_tol * g_norm:
            return x, True
        z = np.where(mask, r / m, 0.0)
        rz_new = pattern_trace(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, False


def armijo_spd_search(
    q: SparseSpd,
    s: np.ndarray,
    g: np.ndarray,
    delta: np.ndarray,
    cfg: MleConfig,
):
    """Backtracking line search with an SPD guard.

    Returns (alpha, q_new, f_new) for the largest alpha in {1, beta,
    beta^2, ...} such that Q + alpha Delta passes Cholesky and satisfies the
    Armijo sufficient-decrease condition on the negative log-likelihood.
    """
    descent = pattern_trace(g, delta)
    if descent >= 0.0:
        raise LineSearchFailed(f"not a descent direction (tr(G D) = {descent:g})")
    f0 = neg_log_likelihood(q, s)
    alpha = 1.0
    for _ in range(cfg.max_backtracks):
        try:
            cand = SparseSpd(q.dense + alpha * delta, q.pattern)
        except NotSpd:
            alpha *= cfg.backtrack_factor
            continue
        f_new = neg_log_likelihood(cand, s)
        if f_new <= f0 + cfg.armijo_c * alpha * descent:
            return alpha, cand, f_new
        alpha *= cfg.backtrack_factor
    raise LineSearchFailed("no acceptable step within max_backtracks")


def default_q0(s: np.ndarray, pattern: SupportPattern) -> SparseSpd:
    """Diagonal starting point q_ii = 1 / max(s_ii, ridge floor)."""
    d = np.diag(s).copy()
    floor = RIDGE_EPS * max(float(np.mean(d)), np.finfo(float).tiny)
    d = np.maximum(d, floor)
    if np.any(d <= 0.0):
        raise SingularCovariance("covariance diagonal is not positive")
    return SparseSpd(np.diag(1.0 / d), pattern)


def estimate_known_support(
    s: np.ndarray,
    pattern: SupportPattern,
    q0: SparseSpd | None = None,
    cfg: MleConfig | None = None,
) -> MleResult:
    """Projected Newton estimation of Q subject to Supp(Q) within the pattern.

    Stops when the max-abs of the projected gradient drops below
    cfg.outer_tol (only pattern entries are free variables).
    """
    s = check_symmetric(s)
    cfg = cfg or MleConfig()
    if s.shape[0] != pattern.n:
        raise DimensionMismatch("covariance dimension differs from pattern")
    if q0 is None:
        q = default_q0(s, pattern)
    else:
        if not q0.pattern.issubset(pattern):
            raise DimensionMismatch("q0 support is not contained in the pattern")
        q = SparseSpd(q0.dense, pattern) if q0.pattern != pattern else q0

    trace = [neg_log_likelihood(q, s)]
    converged = False
    iters = 0
    for t in range(cfg.max_outer_iters):
        w = spd_inverse(q)
        g = project_to_pattern(s - w, pattern)
        if float(np.max(np.abs(g))) <= cfg.outer_tol:
            converged = True
            break
        delta, _ = proj_pcg(q, g, pattern, cfg, w=w)
        _, q, f_new = armijo_spd_search(q, s, g, delta, cfg)
        trace.append(f_new)
        iters = t + 1
    return MleResult(q=q, objective_trace=trace, converged=converged, iterations=iters)
