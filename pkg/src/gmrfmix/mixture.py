"""GMRF mixture model and the EM driver.

The M-step precision estimator is pluggable: closed-form dense MLE,
graphical lasso, the debiased two-step estimator, or the known-support
Newton solver. Iterative estimators are warm-started from the previous EM
iteration's component precision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInit, DimensionMismatch, EmptyComponent
from .glasso import GlassoConfig, debias, glasso_solve
from .matrices import SparseSpd, SupportPattern, write_atomic_text
from .mle import MleConfig, dense_mle, estimate_known_support

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GmrfComponent:
    weight: float
    mean: np.ndarray
    precision: SparseSpd

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        if self.weight <= 0:
            raise ValueError("component weight must be positive")
        if self.mean.shape != (self.precision.n,):
            raise DimensionMismatch("mean length differs from precision dimension")


class MixtureModel:
    def __init__(self, components: list[GmrfComponent]):
        if not components:
            raise ValueError("mixture needs at least one component")
        n = components[0].precision.n
        if any(c.precision.n != n for c in components):
            raise DimensionMismatch("components have different dimensions")
        total = sum(c.weight for c in components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total!r}, not 1")
        self.components = list(components)
        self.n = n
        self.k = len(components)

    def to_json(self) -> dict:
        return {
            "K": self.k,
            "n": self.n,
            "components": [
                {
                    "weight": c.weight,
                    "mean": c.mean.tolist(),
                    "precision": c.precision.to_json(),
                }
                for c in self.components
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureModel":
        comps = [
            GmrfComponent(
                weight=float(c["weight"]),
                mean=np.asarray(c["mean"], dtype=np.float64),
                precision=SparseSpd.from_json(c["precision"]),
            )
            for c in obj["components"]
        ]
        return cls(comps)

    def save(self, path: str) -> None:
        write_atomic_text(path, json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str) -> "MixtureModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# ---------------------------------------------------------------------------
# M-step precision estimators


@dataclass
class BaselineEstimator:
    """Unregularized closed-form MLE, Q = S^{-1} (with the tiny ridge guard)."""

    name = "baseline"

    def fit(self, s: np.ndarray, warm: SparseSpd | None, k: int) -> SparseSpd:
        return dense_mle(s)


@dataclass
class GlassoEstimator:
    cfg: GlassoConfig = field(default_factory=GlassoConfig)
    name = "glasso"

    def fit(self, s: np.ndarray, warm: SparseSpd | None, k: int) -> SparseSpd:
        return glasso_solve(s, self.cfg, q0=warm).q


@dataclass
class DebiasedEstimator:
    cfg: GlassoConfig = field(default_factory=GlassoConfig)
    mle_cfg: MleConfig = field(default_factory=MleConfig)
    name = "debiased"

    def fit(self, s: np.ndarray, warm: SparseSpd | None, k: int) -> SparseSpd:
        return debias(s, self.cfg, self.mle_cfg, q0=warm).q


@dataclass
class KnownSupportEstimator:
    """Constrained MLE with a (component-specific) fixed support per component."""

    patterns: list[SupportPattern]
    mle_cfg: MleConfig = field(default_factory=MleConfig)
    name = "known_support"

    def fit(self, s: np.ndarray, warm: SparseSpd | None, k: int) -> SparseSpd:
        pattern = self.patterns[k] if len(self.patterns) > 1 else self.patterns[0]
        q0 = warm if warm is not None and warm.pattern.issubset(pattern) else None
        return estimate_known_support(s, pattern, q0=q0, cfg=self.mle_cfg).q


@dataclass
class EmConfig:
    estimator: object = field(default_factory=BaselineEstimator)
    k: int = 1
    init: str = "random_responsibilities"  # or "kmeans_plus_plus"
    ll_tol: float = 1e-6
    max_em_iters: int = 500
    min_component_weight: float = 1e-6
    fix_means_to_zero: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.ll_tol <= 0:
            raise ValueError("ll_tol must be positive")


# ---------------------------------------------------------------------------
# EM steps


def log_pdf(c: GmrfComponent, x: np.ndarray) -> float:
    """Gaussian log-density via the precision: 0.5 log det Q - (n/2) log 2pi
    - 0.5 (x-mu)^T Q (x-mu), the quadratic form through the sparse pattern."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (c.precision.n,):
        raise DimensionMismatch("point dimension differs from component")
    quad = c.precision.quad_form(x - c.mean)
    return 0.5 * c.precision.log_det - 0.5 * c.precision.n * LOG_2PI - 0.5 * quad


def _component_log_pdfs(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    """(N, K) matrix of per-component log-densities, vectorized over points."""
    out = np.empty((data.shape[0], model.k))
    for k, c in enumerate(model.components):
        d = data - c.mean
        out[:, k] = (
            0.5 * c.precision.log_det
            - 0.5 * model.n * LOG_2PI
            - 0.5 * c.precision.quad_form(d)
        )
    return out


def e_step(model: MixtureModel, data: np.ndarray):
    """Responsibilities and total log-likelihood, computed in log space."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != model.n:
        raise DimensionMismatch("data dimension differs from model")
    log_p = _component_log_pdfs(model, data)
    log_w = log_p + np.log([c.weight for c in model.components])
    row_max = np.max(log_w, axis=1, keepdims=True)
    shifted = np.exp(log_w - row_max)
    row_sum = np.sum(shifted, axis=1, keepdims=True)
    resp = shifted / row_sum
    total_ll = float(np.sum(row_max[:, 0] + np.log(row_sum[:, 0])))
    return resp, total_ll


def weighted_stats(
    data: np.ndarray,
    w: np.ndarray,
    k: int,
    fix_mean_zero: bool = False,
    min_weight: float = 0.0,
):
    """Weighted mean and (1/sum-w normalized) covariance of component k."""
    wk = w[:, k]
    wsum = float(np.sum(wk))
    if wsum <= min_weight * data.shape[0] or wsum <= 0.0:
        raise EmptyComponent(f"component {k} has weight sum {wsum:g}")
    if fix_mean_zero:
        mean = np.zeros(data.shape[1])
        centered = data
    else:
        mean = (wk @ data) / wsum
        centered = data - mean
    s = (centered.T * wk) @ centered / wsum
    s = 0.5 * (s + s.T)
    return mean, s, wsum


def m_step(
    data: np.ndarray,
    w: np.ndarray,
    cfg: EmConfig,
    prev: MixtureModel | None = None,
) -> MixtureModel:
    """Update weights, means and precisions from the responsibilities."""
    n_points = data.shape[0]
    comps = []
    for k in range(cfg.k):
        mean, s, wsum = weighted_stats(
            data, w, k, cfg.fix_means_to_zero, cfg.min_component_weight
        )
        warm = prev.components[k].precision if prev is not None else None
        q = cfg.estimator.fit(s, warm, k)
        comps.append(GmrfComponent(weight=wsum / n_points, mean=mean, precision=q))
    total = sum(c.weight for c in comps)
    for c in comps:
        c.weight /= total
    return MixtureModel(comps)


def _init_responsibilities(data: np.ndarray, cfg: EmConfig, rng: np.random.Generator):
    n_points = data.shape[0]
    if cfg.init == "random_responsibilities":
        return rng.dirichlet(np.ones(cfg.k), size=n_points)
    if cfg.init == "kmeans_plus_plus":
        centers = _kmeans_pp_centers(data, cfg.k, rng)
        d2 = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        resp = np.full((n_points, cfg.k), 1e-6)
        resp[np.arange(n_points), labels] = 1.0
        return resp / resp.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown init {cfg.init!r}")


def _kmeans_pp_centers(data: np.ndarray, k: int, rng: np.random.Generator):
    centers = [data[rng.integers(data.shape[0])]]
    for _ in range(1, k):
        d2 = np.min(
            [((data - c) ** 2).sum(axis=1) for c in centers], axis=0
        )
        probs = d2 / max(d2.sum(), np.finfo(float).tiny)
        centers.append(data[rng.choice(data.shape[0], p=probs)])
    return np.asarray(centers)


def _reseed_component(
    w: np.ndarray, k: int, point_ll: np.ndarray, n_dim: int
) -> np.ndarray:
    """Reassign the lowest-likelihood points to a starved component."""
    n_points = w.shape[0]
    m = min(n_points, max(n_dim + 1, n_points // (10 * w.shape[1])))
    worst = np.argsort(point_ll)[:m]
    w = w.copy()
    w[worst, :] *= 0.05
    w[worst, k] = 1.0
    w[worst] /= w[worst].sum(axis=1, keepdims=True)
    return w


def fit_em(data: np.ndarray, cfg: EmConfig, seed: int = 0, init_resp=None):
    """Run EM to convergence of the total log-likelihood.

    Returns (model, ll_trace, responsibilities). Components whose weight
    mass collapses are reseeded from the lowest-likelihood points rather
    than failing the run. init_resp overrides the seeded initialization
    with an explicit (N, K) responsibility matrix.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionMismatch("data must be a 2-d array")
    if data.shape[0] < cfg.k:
        raise DimensionMismatch("need at least K data points")
    rng = np.random.default_rng(seed)
    if init_resp is not None:
        w = np.asarray(init_resp, dtype=np.float64)
        if w.shape != (data.shape[0], cfg.k):
            raise DimensionMismatch("init_resp shape differs from (N, K)")
    else:
        w = _init_responsibilities(data, cfg, rng)
    col = w.sum(axis=0)
    if np.any(col < cfg.min_component_weight * data.shape[0]):
        raise DegenerateInit("initialization produced an empty component")

    model = None
    ll_trace: list[float] = []
    prev_ll = None
    for _ in range(cfg.max_em_iters):
        try:
            model = m_step(data, w, cfg, prev=model)
        except EmptyComponent:
            if model is None:
                raise DegenerateInit("initialization produced an empty component")
            log_p = _component_log_pdfs(model, data)
            log_w = log_p + np.log([c.weight for c in model.components])
            point_ll = np.logaddexp.reduce(log_w, axis=1)
            col = w.sum(axis=0)
            for k in np.nonzero(col < cfg.min_component_weight * data.shape[0])[0]:
                w = _reseed_component(w, int(k), point_ll, model.n)
            model = m_step(data, w, cfg, prev=model)
        w, ll = e_step(model, data)
        ll_trace.append(ll)
        if prev_ll is not None and abs(ll - prev_ll) <= cfg.ll_tol * abs(ll):
            break
        prev_ll = ll
    return model, ll_trace, w


def predict(model: MixtureModel, data: np.ndarray) -> np.ndarray:
    """Hard labels: argmax responsibility, ties toward the smallest index."""
    resp, _ = e_step(model, data)
    return np.argmax(resp, axis=1)
