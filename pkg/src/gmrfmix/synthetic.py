"""Synthetic GMRF precision matrices and an exact sampler.

Two generators: the homogeneous 2D Laplacian precision on a lattice
(truncated, Dirichlet-style boundary, so the operator stays SPD) and a
randomized anisotropic-diffusion precision on a grid. Sampling solves
L^T x = z against the cached Cholesky factor, so samples have covariance
Q^{-1} exactly in distribution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .matrices import SparseSpd, SupportPattern, save_dense_csv, write_atomic_text


@dataclass(frozen=True)
class LatticeSpec:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("lattice dimensions must be >= 1")


@dataclass(frozen=True)
class DiffusionSpec:
    rows: int
    cols: int
    coeff_low: float = 0.1
    coeff_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not (0 < self.coeff_low <= self.coeff_high):
            raise ValueError("need 0 < coeff_low <= coeff_high")


def _grid_pattern(rows: int, cols: int) -> SupportPattern:
    """5-point neighbor pattern on a rows x cols grid (row-major indexing)."""
    pairs = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                pairs.append((i, i + 1))
            if r + 1 < rows:
                pairs.append((i, i + cols))
    return SupportPattern(rows * cols, pairs)


def laplacian2d_precision(spec: LatticeSpec) -> SparseSpd:
    """Precision from the 5-point Laplacian stencil, diagonal 4 everywhere.

    Missing neighbors at the boundary are simply absent, which makes the
    boundary rows strictly diagonally dominant and the matrix SPD.
    """
    n = spec.rows * spec.cols
    q = 4.0 * np.eye(n)
    pattern = _grid_pattern(spec.rows, spec.cols)
    rows, cols = pattern.index_arrays()
    off = rows != cols
    q[rows[off], cols[off]] = -1.0
    q[cols[off], rows[off]] = -1.0
    return SparseSpd(q, pattern)


def diffusion_precision(spec: DiffusionSpec, anchor: bool = True) -> SparseSpd:
    """Finite-difference anisotropic diffusion precision on a grid.

    Q = Dx^T diag(a_e) Dx + Dy^T diag(b_e) Dy + eps I, with node
    coefficients drawn i.i.d. uniform [coeff_low, coeff_high], edge
    coefficients the arithmetic mean of the adjacent nodes, and
    eps = 1e-2 * coeff_low anchoring the pure-Neumann null space. Setting
    anchor=False drops the eps term (the result is then singular).
    """
    rows, cols = spec.rows, spec.cols
    n = rows * cols
    rng = np.random.default_rng(spec.seed)
    a = rng.uniform(spec.coeff_low, spec.coeff_high, size=(rows, cols))
    b = rng.uniform(spec.coeff_low, spec.coeff_high, size=(rows, cols))

    q = np.zeros((n, n))

    def add_edge(i: int, j: int, coeff: float):
        q[i, i] += coeff
        q[j, j] += coeff
        q[i, j] -= coeff
        q[j, i] -= coeff

    for r in range(rows):
        for c in range(cols - 1):  # horizontal edges use a
            i = r * cols + c
            add_edge(i, i + 1, 0.5 * (a[r, c] + a[r, c + 1]))
    for r in range(rows - 1):
        for c in range(cols):  # vertical edges use b
            i = r * cols + c
            add_edge(i, i + cols, 0.5 * (b[r, c] + b[r + 1, c]))
    if anchor:
        q += 1e-2 * spec.coeff_low * np.eye(n)
    return SparseSpd(q, _grid_pattern(rows, cols))


def sample_gmrf(
    q: SparseSpd, mean: np.ndarray | None, count: int, seed=0
) -> np.ndarray:
    """Draw exact samples: z ~ N(0, I), solve L^T x = z, add the mean."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((q.n, count))
    x = solve_triangular(q.chol, z, lower=True, trans="T")
    data = x.T
    if mean is not None:
        data = data + np.asarray(mean, dtype=np.float64)
    return data


def make_clustering_dataset(
    k: int,
    spec: DiffusionSpec,
    samples_low: int,
    samples_high: int,
    seed: int = 0,
):
    """K zero-mean diffusion components, shuffled samples with labels.

    Per-component sample counts are uniform integers in [samples_low,
    samples_high]. All randomness is derived from the seed through a
    spawned SeedSequence per purpose, so outputs are bit-reproducible.
    """
    if samples_low > samples_high:
        raise ValueError("samples_low must be <= samples_high")
    children = np.random.SeedSequence(seed).spawn(2 * k + 2)
    prec_seeds = children[:k]
    sample_seeds = children[k : 2 * k]
    count_seed, shuffle_seed = children[2 * k], children[2 * k + 1]
    precisions = [
        diffusion_precision(
            DiffusionSpec(
                spec.rows, spec.cols, spec.coeff_low, spec.coeff_high,
                seed=prec_seeds[i],
            )
        )
        for i in range(k)
    ]
    counts = np.random.default_rng(count_seed).integers(
        samples_low, samples_high + 1, size=k
    )
    blocks = [
        sample_gmrf(precisions[i], None, int(counts[i]), seed=sample_seeds[i])
        for i in range(k)
    ]
    data = np.vstack(blocks)
    labels = np.repeat(np.arange(k), counts)
    perm = np.random.default_rng(shuffle_seed).permutation(data.shape[0])
    return data[perm], labels[perm], precisions


def save_dataset(
    out_dir: str,
    data: np.ndarray,
    labels: np.ndarray | None,
    precisions: list[SparseSpd],
    metadata: dict,
):
    """Write data CSV, labels CSV, truth JSON and metadata JSON to a directory."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    save_dense_csv(data, os.path.join(out_dir, "data.csv"))
    if labels is not None:
        np.savetxt(os.path.join(out_dir, "labels.csv"), labels, fmt="%d")
    truth = [q.to_json() for q in precisions]
    write_atomic_text(os.path.join(out_dir, "truth.json"), json.dumps(truth))
    write_atomic_text(os.path.join(out_dir, "metadata.json"), json.dumps(metadata))


def load_dataset(out_dir: str):
    import os

    data = np.loadtxt(os.path.join(out_dir, "data.csv"), delimiter=",", ndmin=2)
    labels_path = os.path.join(out_dir, "labels.csv")
    labels = (
        np.loadtxt(labels_path, dtype=int) if os.path.exists(labels_path) else None
    )
    with open(os.path.join(out_dir, "truth.json")) as fh:
        precisions = [SparseSpd.from_json(o) for o in json.load(fh)]
    with open(os.path.join(out_dir, "metadata.json")) as fh:
        metadata = json.load(fh)
    return data, labels, precisions, metadata
