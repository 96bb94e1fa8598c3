"""Randomized dependence coefficient (copula ranks -> random sine features -> CCA)."""

from __future__ import annotations

import numpy as np
from scipy import linalg
from scipy.stats import rankdata

RDC_FEATURES = 20
RDC_SCALE = 1.0 / 6.0
RIDGE = 1e-9


def copula(column) -> np.ndarray:
    x = np.asarray(column, dtype=np.float64)
    return rankdata(x, method="average") / len(x)


def sine_features(column, k: int, s: float, rng: np.random.Generator) -> np.ndarray | None:
    """Random sine features of the empirical copula; None for a constant column."""
    x = np.asarray(column)
    if np.all(x == x[0]):
        return None
    u = np.column_stack([copula(x), np.ones(len(x))])
    weights = rng.normal(0.0, s, size=(2, k))
    return np.sin(u @ weights)


def max_canonical_correlation(a: np.ndarray, b: np.ndarray, ridge: float = RIDGE) -> float:
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    n = len(a)
    cxx = a.T @ a / n + ridge * np.eye(a.shape[1])
    cyy = b.T @ b / n + ridge * np.eye(b.shape[1])
    cxy = a.T @ b / n
    try:
        lx = linalg.cholesky(cxx, lower=True)
        ly = linalg.cholesky(cyy, lower=True)
    except linalg.LinAlgError:
        return 0.0
    m = linalg.solve_triangular(lx, cxy, lower=True)
    m = linalg.solve_triangular(ly, m.T, lower=True).T
    top = linalg.svdvals(m)[0]
    return float(min(max(top, 0.0), 1.0))


def rdc(x, y, k: int = RDC_FEATURES, s: float = RDC_SCALE, seed=0) -> float:
    x = np.asarray(x)
    y = np.asarray(y)
    if len(x) != len(y):
        raise ValueError(f"columns differ in length: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise ValueError("rdc needs at least two rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    fx = sine_features(x, k, s, rng)
    fy = sine_features(y, k, s, rng)
    if fx is None or fy is None:
        return 0.0
    return max_canonical_correlation(fx, fy)


def rdc_matrix(columns: list[np.ndarray], k: int = RDC_FEATURES, s: float = RDC_SCALE,
               seed=0) -> np.ndarray:
    """Symmetric pairwise RDC matrix with unit diagonal."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    feats = [sine_features(c, k, s, rng) for c in columns]
    n = len(columns)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            if feats[i] is None or feats[j] is None:
                value = 0.0
            else:
                value = max_canonical_correlation(feats[i], feats[j])
            out[i, j] = out[j, i] = value
    return out
