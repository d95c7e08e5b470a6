"""KNN spatial weights, Local Moran's I with permutation inference, spatial
lags, and the graph Fourier transform.

KNN weights are directed: row i holds site i's k nearest sites by Euclidean
distance, ties broken by (distance, site_id). The local Moran statistic for
site i scales the site's deviation by the leave-one-out variance of the
field and multiplies by the weighted deviation of its neighbours; p-values
come from conditional permutation (hold x_i, permute the rest), two-sided.
The analytic z-score uses the expectation from the row sum and the exact
conditional-permutation variance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .datamodel import HourKey, write_csv
from .errors import (
    DuplicatePositionError,
    ShapeMismatchError,
    TooFewSitesError,
    ValidationError,
)
from .rng import stream as _stream

HH, LL, HL, LH, NS = "HighHigh", "LowLow", "HighLow", "LowHigh", "NotSignificant"

DEFAULT_PERMUTATIONS = 999
DEFAULT_SEED = 42


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Sparse row structure: neighbor_idx (n, k) and weights (n, k)."""

    site_ids: tuple[str, ...]
    neighbor_idx: np.ndarray
    weights: np.ndarray
    row_standardized: bool

    def __post_init__(self):
        idx = np.asarray(self.neighbor_idx, dtype=int)
        wts = np.asarray(self.weights, dtype=float)
        if idx.shape != wts.shape or idx.ndim != 2 or idx.shape[0] != len(self.site_ids):
            raise ShapeMismatchError("neighbor index and weight shapes disagree")
        if np.any(idx == np.arange(idx.shape[0])[:, None]):
            raise ValidationError("self-neighbours are not allowed")
        if np.any(wts < 0):
            raise ValidationError("weights must be non-negative")
        idx.setflags(write=False)
        wts.setflags(write=False)
        object.__setattr__(self, "neighbor_idx", idx)
        object.__setattr__(self, "weights", wts)

    @property
    def n(self) -> int:
        return self.neighbor_idx.shape[0]

    @property
    def k(self) -> int:
        return self.neighbor_idx.shape[1]

    def lag(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[:1] != (self.n,):
            raise ShapeMismatchError(f"field has {x.shape[0]} entries for {self.n} sites")
        return np.einsum("nk,nk...->n...", self.weights, x[self.neighbor_idx])

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), self.k)
        dense[rows, self.neighbor_idx.ravel()] = self.weights.ravel()
        return dense

    def symmetrized_max(self) -> np.ndarray:
        """max(w, w.T): undirected adjacency for graph models."""
        dense = self.to_dense()
        return np.maximum(dense, dense.T)


def knn_weights(positions, k: int, standardize: bool = True,
                site_ids: Sequence[str] | None = None) -> SpatialWeights:
    """Link each site to its k nearest sites.

    Ties are broken by (distance, site_id) so rows are reproducible; the
    result is directed (symmetric only by coincidence).
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValidationError(f"positions must be (n, 2), got {pos.shape}")
    n = pos.shape[0]
    if k < 1 or n <= k:
        raise TooFewSitesError(f"need n > k >= 1, got n={n}, k={k}")
    ids = tuple(site_ids) if site_ids is not None else tuple(f"{i:06d}" for i in range(n))
    if len(ids) != n:
        raise ValidationError("site_ids length does not match positions")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.any(dist[~np.eye(n, dtype=bool)] == 0.0):
        i, j = np.argwhere((dist == 0.0) & ~np.eye(n, dtype=bool))[0]
        raise DuplicatePositionError(f"sites {ids[i]!r} and {ids[j]!r} coincide")
    neighbor_idx = np.empty((n, k), dtype=int)
    for i in range(n):
        order = sorted((j for j in range(n) if j != i),
                       key=lambda j: (dist[i, j], ids[j]))
        neighbor_idx[i] = order[:k]
    weights = np.full((n, k), 1.0 / k if standardize else 1.0)
    return SpatialWeights(ids, neighbor_idx, weights, standardize)


def spatial_lag(x, w: SpatialWeights) -> np.ndarray:
    """Weighted average (or sum, if unstandardized) of each site's neighbours."""
    return w.lag(x)


# ---------------------------------------------------------------------------
# Local Moran's I
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MoranResult:
    i: np.ndarray
    e_i: np.ndarray
    v_i: np.ndarray
    z: np.ndarray
    p: np.ndarray            # conditional-permutation, two-sided
    p_analytic: np.ndarray   # normal approximation from z
    classes: tuple[str, ...]
    degenerate: bool = False


def _normal_two_sided(z: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr
    return 2.0 * ndtr(-np.abs(z))


def local_moran(x, w: SpatialWeights, permutations: int = DEFAULT_PERMUTATIONS,
                seed: int = DEFAULT_SEED, alpha: float = 0.05,
                classify_on: str = "perm") -> MoranResult:
    """Per-site local spatial autocorrelation with significance classes.

    ``classify_on`` selects which p-value gates the quadrant labels:
    ``"perm"`` (default) or ``"analytic"``. With ``permutations=0`` the
    permutation p's are 1 and classification falls back to the analytic p.
    """
    x = np.asarray(x, dtype=float)
    n = w.n
    if x.shape != (n,):
        raise ShapeMismatchError(f"field has shape {x.shape} for {n} sites")
    if n < 4:
        raise ValidationError("local Moran needs at least 4 sites")
    if not np.all(np.isfinite(x)):
        raise ValidationError("field has non-finite entries")

    dev = x - x.mean()
    total_ssq = float(dev @ dev)
    if total_ssq == 0.0:
        zeros = np.zeros(n)
        return MoranResult(zeros, zeros, zeros, zeros, np.ones(n), np.ones(n),
                           tuple([NS] * n), degenerate=True)

    s2 = (total_ssq - dev ** 2) / (n - 1)
    lag_dev = w.lag(dev)
    scale = dev / s2
    i_stat = scale * lag_dev

    row_sum = w.weights.sum(axis=1)
    e_i = -row_sum / (n - 1)

    # exact variance under conditional permutation of the other n-1 values
    m = n - 1
    sum_w2 = (w.weights ** 2).sum(axis=1)
    coeff_ss = sum_w2 - row_sum ** 2 / m
    val_mean = -dev / m
    val_ss = (total_ssq - dev ** 2) - m * val_mean ** 2
    v_i = np.where(m > 1, (scale ** 2) * coeff_ss * val_ss / (m - 1), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(v_i > 0, (i_stat - e_i) / np.sqrt(v_i), 0.0)
    p_analytic = _normal_two_sided(z)

    if permutations > 0:
        p_perm = np.empty(n)
        all_idx = np.arange(n)
        for i in range(n):
            others = dev[all_idx != i]
            rng = _stream(seed, "local_moran", i)
            keys = rng.random((permutations, n - 1))
            draw = others[np.argsort(keys, axis=1)[:, :w.k]]
            sim = scale[i] * (draw @ w.weights[i])
            lo = (np.count_nonzero(sim <= i_stat[i]) + 1) / (permutations + 1)
            hi = (np.count_nonzero(sim >= i_stat[i]) + 1) / (permutations + 1)
            p_perm[i] = min(1.0, 2.0 * min(lo, hi))
    else:
        p_perm = np.ones(n)

    gate = p_perm if (classify_on == "perm" and permutations > 0) else p_analytic
    classes = []
    for di, li, pi in zip(dev, lag_dev, gate):
        if pi >= alpha or di == 0.0 or li == 0.0:
            classes.append(NS)
        elif di > 0:
            classes.append(HH if li > 0 else HL)
        else:
            classes.append(LL if li < 0 else LH)
    return MoranResult(i_stat, e_i, v_i, z, p_perm, p_analytic, tuple(classes))


# ---------------------------------------------------------------------------
# Graph Fourier transform
# ---------------------------------------------------------------------------

def laplacian_spectrum(w: SpatialWeights) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs (ascending) of L = D - W_sym with W_sym = (W + W^T) / 2."""
    w_sym = w.to_dense()
    w_sym = 0.5 * (w_sym + w_sym.T)
    lap = np.diag(w_sym.sum(axis=1)) - w_sym
    eigvals, eigvecs = np.linalg.eigh(lap)
    return eigvals, eigvecs


def graph_fourier(f, w: SpatialWeights) -> np.ndarray:
    """Project a graph signal onto the Laplacian eigenbasis."""
    f = np.asarray(f, dtype=float)
    if f.shape != (w.n,):
        raise ShapeMismatchError(f"signal has shape {f.shape} for {w.n} sites")
    _, eigvecs = laplacian_spectrum(w)
    return eigvecs.T @ f


# ---------------------------------------------------------------------------
# hotspots.csv
# ---------------------------------------------------------------------------

def write_hotspots(path, rows: Iterable[tuple[HourKey, str, float, float, float, str]],
                   comment: str | None = None) -> None:
    write_csv(path, ["hour", "date", "site_id", "I", "z", "p", "class"],
              ([hour.hour, hour.date.isoformat(), site_id, i, z, p, cls]
               for hour, site_id, i, z, p, cls in rows), comment=comment)
