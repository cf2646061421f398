"""Batch quantification: moments, density metrics, ring report, TV distance.

Neighborhood metrics run brute force in raw coordinates; at desk scale
(tens of thousands of points, d <= 2) chunked exact distance matrices are
fast enough and leave nothing to approximate. All functions accept plain
arrays; sample batches are unwrapped automatically.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from bnslab.toydata import CirclesGeometry

# Reciprocal-distance floor: coincident neighborhoods get this in place of
# a zero mean reachability, so fully coincident data reads as inliers
# (LOF 1) instead of dividing by zero.
LRD_FLOOR = 1e-12

# Query rows per distance-matrix chunk, sized to keep the squared-diff
# intermediate (rows x reference x d float64) around tens of megabytes.
CHUNK_TARGET_FLOATS = 4_000_000

COVERAGE_WARN_FRACTION = 0.99


def _points_of(batch) -> np.ndarray:
    pts = getattr(batch, "points", batch)
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected an (n, d) point array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class MomentStderrs:
    """Monte Carlo standard errors for the empirical mean and variances."""

    mean: np.ndarray
    var: np.ndarray


def empirical_moments(batch) -> Tuple[np.ndarray, np.ndarray, MomentStderrs]:
    """Sample mean, unbiased covariance, and their standard errors.

    Variance standard errors use the delta method sqrt((m4 - var^2)/n)
    with m4 the central fourth moment, valid without normality.
    """
    pts = _points_of(batch)
    n = pts.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 points, got {n}")
    mean = pts.mean(axis=0)
    cov = np.cov(pts, rowvar=False, ddof=1).reshape(pts.shape[1], pts.shape[1])
    centered = pts - mean
    var = centered.var(axis=0, ddof=0)
    m4 = (centered**4).mean(axis=0)
    se_mean = np.sqrt(np.diag(cov) / n)
    se_var = np.sqrt(np.maximum(m4 - var**2, 0.0) / n)
    return mean, cov, MomentStderrs(mean=se_mean, var=se_var)


@dataclass(frozen=True)
class DensityStats:
    """Per-point density metrics; either part may be absent.

    avg_knn_values: mean distance to the k nearest reference points.
    lof_values: local outlier factor, near 1 for inliers.
    """

    avg_knn_values: Optional[np.ndarray] = None
    lof_values: Optional[np.ndarray] = None
    k_avg_knn: Optional[int] = None
    k_lof: Optional[int] = None

    def __post_init__(self) -> None:
        for name in ("avg_knn_values", "lof_values"):
            vals = getattr(self, name)
            if vals is not None and ((vals < 0).any() or not np.isfinite(vals).all()):
                raise ValueError(f"{name} must be finite and non-negative")

    def summary_rows(self) -> list:
        """Rows (metric, k, mean, p50, p90, n) for the metrics CSV."""
        rows = []
        for name, vals, k in (
            ("avg_knn", self.avg_knn_values, self.k_avg_knn),
            ("lof", self.lof_values, self.k_lof),
        ):
            if vals is None:
                continue
            rows.append(
                (
                    name,
                    k,
                    float(vals.mean()),
                    float(np.quantile(vals, 0.5)),
                    float(np.quantile(vals, 0.9)),
                    len(vals),
                )
            )
        return rows


def _chunk_rows(m: int, d: int) -> int:
    return max(1, CHUNK_TARGET_FLOATS // max(1, m * d))


def _knn_search(
    queries: np.ndarray, reference: np.ndarray, k: int, exclude_self: bool
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors: (distances, indices), each (n, k).

    exclude_self drops the same-index reference row for each query (only
    meaningful when queries and reference are the same array). Ties break
    by reference index for determinism.
    """
    n, d = queries.shape
    m = reference.shape[0]
    dists = np.empty((n, k))
    idxs = np.empty((n, k), dtype=int)
    step = _chunk_rows(m, d)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        block = queries[lo:hi, None, :] - reference[None, :, :]
        d2 = np.einsum("qrd,qrd->qr", block, block)
        if exclude_self:
            rows = np.arange(lo, hi)
            d2[np.arange(hi - lo), rows] = np.inf
        # argpartition then a stable (distance, index) sort of the head
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        head = np.take_along_axis(d2, part, axis=1)
        order = np.lexsort((part, head), axis=1)
        idxs[lo:hi] = np.take_along_axis(part, order, axis=1)
        dists[lo:hi] = np.sqrt(np.take_along_axis(head, order, axis=1))
    return dists, idxs


def avg_knn(batch, reference, k: int = 5) -> DensityStats:
    """Mean distance from each batch point to its k nearest references.

    When batch and reference are the same data, each point's own row is
    excluded from its neighbor set.
    """
    queries = _points_of(batch)
    ref = _points_of(reference)
    same = queries.shape == ref.shape and np.array_equal(queries, ref)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    available = ref.shape[0] - 1  # reference must exceed k, self-excluded or not
    if k > available:
        raise ValueError(f"k={k} exceeds usable reference size {available}")
    dists, _ = _knn_search(queries, ref, k, exclude_self=same)
    return DensityStats(avg_knn_values=dists.mean(axis=1), k_avg_knn=k)


def _reference_lrd(
    ref: np.ndarray, k: int
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    dists, idxs = _knn_search(ref, ref, k, exclude_self=True)
    kdist = dists[:, -1]
    reach = np.maximum(kdist[idxs], dists)
    lrd = 1.0 / np.maximum(reach.mean(axis=1), LRD_FLOOR)
    return dists, idxs, kdist, lrd


def lof(batch, reference, k: int = 20) -> DensityStats:
    """Local outlier factor of batch points against a reference cloud.

    Standard reachability formulation: k-distances and local reachability
    densities come from the reference set; each query's LOF is the mean
    neighbor density over its own. Coincident neighborhoods fall back to
    the reciprocal floor, so degenerate clouds read as inliers.
    """
    queries = _points_of(batch)
    ref = _points_of(reference)
    same = queries.shape == ref.shape and np.array_equal(queries, ref)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    available = ref.shape[0] - 1  # reference lrd always self-excludes
    if k > available:
        raise ValueError(f"k={k} exceeds usable reference size {available}")
    ref_dists, ref_idxs, kdist, ref_lrd = _reference_lrd(ref, k)
    if same:
        q_dists, q_idxs = ref_dists, ref_idxs
    else:
        q_dists, q_idxs = _knn_search(queries, ref, k, exclude_self=False)
    reach = np.maximum(kdist[q_idxs], q_dists)
    q_lrd = 1.0 / np.maximum(reach.mean(axis=1), LRD_FLOOR)
    values = ref_lrd[q_idxs].mean(axis=1) / q_lrd
    return DensityStats(lof_values=values, k_lof=k)


@dataclass(frozen=True)
class CirclesReport:
    """Fraction of a batch on each ring and off the manifold."""

    minority_fraction: float
    majority_fraction: float
    off_manifold_fraction: float
    n: int

    def __post_init__(self) -> None:
        total = (
            self.minority_fraction
            + self.majority_fraction
            + self.off_manifold_fraction
        )
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"fractions must sum to 1, got {total}")


def circles_report(batch, geometry: CirclesGeometry) -> CirclesReport:
    """Assign each 2D point to its nearest ring within eps, else off."""
    pts = _points_of(batch)
    if pts.shape[1] != 2:
        raise ValueError(f"circles report needs 2D points, got d={pts.shape[1]}")
    radius = np.linalg.norm(pts, axis=1)
    d_minor = np.abs(radius - geometry.radius_minor)
    d_major = np.abs(radius - geometry.radius_major)
    eps = geometry.eps_manifold
    minor = (d_minor <= eps) & (d_minor < d_major)
    major = (d_major <= eps) & (d_major <= d_minor)
    n = pts.shape[0]
    n_minor = int(minor.sum())
    n_major = int(major.sum())
    return CirclesReport(
        minority_fraction=n_minor / n,
        majority_fraction=n_major / n,
        off_manifold_fraction=(n - n_minor - n_major) / n,
        n=n,
    )


def histogram_tv(a, b, bins_per_axis: int, bounds: Sequence) -> float:
    """Half L1 distance between normalized box histograms of two batches.

    Histograms are normalized by batch size, so mass outside the bounds
    counts as unmatched; a coverage warning fires when either batch has
    more than 1% of its points outside.
    """
    pts_a = _points_of(a)
    pts_b = _points_of(b)
    if bins_per_axis < 1:
        raise ValueError(f"bins_per_axis must be >= 1, got {bins_per_axis}")
    if pts_a.shape[1] != pts_b.shape[1]:
        raise ValueError("batches must share dimensionality")
    d = pts_a.shape[1]
    box = np.asarray(bounds, dtype=float)
    if box.shape == (2,):
        box = np.tile(box, (d, 1))
    if box.shape != (d, 2) or not (box[:, 0] < box[:, 1]).all():
        raise ValueError(f"bounds must be (lo, hi) per axis, got {bounds!r}")
    ranges = [tuple(row) for row in box]

    for name, pts in (("a", pts_a), ("b", pts_b)):
        inside = ((pts >= box[:, 0]) & (pts <= box[:, 1])).all(axis=1).mean()
        if inside < COVERAGE_WARN_FRACTION:
            warnings.warn(
                f"batch {name}: only {inside:.1%} of points inside bounds",
                RuntimeWarning,
                stacklevel=2,
            )

    hist_a, _ = np.histogramdd(pts_a, bins=bins_per_axis, range=ranges)
    hist_b, _ = np.histogramdd(pts_b, bins=bins_per_axis, range=ranges)
    return float(
        0.5 * np.abs(hist_a / pts_a.shape[0] - hist_b / pts_b.shape[0]).sum()
    )
