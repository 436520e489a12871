"""Intrinsic/penalty weight matrices for DAGE-LDA, CCSA, d-SNE and NEM.

Scale convention: for any weight matrix ``W`` and embedding ``phi`` (d x N),

    sum_{i != j} W[i, j] * ||phi_i - phi_j||^2 == 2 * Tr(phi @ laplacian(W) @ phi.T)

Cross-domain blocks are emitted one-sided (source row, target column);
:func:`laplacian` symmetrizes before building the degree matrix.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .data import DomainTag
from .errors import (
    GraphError,
    KTooLarge,
    MissingDifferentClassSource,
    MissingSameClassSource,
    NegativeWeight,
    NonPositiveMargin,
    NonPositiveSigma,
    NonZeroDiagonal,
)

#: default NEM distance floor (absolute)
NEM_DIST_FLOOR = 1e-9
#: default CCSA distance floor, relative to the margin
CCSA_FLOOR_FACTOR = 1e-9


def check_weights(w):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphError(f"weight matrix must be square, got shape {w.shape}")
    if not np.isfinite(w).all():
        raise NegativeWeight("weight matrix has non-finite entries")
    if (w < 0).any():
        raise NegativeWeight(f"weight matrix has negative entries (min {w.min()})")
    if np.any(np.diagonal(w) != 0):
        raise NonZeroDiagonal("weight matrix diagonal must be exactly zero")
    return w


def _laplacian_unchecked(w):
    s = 0.5 * (w + w.T)
    return np.diag(s.sum(axis=1)) - s


def laplacian(w):
    """Graph Laplacian ``diag(S 1) - S`` of the symmetrized weights ``S = (W + W^T) / 2``."""
    return _laplacian_unchecked(check_weights(w))


@dataclass(frozen=True, eq=False)
class GraphPair:
    """Intrinsic and penalty weight matrices over the same samples."""

    intrinsic: np.ndarray
    penalty: np.ndarray

    def __post_init__(self):
        if self.intrinsic.shape != self.penalty.shape:
            raise GraphError(
                f"intrinsic {self.intrinsic.shape} and penalty {self.penalty.shape} shapes differ"
            )

    @property
    def n(self):
        return self.intrinsic.shape[0]

    @cached_property
    def L(self):
        return laplacian(self.intrinsic)

    @cached_property
    def B(self):
        return laplacian(self.penalty)


def _cross_masks(labels, domains):
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    src = domains == DomainTag.SOURCE
    tgt = domains == DomainTag.TARGET
    same = labels[:, None] == labels[None, :]
    cross = src[:, None] & tgt[None, :]
    return same, cross


def dage_lda_graphs(labels):
    """Same-class intrinsic edges, different-class penalty edges; no self loops."""
    labels = np.asarray(labels)
    if labels.shape[0] < 2:
        raise GraphError("DAGE-LDA graphs need at least two samples")
    same = labels[:, None] == labels[None, :]
    w = same.astype(np.float64)
    np.fill_diagonal(w, 0.0)
    wp = (~same).astype(np.float64)
    return GraphPair(w, wp)


def ccsa_intrinsic(labels, domains):
    same, cross = _cross_masks(labels, domains)
    return np.where(same & cross, 0.5, 0.0)


def ccsa_graphs(embedded, labels, domains, epsilon, dist_floor=None):
    """CCSA similarity graph and epsilon-margin penalty graph at the current embedding."""
    if not epsilon > 0:
        raise NonPositiveMargin(f"margin must be positive, got {epsilon}")
    floor = CCSA_FLOOR_FACTOR * epsilon if dist_floor is None else dist_floor
    if not floor > 0:
        raise GraphError(f"distance floor must be positive, got {floor}")
    embedded = np.asarray(embedded, dtype=np.float64)
    same, cross = _cross_masks(labels, domains)
    dist = np.sqrt(kernels.pairwise_sqdist(embedded, embedded))
    wp = kernels.margin_weights(dist, cross & ~same, epsilon, floor)
    return GraphPair(np.where(same & cross, 0.5, 0.0), wp)


def dsne_graphs(embedded, labels, domains):
    """One intrinsic edge (furthest same-class source) and one penalty edge
    (closest different-class source) per target column."""
    embedded = np.asarray(embedded, dtype=np.float64)
    labels = np.asarray(labels)
    domains = np.asarray(domains)
    src = np.flatnonzero(domains == DomainTag.SOURCE)
    tgt = np.flatnonzero(domains == DomainTag.TARGET)
    sqd = kernels.pairwise_sqdist(embedded[:, src], embedded[:, tgt])
    far, near = kernels.dsne_edges(sqd, labels[src], labels[tgt])
    missing = np.flatnonzero(far < 0)
    if missing.size:
        raise MissingSameClassSource(int(tgt[missing[0]]))
    missing = np.flatnonzero(near < 0)
    if missing.size:
        raise MissingDifferentClassSource(int(tgt[missing[0]]))
    n = embedded.shape[1]
    w = np.zeros((n, n))
    wp = np.zeros((n, n))
    w[src[far], tgt] = 1.0
    wp[src[near], tgt] = 1.0
    return GraphPair(w, wp)


def knn_in_input_space(features, k):
    """k nearest neighbours of every column in the original feature space.

    Returns an ``(N, k)`` int array, nearest first, ties broken by lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[1]
    if k < 1:
        raise KTooLarge(f"k must be at least 1, got {k}")
    if k >= n:
        raise KTooLarge(f"k={k} needs more than {k} target samples, got {n}")
    return kernels.knn(features, k)


def median_heuristic_sigma(features):
    """Median of pairwise Euclidean distances between distinct columns."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[1]
    if n < 2:
        raise NonPositiveSigma("median heuristic needs at least two samples")
    sq = kernels.pairwise_sqdist(features, features)
    iu = np.triu_indices(n, k=1)
    sigma = float(np.median(np.sqrt(sq[iu])))
    if not sigma > 0:
        raise NonPositiveSigma("all samples coincide; median distance is zero")
    return sigma


def rbf(sqdist, sigma):
    if not sigma > 0:
        raise NonPositiveSigma(f"RBF bandwidth must be positive, got {sigma}")
    return np.exp(-np.asarray(sqdist) / (2.0 * sigma * sigma))


def _neighbour_pairs(neighbours):
    """Flatten neighbour lists (ragged lists or ``-1``-padded arrays) to (i, j) arrays."""
    rows, cols = [], []
    for i, nbrs in enumerate(neighbours):
        for j in np.asarray(nbrs, dtype=np.int64).reshape(-1):
            if j >= 0:
                rows.append(i)
                cols.append(int(j))
    return np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64)


def nem_neighbour_weights(embedded, original_target_features, neighbours, domains, sigma, dist_floor=NEM_DIST_FLOOR):
    """Target-block neighbour weights ``kappa(x_i, x_j) / max(d_ij, floor)`` (before the nu factor).

    ``original_target_features`` and ``neighbours`` are indexed by position
    among the target columns of the batch, in column order.
    """
    if not sigma > 0:
        raise NonPositiveSigma(f"RBF bandwidth must be positive, got {sigma}")
    embedded = np.asarray(embedded, dtype=np.float64)
    x = np.asarray(original_target_features, dtype=np.float64)
    tgt = np.flatnonzero(np.asarray(domains) == DomainTag.TARGET)
    if x.shape[1] != tgt.size:
        raise GraphError(f"{x.shape[1]} original target columns for {tgt.size} target samples")
    n = embedded.shape[1]
    w = np.zeros((n, n))
    ti, tj = _neighbour_pairs(neighbours)
    if ti.size == 0:
        return w
    keep = ti != tj
    ti, tj = ti[keep], tj[keep]
    diff_x = x[:, ti] - x[:, tj]
    kappa = rbf(np.einsum("ij,ij->j", diff_x, diff_x), sigma)
    diff_e = embedded[:, tgt[ti]] - embedded[:, tgt[tj]]
    d = np.sqrt(np.einsum("ij,ij->j", diff_e, diff_e))
    w[tgt[ti], tgt[tj]] = kappa / np.maximum(d, dist_floor)
    return w


def nem_intrinsic(embedded, original_target_features, neighbours, labels, domains, nu, sigma, dist_floor=NEM_DIST_FLOOR):
    """CCSA similarity weights plus ``nu``-weighted target neighbour edges.

    Depends on the current embedding through ``d_ij``: rebuild it whenever
    the embedding changes.
    """
    if nu < 0:
        raise GraphError(f"nu must be non-negative, got {nu}")
    w = ccsa_intrinsic(labels, domains)
    if nu == 0:
        if not sigma > 0:
            raise NonPositiveSigma(f"RBF bandwidth must be positive, got {sigma}")
        return w
    nb = nem_neighbour_weights(embedded, original_target_features, neighbours, domains, sigma, dist_floor)
    # cross-domain and target-target blocks are disjoint
    return w + nu * nb


def nem_graphs(embedded, original_target_features, neighbours, labels, domains, epsilon, nu, sigma,
               dist_floor=NEM_DIST_FLOOR, margin_floor=None):
    """NEM intrinsic graph with the CCSA margin penalty graph."""
    pen = ccsa_graphs(embedded, labels, domains, epsilon, margin_floor).penalty
    w = nem_intrinsic(embedded, original_target_features, neighbours, labels, domains, nu, sigma, dist_floor)
    return GraphPair(w, pen)
