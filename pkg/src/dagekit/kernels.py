"""Hot inner loops with a jitted and a pure-numpy implementation.

Each kernel ``foo`` dispatches to ``foo_jit`` when numba is active and to
``foo_numpy`` otherwise.  Both variants are public so tests and the
benchmark can compare them directly.  Samples are columns throughout.
"""
import numpy as np

from ._accel import njit, use_numba


# -- pairwise squared distances ---------------------------------------------

def pairwise_sqdist_numpy(a, b):
    diff = a[:, :, None] - b[:, None, :]
    return np.einsum("kij,kij->ij", diff, diff)


@njit(cache=True)
def pairwise_sqdist_jit(a, b):
    dim, n = a.shape
    m = b.shape[1]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(dim):
                t = a[k, i] - b[k, j]
                acc += t * t
            out[i, j] = acc
    return out


def pairwise_sqdist(a, b):
    """Squared Euclidean distances between columns of ``a`` and ``b``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if use_numba():
        return pairwise_sqdist_jit(a, b)
    return pairwise_sqdist_numpy(a, b)


# -- brute-force ordered pair energy ----------------------------------------

def pair_energy_numpy(w, phi):
    sq = pairwise_sqdist_numpy(phi, phi)
    np.fill_diagonal(sq, 0.0)
    return float(np.sum(w * sq))


@njit(cache=True)
def pair_energy_jit(w, phi):
    dim, n = phi.shape
    total = 0.0
    for i in range(n):
        for j in range(n):
            if i == j or w[i, j] == 0.0:
                continue
            acc = 0.0
            for k in range(dim):
                t = phi[k, i] - phi[k, j]
                acc += t * t
            total += w[i, j] * acc
    return total


def pair_energy(w, phi):
    """``sum_{i != j} w[i, j] * ||phi_i - phi_j||^2`` by direct summation."""
    w = np.ascontiguousarray(w, dtype=np.float64)
    phi = np.ascontiguousarray(phi, dtype=np.float64)
    if use_numba():
        return float(pair_energy_jit(w, phi))
    return pair_energy_numpy(w, phi)


# -- d-SNE edge selection ---------------------------------------------------

def dsne_edges_numpy(sqd, src_labels, tgt_labels):
    same = src_labels[:, None] == tgt_labels[None, :]
    nt = sqd.shape[1]
    far = np.full(nt, -1, dtype=np.int64)
    near = np.full(nt, -1, dtype=np.int64)
    has_same = same.any(axis=0)
    has_diff = (~same).any(axis=0)
    # argmax/argmin return the first occurrence, i.e. the lowest source index
    far_all = np.argmax(np.where(same, sqd, -np.inf), axis=0)
    near_all = np.argmin(np.where(same, np.inf, sqd), axis=0)
    far[has_same] = far_all[has_same]
    near[has_diff] = near_all[has_diff]
    return far, near


@njit(cache=True)
def dsne_edges_jit(sqd, src_labels, tgt_labels):
    ns, nt = sqd.shape
    far = np.full(nt, -1, dtype=np.int64)
    near = np.full(nt, -1, dtype=np.int64)
    for j in range(nt):
        best_far = -1.0
        best_near = np.inf
        for i in range(ns):
            v = sqd[i, j]
            if src_labels[i] == tgt_labels[j]:
                if far[j] < 0 or v > best_far:
                    far[j] = i
                    best_far = v
            else:
                if near[j] < 0 or v < best_near:
                    near[j] = i
                    best_near = v
    return far, near


def dsne_edges(sqd, src_labels, tgt_labels):
    """Per target column: furthest same-class and closest other-class source.

    Returns two int arrays of source row indices; ``-1`` marks a target with
    no candidate.  Ties go to the lowest source index.
    """
    sqd = np.ascontiguousarray(sqd, dtype=np.float64)
    src_labels = np.ascontiguousarray(src_labels, dtype=np.int64)
    tgt_labels = np.ascontiguousarray(tgt_labels, dtype=np.int64)
    if use_numba():
        return dsne_edges_jit(sqd, src_labels, tgt_labels)
    return dsne_edges_numpy(sqd, src_labels, tgt_labels)


# -- k nearest neighbours ---------------------------------------------------

def knn_numpy(features, k):
    sq = pairwise_sqdist_numpy(features, features)
    np.fill_diagonal(sq, np.inf)
    order = np.argsort(sq, axis=1, kind="stable")
    return np.ascontiguousarray(order[:, :k]).astype(np.int64)


@njit(cache=True)
def knn_jit(features, k):
    n = features.shape[1]
    sq = pairwise_sqdist_jit(features, features)
    out = np.empty((n, k), dtype=np.int64)
    taken = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        taken[:] = False
        taken[i] = True
        for r in range(k):
            best = -1
            best_v = np.inf
            for j in range(n):
                if taken[j]:
                    continue
                if best < 0 or sq[i, j] < best_v:
                    best = j
                    best_v = sq[i, j]
            out[i, r] = best
            taken[best] = True
    return out


def knn(features, k):
    """Indices of the ``k`` nearest other columns, nearest first, ties by index."""
    features = np.ascontiguousarray(features, dtype=np.float64)
    if use_numba():
        return knn_jit(features, int(k))
    return knn_numpy(features, int(k))


# -- CCSA margin weights ----------------------------------------------------

def margin_weights_numpy(dist, active, epsilon, floor):
    d = np.maximum(dist, floor)
    w = (d - epsilon) ** 2 / (2.0 * d * d)
    return np.where(active & (dist < epsilon), w, 0.0)


@njit(cache=True)
def margin_weights_jit(dist, active, epsilon, floor):
    n, m = dist.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            if active[i, j] and dist[i, j] < epsilon:
                d = max(dist[i, j], floor)
                out[i, j] = (d - epsilon) ** 2 / (2.0 * d * d)
    return out


def margin_weights(dist, active, epsilon, floor):
    """``(d - eps)^2 / (2 d^2)`` where active and ``d < eps``, with ``d`` floored."""
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    active = np.ascontiguousarray(active, dtype=np.bool_)
    if use_numba():
        return margin_weights_jit(dist, active, float(epsilon), float(floor))
    return margin_weights_numpy(dist, active, float(epsilon), float(floor))
