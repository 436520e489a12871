"""Mini-batch domain adaptation losses, their gradients, and a finite-difference oracle.

All gradients are taken with respect to the embedded batch ``phi`` (d x n).
For a loss of the form ``sum_{ordered (i,j)} f_ij(d_ij^2)`` the gradient is
``4 * phi @ laplacian(W_eff)`` with effective weights ``W_eff = f_ij'(d_ij^2)``,
which is how the CCSA, d-SNE and NEM gradients below are assembled.
"""
from dataclasses import dataclass

import numpy as np

from . import graphs, kernels
from .data import DomainTag
from .errors import (
    DegenerateDenominator,
    GraphError,
    MissingDifferentClassSource,
    MissingSameClassSource,
    NonFiniteProbe,
    NonPositiveMargin,
)


@dataclass(frozen=True, eq=False)
class Batch:
    """Embedded mini-batch with per-column labels and domain tags.

    ``original_features`` holds the input-space features of the target
    columns (in column order) and is only needed by NEM.
    """

    embedded: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    original_features: np.ndarray = None

    def __post_init__(self):
        phi = np.asarray(self.embedded, dtype=np.float64)
        if phi.ndim == 1:
            phi = phi[None, :]
        object.__setattr__(self, "embedded", phi)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        object.__setattr__(self, "domains", np.asarray(self.domains, dtype=np.int8))
        if self.labels.shape[0] != phi.shape[1] or self.domains.shape[0] != phi.shape[1]:
            raise GraphError("labels/domains do not match the number of embedded columns")

    @property
    def source_cols(self):
        return np.flatnonzero(self.domains == DomainTag.SOURCE)

    @property
    def target_cols(self):
        return np.flatnonzero(self.domains == DomainTag.TARGET)

    def with_embedding(self, phi):
        return Batch(phi, self.labels, self.domains, self.original_features)


@dataclass(frozen=True)
class LossValue:
    value: float
    contributions: tuple = None
    degenerate: bool = False

    def __float__(self):
        return self.value


def _total(values):
    # np.sum uses pairwise summation: fixed order, independent of threading
    return float(np.sum(np.asarray(values, dtype=np.float64)))


# -- DAGE ------------------------------------------------------------------

def _traces(phi, lap_l, lap_b):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[None, :]
    if lap_l.shape != (phi.shape[1],) * 2 or lap_b.shape != lap_l.shape:
        raise GraphError(f"Laplacians {lap_l.shape}/{lap_b.shape} do not match {phi.shape[1]} columns")
    return phi, float(np.trace(phi @ lap_l @ phi.T)), float(np.trace(phi @ lap_b @ phi.T))


def default_denom_floor(numerator):
    return 1e-12 * max(1.0, numerator)


def dage_loss(phi, lap_l, lap_b, denom_floor=None):
    """``Tr(phi L phi^T) / Tr(phi B phi^T)``; the denominator is floored and flagged."""
    _, num, den = _traces(phi, lap_l, lap_b)
    floor = default_denom_floor(num) if denom_floor is None else denom_floor
    degenerate = den <= floor
    return LossValue(num / max(den, floor), degenerate=degenerate)


def dage_grad(phi, lap_l, lap_b, denom_floor=None):
    """Quotient-rule gradient of :func:`dage_loss` with respect to ``phi``."""
    phi, num, den = _traces(phi, lap_l, lap_b)
    floor = default_denom_floor(num) if denom_floor is None else denom_floor
    if den <= floor:
        raise DegenerateDenominator(f"penalty trace {den} is below the floor {floor}")
    return (phi @ (lap_l + lap_l.T)) / den - num * (phi @ (lap_b + lap_b.T)) / den ** 2


# -- CCSA ------------------------------------------------------------------

def _cross_pairs(batch):
    """Source-major list of (source col, target col) index arrays."""
    src, tgt = batch.source_cols, batch.target_cols
    s = np.repeat(src, tgt.size)
    t = np.tile(tgt, src.size)
    return s, t


def _ccsa_terms(batch, epsilon):
    if not epsilon > 0:
        raise NonPositiveMargin(f"margin must be positive, got {epsilon}")
    phi = batch.embedded
    s, t = _cross_pairs(batch)
    diff = phi[:, s] - phi[:, t]
    sq = np.einsum("ij,ij->j", diff, diff)
    same = batch.labels[s] == batch.labels[t]
    hinge = np.maximum(0.0, epsilon - np.sqrt(sq))
    vals = np.where(same, 0.5 * sq, 0.5 * hinge * hinge)
    return s, t, same, sq, vals


def ccsa_loss(batch, epsilon):
    """Contrastive semantic alignment loss over all cross-domain pairs."""
    s, t, _, _, vals = _ccsa_terms(batch, epsilon)
    contrib = tuple(zip(s.tolist(), t.tolist(), vals.tolist()))
    return LossValue(_total(vals), contrib)


def _ccsa_effective_weights(batch, epsilon, dist_floor):
    n = batch.embedded.shape[1]
    s, t, same, sq, _ = _ccsa_terms(batch, epsilon)
    d = np.sqrt(sq)
    w = np.zeros((n, n))
    w[s, t] = np.where(same, 0.5, -np.maximum(0.0, epsilon - d) / (2.0 * np.maximum(d, dist_floor)))
    return w


def ccsa_grad(batch, epsilon, dist_floor=None):
    floor = graphs.CCSA_FLOOR_FACTOR * epsilon if dist_floor is None else dist_floor
    w = _ccsa_effective_weights(batch, epsilon, floor)
    return 4.0 * batch.embedded @ graphs._laplacian_unchecked(w)


# -- d-SNE -----------------------------------------------------------------

def _dsne_selection(batch):
    phi = batch.embedded
    src, tgt = batch.source_cols, batch.target_cols
    sqd = kernels.pairwise_sqdist(phi[:, src], phi[:, tgt])
    far, near = kernels.dsne_edges(sqd, batch.labels[src], batch.labels[tgt])
    if (far < 0).any():
        raise MissingSameClassSource(int(tgt[np.flatnonzero(far < 0)[0]]))
    if (near < 0).any():
        raise MissingDifferentClassSource(int(tgt[np.flatnonzero(near < 0)[0]]))
    cols = np.arange(tgt.size)
    return src, tgt, far, near, sqd[far, cols], sqd[near, cols]


def dsne_loss(batch):
    """Per target: furthest same-class squared distance minus closest other-class one."""
    _, tgt, _, _, far_sq, near_sq = _dsne_selection(batch)
    vals = far_sq - near_sq
    return LossValue(_total(vals), tuple(zip(tgt.tolist(), vals.tolist())))


def dsne_grad(batch):
    gp = graphs.dsne_graphs(batch.embedded, batch.labels, batch.domains)
    return 4.0 * batch.embedded @ (gp.L - gp.B)


# -- NEM -------------------------------------------------------------------

def _nem_neighbours(batch, k, neighbours):
    if neighbours is not None:
        return neighbours
    if batch.original_features is None:
        raise GraphError("NEM needs the original target features")
    return graphs.knn_in_input_space(batch.original_features, k)


def nem_neighbour_term(batch, k, sigma, neighbours=None):
    """``sum_{i in T, j in N(i)} ||phi_i - phi_j|| * kappa_RBF(x_i, x_j)``."""
    nbrs = _nem_neighbours(batch, k, neighbours)
    tgt = batch.target_cols
    x = np.asarray(batch.original_features, dtype=np.float64)
    ti, tj = graphs._neighbour_pairs(nbrs)
    if ti.size == 0:
        return LossValue(0.0, ())
    dx = x[:, ti] - x[:, tj]
    kappa = graphs.rbf(np.einsum("ij,ij->j", dx, dx), sigma)
    de = batch.embedded[:, tgt[ti]] - batch.embedded[:, tgt[tj]]
    d = np.sqrt(np.einsum("ij,ij->j", de, de))
    vals = d * kappa
    return LossValue(_total(vals), tuple(zip(tgt[ti].tolist(), tgt[tj].tolist(), vals.tolist())))


def nem_loss(batch, epsilon, nu, k, sigma, neighbours=None):
    """CCSA loss plus ``nu`` times the target neighbour-preservation term.

    ``neighbours`` (indexed by target position) may be passed to reuse lists
    computed once on the full target set; otherwise they are computed here.
    """
    base = ccsa_loss(batch, epsilon)
    if nu == 0:
        return base
    nb = nem_neighbour_term(batch, k, sigma, neighbours)
    return LossValue(base.value + nu * nb.value, base.contributions)


def nem_grad(batch, epsilon, nu, k, sigma, neighbours=None, dist_floor=graphs.NEM_DIST_FLOOR):
    g = ccsa_grad(batch, epsilon)
    if nu == 0:
        return g
    nbrs = _nem_neighbours(batch, k, neighbours)
    w = 0.5 * nu * graphs.nem_neighbour_weights(
        batch.embedded, batch.original_features, nbrs, batch.domains, sigma, dist_floor
    )
    return g + 4.0 * batch.embedded @ graphs._laplacian_unchecked(w)


# -- finite differences ----------------------------------------------------

def default_fd_step(phi):
    return 1e-5 * (1.0 + float(np.abs(phi).max(initial=0.0)))


def finite_difference_grad(loss_fn, phi, h=None):
    """Central-difference gradient of a scalar ``loss_fn(phi)``."""
    phi = np.array(phi, dtype=np.float64)
    h = default_fd_step(phi) if h is None else h
    grad = np.empty_like(phi)
    for idx in np.ndindex(phi.shape):
        orig = phi[idx]
        phi[idx] = orig + h
        up = float(loss_fn(phi))
        phi[idx] = orig - h
        down = float(loss_fn(phi))
        phi[idx] = orig
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteProbe(f"loss is not finite around entry {idx}")
        grad[idx] = (up - down) / (2.0 * h)
    return grad
