"""Deterministic synthetic covariate-shift benchmark.

Source classes are isotropic Gaussians centred on a scaled regular simplex;
the target domain draws fresh samples from the same class conditionals and
pushes them through a rotation (first two coordinates), an optional
per-coordinate scale, and a translation.
"""
import math
from dataclasses import dataclass

import numpy as np

from .data import DomainTag, LabeledDataset
from .protocol import Rng, derive_seed


@dataclass(frozen=True)
class ShiftSpec:
    class_count: int = 3
    dim: int = 10
    n_per_class: int = 50
    separation: float = 4.0
    sigma_w: float = 1.0
    rotation_deg: float = 45.0
    translation: float = 2.0  # in units of sigma_w, applied to every coordinate
    scale: tuple = None
    seed: int = 0

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError("need at least two classes")
        if self.dim < 2:
            raise ValueError("need at least two feature dimensions")
        if not self.sigma_w > 0:
            raise ValueError("within-class std must be positive")
        if self.scale is not None and len(self.scale) != self.dim:
            raise ValueError("scale must have one entry per feature dimension")

    @property
    def translation_vector(self):
        return np.full(self.dim, self.translation * self.sigma_w)

    @property
    def rotation(self):
        th = math.radians(self.rotation_deg)
        r = np.eye(self.dim)
        r[:2, :2] = [[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]]
        return r

    @property
    def scale_vector(self):
        return np.ones(self.dim) if self.scale is None else np.asarray(self.scale, dtype=np.float64)

    def to_dict(self):
        return {
            "class_count": self.class_count,
            "dim": self.dim,
            "n_per_class": self.n_per_class,
            "separation": self.separation,
            "sigma_w": self.sigma_w,
            "rotation_deg": self.rotation_deg,
            "translation": self.translation,
            "scale": None if self.scale is None else list(self.scale),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("scale") is not None:
            d["scale"] = tuple(d["scale"])
        return cls(**d)


def simplex_vertices(class_count):
    """Regular simplex with unit edge length, as (class_count - 1) x class_count columns."""
    c = class_count
    centred = np.eye(c) - 1.0 / c
    # orthonormal basis of the centred subspace
    u, _, _ = np.linalg.svd(centred)
    coords = u[:, : c - 1].T @ centred
    return coords / math.sqrt(2.0)


def class_means(spec):
    """Class means (dim x C): a simplex with edge ``separation`` in a seeded subspace."""
    rng = Rng(derive_seed(spec.seed, "means"))
    k = spec.class_count - 1
    if k > spec.dim:
        return spec.separation * rng.normals((spec.dim, spec.class_count)) / math.sqrt(2.0)
    basis, _ = np.linalg.qr(rng.normals((spec.dim, k)))
    return spec.separation * basis @ simplex_vertices(spec.class_count)


def apply_shift(spec, x):
    return spec.scale_vector[:, None] * (spec.rotation @ x) + spec.translation_vector[:, None]


def invert_shift(spec, y):
    return spec.rotation.T @ ((y - spec.translation_vector[:, None]) / spec.scale_vector[:, None])


def _draw(spec, means, purpose):
    rng = Rng(derive_seed(spec.seed, purpose))
    noise = rng.normals((spec.dim, spec.class_count * spec.n_per_class))
    labels = np.repeat(np.arange(spec.class_count), spec.n_per_class)
    return means[:, labels] + spec.sigma_w * noise, labels


def generate(spec):
    """Return ``(source, target)`` datasets, fully determined by ``spec``."""
    means = class_means(spec)
    xs, ls = _draw(spec, means, "source")
    xt, lt = _draw(spec, means, "target")
    source = LabeledDataset(xs, ls, np.full(ls.size, DomainTag.SOURCE), spec.class_count)
    target = LabeledDataset(apply_shift(spec, xt), lt, np.full(lt.size, DomainTag.TARGET), spec.class_count)
    return source, target


#: the end-to-end benchmark configuration
BENCHMARK_SPEC = ShiftSpec(class_count=3, dim=10, n_per_class=50, separation=4.0, sigma_w=1.0,
                           rotation_deg=45.0, translation=2.0, seed=0)
