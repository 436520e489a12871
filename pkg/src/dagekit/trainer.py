"""Joint training of a shared linear embedding and a softmax classifier.

The objective per mini-batch of source/target pairs is

    L_DA + beta * CE(source members) + gamma * CE(target members) + l2 * ||params||^2

where both streams are embedded with the same projection ``V``.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import graphs, losses
from .data import DomainTag
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyPairSet,
    MissingClass,
    NonFiniteLoss,
    TrainingError,
)
from .protocol import Rng, derive_seed
from .spectral import EmbeddingModel

LOSS_KINDS = ("dage-lda", "ccsa", "dsne", "nem")


@dataclass(frozen=True)
class TrainConfig:
    loss_kind: str = "dage-lda"
    d: int = 2
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 30
    batch_pairs: int = 32
    beta: float = 1.0
    gamma: float = 1.0
    epsilon: float = 1.0
    nu: float = 1.0
    k: int = 3
    sigma: float = None
    seed: int = 0
    l2: float = 0.0

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.d < 1:
            raise ConfigError("embedding dimension must be at least 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_pairs < 1:
            raise ConfigError("batch_pairs must be at least 1")
        if self.beta < 0 or self.gamma < 0 or self.l2 < 0:
            raise ConfigError("beta, gamma and l2 must be non-negative")
        if self.loss_kind in ("ccsa", "nem") and not self.epsilon > 0:
            raise ConfigError("epsilon must be positive")
        if self.loss_kind == "nem":
            if self.nu < 0 or self.k < 1:
                raise ConfigError("nem needs nu >= 0 and k >= 1")
            if self.sigma is not None and not self.sigma > 0:
                raise ConfigError("sigma must be positive")

    def to_dict(self):
        return asdict(self)


def weights_from_ratios(ratio_da_ce, ratio_st):
    """Convert ``(beta+gamma)/(1+beta+gamma)`` and ``beta/(beta+gamma)`` to ``(beta, gamma)``."""
    if not 0 <= ratio_da_ce < 1 or not 0 <= ratio_st <= 1:
        raise ConfigError("ratio_da_ce must be in [0, 1) and ratio_st in [0, 1]")
    total = ratio_da_ce / (1.0 - ratio_da_ce)
    return ratio_st * total, (1.0 - ratio_st) * total


def ratios_from_weights(beta, gamma):
    total = beta + gamma
    return total / (1.0 + total), (beta / total if total else 0.0)


@dataclass(eq=False)
class JointModel:
    embedding: EmbeddingModel
    classifier_weights: np.ndarray
    classifier_bias: np.ndarray
    config: TrainConfig = None
    final_epoch: int = 0
    loss_curve: list = field(default_factory=list)

    def __post_init__(self):
        w = np.asarray(self.classifier_weights, dtype=np.float64)
        b = np.asarray(self.classifier_bias, dtype=np.float64)
        if w.shape[0] != self.embedding.d or b.shape != (w.shape[1],):
            raise DimensionMismatch(
                f"classifier {w.shape}/{b.shape} does not match embedding dimension {self.embedding.d}"
            )
        self.classifier_weights = w
        self.classifier_bias = b

    @property
    def class_count(self):
        return self.classifier_weights.shape[1]

    def embed(self, x):
        return self.embedding.transform(x)

    def logits(self, x):
        return self.classifier_weights.T @ self.embed(x) + self.classifier_bias[:, None]

    def predict(self, x):
        # argmax returns the first maximum: ties go to the lowest class id
        return np.argmax(self.logits(x), axis=0)

    def copy(self):
        return JointModel(
            EmbeddingModel("linear", self.embedding.projection.copy(), reg=0.0, solver="sgd"),
            self.classifier_weights.copy(),
            self.classifier_bias.copy(),
            self.config,
            self.final_epoch,
            list(self.loss_curve),
        )

    def to_dict(self):
        return {
            "embedding": self.embedding.to_dict(),
            "classifier_weights": self.classifier_weights.tolist(),
            "classifier_bias": self.classifier_bias.tolist(),
            "config": None if self.config is None else self.config.to_dict(),
            "final_epoch": self.final_epoch,
            "loss_curve": list(self.loss_curve),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d):
        return cls(
            EmbeddingModel.from_dict(d["embedding"]),
            np.array(d["classifier_weights"], dtype=np.float64).reshape(d["embedding"]["d"], -1),
            np.array(d["classifier_bias"], dtype=np.float64),
            None if d.get("config") is None else TrainConfig(**d["config"]),
            d.get("final_epoch", 0),
            list(d.get("loss_curve", [])),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def ce_loss_and_grad(logits, labels):
    """Mean softmax cross-entropy over columns and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[1]
    if n == 0:
        return 0.0, np.zeros_like(logits)
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0))
    cols = np.arange(n)
    loss = float(np.mean(log_z - shifted[labels, cols]))
    probs = np.exp(shifted - log_z)
    probs[labels, cols] -= 1.0
    return loss, probs / n


def xavier_uniform(rows, cols, seed):
    limit = math.sqrt(6.0 / (rows + cols))
    return Rng(derive_seed(seed, "init")).uniforms((rows, cols), -limit, limit)


class _DomainLoss:
    """Loss/gradient of the domain adaptation term for one batch."""

    def __init__(self, cfg, train_target):
        self.cfg = cfg
        self.target_features = train_target.features
        self.neighbours = None
        self.sigma = cfg.sigma
        if cfg.loss_kind == "nem":
            xt = train_target.features
            k = min(cfg.k, xt.shape[1] - 1)
            if k < 1:
                raise TrainingError("nem needs at least two target training samples")
            # neighbour lists are fixed in input space: computed once
            self.neighbours = graphs.knn_in_input_space(xt, k)
            if self.sigma is None:
                self.sigma = graphs.median_heuristic_sigma(xt)

    def __call__(self, phi, labels, domains, tgt_members):
        kind = self.cfg.loss_kind
        if kind == "dage-lda":
            gp = graphs.dage_lda_graphs(labels)
            lv = losses.dage_loss(phi, gp.L, gp.B)
            if lv.degenerate:
                return 0.0, np.zeros_like(phi)
            return lv.value, losses.dage_grad(phi, gp.L, gp.B)
        if kind == "dsne":
            return self._dsne(phi, labels, domains)
        batch = losses.Batch(phi, labels, domains)
        if kind == "ccsa":
            return losses.ccsa_loss(batch, self.cfg.epsilon).value, losses.ccsa_grad(batch, self.cfg.epsilon)
        nbrs = self._batch_neighbours(tgt_members)
        batch = losses.Batch(phi, labels, domains, self.target_features[:, tgt_members])
        args = (batch, self.cfg.epsilon, self.cfg.nu, self.cfg.k, self.sigma)
        return losses.nem_loss(*args, neighbours=nbrs).value, losses.nem_grad(*args, neighbours=nbrs)

    def _batch_neighbours(self, tgt_members):
        pos = {int(g): i for i, g in enumerate(tgt_members)}
        out = []
        for g in tgt_members:
            out.append([pos[int(j)] for j in self.neighbours[g] if int(j) in pos])
        return out

    @staticmethod
    def _dsne(phi, labels, domains):
        # targets lacking a same- or other-class source in the batch are left out
        src = np.flatnonzero(domains == DomainTag.SOURCE)
        tgt = np.flatnonzero(domains == DomainTag.TARGET)
        src_labels = labels[src]
        ok = [t for t in tgt if (src_labels == labels[t]).any() and (src_labels != labels[t]).any()]
        if not ok:
            return 0.0, np.zeros_like(phi)
        cols = np.concatenate([src, np.asarray(ok, dtype=np.int64)])
        batch = losses.Batch(phi[:, cols], labels[cols], domains[cols])
        grad = np.zeros_like(phi)
        grad[:, cols] = losses.dsne_grad(batch)
        return losses.dsne_loss(batch).value, grad


def _pair_arrays(pairs, n_source, n_target):
    if len(pairs.pairs) == 0:
        raise EmptyPairSet("no training pairs")
    arr = np.array([(s, t) for s, t, _ in pairs.pairs], dtype=np.int64)
    if arr[:, 0].max() >= n_source or arr[:, 1].max() >= n_target or arr.min() < 0:
        raise DimensionMismatch("pair indices exceed the training sets")
    return arr


def train_joint(train_source, train_target, pairs, cfg, on_epoch=None):
    """Train a :class:`JointModel` on source/target pairs with momentum SGD.

    ``pairs`` indexes columns of ``train_source`` and ``train_target``.
    ``on_epoch(epoch, model)`` is called after every epoch (epoch 0 is the
    initialization) and may inspect, but must not mutate, the model.
    """
    if train_source.dim != train_target.dim:
        raise DimensionMismatch(f"source dim {train_source.dim} != target dim {train_target.dim}")
    classes_s = set(np.unique(train_source.labels).tolist())
    classes_t = set(np.unique(train_target.labels).tolist())
    if classes_s != classes_t:
        raise MissingClass(f"source classes {sorted(classes_s)} differ from target classes {sorted(classes_t)}")
    arr = _pair_arrays(pairs, train_source.n, train_target.n)
    n_classes = max(train_source.class_count, train_target.class_count)
    dim, d = train_source.dim, cfg.d
    if d > dim:
        raise DimensionMismatch(f"embedding dimension {d} exceeds feature dimension {dim}")

    v = xavier_uniform(dim, d, cfg.seed)
    w = np.zeros((d, n_classes))
    b = np.zeros(n_classes)
    vel = [np.zeros_like(v), np.zeros_like(w), np.zeros_like(b)]
    # the model aliases v, w, b: in-place updates below are visible through it
    model = JointModel(EmbeddingModel("linear", v, reg=0.0, solver="sgd"), w, b, cfg, 0, [])
    domain_loss = _DomainLoss(cfg, train_target)
    shuffler = Rng(derive_seed(cfg.seed, "shuffle"))
    xs, xt = train_source.features, train_target.features
    if on_epoch is not None:
        on_epoch(0, model)

    for epoch in range(1, cfg.epochs + 1):
        order = shuffler.shuffle(list(range(arr.shape[0])))
        batch_losses = []
        for bi, start in enumerate(range(0, len(order), cfg.batch_pairs)):
            chunk = arr[order[start:start + cfg.batch_pairs]]
            s_idx = np.unique(chunk[:, 0])
            t_idx = np.unique(chunk[:, 1])
            ns = s_idx.size
            x_b = np.concatenate([xs[:, s_idx], xt[:, t_idx]], axis=1)
            labels = np.concatenate([train_source.labels[s_idx], train_target.labels[t_idx]])
            domains = np.concatenate([np.zeros(ns, np.int8), np.ones(t_idx.size, np.int8)])

            phi = v.T @ x_b
            da, g_phi = domain_loss(phi, labels, domains, t_idx)
            logits = w.T @ phi + b[:, None]
            ce_s, g_s = ce_loss_and_grad(logits[:, :ns], labels[:ns])
            ce_t, g_t = ce_loss_and_grad(logits[:, ns:], labels[ns:])
            g_logits = np.concatenate([cfg.beta * g_s, cfg.gamma * g_t], axis=1)
            reg = cfg.l2 * (float(np.sum(v * v)) + float(np.sum(w * w)))
            total = da + cfg.beta * ce_s + cfg.gamma * ce_t + reg
            if not math.isfinite(total):
                raise NonFiniteLoss(epoch, bi, total)
            batch_losses.append(total)

            g_phi = g_phi + w @ g_logits
            grads = (
                x_b @ g_phi.T + 2.0 * cfg.l2 * v,
                phi @ g_logits.T + 2.0 * cfg.l2 * w,
                g_logits.sum(axis=1),
            )
            for p, vel_p, g in zip((v, w, b), vel, grads):
                vel_p *= cfg.momentum
                vel_p -= cfg.learning_rate * g
                p += vel_p
        model.loss_curve.append(float(np.mean(batch_losses)))
        model.final_epoch = epoch
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    per_class: tuple
    confusion: tuple

    def to_dict(self):
        return {"accuracy": self.accuracy, "per_class": list(self.per_class), "confusion": [list(r) for r in self.confusion]}


def _report(true, pred, n_classes):
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    n = int(conf.sum())
    acc = float(np.trace(conf) / n) if n else 0.0
    support = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per = np.where(support > 0, np.diag(conf) / np.maximum(support, 1), np.nan)
    return EvalReport(acc, tuple(float(p) for p in per), tuple(tuple(int(c) for c in r) for r in conf))


def evaluate(model, ds):
    """Accuracy, per-class accuracy and confusion matrix (rows = true class)."""
    if ds.dim != model.embedding.input_dim:
        raise DimensionMismatch(f"model expects {model.embedding.input_dim} features, got {ds.dim}")
    pred = model.predict(ds.features) if ds.n else np.zeros(0, dtype=np.int64)
    n_classes = max(model.class_count, ds.class_count)
    return _report(ds.labels, pred, n_classes)


def ncm_predict(means, x):
    sq = ((x[:, None, :] - means[:, :, None]) ** 2).sum(axis=0)
    return np.argmin(sq, axis=0)


def ncm_baseline(train, test):
    """Nearest-class-mean classifier fit on ``train`` and scored on ``test``."""
    n_classes = max(train.class_count, test.class_count)
    means = np.empty((train.dim, n_classes))
    for c in range(n_classes):
        cols = train.labels == c
        if not cols.any():
            raise MissingClass(f"class {c} has no training samples")
        means[:, c] = train.features[:, cols].mean(axis=1)
    pred = ncm_predict(means, test.features)
    return _report(test.labels, pred, n_classes)
