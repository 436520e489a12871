import math

import numpy as np
import pytest

from dagekit import errors, protocol, synthetic, trainer
from dagekit.data import LabeledDataset
from dagekit.spectral import EmbeddingModel
from dagekit.trainer import JointModel, TrainConfig


def setup(spec=synthetic.BENCHMARK_SPEC, n_src=20, n_tgt=3, seed=0):
    src, tgt = synthetic.generate(spec)
    s_idx = protocol.sample_source(src, n_src, seed)
    _, pool = protocol.fixed_test_split(tgt, 0.3, 0)
    t_idx, _ = protocol.run_split(tgt, pool, n_tgt, seed)
    train_s, train_t = src.subset(s_idx), tgt.subset(t_idx)
    pairs = protocol.cartesian_pairs(train_s.labels, list(range(train_s.n)), train_t.labels,
                                     list(range(train_t.n)), (1, 3), seed)
    return train_s, train_t, pairs


def test_ce_examples():
    loss, _ = trainer.ce_loss_and_grad(np.zeros((2, 3)), [0, 1, 0])
    assert loss == pytest.approx(math.log(2))
    losses_ = [trainer.ce_loss_and_grad(np.array([[m], [0.0]]), [0])[0] for m in (1.0, 10.0, 40.0)]
    assert losses_[0] > losses_[1] > losses_[2] and losses_[2] < 1e-15


def test_weight_ratio_round_trip():
    beta, gamma = trainer.weights_from_ratios(0.5, 0.25)
    assert (beta, gamma) == pytest.approx((0.25, 0.75))
    assert trainer.ratios_from_weights(beta, gamma) == pytest.approx((0.5, 0.25))


def test_config_validation():
    with pytest.raises(errors.ConfigError):
        TrainConfig(loss_kind="adversarial")
    with pytest.raises(errors.ConfigError):
        TrainConfig(momentum=1.0)


def test_zero_learning_rate_keeps_init():
    s, t, pairs = setup()
    cfg = TrainConfig(epochs=3, learning_rate=0.0)
    model = trainer.train_joint(s, t, pairs, cfg)
    np.testing.assert_array_equal(model.embedding.projection, trainer.xavier_uniform(s.dim, cfg.d, cfg.seed))


@pytest.mark.parametrize("kind, lr", [("dage-lda", 0.01), ("ccsa", 3e-4), ("dsne", 3e-4), ("nem", 3e-4)])
def test_seeded_determinism(kind, lr):
    s, t, pairs = setup()
    cfg = TrainConfig(loss_kind=kind, learning_rate=lr, epochs=3, epsilon=2.0)
    a = trainer.train_joint(s, t, pairs, cfg)
    b = trainer.train_joint(s, t, pairs, cfg)
    assert a.to_json() == b.to_json()
    assert all(np.isfinite(a.loss_curve))


def test_dage_only_shrinks_same_class_distances():
    spec = synthetic.ShiftSpec(rotation_deg=0.0, translation=0.0, separation=6.0)
    s, t, pairs = setup(spec)
    cfg = TrainConfig(beta=0.0, gamma=0.0, epochs=10, learning_rate=0.01)
    x = np.concatenate([s.features, t.features], axis=1)
    labels = np.concatenate([s.labels, t.labels])
    same = labels[:, None] == labels[None, :]
    spread = []

    def on_epoch(_epoch, model):
        z = model.embed(x)
        sq = ((z[:, :, None] - z[:, None, :]) ** 2).sum(axis=0)
        # scale-free: same-class spread relative to all pairs
        spread.append(sq[same].mean() / sq.mean())

    trainer.train_joint(s, t, pairs, cfg, on_epoch=on_epoch)
    assert all(b <= a for a, b in zip(spread, spread[1:]))
    assert spread[-1] < spread[0]


def test_missing_class_and_dims():
    s, t, pairs = setup()
    with pytest.raises(errors.MissingClass):
        trainer.train_joint(s, t.subset(np.flatnonzero(t.labels != 2)), pairs, TrainConfig())
    with pytest.raises(errors.DimensionMismatch):
        trainer.train_joint(s, t, pairs, TrainConfig(d=11))


def test_model_json_round_trip():
    s, t, pairs = setup()
    model = trainer.train_joint(s, t, pairs, TrainConfig(epochs=2))
    back = JointModel.from_json(model.to_json())
    np.testing.assert_array_equal(back.logits(t.features), model.logits(t.features))


def constant_model(dim, classes):
    return JointModel(EmbeddingModel("linear", np.eye(dim)[:, :1]), np.zeros((1, classes)), np.zeros(classes))


def test_evaluate_examples():
    ds = LabeledDataset(np.array([[0.0, 1.0, 2.0, 3.0]]), [0, 1, 0, 1], [1] * 4, 2)
    rep = trainer.evaluate(constant_model(1, 2), ds)
    assert rep.accuracy == 0.5 and rep.confusion == ((2, 0), (2, 0))
    perfect = JointModel(EmbeddingModel("linear", np.eye(1)), np.array([[-1.0, 1.0]]), np.array([1.5, -1.5]))
    easy = LabeledDataset(np.array([[0.0, 0.5, 2.5, 3.0]]), [0, 0, 1, 1], [1] * 4, 2)
    assert trainer.evaluate(perfect, easy).accuracy == 1.0
    assert trainer.evaluate(perfect, easy) == trainer.evaluate(perfect, easy)


def test_ncm_examples():
    train = LabeledDataset(np.array([[0.0, 0.0, 4.0, 4.0]]), [0, 0, 1, 1], [0] * 4, 2)
    test = LabeledDataset(np.array([[0.0, 2.0]]), [0, 1], [1, 1], 2)
    rep = trainer.ncm_baseline(train, test)
    assert rep.confusion == ((1, 0), (1, 0))  # the midpoint goes to class 0
