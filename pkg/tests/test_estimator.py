import numpy as np
import pytest

from confauction import auction, estimator, nn
from confauction.estimator import BLACK_BOX, SHARED_BACKBONE, EstimatorConfig, EstimatorParams
from confauction.mechanism import SecondPriceAuction
from confauction.regret import MisreportSearchConfig

FAST = MisreportSearchConfig(iterations=10, initializations=4)


def _data(n, shape=(2, 2), seed=0):
    return auction.sample_values(auction.AuctionConfig(*shape), n, seed)


def test_zero_estimator_predicts_zero(small_mech):
    est = estimator.zero_estimator(4)
    assert estimator.predict_regret(est, _data(1)[0]) == 0.0
    assert not np.any(estimator.predict_batch(est, _data(20), small_mech))


def test_negative_output_is_clamped():
    net = nn.DenseNet([4, 1], [np.zeros((4, 1))], [np.array([-0.3])])
    est = EstimatorParams(net, BLACK_BOX)
    assert estimator.raw_predictions(est, _data(1))[0] == pytest.approx(-0.3)
    assert estimator.predict_regret(est, _data(1)[0]) == 0.0


def test_mode_and_shape_checks(small_mech, shared_mech):
    with pytest.raises(ValueError):
        estimator.features(SHARED_BACKBONE, _data(2), small_mech)
    with pytest.raises(ValueError):
        estimator.features("mystery", _data(2))
    with pytest.raises(ValueError):
        estimator.predict_batch(estimator.zero_estimator(5), _data(2))
    with pytest.raises(ValueError):
        estimator.fit_estimator(small_mech, _data(10), np.zeros(9))
    feats = estimator.features(SHARED_BACKBONE, _data(3, (2, 3)), shared_mech)
    assert feats.shape == (3, 12)


def test_label_regrets(small_mech):
    data = _data(12)
    assert not np.any(estimator.label_regrets(SecondPriceAuction(2, 2), data, FAST))
    a = estimator.label_regrets(small_mech, data, FAST, seed=4)
    b = estimator.label_regrets(small_mech, data, FAST, seed=4)
    assert np.array_equal(a, b) and np.all(a >= 0)


def test_constant_labels_are_learned():
    c = 0.05
    data = _data(1024, seed=3)
    cfg = EstimatorConfig(epochs=100, hidden_size=16, n_hidden_layers=2, batch_size=64)
    est, _ = estimator.fit_estimator(None, data, np.full(1024, c), BLACK_BOX, cfg)
    pred = estimator.predict_batch(est, _data(500, seed=4))
    assert np.mean(np.abs(pred - c)) < 0.01 * max(c, 0.01)


def test_training_loss_trends_down(small_mech):
    data = _data(1024, seed=5)
    labels = estimator.label_regrets(small_mech, data, FAST)
    cfg = EstimatorConfig(epochs=15, hidden_size=32, n_hidden_layers=2, batch_size=64)
    _, history = estimator.fit_estimator(small_mech, data, labels, BLACK_BOX, cfg)
    smooth = np.convolve(history, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-12)


class _OutcomeOnly:
    """Exposes bids -> outcome and nothing else."""

    def __init__(self, mech):
        self.outcome = mech.outcome


def test_black_box_mode_ignores_mechanism_internals(small_mech):
    data = _data(256, seed=6)
    labels = np.linspace(0, 0.1, 256)
    cfg = EstimatorConfig(epochs=2, hidden_size=8, n_hidden_layers=2)
    a, _ = estimator.fit_estimator(small_mech, data, labels, BLACK_BOX, cfg)
    b, _ = estimator.fit_estimator(_OutcomeOnly(small_mech), data, labels, BLACK_BOX, cfg)
    test = _data(30, seed=7)
    assert np.array_equal(estimator.predict_batch(a, test, small_mech),
                          estimator.predict_batch(b, test, _OutcomeOnly(small_mech)))


def test_shared_backbone_fit(shared_mech):
    data = _data(256, (2, 3), seed=8)
    labels = estimator.label_regrets(shared_mech, data, FAST)
    cfg = EstimatorConfig(epochs=2, hidden_size=8, n_hidden_layers=2)
    est, _ = estimator.fit_estimator(shared_mech, data, labels, SHARED_BACKBONE, cfg)
    assert est.net.n_inputs == shared_mech.trunk.n_outputs
    assert np.all(estimator.predict_batch(est, data, shared_mech) >= 0)


def test_estimator_checkpoint(tmp_path, small_mech):
    data = _data(256, seed=9)
    est, _ = estimator.fit_estimator(small_mech, data, np.linspace(0, 0.2, 256), BLACK_BOX,
                                     EstimatorConfig(epochs=1, hidden_size=8, n_hidden_layers=2))
    path = tmp_path / "e.ckpt"
    estimator.save_estimator(path, est)
    back = estimator.load_estimator(path)
    assert back.mode == BLACK_BOX and back.output_scale == est.output_scale
    assert np.array_equal(estimator.predict_batch(back, data), estimator.predict_batch(est, data))
    nn.save_checkpoint(tmp_path / "other.ckpt", {"x": est.net}, {"kind": "mechanism"})
    with pytest.raises(ValueError):
        estimator.load_estimator(tmp_path / "other.ckpt")
