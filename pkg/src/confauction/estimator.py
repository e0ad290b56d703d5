"""Regret estimator: a network that predicts an auction's regret from its bids.

Two input modes:

* ``black-box`` reads the flattened bids only and never touches the mechanism;
* ``shared-backbone`` reads the mechanism's shared trunk features.

The mechanism is frozen in both modes; the estimator is fitted afterwards by
Adam on the L1 distance to regret labels from the misreport search.
"""

from dataclasses import dataclass

import numpy as np

from . import nn, rng
from .auction import as_array
from .regret import EVAL_SEARCH, regret_batch

BLACK_BOX = "black-box"
SHARED_BACKBONE = "shared-backbone"
MODES = (BLACK_BOX, SHARED_BACKBONE)


@dataclass(frozen=True)
class EstimatorConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 128
    n_hidden_layers: int = 5
    hidden_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid estimator training settings")


@dataclass(eq=False)
class EstimatorParams:
    net: nn.DenseNet
    mode: str
    # the network regresses labels divided by this scale
    output_scale: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown estimator mode {self.mode!r}")
        if self.net.n_outputs != 1 or self.net.output_activation != "linear":
            raise ValueError("estimator net must have one linear output")


def features(mode, bids, mechanism=None):
    """Estimator inputs for a ``(B, n, m)`` bid array."""
    bids = as_array(bids)
    if mode == BLACK_BOX:
        return bids.reshape(bids.shape[0], -1)
    if mode == SHARED_BACKBONE:
        if getattr(mechanism, "trunk", None) is None:
            raise ValueError("shared-backbone mode needs a mechanism built with a shared trunk")
        return mechanism.forward(bids).features
    raise ValueError(f"unknown estimator mode {mode!r}")


def raw_predictions(est, bids, mechanism=None):
    x = features(est.mode, bids, mechanism)
    if x.shape[1] != est.net.n_inputs:
        raise ValueError(f"estimator expects {est.net.n_inputs} inputs, got {x.shape[1]}")
    out, _ = nn.forward(est.net, x)
    return out[:, 0] * est.output_scale


def predict_batch(est, bids, mechanism=None):
    return np.maximum(0.0, raw_predictions(est, bids, mechanism))


def predict_regret(est, bids, mechanism=None):
    """Clamped regret estimate for one profile."""
    return float(predict_batch(est, as_array(bids), mechanism)[0])


def label_regrets(mechanism, data, search=EVAL_SEARCH, seed=0, n_jobs=1):
    """Max-over-bidders regret of every profile, the estimator's training target."""
    return regret_batch(mechanism, data, search, seed, n_jobs=n_jobs).max_regret


def fit_estimator(mechanism, data, labels, mode=BLACK_BOX, cfg=None):
    """Train an estimator; returns ``(EstimatorParams, per-epoch mean L1 loss)``."""
    cfg = cfg or EstimatorConfig()
    x = features(mode, data, mechanism)
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (x.shape[0],):
        raise ValueError(f"{y.size} labels for {x.shape[0]} profiles")
    scale = float(np.mean(np.abs(y))) or 1.0
    target = y / scale
    sizes = [x.shape[1]] + [cfg.hidden_size] * cfg.n_hidden_layers + [1]
    net = nn.init_net(sizes, "linear", cfg.seed, stream_id=10)
    state = nn.adam_init(net)
    N = x.shape[0]
    bs = min(cfg.batch_size, N)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.stream(cfg.seed, rng.ESTIMATOR, epoch).permutation(N)
        losses = []
        for s in range(0, N - bs + 1, bs):
            idx = order[s:s + bs]
            out, cache = nn.forward(net, x[idx])
            err = out[:, 0] - target[idx]
            losses.append(np.mean(np.abs(err)) * scale)
            grads = nn.backward(net, cache, (np.sign(err) / bs)[:, None])
            net, state = nn.adam_step(net, grads, state, cfg.learning_rate)
        history.append(float(np.mean(losses)))
    return EstimatorParams(net, mode, scale), history


def train_estimator(mechanism, data, labels, mode=BLACK_BOX, cfg=None):
    return fit_estimator(mechanism, data, labels, mode, cfg)[0]


def zero_estimator(n_inputs, mode=BLACK_BOX):
    return EstimatorParams(nn.zero_net([n_inputs, 1]), mode)


def save_estimator(path, est):
    nn.save_checkpoint(path, {"estimator": est.net},
                       {"kind": "estimator", "mode": est.mode, "output_scale": est.output_scale})


def load_estimator(path):
    nets, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "estimator":
        raise ValueError(f"{path} does not hold a regret estimator")
    return EstimatorParams(nets["estimator"], meta["mode"], meta["output_scale"])
