"""Augmented-Lagrangian training of the learned mechanism.

Per batch the loss is

    mean_v [ -sum_i p_i(v) + sum_i lambda_i rgt_i(v) + rho / 2 sum_i rgt_i(v)^2 ]

where ``rgt_i`` comes from a train-strength misreport search. The misreport
points are held fixed while differentiating, so the regret gradient is the
gradient of (utility at the misreport) minus (utility when truthful).
Multipliers grow by ``rho * batch mean regret`` every
``lagrange_update_period_iters`` steps and ``rho`` by ``rho_increment`` every
``rho_update_period_epochs`` epochs.
"""

import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn, rng
from .auction import as_array
from .mechanism import ArchitectureSpec, init_mechanism
from .regret import MisreportSearchConfig, regret_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 128
    learning_rate: float = 1e-3
    rho_init: float = 1.0
    rho_increment: float = 10.0
    rho_update_period_epochs: int = 2
    lagrange_init: float = 5.0
    lagrange_update_period_iters: int = 100
    misreport: MisreportSearchConfig = field(default_factory=MisreportSearchConfig)
    n_train_samples: int = 100_000
    seed: int = 0
    architecture: ArchitectureSpec = field(default_factory=ArchitectureSpec)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        for name in ("batch_size", "rho_update_period_epochs", "lagrange_update_period_iters",
                     "n_train_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or self.rho_init <= 0:
            raise ValueError("learning_rate and rho_init must be positive")
        if self.rho_increment < 0 or self.lagrange_init < 0:
            raise ValueError("rho_increment and lagrange_init must be non-negative")


# Hyperparameter columns per (bidders, items); the fields not listed are shared.
REFERENCE_HYPERPARAMS = {
    (2, 2): dict(epochs=10, rho_increment=10.0),
    (2, 3): dict(epochs=30, rho_increment=5.0),
    (3, 5): dict(epochs=20, rho_increment=1.0),
}


def reference_config(n_bidders, n_items, **overrides):
    base = dict(REFERENCE_HYPERPARAMS.get((n_bidders, n_items), {}))
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class LagrangianState:
    lam: np.ndarray
    rho: float
    iteration: int = 0


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    # (iteration, batch mean per-bidder regrets) at every multiplier update
    multiplier_updates: list = field(default_factory=list)
    steps_per_epoch: int = 0

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")


def initial_state(n_bidders, cfg):
    return LagrangianState(np.full(n_bidders, float(cfg.lagrange_init)), float(cfg.rho_init))


def lagrangian_value(payments, regrets, lam, rho):
    """Loss for given per-profile payments and regrets, both ``(B, n)``."""
    payments = np.atleast_2d(payments)
    regrets = np.atleast_2d(regrets)
    per_profile = (-payments.sum(axis=1) + regrets @ np.asarray(lam)
                   + 0.5 * rho * np.sum(regrets**2, axis=1))
    return float(per_profile.mean())


def lagrangian_loss(params, batch, state, cfg, seed=0, ids=None, regrets=None):
    """Loss and parameter gradients on one batch.

    Returns ``(loss, grads, info)``; ``grads`` maps net name to
    :class:`nn.Gradients` and is ``None`` for mechanisms without parameters.
    ``info`` carries the batch payments and regrets. ``regrets`` may be a
    precomputed ``RegretBatch`` to skip the search.
    """
    v = as_array(batch)
    B, n, m = v.shape
    if B == 0:
        raise ValueError("batch must be non-empty")
    if regrets is None:
        regrets = regret_batch(params, v, cfg.misreport, seed, ids=ids)
    mis = np.repeat(v, n, axis=0)
    rows = np.arange(B * n)
    who = np.tile(np.arange(n), B)
    mis[rows, who] = regrets.best_misreports.reshape(B * n, m)

    if not hasattr(params, "backward"):
        alloc, pay = params.outcome(v)
        u_truth = np.sum(v * alloc[:, :n], axis=2) - pay
        u_mis = params.utility(v.reshape(B * n, m)[rows], mis, who).reshape(B, n)
        rgt = np.maximum(0.0, u_mis - u_truth)
        loss = lagrangian_value(pay, rgt, state.lam, state.rho)
        return loss, None, {"payments": pay, "regrets": rgt}

    both = np.concatenate([v, mis])
    fwd = params.forward(both)
    alloc_t, pay_t = fwd.alloc[:B], fwd.pay[:B]
    u_truth = np.sum(v * alloc_t[:, :n], axis=2) - pay_t
    own = v.reshape(B * n, m)
    u_mis = (np.sum(own * fwd.alloc[B:][rows, who], axis=1) - fwd.pay[B:][rows, who]).reshape(B, n)
    gap = u_mis - u_truth
    rgt = np.maximum(0.0, gap)
    loss = lagrangian_value(pay_t, rgt, state.lam, state.rho)

    # d loss / d u_mis = c, d loss / d u_truth = -c
    c = (state.lam[None, :] + state.rho * rgt) * (gap > 0) / B
    d_alloc = np.zeros_like(fwd.alloc)
    d_pay = np.zeros_like(fwd.pay)
    d_pay[:B] = -1.0 / B + c
    d_alloc[:B, :n] = -c[:, :, None] * v
    cm = c.reshape(B * n)
    d_alloc[B + rows, who] = cm[:, None] * own
    d_pay[B + rows, who] = -cm
    grads, _ = params.backward(fwd, d_alloc, d_pay)
    return loss, grads, {"payments": pay_t, "regrets": rgt}


def update_multipliers(state, batch_mean_regrets, cfg, boundary="lambda"):
    """Apply one scheduled update: ``"lambda"``, ``"rho"`` or ``"both"``."""
    lam, rho = state.lam, state.rho
    if boundary in ("lambda", "both"):
        lam = lam + rho * np.asarray(batch_mean_regrets, dtype=np.float64)
    if boundary in ("rho", "both"):
        rho = rho + cfg.rho_increment
    if boundary not in ("lambda", "rho", "both"):
        raise ValueError(f"unknown boundary {boundary!r}")
    return LagrangianState(lam, rho, state.iteration)


def train(cfg, data, seed=None, params=None, progress=None):
    """Train a mechanism; returns ``(params, TrainLog)``.

    ``seed`` defaults to ``cfg.seed`` and drives initialisation, shuffling and
    the misreport restarts. ``progress`` is an optional callable receiving each
    epoch record.
    """
    seed = cfg.seed if seed is None else seed
    v = as_array(data)
    N, n, m = v.shape
    if N < cfg.batch_size:
        raise ValueError(f"need at least batch_size={cfg.batch_size} profiles, got {N}")
    if params is None:
        params = init_mechanism(n, m, cfg.architecture, seed)
    trainlog = TrainLog()
    if cfg.epochs == 0:
        return params, trainlog
    nets = params.nets
    adam = {k: nn.adam_init(net) for k, net in nets.items()}
    state = initial_state(n, cfg)
    steps = N // cfg.batch_size
    trainlog.steps_per_epoch = steps
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.stream(seed, rng.SHUFFLE, epoch).permutation(N)
        revenues, regrets = [], []
        for s in range(steps):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            loss, grads, info = lagrangian_loss(params, v[idx], state, cfg, seed,
                                                ids=epoch * N + idx)
            for k in nets:
                nets[k], adam[k] = nn.adam_step(nets[k], grads[k], adam[k], cfg.learning_rate)
            params = params.with_nets(nets)
            state = replace(state, iteration=state.iteration + 1)
            revenues.append(info["payments"].sum(axis=1).mean())
            regrets.append(info["regrets"].max(axis=1).mean())
            if state.iteration % cfg.lagrange_update_period_iters == 0:
                mean_rgt = info["regrets"].mean(axis=0)
                trainlog.multiplier_updates.append((state.iteration, mean_rgt.copy()))
                state = update_multipliers(state, mean_rgt, cfg, "lambda")
        if (epoch + 1) % cfg.rho_update_period_epochs == 0:
            state = update_multipliers(state, None, cfg, "rho")
        record = {
            "epoch": epoch + 1,
            "mean_revenue": float(np.mean(revenues)),
            "mean_regret": float(np.mean(regrets)),
            "lambda": [float(x) for x in state.lam],
            "rho": float(state.rho),
            "seconds": time.perf_counter() - t0,
        }
        trainlog.records.append(record)
        log.info("epoch %d: revenue %.4f regret %.5f rho %.1f", record["epoch"],
                 record["mean_revenue"], record["mean_regret"], record["rho"])
        if progress is not None:
            progress(record)
    return params, trainlog


def replay_multipliers(cfg, n_bidders, trainlog):
    """Rebuild the final ``(lambda, rho)`` from a log's recorded regrets and counters."""
    lam = np.full(n_bidders, float(cfg.lagrange_init))
    steps = trainlog.steps_per_epoch
    for iteration, mean_rgt in trainlog.multiplier_updates:
        epochs_done = (iteration - 1) // steps
        rho = cfg.rho_init + cfg.rho_increment * (epochs_done // cfg.rho_update_period_epochs)
        lam = lam + rho * np.asarray(mean_rgt)
    epochs = len(trainlog.records)
    rho = cfg.rho_init + cfg.rho_increment * (epochs // cfg.rho_update_period_epochs)
    return LagrangianState(lam, float(rho), epochs * (steps or 0))
