import dataclasses
import json

import numpy as np
import pytest

from confauction import auction, training
from confauction.mechanism import (ArchitectureSpec, SecondPriceAuction, init_mechanism,
                                   run_mechanism)
from confauction.regret import MisreportSearchConfig, regret_batch
from confauction.training import LagrangianState, TrainConfig, lagrangian_loss, lagrangian_value

TINY = TrainConfig(epochs=4, batch_size=32, rho_update_period_epochs=2, lagrange_update_period_iters=3,
                   misreport=MisreportSearchConfig(iterations=4, initializations=2),
                   n_train_samples=128, seed=3, architecture=ArchitectureSpec(2, 10))


def _data(n=128, shape=(2, 2), seed=1):
    return auction.sample_values(auction.AuctionConfig(*shape), n, seed)


def test_table3_columns():
    assert training.reference_config(2, 2).epochs == 10
    assert training.reference_config(2, 2).rho_increment == 10
    assert training.reference_config(2, 3).epochs == 30
    assert training.reference_config(2, 3).rho_increment == 5
    assert training.reference_config(3, 5).epochs == 20
    assert training.reference_config(3, 5).rho_increment == 1
    cfg = training.reference_config(2, 2)
    assert (cfg.batch_size, cfg.learning_rate, cfg.rho_init, cfg.lagrange_init) == (128, 1e-3, 1, 5)
    assert (cfg.rho_update_period_epochs, cfg.lagrange_update_period_iters) == (2, 100)
    assert cfg.misreport == MisreportSearchConfig(0.1, 25, 10)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)


def test_lagrangian_value_example():
    loss = lagrangian_value([[0.3, 0.4]], [[0.1, 0.2]], [5, 5], 1.0)
    assert loss == pytest.approx(0.825)


def test_loss_without_constraint_terms_is_negated_revenue(small_mech):
    v = _data(16)
    state = LagrangianState(np.zeros(2), 0.0)
    loss, grads, info = lagrangian_loss(small_mech, v, state, TINY)
    _, pay = small_mech.outcome(v)
    assert loss == pytest.approx(-pay.sum(axis=1).mean(), abs=1e-12)
    assert set(grads) == {"allocation", "payment"}


def test_strategy_proof_adapter_loss_is_negated_revenue():
    sp = SecondPriceAuction(2, 2)
    v = _data(16)
    loss, grads, info = lagrangian_loss(sp, v, LagrangianState(np.array([5.0, 7.0]), 3.0), TINY)
    _, pay = sp.outcome(v)
    assert grads is None
    assert loss == pytest.approx(-pay.sum(axis=1).mean(), abs=1e-12)
    assert not np.any(info["regrets"])


def test_loss_gradient_finite_differences():
    mech = init_mechanism(2, 2, ArchitectureSpec(2, 6), seed=2)
    v = _data(8, seed=5)
    cfg = dataclasses.replace(TINY, misreport=MisreportSearchConfig(iterations=10, initializations=3))
    state = LagrangianState(np.array([2.0, 3.0]), 4.0)
    fixed = regret_batch(mech, v, cfg.misreport)
    _, grads, _ = lagrangian_loss(mech, v, state, cfg, regrets=fixed)
    h, worst = 1e-6, 0.0
    nets = mech.nets
    for name in ("allocation", "payment"):
        params = nets[name].params
        for k in range(len(params)):
            for idx in list(np.ndindex(params[k].shape))[:12]:
                losses = []
                for sgn in (1, -1):
                    shifted = [p.copy() for p in params]
                    shifted[k][idx] += sgn * h
                    m2 = mech.with_nets({**nets, name: nets[name].with_params(shifted)})
                    losses.append(lagrangian_loss(m2, v, state, cfg, regrets=fixed)[0])
                num = (losses[0] - losses[1]) / (2 * h)
                ana = grads[name].params[k][idx]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    assert worst < 1e-4


def test_update_multipliers_examples():
    cfg = training.reference_config(2, 2)
    s = LagrangianState(np.array([5.0, 5.0]), 1.0)
    assert np.array_equal(training.update_multipliers(s, [0.0, 0.0], cfg).lam, [5.0, 5.0])
    np.testing.assert_allclose(training.update_multipliers(s, [0.1, 0.0], cfg).lam, [5.1, 5.0])
    assert training.update_multipliers(s, None, cfg, "rho").rho == 11.0
    with pytest.raises(ValueError):
        training.update_multipliers(s, None, cfg, "bogus")


def test_zero_epochs_returns_initialisation():
    cfg = dataclasses.replace(TINY, epochs=0)
    params, log = training.train(cfg, _data())
    ref = init_mechanism(2, 2, cfg.architecture, cfg.seed)
    for k, net in params.nets.items():
        assert all(np.array_equal(a, b) for a, b in zip(net.params, ref.nets[k].params))
    assert log.records == []


def test_insufficient_data():
    with pytest.raises(ValueError):
        training.train(TINY, _data(16))


def test_training_is_deterministic_and_schedule_replays(tmp_path):
    data = _data()
    p1, log1 = training.train(TINY, data)
    p2, log2 = training.train(TINY, data)
    for k in p1.nets:
        assert all(np.array_equal(a, b) for a, b in zip(p1.nets[k].params, p2.nets[k].params))
    assert len(log1.records) == TINY.epochs
    assert [r["rho"] for r in log1.records] == [1.0, 11.0, 11.0, 21.0]
    lams = np.array([r["lambda"] for r in log1.records])
    assert np.all(np.diff(lams, axis=0) >= 0)
    replayed = training.replay_multipliers(TINY, 2, log1)
    np.testing.assert_allclose(replayed.lam, log1.records[-1]["lambda"], rtol=1e-14)
    assert replayed.rho == log1.records[-1]["rho"]
    # steps are 4 per epoch and lambda moves every 3 steps
    assert [it for it, _ in log1.multiplier_updates] == [3, 6, 9, 12, 15]
    path = tmp_path / "log.jsonl"
    log1.write_jsonl(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert set(json.loads(lines[0])) == {
        "epoch", "mean_revenue", "mean_regret", "lambda", "rho", "seconds"}


def test_trained_mechanism_stays_feasible_and_ir():
    params, _ = training.train(TINY, _data())
    for v in _data(50, seed=9):
        out, _ = run_mechanism(params, v)
        assert auction.check_feasible(out.allocation)
        assert auction.check_ir(out, auction.ValuationProfile(v))


def test_training_raises_revenue_of_a_single_item_auction():
    cfg = dataclasses.replace(TINY, epochs=6, batch_size=64, learning_rate=5e-3,
                              architecture=ArchitectureSpec(2, 16))
    data = _data(1024, shape=(2, 1), seed=2)
    params, log = training.train(cfg, data)
    assert log.records[-1]["mean_revenue"] > log.records[0]["mean_revenue"]
