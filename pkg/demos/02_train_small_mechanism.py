"""
Training a small learned auction
================================

Two bidders, two items, a narrow network and a short schedule. Revenue rises
while the multipliers push regret down; every outcome stays feasible and
individually rational because of how the network is built.
"""

import logging

import numpy as np

from confauction import auction, mechanism, regret, training
from confauction.mechanism import ArchitectureSpec

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = training.reference_config(2, 2, epochs=4, n_train_samples=8192, seed=0,
                             architecture=ArchitectureSpec(3, 32))
data = auction.sample_values(auction.AuctionConfig(2, 2), cfg.n_train_samples, seed=1)
params, log = training.train(cfg, data)

# held-out evaluation with a stronger search than the one used in training
test = auction.sample_values(auction.AuctionConfig(2, 2), 300, seed=2)
search = regret.MisreportSearchConfig(iterations=100, initializations=20)
rgt = regret.regret_batch(params, test, search).max_regret
_, pay = params.outcome(test)
print(f"test revenue {pay.sum(axis=1).mean():.3f}, mean regret {rgt.mean():.4f}, "
      f"max regret {rgt.max():.4f}")

# structural guarantees
outcomes = [mechanism.run_mechanism(params, v)[0] for v in test]
print("all feasible:", all(auction.check_feasible(o.allocation) for o in outcomes))
print("all IR:", all(auction.check_ir(o, auction.ValuationProfile(v))
                     for o, v in zip(outcomes, test)))

mechanism.save_mechanism("small_mechanism.ckpt", params)
np.save("small_test_regrets.npy", rgt)
