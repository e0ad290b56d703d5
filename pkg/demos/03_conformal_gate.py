"""
Gating auctions by predicted regret
===================================

Fit a regret estimator to a trained mechanism, calibrate it on held-out
auctions, and only run auctions whose predicted regret clears
``epsilon - q_alpha``. Run ``02_train_small_mechanism.py`` first.
"""

import numpy as np

from confauction import auction, conformal, estimator, mechanism, regret
from confauction.estimator import EstimatorConfig

mech = mechanism.load_mechanism("small_mechanism.ckpt")
cfg = auction.AuctionConfig(2, 2)
search = regret.MisreportSearchConfig(iterations=100, initializations=20)

# three disjoint splits: estimator training, calibration, test
fit_set = auction.sample_values(cfg, 1500, seed=10)
cal_set = auction.sample_values(cfg, 500, seed=11)
test_set = auction.sample_values(cfg, 500, seed=12)

labels = estimator.label_regrets(mech, fit_set, search)
est, history = estimator.fit_estimator(mech, fit_set, labels, cfg=EstimatorConfig(epochs=20))
print("estimator L1 by epoch:", np.round(history[::5], 5))

alpha = 0.1
cal = conformal.calibrate(mech, est, cal_set, alpha, search, seed=1)
print(f"q_alpha = {cal.q_alpha:.5f} (rank {cal.k_index} of {cal.n_cal})")

test_regrets = regret.regret_batch(mech, test_set, search, seed=2).max_regret
epsilon = float(np.quantile(test_regrets, 0.9))
rule = conformal.AcceptanceRule(mech, est, epsilon, cal.q_alpha, alpha)
res = conformal.audit_coverage(rule, test_set, regrets=test_regrets)
print(f"epsilon {epsilon:.4f}: accepted {res.acceptance_rate:.1%}, "
      f"violations {res.violation_rate:.2%} (bound {alpha:.0%})")

# a single auction through the gate
print("first test auction:", conformal.accept(rule, test_set[0]))

# the guarantee itself, on synthetic exchangeable scores
viol, acc = conformal.monte_carlo_coverage(1000, 200, 200, alpha, epsilon=0.01)
print(f"Monte Carlo: mean violation {viol.mean():.4f} <= {alpha}, mean acceptance {acc.mean():.2f}")
