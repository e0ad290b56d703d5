"""Learned multi-item auctions with a conformally calibrated regret gate.

Modules:

* ``auction``: valuation profiles, outcomes, feasibility and IR checks, CSV I/O
* ``nn``: dense networks with hand-written forward and backward passes, Adam
* ``mechanism``: the allocation/payment network and classical adapters
* ``regret``: misreport search and the exhaustive grid oracle
* ``training``: augmented-Lagrangian training
* ``estimator``: the regret estimator network
* ``conformal``: split-conformal calibration, the acceptance gate and audits
* ``harness``: experiment configs and the pipeline behind the CLI
"""

from .auction import AuctionConfig, ValuationProfile, sample_valuations, sample_values
from .conformal import REJECTED, AcceptanceRule, accept, calibrate, conformal_quantile
from .estimator import EstimatorConfig, fit_estimator, predict_regret
from .mechanism import (ArchitectureSpec, FirstPriceAuction, SecondPriceAuction,
                        init_mechanism, run_mechanism)
from .regret import EVAL_SEARCH, TRAIN_SEARCH, MisreportSearchConfig, grid_oracle_regret
from .training import TrainConfig, reference_config, train

__version__ = "0.1.0"
