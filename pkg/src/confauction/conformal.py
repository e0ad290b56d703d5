"""Split-conformal calibration of the regret estimator and the acceptance gate.

Calibration residuals are ``e = r - r_hat`` (actual minus predicted regret)
on profiles the estimator has not seen. With ``n`` residuals the threshold
``q_alpha`` is the ``k``-th smallest, ``k = ceil((n + 1)(1 - alpha))``. An
auction is accepted when its predicted regret satisfies
``r_hat < epsilon - q_alpha``; for exchangeable calibration and test
auctions the chance that an accepted auction has regret above ``epsilon`` is
at most ``alpha``.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .auction import Allocation, AuctionOutcome, Payments, as_array
from .estimator import predict_batch
from .regret import EVAL_SEARCH, regret_batch


class CalibrationSizeError(ValueError):
    """Too few calibration residuals for the requested alpha."""


class _Rejected:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "REJECTED"

    def __bool__(self):
        return False


REJECTED = _Rejected()


def conformal_index(n, alpha):
    """1-based rank ``ceil((n + 1)(1 - alpha))`` of the calibration threshold."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    # round away float noise such as 5 * 0.8 = 4.000000000000001 before the ceiling
    return math.ceil(round((n + 1) * (1 - alpha), 9))


def conformal_quantile(residuals, alpha):
    r = np.asarray(residuals, dtype=np.float64).reshape(-1)
    n = r.size
    if n < 1:
        raise CalibrationSizeError("no calibration residuals")
    k = conformal_index(n, alpha)
    if k > n:
        raise CalibrationSizeError(
            f"{n} calibration points cannot support alpha={alpha}: need rank {k} <= n")
    return float(np.partition(r, k - 1)[k - 1])


@dataclass
class CalibrationResult:
    residuals: np.ndarray  # ascending
    q_alpha: float
    alpha: float
    n_cal: int

    @property
    def k_index(self):
        return conformal_index(self.n_cal, self.alpha)

    def to_json(self):
        r = self.residuals
        return {
            "alpha": self.alpha,
            "n_cal": self.n_cal,
            "q_alpha": self.q_alpha,
            "residuals_digest": {"min": float(r.min()), "max": float(r.max()),
                                 "mean": float(r.mean()), "k_index": self.k_index},
        }


def calibration_from_scores(regrets, predictions, alpha):
    residuals = np.asarray(regrets, dtype=np.float64) - np.asarray(predictions, dtype=np.float64)
    q = conformal_quantile(residuals, alpha)
    return CalibrationResult(np.sort(residuals, kind="stable"), q, alpha, residuals.size)


def calibrate(mechanism, estimator, cal_set, alpha, search=EVAL_SEARCH, seed=0, regrets=None):
    """Calibrate ``estimator`` on ``cal_set``, which must be disjoint from its training data.

    ``regrets`` may carry precomputed actual regrets of ``cal_set``.
    """
    bids = as_array(cal_set)
    if bids.shape[0] < 1 or conformal_index(bids.shape[0], alpha) > bids.shape[0]:
        raise CalibrationSizeError(f"{bids.shape[0]} calibration profiles cannot support alpha={alpha}")
    if regrets is None:
        regrets = regret_batch(mechanism, bids, search, seed).max_regret
    predictions = predict_batch(estimator, bids, mechanism)
    return calibration_from_scores(regrets, predictions, alpha)


@dataclass(eq=False)
class AcceptanceRule:
    mechanism: object
    estimator: object
    epsilon: float
    q_alpha: float
    alpha: float

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    @property
    def threshold(self):
        return self.epsilon - self.q_alpha

    def accepts(self, predictions):
        return np.asarray(predictions) < self.threshold

    def accept_mask(self, bids):
        return self.accepts(predict_batch(self.estimator, bids, self.mechanism))


def accept(rule, bids):
    """The mechanism's outcome when the predicted regret clears the gate, else ``REJECTED``."""
    b = as_array(bids)
    if not rule.accept_mask(b)[0]:
        return REJECTED
    alloc, pay = rule.mechanism.outcome(b)
    return AuctionOutcome(Allocation(alloc[0]), Payments(pay[0]))


@dataclass
class AuditResult:
    violation_rate: float
    acceptance_rate: float
    max_accepted_regret: float
    revenue_mean_accepted: float
    regrets: np.ndarray
    predictions: np.ndarray
    accepted: np.ndarray
    revenue: np.ndarray = None

    def summary(self, alpha, epsilon, q_alpha):
        return {
            "alpha": alpha,
            "epsilon": epsilon,
            "q_alpha": q_alpha,
            "acceptance_rate": self.acceptance_rate,
            "violation_rate": self.violation_rate,
            "max_accepted_regret": self.max_accepted_regret,
            "revenue_mean_accepted": self.revenue_mean_accepted,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("auction_id", "regret", "predicted_regret", "accepted"))
            for a, (r, p, ok) in enumerate(zip(self.regrets, self.predictions, self.accepted)):
                w.writerow((a, repr(float(r)), repr(float(p)), int(ok)))


def audit_scores(regrets, predictions, q_alpha, epsilon, revenue=None):
    """Audit from precomputed actual regrets and predictions of a test set."""
    r = np.asarray(regrets, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    accepted = p < epsilon - q_alpha
    n = r.size
    violation = float(np.count_nonzero(accepted & (r > epsilon)) / n) if n else 0.0
    rev = None if revenue is None else np.asarray(revenue, dtype=np.float64)
    return AuditResult(
        violation_rate=violation,
        acceptance_rate=float(np.count_nonzero(accepted) / n) if n else 0.0,
        max_accepted_regret=float(r[accepted].max()) if accepted.any() else 0.0,
        revenue_mean_accepted=float(rev[accepted].mean()) if rev is not None and accepted.any()
        else 0.0,
        regrets=r, predictions=p, accepted=accepted, revenue=rev,
    )


def audit_coverage(rule, test_set, search=EVAL_SEARCH, seed=0, regrets=None):
    bids = as_array(test_set)
    if regrets is None:
        regrets = regret_batch(rule.mechanism, bids, search, seed).max_regret
    predictions = predict_batch(rule.estimator, bids, rule.mechanism)
    _, pay = rule.mechanism.outcome(bids)
    return audit_scores(regrets, predictions, rule.q_alpha, rule.epsilon, pay.sum(axis=1))


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_residuals_csv(path, calibration):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("rank", "residual"))
        for k, e in enumerate(calibration.residuals, start=1):
            w.writerow((k, repr(float(e))))


# -- Monte Carlo check of the acceptance guarantee ---------------------------

def synthetic_scores(gen, shape, scale=0.01, noise=0.003):
    """Exchangeable (regret, predicted regret) pairs.

    A latent difficulty ``s ~ Exponential(scale)`` per auction; the predictor
    reports ``s`` and the actual regret is ``max(0, s + noise * Z)`` with
    ``Z ~ N(0, 1)``.
    """
    s = gen.exponential(scale, size=shape)
    return np.maximum(0.0, s + noise * gen.standard_normal(shape)), s


def monte_carlo_coverage(n_reps, n_cal, n_test, alpha, epsilon, seed=0, scores=synthetic_scores):
    """Repeat calibrate + audit on fresh synthetic data.

    Returns per-repetition ``(violation_rates, acceptance_rates)``.
    """
    gen = rng.stream(seed, rng.ESTIMATOR, 7)
    r, p = scores(gen, (n_reps, n_cal + n_test))
    k = conformal_index(n_cal, alpha)
    if k > n_cal:
        raise CalibrationSizeError(f"{n_cal} calibration points cannot support alpha={alpha}")
    resid = r[:, :n_cal] - p[:, :n_cal]
    q = np.partition(resid, k - 1, axis=1)[:, k - 1]
    r_test, p_test = r[:, n_cal:], p[:, n_cal:]
    accepted = p_test < (epsilon - q)[:, None]
    violations = np.mean(accepted & (r_test > epsilon), axis=1)
    return violations, accepted.mean(axis=1)
