"""Regret by misreport search.

The regret of bidder ``i`` at profile ``v`` is the most utility it can gain by
replacing its own row with some misreport ``b_i in [0, 1]^m`` while everyone
else bids truthfully. The search runs projected gradient ascent from several
starting points (the truthful bid plus uniform random points) and keeps the
best point it ever probed.

Starting points for ``(profile id, bidder)`` come from their own random
stream, so results do not depend on batching, chunking or worker count, and a
search with more restarts or iterations probes a superset of the points of a
weaker one.
"""

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .auction import ValuationProfile, as_array


class GridTooLargeError(ValueError):
    """The exhaustive misreport lattice exceeds the point guard."""


@dataclass(frozen=True)
class MisreportSearchConfig:
    learning_rate: float = 0.1
    iterations: int = 25
    initializations: int = 10
    include_truthful_start: bool = True
    # dtype of the ascent trajectory; the reported gain is always re-evaluated in float64
    search_dtype: str = "float64"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1 or self.initializations < 1:
            raise ValueError("iterations and initializations must be >= 1")
        if self.search_dtype not in ("float64", "float32"):
            raise ValueError("search_dtype must be float64 or float32")


TRAIN_SEARCH = MisreportSearchConfig()
EVAL_SEARCH = MisreportSearchConfig(iterations=200, initializations=100)


@dataclass
class RegretReport:
    per_bidder: np.ndarray
    max_regret: float
    best_misreports: np.ndarray


@dataclass
class RegretBatch:
    """Regrets for many profiles: ``per_bidder`` is ``(B, n)``, misreports ``(B, n, m)``."""

    per_bidder: np.ndarray
    best_misreports: np.ndarray

    @property
    def max_regret(self):
        return self.per_bidder.max(axis=1)

    def report(self, k):
        return RegretReport(self.per_bidder[k].copy(), float(self.per_bidder[k].max()),
                            self.best_misreports[k].copy())


def _starts(cfg, seed, pid, bidder, own_row):
    m = own_row.shape[0]
    n_random = cfg.initializations - (1 if cfg.include_truthful_start else 0)
    rand = rng.stream(seed, rng.MISREPORT, pid, bidder).random((n_random, m))
    if cfg.include_truthful_start:
        return np.vstack([own_row[None], rand])
    return rand


def _search_pairs(mech, values, pids, bidders, cfg, seed):
    """Best misreport and float64 gain for each (profile, bidder) pair.

    ``values`` is ``(P, n, m)`` with one row per pair (profiles repeat when
    several bidders of the same profile are searched).
    """
    P, n, m = values.shape
    R = cfg.initializations
    starts = np.stack([_starts(cfg, seed, pid, i, values[k, i])
                       for k, (pid, i) in enumerate(zip(pids, bidders))])  # (P, R, m)
    dtype = np.dtype(cfg.search_dtype)
    search_mech = mech.astype(dtype) if dtype != np.float64 and hasattr(mech, "astype") else mech

    who = np.repeat(bidders, R)
    own = np.repeat(values[np.arange(P), bidders], R, axis=0).astype(dtype)
    bids = np.repeat(values, R, axis=0).astype(dtype)
    rows = np.arange(P * R)
    x = starts.reshape(P * R, m).astype(dtype)
    best_u = np.full(P * R, -np.inf)
    best_x = x.copy()
    for t in range(cfg.iterations + 1):
        bids[rows, who] = x
        if t < cfg.iterations:
            u, g = search_mech.utility_grad(own, bids, who)
        else:
            u = search_mech.utility(own, bids, who)
        better = u > best_u
        best_u = np.where(better, u, best_u)
        best_x[better] = x[better]
        if t < cfg.iterations:
            x = np.clip(x + cfg.learning_rate * g, 0.0, 1.0)

    pick = np.argmax(best_u.reshape(P, R), axis=1)
    chosen = best_x.reshape(P, R, m)[np.arange(P), pick].astype(np.float64)
    pr = np.arange(P)
    truthful_u = mech.utility(values[pr, bidders], values, bidders)
    mis = values.copy()
    mis[pr, bidders] = chosen
    mis_u = mech.utility(values[pr, bidders], mis, bidders)
    return chosen, np.maximum(0.0, mis_u - truthful_u)


def regret_batch(mech, profiles, cfg=EVAL_SEARCH, seed=0, ids=None, chunk_rows=4096, n_jobs=1):
    """Per-bidder regrets for every profile.

    ``ids`` are the profile ids used to derive each search's random stream
    (default ``0..B-1``). Work is split into fixed chunks of about
    ``chunk_rows`` search rows; ``n_jobs > 1`` evaluates chunks on threads
    without changing the result.
    """
    values = as_array(profiles)
    B, n, m = values.shape
    ids = np.arange(B) if ids is None else np.asarray(ids)
    per_bidder = np.zeros((B, n))
    best = np.zeros((B, n, m))
    if B == 0:
        return RegretBatch(per_bidder, best)
    per_chunk = max(1, chunk_rows // (n * cfg.initializations))
    chunks = [slice(s, min(s + per_chunk, B)) for s in range(0, B, per_chunk)]

    def run(sl):
        v = values[sl]
        k = v.shape[0]
        pair_values = np.repeat(v, n, axis=0)
        pair_ids = np.repeat(ids[sl], n)
        pair_bidders = np.tile(np.arange(n), k)
        chosen, gain = _search_pairs(mech, pair_values, pair_ids, pair_bidders, cfg, seed)
        return sl, chosen.reshape(k, n, m), gain.reshape(k, n)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = map(run, chunks)
    for sl, chosen, gain in results:
        best[sl] = chosen
        per_bidder[sl] = gain
    return RegretBatch(per_bidder, best)


def _profile_values(profile):
    return profile.values if isinstance(profile, ValuationProfile) else np.asarray(profile, float)


def optimize_misreport(mech, profile, bidder, cfg=TRAIN_SEARCH, seed=0, profile_id=0):
    """Best misreport for one bidder and its utility gain over truthful bidding."""
    v = _profile_values(profile)
    chosen, gain = _search_pairs(mech, v[None], np.array([profile_id]), np.array([bidder]),
                                 cfg, seed)
    return chosen[0], float(gain[0])


def regret(mech, profile, cfg=EVAL_SEARCH, seed=0, profile_id=0):
    return regret_batch(mech, _profile_values(profile)[None], cfg, seed,
                        ids=np.array([profile_id])).report(0)


def grid_oracle_regret(mech, profile, bidder, grid_step, max_points=10**7, chunk=20000):
    """Exhaustive regret over the misreport lattice ``{0, step, ..., 1}^m``.

    ``mech`` only needs to map bids to outcomes: either an object with an
    ``outcome(bids) -> (alloc, pay)`` method or such a callable.
    """
    outcome = mech.outcome if hasattr(mech, "outcome") else mech
    v = _profile_values(profile)
    n, m = v.shape
    steps = 1.0 / grid_step
    k = int(round(steps))
    if k < 1 or abs(steps - k) > 1e-9 * max(1.0, steps):
        raise ValueError(f"grid_step {grid_step} does not divide [0, 1] into an integer lattice")
    total = (k + 1) ** m
    if total > max_points:
        raise GridTooLargeError(f"lattice has {total} points, more than the guard of {max_points}")
    axis = np.linspace(0.0, 1.0, k + 1)

    def util(bids):
        alloc, pay = outcome(bids)
        return np.sum(v[bidder] * alloc[:, bidder], axis=1) - pay[:, bidder]

    truthful = util(v[None])[0]
    best = -np.inf
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (k + 1,) * m), axis=1)
        bids = np.repeat(v[None], idx.size, axis=0)
        bids[:, bidder] = axis[digits]
        best = max(best, float(util(bids).max()))
    return max(0.0, best - truthful)


def write_regret_csv(path, per_bidder):
    per_bidder = np.asarray(per_bidder)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("auction_id", "bidder", "regret", "max_regret"))
        for a, row in enumerate(per_bidder):
            top = repr(float(row.max()))
            for i, r in enumerate(row):
                w.writerow((a, i, repr(float(r)), top))
