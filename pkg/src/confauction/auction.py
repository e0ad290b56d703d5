"""Auction domain types and the arithmetic on them.

Valuations are additive: bidder ``i`` values a set of items at the sum of its
per-item values, so a profile is an ``n x m`` matrix and an allocation is an
``(n + 1) x m`` share matrix whose last row holds the unallocated share of
each item.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng

DEFAULT_TOL = 1e-6
UNIFORM_UNIT = "uniform-unit"


class MalformedProfileError(ValueError):
    """Shapes of valuations, bids, allocations or payments do not line up."""


@dataclass(frozen=True)
class AuctionConfig:
    n_bidders: int
    n_items: int
    valuation_distribution: str = UNIFORM_UNIT

    def __post_init__(self):
        if self.n_bidders < 1 or self.n_items < 1:
            raise ValueError("an auction needs at least one bidder and one item")
        if self.valuation_distribution != UNIFORM_UNIT:
            raise ValueError(f"unsupported valuation distribution {self.valuation_distribution!r}")

    @property
    def shape(self):
        return (self.n_bidders, self.n_items)


@dataclass(frozen=True, eq=False)
class ValuationProfile:
    """Per-bidder per-item values (or bids), shape ``(n, m)``, entries in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise MalformedProfileError(f"profile must be 2-d, got shape {v.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise MalformedProfileError("profile entries must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_bidders(self):
        return self.values.shape[0]

    @property
    def n_items(self):
        return self.values.shape[1]

    def matches(self, config):
        return self.values.shape == config.shape

    def __eq__(self, other):
        return isinstance(other, ValuationProfile) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class Allocation:
    """Item shares, shape ``(n + 1, m)``; the last row is the unallocated share."""

    shares: np.ndarray

    def __post_init__(self):
        s = np.array(self.shares, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2:
            raise MalformedProfileError(f"allocation must be (n+1) x m, got shape {s.shape}")
        if np.any(s < -DEFAULT_TOL):
            raise ValueError("allocation shares must be non-negative")
        if np.any(np.abs(s.sum(axis=0) - 1.0) > DEFAULT_TOL):
            raise ValueError("every allocation column must sum to 1")
        s.setflags(write=False)
        object.__setattr__(self, "shares", s)

    @property
    def bidder_shares(self):
        return self.shares[:-1]


@dataclass(frozen=True, eq=False)
class Payments:
    amounts: np.ndarray

    def __post_init__(self):
        a = np.array(self.amounts, dtype=np.float64).reshape(-1)
        if np.any(a < 0):
            raise ValueError("payments must be non-negative")
        a.setflags(write=False)
        object.__setattr__(self, "amounts", a)


@dataclass(frozen=True)
class AuctionOutcome:
    allocation: Allocation
    payments: Payments = field()

    def __post_init__(self):
        if self.allocation.shares.shape[0] - 1 != self.payments.amounts.shape[0]:
            raise MalformedProfileError("allocation and payments disagree on the number of bidders")


def utility(valuation_row, allocation_row, payment):
    """Additive utility ``sum_j v_j * g_j - p`` of one bidder."""
    v = np.asarray(valuation_row, dtype=np.float64)
    g = np.asarray(allocation_row, dtype=np.float64)
    if v.shape != g.shape or v.ndim != 1:
        raise MalformedProfileError(f"valuation row {v.shape} and allocation row {g.shape} differ")
    return float(v @ g - payment)


def revenue(payments):
    amounts = payments.amounts if isinstance(payments, Payments) else np.asarray(payments)
    return float(np.sum(amounts))


def check_feasible(allocation, tol=DEFAULT_TOL):
    s = allocation.shares if isinstance(allocation, Allocation) else np.asarray(allocation)
    real = s[:-1]
    return bool(np.all(real >= -tol) and np.all(real.sum(axis=0) <= 1.0 + tol))


def check_ir(outcome, valuations, tol=DEFAULT_TOL):
    v = valuations.values if isinstance(valuations, ValuationProfile) else np.asarray(valuations)
    g = outcome.allocation.bidder_shares
    if v.shape != g.shape:
        raise MalformedProfileError(f"valuations {v.shape} do not match allocation {g.shape}")
    utilities = np.sum(v * g, axis=1) - outcome.payments.amounts
    return bool(np.all(utilities >= -tol))


def sample_values(config, count, seed):
    """Draw ``count`` profiles as one ``(count, n, m)`` array of i.i.d. U[0, 1] entries."""
    if count < 0:
        raise ValueError("count must be non-negative")
    gen = rng.stream(seed, rng.VALUATIONS)
    return gen.random((count, config.n_bidders, config.n_items))


def sample_valuations(config, count, seed):
    return [ValuationProfile(v) for v in sample_values(config, count, seed)]


def as_array(profiles):
    """Stack profiles (or pass through an array) into a ``(count, n, m)`` float array."""
    if isinstance(profiles, np.ndarray):
        arr = np.asarray(profiles, dtype=np.float64)
        return arr[None] if arr.ndim == 2 else arr
    if isinstance(profiles, ValuationProfile):
        return profiles.values[None]
    profiles = list(profiles)
    if not profiles:
        raise ValueError("cannot infer the shape of an empty profile list; pass an array")
    return np.stack([p.values if isinstance(p, ValuationProfile) else np.asarray(p, float)
                     for p in profiles])


CSV_HEADER = ("auction_id", "bidder", "item", "value")


def write_valuations_csv(path, values):
    """Write profiles as long-format CSV ``auction_id,bidder,item,value``."""
    values = np.asarray(values, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        count = values.shape[0] if values.ndim == 3 else 0
        for a in range(count):
            for i in range(values.shape[1]):
                for j in range(values.shape[2]):
                    w.writerow((a, i, j, repr(float(values[a, i, j]))))


def read_valuations_csv(path, config):
    """Read a CSV written by :func:`write_valuations_csv` back into a ``(count, n, m)`` array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise MalformedProfileError(f"unexpected CSV header {header}")
        rows = [(int(a), int(i), int(j), float(v)) for a, i, j, v in reader]
    n, m = config.shape
    count = max((r[0] for r in rows), default=-1) + 1
    if len(rows) != count * n * m:
        raise MalformedProfileError("CSV row count does not match the auction shape")
    out = np.full((count, n, m), np.nan)
    for a, i, j, v in rows:
        out[a, i, j] = v
    if np.isnan(out).any():
        raise MalformedProfileError("CSV is missing some (auction, bidder, item) entries")
    return out
