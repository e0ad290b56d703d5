"""The learned auction mechanism and a few hand-coded reference auctions.

A mechanism maps a bid profile ``b`` (``n x m``) to an allocation
``g(b)`` (``(n+1) x m`` column-stochastic shares, last row unallocated) and
payments ``p(b)``. The learned mechanism charges bidder ``i`` a sigmoid
fraction of the value it reported for what it received,
``p_i = sigma_i(b) * sum_j b_ij g_ij(b)``, so reported-bid individual
rationality holds for every parameter setting.

Everything that the regret search and the trainer need is batched: bids are
``(B, n, m)`` arrays and bidder indices are ``(B,)`` integer arrays.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .auction import Allocation, AuctionOutcome, MalformedProfileError, Payments, ValuationProfile


@dataclass(frozen=True)
class ArchitectureSpec:
    n_hidden_layers: int = 5
    hidden_size: int = 100
    shared_trunk: bool = False
    # hidden layers owned by the trunk when shared_trunk is set
    trunk_layers: int = 3

    def __post_init__(self):
        if self.n_hidden_layers < 1 or self.hidden_size < 1:
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.shared_trunk and not 1 <= self.trunk_layers < self.n_hidden_layers:
            raise ValueError("trunk_layers must leave at least one hidden layer per head")


@dataclass
class MechanismForward:
    bids: np.ndarray
    alloc: np.ndarray  # (B, n+1, m)
    frac: np.ndarray  # (B, n)
    reported_value: np.ndarray  # (B, n), sum_j b_ij g_ij
    pay: np.ndarray  # (B, n)
    caches: dict
    features: np.ndarray = None


@dataclass(eq=False)
class MechanismParams:
    n_bidders: int
    n_items: int
    allocation_net: nn.DenseNet
    payment_net: nn.DenseNet
    spec: ArchitectureSpec
    trunk: nn.DenseNet = None

    def __post_init__(self):
        n, m = self.n_bidders, self.n_items
        width = self.trunk.n_outputs if self.trunk is not None else n * m
        if self.trunk is not None and self.trunk.n_inputs != n * m:
            raise ValueError("trunk input width must be n * m")
        if self.allocation_net.n_inputs != width or self.payment_net.n_inputs != width:
            raise ValueError("head input widths do not match")
        if self.allocation_net.n_outputs != (n + 1) * m or self.payment_net.n_outputs != n:
            raise ValueError("head output widths do not match the auction shape")
        if (self.trunk is not None) != self.spec.shared_trunk:
            raise ValueError("trunk presence must match spec.shared_trunk")

    @property
    def shape(self):
        return (self.n_bidders, self.n_items)

    @property
    def nets(self):
        out = {"allocation": self.allocation_net, "payment": self.payment_net}
        if self.trunk is not None:
            out["trunk"] = self.trunk
        return out

    def with_nets(self, nets):
        return MechanismParams(self.n_bidders, self.n_items, nets["allocation"], nets["payment"],
                               self.spec, nets.get("trunk"))

    def astype(self, dtype):
        return self.with_nets({k: v.astype(dtype) for k, v in self.nets.items()})

    def _check_bids(self, bids):
        bids = np.asarray(bids)
        if bids.ndim == 2:
            bids = bids[None]
        if bids.shape[1:] != self.shape:
            raise MalformedProfileError(f"bids {bids.shape[1:]} do not match mechanism {self.shape}")
        return bids

    def forward(self, bids):
        bids = self._check_bids(bids)
        B = bids.shape[0]
        n, m = self.shape
        x = bids.reshape(B, n * m)
        caches = {}
        features = None
        if self.trunk is not None:
            features, caches["trunk"] = nn.forward(self.trunk, x)
            x = features
        a, caches["allocation"] = nn.forward(self.allocation_net, x)
        frac, caches["payment"] = nn.forward(self.payment_net, x)
        alloc = a.reshape(B, n + 1, m)
        reported = np.sum(bids * alloc[:, :n], axis=2)
        return MechanismForward(bids, alloc, frac, reported, frac * reported, caches, features)

    def backward(self, fwd, d_alloc, d_pay, param_grads=True):
        """Pull cotangents on (allocation, payments) back to parameters and bids.

        Returns ``(grads, bid_grad)`` where ``grads`` maps net name to
        :class:`nn.Gradients` (``None`` when ``param_grads`` is false) and
        ``bid_grad`` has the shape of the bids.
        """
        n, m = self.shape
        B = fwd.bids.shape[0]
        d_alloc = np.array(d_alloc, dtype=fwd.alloc.dtype)
        d_frac = d_pay * fwd.reported_value
        scale = (d_pay * fwd.frac)[:, :, None]
        d_alloc[:, :n] += scale * fwd.bids
        bid_grad = scale * fwd.alloc[:, :n]
        ga = nn.backward(self.allocation_net, fwd.caches["allocation"],
                         d_alloc.reshape(B, (n + 1) * m), param_grads)
        gp = nn.backward(self.payment_net, fwd.caches["payment"], d_frac, param_grads)
        d_x = ga.input_grad + gp.input_grad
        grads = {"allocation": ga, "payment": gp} if param_grads else None
        if self.trunk is not None:
            gt = nn.backward(self.trunk, fwd.caches["trunk"], d_x, param_grads)
            d_x = gt.input_grad
            if param_grads:
                grads["trunk"] = gt
        return grads, bid_grad + d_x.reshape(B, n, m)

    # -- the mechanism interface used by the regret engine ------------------

    def outcome(self, bids):
        f = self.forward(bids)
        return f.alloc, f.pay

    def utility_grad(self, values, bids, bidder):
        """Utility of ``bidder[k]`` (true values ``values[k]``) under ``bids[k]``, and its
        gradient with respect to that bidder's own bid row."""
        f = self.forward(bids)
        B = f.bids.shape[0]
        rows = np.arange(B)
        u = np.sum(values * f.alloc[rows, bidder], axis=1) - f.pay[rows, bidder]
        d_alloc = np.zeros_like(f.alloc)
        d_alloc[rows, bidder] = values
        d_pay = np.zeros_like(f.pay)
        d_pay[rows, bidder] = -1.0
        _, g = self.backward(f, d_alloc, d_pay, param_grads=False)
        return u, g[rows, bidder]

    def utility(self, values, bids, bidder):
        alloc, pay = self.outcome(bids)
        rows = np.arange(alloc.shape[0])
        return np.sum(values * alloc[rows, bidder], axis=1) - pay[rows, bidder]


def init_mechanism(n_bidders, n_items, spec=None, seed=0):
    spec = spec or ArchitectureSpec()
    n, m = n_bidders, n_items
    h = spec.hidden_size
    trunk = None
    if spec.shared_trunk:
        trunk = nn.init_net([n * m] + [h] * spec.trunk_layers, "relu", seed, stream_id=2)
        head_in, head_hidden = h, spec.n_hidden_layers - spec.trunk_layers
    else:
        head_in, head_hidden = n * m, spec.n_hidden_layers
    alloc = nn.init_net([head_in] + [h] * head_hidden + [(n + 1) * m], "column-softmax", seed,
                        softmax_shape=(n + 1, m), stream_id=0)
    pay = nn.init_net([head_in] + [h] * head_hidden + [n], "sigmoid", seed, stream_id=1)
    return MechanismParams(n, m, alloc, pay, spec, trunk)


def zero_mechanism(n_bidders, n_items, spec=None):
    """All-zero parameters: uniform shares ``1/(n+1)`` and payment fraction 1/2."""
    spec = spec or ArchitectureSpec()
    mech = init_mechanism(n_bidders, n_items, spec, seed=0)
    return mech.with_nets({k: nn.zero_net(v.layer_sizes, v.output_activation, v.softmax_shape)
                           for k, v in mech.nets.items()})


def _as_bids(params, bids):
    b = bids.values if isinstance(bids, ValuationProfile) else np.asarray(bids, dtype=np.float64)
    if b.shape != params.shape:
        raise MalformedProfileError(f"bids {b.shape} do not match mechanism {params.shape}")
    return b


def allocate(params, bids):
    b = _as_bids(params, bids)
    return Allocation(params.forward(b).alloc[0])


def payments(params, bids, allocation):
    b = _as_bids(params, bids)
    f = params.forward(b)
    shares = allocation.shares if isinstance(allocation, Allocation) else np.asarray(allocation)
    if shares.shape != f.alloc.shape[1:]:
        raise MalformedProfileError("allocation does not match the bid profile")
    return Payments(f.frac[0] * np.sum(b * shares[:-1], axis=1))


def run_mechanism(params, bids):
    """Outcome for one profile, plus trunk features when the trunk is shared."""
    b = _as_bids(params, bids)
    f = params.forward(b)
    out = AuctionOutcome(Allocation(f.alloc[0]), Payments(f.pay[0]))
    return out, (f.features[0] if f.features is not None else None)


def utility_and_bid_gradient(params, true_values_row, bids, bidder):
    b = _as_bids(params, bids)
    u, g = params.utility_grad(np.asarray(true_values_row, float)[None], b[None],
                               np.array([bidder]))
    return float(u[0]), g[0]


# -- reference auctions ------------------------------------------------------

class _ItemwiseAuction:
    """Independent sealed-bid auction per item; tied top bids split the item equally."""

    def __init__(self, n_bidders, n_items=1):
        self.n_bidders = n_bidders
        self.n_items = n_items

    @property
    def shape(self):
        return (self.n_bidders, self.n_items)

    def _shares(self, bids):
        bids = np.asarray(bids, dtype=np.float64)
        if bids.ndim == 2:
            bids = bids[None]
        if bids.shape[1:] != self.shape:
            raise MalformedProfileError(f"bids {bids.shape[1:]} do not match auction {self.shape}")
        top = bids == bids.max(axis=1, keepdims=True)
        return bids, top / top.sum(axis=1, keepdims=True)

    def _price(self, bids):
        raise NotImplementedError

    def outcome(self, bids):
        """``(alloc, pay)``: a winner pays its share of the item's price."""
        bids, shares = self._shares(bids)
        B, n, m = bids.shape
        alloc = np.zeros((B, n + 1, m))
        alloc[:, :n] = shares
        pay = np.sum(shares * self._price(bids), axis=2)
        return alloc, pay

    def utility(self, values, bids, bidder):
        alloc, pay = self.outcome(bids)
        rows = np.arange(alloc.shape[0])
        return np.sum(values * alloc[rows, bidder], axis=1) - pay[rows, bidder]

    def utility_grad(self, values, bids, bidder):
        bids = np.asarray(bids, dtype=np.float64)
        u = self.utility(values, bids, bidder)
        return u, self._own_grad(bids, bidder)


class SecondPriceAuction(_ItemwiseAuction):
    """Per-item Vickrey auction; with additive values this is VCG, hence strategy-proof."""

    def _price(self, bids):
        if self.n_bidders == 1:
            return np.zeros_like(bids)
        # highest competing bid, for each bidder and item
        top2 = np.sort(bids, axis=1)[:, -2:, :]
        return np.where(bids == top2[:, 1:], top2[:, :1], top2[:, 1:])

    def _own_grad(self, bids, bidder):
        # the price never depends on the winner's own bid
        return np.zeros((bids.shape[0], self.n_items))


class FirstPriceAuction(_ItemwiseAuction):
    """Per-item pay-your-bid auction."""

    def _price(self, bids):
        return bids

    def _own_grad(self, bids, bidder):
        bids, shares = self._shares(bids)
        return -shares[np.arange(bids.shape[0]), np.asarray(bidder)]


def save_mechanism(path, params):
    meta = {"kind": "mechanism", "n_bidders": params.n_bidders, "n_items": params.n_items,
            "architecture": asdict(params.spec)}
    nn.save_checkpoint(path, params.nets, meta)


def load_mechanism(path):
    nets, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "mechanism":
        raise ValueError(f"{path} does not hold a mechanism")
    return MechanismParams(meta["n_bidders"], meta["n_items"], nets["allocation"], nets["payment"],
                           ArchitectureSpec(**meta["architecture"]), nets.get("trunk"))
