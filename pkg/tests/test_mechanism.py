import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confauction import auction
from confauction.auction import Allocation, MalformedProfileError, ValuationProfile
from confauction.mechanism import (ArchitectureSpec, FirstPriceAuction, SecondPriceAuction,
                                   allocate, init_mechanism, load_mechanism, payments,
                                   run_mechanism, save_mechanism, utility_and_bid_gradient,
                                   zero_mechanism)

from oracles import mechanism_fd_error


def test_allocation_columns_sum_to_one(small_mech):
    for v in auction.sample_values(auction.AuctionConfig(2, 2), 20, 0):
        shares = allocate(small_mech, v).shares
        np.testing.assert_allclose(shares.sum(axis=0), 1.0, atol=1e-6)


def test_zero_mechanism_uniform_shares_and_half_payment():
    mech = zero_mechanism(3, 2, ArchitectureSpec(2, 8))
    b = np.array([[0.2, 0.9], [0.4, 0.4], [0.0, 1.0]])
    alloc = allocate(mech, b)
    np.testing.assert_allclose(alloc.shares, 0.25)
    p = payments(mech, b, alloc).amounts
    np.testing.assert_allclose(p, 0.5 * b.sum(axis=1) * 0.25)


def test_identical_rows_get_identical_shares():
    mech = zero_mechanism(2, 3, ArchitectureSpec(2, 8))
    shares = allocate(mech, np.array([[0.3, 0.6, 0.1]] * 2)).shares
    assert np.array_equal(shares[0], shares[1])


def test_bidder_without_allocation_pays_nothing(small_mech):
    b = np.array([[0.7, 0.4], [0.5, 0.9]])
    alloc = Allocation(np.array([[0.0, 0.0], [0.6, 1.0], [0.4, 0.0]]))
    p = payments(small_mech, b, alloc).amounts
    assert p[0] == 0.0 and p[1] > 0


def test_zero_mechanism_example():
    mech = zero_mechanism(2, 2)
    out, feats = run_mechanism(mech, np.full((2, 2), 0.8))
    np.testing.assert_allclose(out.allocation.shares, 1 / 3)
    np.testing.assert_allclose(out.payments.amounts, 0.5 * 0.8 * 2 / 3)
    assert feats is None


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 3), st.integers(1, 3))
def test_outcomes_feasible_and_ir(seed, n, m):
    mech = init_mechanism(n, m, ArchitectureSpec(2, 10), seed=seed)
    for v in auction.sample_values(auction.AuctionConfig(n, m), 5, seed):
        out, _ = run_mechanism(mech, v)
        assert auction.check_feasible(out.allocation)
        assert auction.check_ir(out, ValuationProfile(v))


def test_run_is_deterministic(small_mech):
    b = np.array([[0.1, 0.2], [0.3, 0.4]])
    a1, _ = run_mechanism(small_mech, b)
    a2, _ = run_mechanism(small_mech, b)
    assert np.array_equal(a1.allocation.shares, a2.allocation.shares)
    assert np.array_equal(a1.payments.amounts, a2.payments.amounts)


def test_shared_trunk_features(shared_mech):
    out, feats = run_mechanism(shared_mech, np.full((2, 3), 0.5))
    assert feats.shape == (12,) and np.all(feats >= 0)
    assert set(shared_mech.nets) == {"allocation", "payment", "trunk"}


def test_truthful_utility_matches_definition(small_mech):
    v = np.array([[0.9, 0.1], [0.4, 0.6]])
    out, _ = run_mechanism(small_mech, v)
    for i in range(2):
        u, _ = utility_and_bid_gradient(small_mech, v[i], v, i)
        expected = auction.utility(v[i], out.allocation.shares[i], out.payments.amounts[i])
        assert u == pytest.approx(expected, abs=1e-12)


def test_zero_mechanism_bid_gradient_closed_form():
    # shares 1/(n+1) and fraction 1/2 are constant, so u = sum v/(n+1) - sum b/(2(n+1))
    mech = zero_mechanism(2, 3)
    v = np.array([0.9, 0.2, 0.5])
    b = np.array([[0.3, 0.3, 0.3], [0.6, 0.1, 0.8]])
    u, g = utility_and_bid_gradient(mech, v, b, 0)
    assert u == pytest.approx(v.sum() / 3 - b[0].sum() / 6)
    np.testing.assert_allclose(g, -1 / 6)


@pytest.mark.parametrize("seed", range(3))
def test_bid_gradient_finite_differences(seed):
    mech = init_mechanism(2, 2, ArchitectureSpec(3, 16), seed=seed)
    gen = np.random.default_rng(seed)
    v, b = gen.uniform(size=2), gen.uniform(size=(2, 2))
    h = 1e-6
    _, g = utility_and_bid_gradient(mech, v, b, 1)
    for j in range(2):
        bp, bm = b.copy(), b.copy()
        bp[1, j] += h
        bm[1, j] -= h
        num = (utility_and_bid_gradient(mech, v, bp, 1)[0]
               - utility_and_bid_gradient(mech, v, bm, 1)[0]) / (2 * h)
        assert abs(num - g[j]) <= 1e-4 * max(abs(num), abs(g[j]), 1e-6)


@pytest.mark.parametrize("spec", [ArchitectureSpec(2, 6),
                                  ArchitectureSpec(3, 5, shared_trunk=True, trunk_layers=1)])
def test_mechanism_gradients_finite_differences(spec):
    mech = init_mechanism(2, 2, spec, seed=4)
    bids = np.random.default_rng(0).uniform(size=(3, 2, 2))
    err, checked, skipped = mechanism_fd_error(mech, bids)
    assert err < 1e-4
    assert checked > 10 * max(skipped, 1)


def test_shape_errors(small_mech):
    with pytest.raises(MalformedProfileError):
        run_mechanism(small_mech, np.zeros((3, 2)))
    with pytest.raises(MalformedProfileError):
        utility_and_bid_gradient(small_mech, [0.1, 0.2], np.zeros((2, 3)), 0)


def test_mechanism_checkpoint_round_trip(tmp_path, shared_mech):
    path = tmp_path / "m.ckpt"
    save_mechanism(path, shared_mech)
    back = load_mechanism(path)
    assert back.shape == shared_mech.shape and back.spec == shared_mech.spec
    b = np.random.default_rng(1).uniform(size=(4, 2, 3))
    assert np.array_equal(back.forward(b).pay, shared_mech.forward(b).pay)
    save_mechanism(tmp_path / "again.ckpt", back)
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_second_price_outcome():
    alloc, pay = SecondPriceAuction(3, 2).outcome(np.array([[0.9, 0.1], [0.5, 0.7], [0.2, 0.3]]))
    np.testing.assert_array_equal(alloc[0, :3], [[1, 0], [0, 1], [0, 0]])
    np.testing.assert_allclose(pay[0], [0.5, 0.3, 0.0])


def test_tied_bids_split_the_item():
    alloc, pay = FirstPriceAuction(2, 1).outcome(np.array([[0.5], [0.5]]))
    np.testing.assert_allclose(alloc[0, :2, 0], [0.5, 0.5])
    np.testing.assert_allclose(pay[0], [0.25, 0.25])


def test_first_price_gradient():
    fp = FirstPriceAuction(2, 2)
    bids = np.array([[[0.9, 0.1], [0.5, 0.7]]])
    u, g = fp.utility_grad(np.array([[1.0, 1.0]]), bids, np.array([0]))
    assert u[0] == pytest.approx(0.1)
    np.testing.assert_allclose(g[0], [-1.0, 0.0])
