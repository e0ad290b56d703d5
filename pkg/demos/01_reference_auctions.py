"""
Regret of two textbook auctions
===============================

A second-price auction is strategy-proof, so no misreport helps. In a
first-price auction the high bidder gains by shading its bid down to the
competing bid. The gradient search and the exhaustive grid agree on both.
"""

import numpy as np

from confauction import auction, regret
from confauction.mechanism import FirstPriceAuction, SecondPriceAuction

v = np.array([[1.0], [0.5]])  # bidder 0 values the item at 1.0, bidder 1 at 0.5

# second price: truthful bidding is optimal
sp = SecondPriceAuction(2, 1)
print("second price, grid regret of bidder 0:", regret.grid_oracle_regret(sp, v, 0, 1e-3))

# first price: bidder 0 pays its bid, so bidding just above 0.5 is best
fp = FirstPriceAuction(2, 1)
print("first price, grid regret of bidder 0:", regret.grid_oracle_regret(fp, v, 0, 1e-3))

# the same answer from projected gradient ascent, walking the bid down from 1.0
walk = regret.MisreportSearchConfig(learning_rate=1e-3, iterations=1000, initializations=1)
bid, gain = regret.optimize_misreport(fp, v, 0, walk)
print(f"first price, ascent: best bid {bid[0]:.4f}, gain {gain:.4f}")

# many random two-item profiles: second price never has regret
values = auction.sample_values(auction.AuctionConfig(3, 2), 200, seed=0)
batch = regret.regret_batch(SecondPriceAuction(3, 2), values, regret.TRAIN_SEARCH)
print("second price, largest regret over 200 profiles:", batch.per_bidder.max())
