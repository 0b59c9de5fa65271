"""Small builders shared by the test modules."""

from budgetalloc.core import LAMINAR, Bidder, BudgetConstraint, Impression, Instance


def single_bidder(constraints, impressions=(), mode=LAMINAR, dims=None, bidder="u0"):
    cons = tuple(BudgetConstraint(cid, ds, b) for cid, ds, b in constraints)
    n = dims if dims is not None else 1 + max(k for _, ds, _ in constraints for k in ds)
    return Instance(n, (Bidder(bidder, cons),), tuple(impressions), mode)


def imp(vid, **bids):
    """imp("v1", u0={1: "1/2"}) builds an impression."""
    return Impression(vid, bids)
