"""Seeded random instances.

Bids are multiples of 2^-20 and budgets multiples of 1/4, so the exact
arithmetic downstream stays cheap.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from .core import (
    GENERAL,
    LAMINAR,
    Bidder,
    BudgetConstraint,
    Impression,
    Instance,
    small_bids_threshold,
)

BID_GRID = 2**20


@dataclass(frozen=True)
class RandomInstanceSpec:
    mode: str = LAMINAR
    bidders: int = 3
    dims: int | None = None  # laminar default: branching ** (depth - 1)
    depth: int = 3
    branching: int = 4
    p: int = 2  # general mode: constraints per dimension
    impressions: int = 100
    bid_ratio: Fraction | None = None  # cap on bid-to-budget ratio
    bid_scale: Fraction = Fraction(1, 2)  # used when bid_ratio is None: fraction of the small-bids threshold
    max_bid_dims: int = 2
    seed: int = 0

    def num_dims(self) -> int:
        if self.dims is not None:
            return self.dims
        if self.mode == LAMINAR:
            return self.branching ** (self.depth - 1)
        return 8


def _budget(rng: random.Random, lo: int = 4, hi: int = 40) -> Fraction:
    return Fraction(rng.randint(lo, hi), 4)


def _split(items: list, parts: int) -> list[list]:
    parts = max(1, min(parts, len(items)))
    q, r = divmod(len(items), parts)
    out, i = [], 0
    for j in range(parts):
        n = q + (1 if j < r else 0)
        out.append(items[i:i + n])
        i += n
    return out


def laminar_tree(rng: random.Random, dims: list[int], depth: int, branching: int,
                 prefix: str = "") -> list[BudgetConstraint]:
    """Balanced laminar hierarchy with singleton leaves.

    Leaf budgets are random; an interior budget is a random fraction of the
    sum below it so interior budgets are the ones that tend to bind.
    """
    out: list[BudgetConstraint] = []

    def build(ds: list[int], level: int) -> Fraction:
        if len(ds) == 1:
            b = _budget(rng)
            out.append(BudgetConstraint(f"{prefix}s{ds[0]}", tuple(ds), b))
            return b
        if level + 1 < depth:
            groups = _split(ds, branching)
        else:
            groups = [[k] for k in ds]
        below = sum((build(g, level + 1) for g in groups), Fraction(0))
        frac = Fraction(rng.randint(10, 40), 100)
        b = max(Fraction(1, 4), Fraction(int(below * frac * 4), 4))
        out.append(BudgetConstraint(f"{prefix}n{ds[0]}-{ds[-1]}", tuple(ds), b))
        return b

    build(list(dims), 0)
    return out


def random_forest(rng: random.Random, max_dims: int = 12, max_depth: int = 4) -> list[BudgetConstraint]:
    """Irregular laminar family: several roots, uneven splits, random depth <= max_depth."""
    n = rng.randint(1, max_dims)
    dims = list(range(n))
    out: list[BudgetConstraint] = []

    def budget():
        return Fraction(rng.randint(1, 20), rng.choice([1, 2, 4]))

    def build(ds: list[int], level: int):
        out.append(BudgetConstraint(f"c{len(out)}", tuple(ds), budget()))
        if len(ds) == 1:
            return
        if level + 1 >= max_depth - 1 or rng.random() < 0.25:
            for k in ds:
                out.append(BudgetConstraint(f"c{len(out)}", (k,), budget()))
            return
        ds = ds[:]
        rng.shuffle(ds)
        cuts = sorted(rng.sample(range(1, len(ds)), min(len(ds) - 1, rng.randint(1, 3))))
        for a, b in zip([0] + cuts, cuts + [len(ds)]):
            build(ds[a:b], level + 1)

    rng.shuffle(dims)
    roots = rng.randint(1, min(3, n))
    cuts = sorted(rng.sample(range(1, n), roots - 1)) if roots > 1 else []
    for a, b in zip([0] + cuts, cuts + [n]):
        build(dims[a:b], 0)
    return out


def general_constraints(rng: random.Random, dims: int, p: int, prefix: str = "") -> list[BudgetConstraint]:
    """p layers, each a random partition of the dimensions into groups."""
    out = []
    for layer in range(p):
        order = list(range(dims))
        rng.shuffle(order)
        groups = _split(order, rng.randint(1, max(1, dims // 2)))
        for j, g in enumerate(groups):
            out.append(BudgetConstraint(f"{prefix}L{layer}g{j}", tuple(g), _budget(rng)))
    return out


def _bid_cap(constraints: list[BudgetConstraint], k: int) -> Fraction:
    return min(c.budget for c in constraints if k in c.dims)


def generate(spec: RandomInstanceSpec) -> Instance:
    rng = random.Random(spec.seed)
    n = spec.num_dims()
    bidders = []
    for u in range(spec.bidders):
        if spec.mode == LAMINAR:
            cons = laminar_tree(rng, list(range(n)), spec.depth, spec.branching)
        elif spec.mode == GENERAL:
            cons = general_constraints(rng, n, spec.p)
        else:
            raise ValueError(f"unknown mode {spec.mode!r}")
        bidders.append(Bidder(f"u{u}", tuple(cons)))
    if spec.bid_ratio is not None:
        ratio = Fraction(spec.bid_ratio)
    else:
        p = spec.depth if spec.mode == LAMINAR else spec.p
        ratio = spec.bid_scale * small_bids_threshold(p)
    caps = [{k: _bid_cap(list(b.constraints), k) for k in range(n)} for b in bidders]
    impressions = []
    for i in range(spec.impressions):
        bids = {}
        for u, b in enumerate(bidders):
            if rng.random() < 0.2:
                continue
            m = rng.randint(1, min(spec.max_bid_dims, n))
            row = {}
            for k in sorted(rng.sample(range(n), m)):
                cap = ratio * caps[u][k] / m
                r = Fraction(int(cap * BID_GRID * Fraction(rng.randint(300, 1000), 1000)), BID_GRID)
                if r > 0:
                    row[k] = r
            if row:
                bids[b.id] = row
        impressions.append(Impression(f"v{i}", bids))
    return Instance(n, tuple(bidders), tuple(impressions), spec.mode)
