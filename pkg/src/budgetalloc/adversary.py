"""Adaptive lower-bound drivers and the two-branch introductory scenario.

Each driver builds a static skeleton (bidder, dimensions, budgets), then
feeds impressions to a live session and decides what to send next from the
session's answers. The impressions actually sent, together with the
analytic optimum, form the transcript.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .core import (
    GENERAL,
    Bidder,
    BudgetConstraint,
    Impression,
    Instance,
    Q,
    constraint_multiplicity,
    parse_money,
    small_bids_threshold,
)

BIDDER = "u0"


@dataclass
class Transcript:
    kind: str
    instance: Instance
    alg_revenue: Fraction
    opt_analytic: Fraction
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        if self.alg_revenue == 0:
            return math.inf if self.opt_analytic > 0 else 1.0
        return float(self.opt_analytic) / float(self.alg_revenue)

    def metadata(self) -> dict:
        """JSON-ready block stored next to the instance so offline tools can find OPT."""
        return {
            "kind": self.kind,
            "opt_analytic": str(self.opt_analytic),
            "alg_revenue": str(self.alg_revenue),
            "params": {k: str(v) for k, v in self.params.items()},
        }


def _log2_exact(n: int) -> int:
    if n < 1 or n & (n - 1):
        raise ValueError(f"{n} is not a power of two")
    return n.bit_length() - 1


# --------------------------------------------------------------------------
# admission control on a line graph


def admission_dim(i: int, j: int) -> int:
    """Dimension of group j in phase i."""
    return (1 << i) - 1 + j


def admission_skeleton(n: int) -> Instance:
    """One bidder; one dimension per (phase, group); one unit budget per line-graph edge."""
    lg = _log2_exact(n)
    cons = []
    for e in range(n):
        dims = tuple(admission_dim(i, e * (1 << i) // n) for i in range(lg + 1))
        cons.append(BudgetConstraint(f"e{e}", dims, Q(1)))
    inst = Instance(2 * n - 1, (Bidder(BIDDER, tuple(cons)),), (), GENERAL)
    if constraint_multiplicity(inst) != n:
        raise AssertionError("admission reduction must have p = n")
    return inst


def default_admission_delta(n: int) -> Fraction:
    return Fraction(1, math.ceil(4 * n * math.log2(2 * n + 2)))


def run_admission_lb(n: int, session_factory, delta=None, *, fractional: bool = False) -> Transcript:
    """Phases 0..lg n of path requests; stop after the first phase k with S_k <= 2/lg n.

    ``session_factory(skeleton, eps)`` must return a fresh session. With
    ``fractional`` every group is a single unit-demand request.
    """
    lg = _log2_exact(n)
    if lg < 2:
        raise ValueError("n must be a power of two >= 4")
    skeleton = admission_skeleton(n)
    if fractional:
        delta = Q(1)
        copies = 1
    else:
        delta = parse_money(delta if delta is not None else default_admission_delta(n))
        if delta <= 0 or delta > small_bids_threshold(n):
            raise ValueError("delta must lie in (0, 1/lg(2n+2)]")
        if (1 / delta).denominator != 1:
            raise ValueError("1/delta must be an integer")
        copies = int(1 / delta)
    session = session_factory(skeleton, delta)
    x = []
    stop = None
    threshold = Q(2, lg)
    for i in range(lg + 1):
        earned = Q(0)
        for j in range(1 << i):
            k = admission_dim(i, j)
            for c in range(copies):
                d = session.offer(Impression(f"p{i}g{j}r{c}", {BIDDER: {k: delta}}))
                earned += d.total
        x.append(earned)
        s_k = sum(x, Q(0)) / (1 << i)
        if s_k <= threshold:
            stop = i
            break
    if stop is None:
        raise AssertionError("no stopping phase although the capacity bound forces one")
    load = sum((xi / (1 << i) for i, xi in enumerate(x)), Q(0))
    if load > 1:
        raise AssertionError(f"capacity bound broken: sum 2^-i x_i = {load}")
    inst = skeleton.with_impressions(session.offered)
    alg = session.state.primal_total
    return Transcript(
        "admission", inst, alg, Q(1 << stop),
        params={"n": n, "delta": delta, "fractional": fractional},
        details={"x": x, "stop_phase": stop, "load": load, "session": session},
    )


# --------------------------------------------------------------------------
# hierarchical all-or-nothing instance


@dataclass(frozen=True)
class AonLayout:
    p: int
    eps: Fraction
    ell: int
    branch: int  # p ** (1/ell)
    per_block: int  # impressions per block
    dims: dict  # (level, segment, copy) -> dimension; (-1, 0, 0) is the initial impression

    def segment_size(self, level: int) -> int:
        return self.branch ** (self.ell - level)

    def members(self, level: int, seg: int) -> range:
        size = self.segment_size(level)
        return range(seg * size, (seg + 1) * size)

    def children(self, level: int, seg: int, target: int) -> range:
        """Segments of level ``target`` refining segment ``seg`` of ``level``."""
        f = self.branch ** (target - level)
        return range(seg * f, (seg + 1) * f)


def aon_layout(p: int, eps) -> AonLayout:
    eps = parse_money(eps)
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    ell_q = (1 - eps) / eps
    if ell_q.denominator != 1 or ell_q < 1:
        raise ValueError("(1 - eps)/eps must be a positive integer")
    ell = int(ell_q)
    branch = round(p ** (1.0 / ell))
    if branch ** ell != p or branch < 2:
        raise ValueError("p ** (eps/(1-eps)) must be an integer >= 2")
    # 1/eps = ell + 1, so eps > 1/lg(2p) is the integer test 2p > 2^(ell+1)
    if 2 * p <= 2 ** (ell + 1):
        raise ValueError("eps must exceed 1/lg(2p)")
    per_block = int(1 / eps)
    dims = {(-1, 0, 0): 0}
    nxt = 1
    for level in range(ell + 1):
        for seg in range(branch ** level):
            for c in range(per_block):
                dims[(level, seg, c)] = nxt
                nxt += 1
    return AonLayout(p, eps, ell, branch, per_block, dims)


def aon_skeleton(layout: AonLayout) -> Instance:
    members: list[list[int]] = [[0] for _ in range(layout.p)]
    for (level, seg, c), k in layout.dims.items():
        if level < 0:
            continue
        for s in layout.members(level, seg):
            members[s].append(k)
    cons = tuple(BudgetConstraint(f"c{s}", tuple(ds), Q(1)) for s, ds in enumerate(members))
    return Instance(len(layout.dims), (Bidder(BIDDER, cons),), (), GENERAL)


def run_aon_lb(p: int, eps, delta, session_factory) -> Transcript:
    """Initial delta impression, then rounds 0..ell of blocks on active segments."""
    layout = aon_layout(p, eps)
    eps = layout.eps
    delta = parse_money(delta)
    if not 0 < delta < eps:
        raise ValueError("delta must lie in (0, eps)")
    skeleton = aon_skeleton(layout)
    session = session_factory(skeleton, eps)
    first = session.offer(Impression("init", {BIDDER: {0: delta}}))
    base = delta if first.bidder is not None else Q(0)
    state = session.state
    # share of the algorithm's revenue attributed to each constraint
    share = [Q(0)] * p
    delta_share = [Q(0)] * p
    if first.bidder is not None:
        for s in range(p):
            delta_share[s] = delta / p
    active = {0: {0}}
    last: dict[int, tuple[int, int]] = {}
    utilization_checks = []
    for level in range(layout.ell + 1):
        for seg in sorted(active.get(level, ())):
            want = eps * level + base
            seen = {state.used(0, s) for s in layout.members(level, seg)}
            if seen != {want}:
                raise AssertionError(
                    f"segment {seg} of level {level}: utilization {sorted(seen)} != {want}"
                )
            utilization_checks.append((level, seg, want))
            for s in layout.members(level, seg):
                last[s] = (level, seg)
            accepted = 0
            for c in range(layout.per_block):
                k = layout.dims[(level, seg, c)]
                d = session.offer(Impression(f"r{level}s{seg}i{c}", {BIDDER: {k: eps}}))
                if d.bidder is not None and d.total:
                    accepted += 1
                    size = layout.segment_size(level)
                    for s in layout.members(level, seg):
                        share[s] += d.total / size
            if accepted:
                target = level + accepted
                if target > layout.ell:
                    raise AssertionError("activation beyond the last level")
                active.setdefault(target, set()).update(layout.children(level, seg, target))
    cells = sorted(set(last.values()))
    block_value = eps * layout.per_block
    opt = block_value * len(cells)
    bound = 2 * eps / layout.branch
    seg_revenue = {}
    violations = []
    for cell in cells:
        rev = sum((share[s] for s in layout.members(*cell)), Q(0))
        dshare = sum((delta_share[s] for s in layout.members(*cell)), Q(0))
        seg_revenue[cell] = (rev, dshare)
        if rev > bound:
            violations.append((cell, rev))
    inst = skeleton.with_impressions(session.offered)
    return Transcript(
        "aon", inst, state.primal_total, opt,
        params={"p": p, "eps": eps, "delta": delta},
        details={
            "cells": cells,
            "segment_revenue": seg_revenue,
            "segment_bound": bound,
            "violations": violations,
            "utilization_checks": utilization_checks,
            "session": session,
        },
    )


# --------------------------------------------------------------------------
# two-branch introductory scenario


def intro_scenarios(delta=None) -> tuple[Instance, Instance]:
    """Instances A and B: unit budgets on dims {1,2} and {2,3}; dim 0 is unused.

    A offers the dim-2 impression and then impressions on dims 1 and 3; B stops
    after the dim-2 impression. With ``delta`` every unit impression becomes
    1/delta impressions worth delta.
    """
    bidder = Bidder(BIDDER, (BudgetConstraint("b12", (1, 2), Q(1)), BudgetConstraint("b23", (2, 3), Q(1))))
    if delta is None:
        unit, copies = Q(1), 1
    else:
        unit = parse_money(delta)
        if (1 / unit).denominator != 1:
            raise ValueError("1/delta must be an integer")
        copies = int(1 / unit)

    def stream(k: int, tag: str):
        return [Impression(f"{tag}{c}", {BIDDER: {k: unit}}) for c in range(copies)]

    first = stream(2, "m")
    a = Instance(4, (bidder,), tuple(first + stream(1, "l") + stream(3, "r")), GENERAL)
    b = Instance(4, (bidder,), tuple(first), GENERAL)
    return a, b
