"""Offline optimum: fractional LP, exhaustive integral search, and the analytic value of generated lower bounds."""

from __future__ import annotations

import json
from typing import Iterable

from .core import LAMINAR, Impression, Instance, Q, parse_money
from .simplex import LPResult, solve

BRUTE_MAX_IMPRESSIONS = 12
BRUTE_MAX_BIDDERS = 4


class OracleLimitExceeded(ValueError):
    pass


class NotGeneratedTranscript(ValueError):
    pass


def _group_impressions(impressions: Iterable[Impression]) -> list[tuple[dict, int]]:
    """Identical impressions collapse into one bid table with a multiplicity."""
    groups: dict[tuple, list] = {}
    for v in impressions:
        key = tuple(sorted(
            (bid, tuple(sorted((k, r) for k, r in row.items() if r > 0)))
            for bid, row in v.bids.items()
        ))
        key = tuple(item for item in key if item[1])
        if not key:
            continue
        if key in groups:
            groups[key][1] += 1
        else:
            groups[key] = [{bid: dict(row) for bid, row in key}, 1]
    return [(bids, m) for bids, m in groups.values()]


def build_offline_lp(instance: Instance):
    """Assignment LP with partial earnings.

    Per impression class (identical impressions merged, multiplicity m) and
    bidder: one variable x for how much of the class goes to the bidder and,
    when the bidder bids on several dimensions, one earning variable per
    dimension bounded by bid * x. A single-dimension bid earns bid * x
    directly.
    """
    uidx = {b.id: u for u, b in enumerate(instance.bidders)}
    c: list = []
    rows: list[dict] = []
    b: list = []
    budget_row: dict[tuple[int, int], int] = {}
    for u, bidder in enumerate(instance.bidders):
        for s, con in enumerate(bidder.constraints):
            budget_row[(u, s)] = len(rows)
            rows.append({})
            b.append(con.budget)
    containing = []
    for bidder in instance.bidders:
        idx: dict[int, list[int]] = {}
        for s, con in enumerate(bidder.constraints):
            for k in con.dims:
                idx.setdefault(k, []).append(s)
        containing.append(idx)
    for bids, mult in _group_impressions(instance.impressions):
        imp_row = {}
        for bid_id, row in sorted(bids.items()):
            u = uidx[bid_id]
            x = len(c)
            if len(row) == 1:
                ((k, r),) = row.items()
                c.append(r)
                for s in containing[u].get(k, ()):
                    rows[budget_row[(u, s)]][x] = r
            else:
                c.append(Q(0))
                for k, r in sorted(row.items()):
                    e = len(c)
                    c.append(Q(1))
                    rows.append({e: Q(1), x: -r})
                    b.append(Q(0))
                    for s in containing[u].get(k, ()):
                        rows[budget_row[(u, s)]][e] = Q(1)
            imp_row[x] = Q(1)
        rows.append(imp_row)
        b.append(Q(mult))
    return c, rows, b


def solve_offline_lp(instance: Instance) -> LPResult:
    c, rows, b = build_offline_lp(instance)
    if not c:
        return LPResult(Q(0), [], 0, True)
    return solve(c, rows, b)


def opt_lp(instance: Instance):
    """Fractional optimum (exact rational unless the float fallback kicked in)."""
    return solve_offline_lp(instance).value


# --------------------------------------------------------------------------
# exhaustive search


def _laminar_fill(constraints, caps: dict[int, object]) -> object:
    """Largest total under per-dimension caps and laminar budgets."""
    e = dict(caps)
    order = sorted(range(len(constraints)), key=lambda s: (len(constraints[s].dims), s))
    for s in order:
        dims = [k for k in constraints[s].dims if k in e]
        excess = sum((e[k] for k in dims), Q(0)) - constraints[s].budget
        for k in sorted(dims, reverse=True):
            if excess <= 0:
                break
            cut = min(excess, e[k])
            e[k] -= cut
            excess -= cut
    return sum(e.values(), Q(0))


def _general_fill(constraints, caps: dict[int, object]) -> object:
    dims = sorted(caps)
    col = {k: i for i, k in enumerate(dims)}
    rows, b = [], []
    for k in dims:
        rows.append({col[k]: Q(1)})
        b.append(caps[k])
    for con in constraints:
        r = {col[k]: Q(1) for k in con.dims if k in col}
        if r:
            rows.append(r)
            b.append(con.budget)
    return solve([Q(1)] * len(dims), rows, b).value


def opt_brute(instance: Instance, semantics: str = "partial"):
    """Best integral assignment (each impression to one bidder or nobody)."""
    if semantics not in ("partial", "aon"):
        raise ValueError(f"unknown semantics {semantics!r}")
    V = list(instance.impressions)
    U = instance.bidders
    if len(V) > BRUTE_MAX_IMPRESSIONS or len(U) > BRUTE_MAX_BIDDERS:
        raise OracleLimitExceeded(
            f"instance too large for exhaustive search ({len(V)} impressions, {len(U)} bidders)"
        )
    nv = len(V)
    full = (1 << nv) - 1
    neg = None  # marks an infeasible all-or-nothing bundle

    def bundle_value(u: int, mask: int):
        bidder = U[u]
        caps: dict[int, object] = {}
        for i in range(nv):
            if mask >> i & 1:
                for k, r in V[i].bid_row(bidder.id).items():
                    if r > 0:
                        caps[k] = caps.get(k, Q(0)) + r
        total = sum(caps.values(), Q(0))
        fits = all(
            sum((caps.get(k, 0) for k in con.dims), Q(0)) <= con.budget
            for con in bidder.constraints
        )
        if semantics == "aon":
            return total if fits else neg
        if fits:
            return total
        if instance.mode == LAMINAR:
            return _laminar_fill(bidder.constraints, caps)
        return _general_fill(bidder.constraints, caps)

    prev = [Q(0)] * (full + 1)  # best over bidders < u using exactly the impressions in mask
    for u in range(len(U)):
        vals = [bundle_value(u, m) for m in range(full + 1)]
        cur = list(prev)
        for mask in range(full + 1):
            sub = mask
            while sub:
                val = vals[sub]
                if val is not None and prev[mask ^ sub] is not None:
                    cand = prev[mask ^ sub] + val
                    if cand > cur[mask]:
                        cur[mask] = cand
                sub = (sub - 1) & mask
        prev = cur
    return max(prev)


# --------------------------------------------------------------------------
# analytic optimum of generated lower bounds


def opt_analytic(transcript):
    """OPT recorded by an adversary run (a Transcript or its JSON metadata)."""
    from .adversary import Transcript

    if isinstance(transcript, Transcript):
        return transcript.opt_analytic
    meta = None
    if isinstance(transcript, dict):
        meta = transcript.get("transcript")
    elif isinstance(transcript, str):
        meta = json.loads(transcript).get("transcript")
    if not meta or "opt_analytic" not in meta:
        raise NotGeneratedTranscript("not a generated transcript")
    return parse_money(meta["opt_analytic"])
