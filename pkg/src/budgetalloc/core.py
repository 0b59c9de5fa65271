"""Instance model, exact money arithmetic and the mutable allocation ledger.

All money (bids, budgets, earned revenue) is held as an exact rational
(``gmpy2.mpq``, which interoperates with :class:`fractions.Fraction`).
Budget-capacity comparisons are therefore exact, which the label engine and
the capacity audits rely on.
"""

from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

import gmpy2

Q = gmpy2.mpq
_MPQ = type(Q(0))

LAMINAR = "laminar"
GENERAL = "general"
MODES = (LAMINAR, GENERAL)


class BudgetOverflow(ValueError):
    """Earning would push some constraint past its budget."""


class UnknownConstraint(KeyError):
    pass


def parse_money(value) -> Q:
    """Parse ``"0.25"``, ``"1/4"``, an int or any exact rational. Floats are rejected."""
    if type(value) is _MPQ:
        return value
    if isinstance(value, (bool, float)):
        raise TypeError(f"money must be a string or int, got {value!r}")
    if isinstance(value, numbers.Rational):
        return Q(value.numerator, value.denominator)
    f = Fraction(str(value).strip())
    return Q(f.numerator, f.denominator)


def format_money(value) -> str:
    return str(Fraction(value.numerator, value.denominator))


@dataclass(frozen=True)
class BudgetConstraint:
    id: str
    dims: tuple[int, ...]
    budget: Fraction

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(sorted(set(self.dims))))
        object.__setattr__(self, "budget", parse_money(self.budget))

    @property
    def dimset(self) -> frozenset[int]:
        return frozenset(self.dims)


@dataclass(frozen=True)
class Bidder:
    id: str
    constraints: tuple[BudgetConstraint, ...]

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def constraint_index(self, constraint_id: str) -> int:
        for i, c in enumerate(self.constraints):
            if c.id == constraint_id:
                return i
        raise UnknownConstraint(f"bidder {self.id!r} has no constraint {constraint_id!r}")


@dataclass(frozen=True)
class Impression:
    id: str
    bids: Mapping[str, Mapping[int, Fraction]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for bidder_id, row in self.bids.items():
            clean[bidder_id] = {int(k): parse_money(r) for k, r in row.items()}
        object.__setattr__(self, "bids", clean)

    def bid_row(self, bidder_id: str) -> Mapping[int, Fraction]:
        return self.bids.get(bidder_id, {})

    def bid(self, bidder_id: str, dim: int) -> Fraction:
        return self.bids.get(bidder_id, {}).get(dim, Q(0))


@dataclass(frozen=True)
class Instance:
    num_dimensions: int
    bidders: tuple[Bidder, ...]
    impressions: tuple[Impression, ...] = ()
    mode: str = LAMINAR

    def __post_init__(self):
        object.__setattr__(self, "bidders", tuple(self.bidders))
        object.__setattr__(self, "impressions", tuple(self.impressions))

    def bidder_index(self, bidder_id: str) -> int:
        for u, b in enumerate(self.bidders):
            if b.id == bidder_id:
                return u
        raise KeyError(bidder_id)

    def with_impressions(self, impressions: Iterable[Impression]) -> "Instance":
        return Instance(self.num_dimensions, self.bidders, tuple(impressions), self.mode)


# --------------------------------------------------------------------------
# validation and statistics


def _laminar_pair_ok(a: frozenset, b: frozenset) -> bool:
    return not (a & b) or a <= b or b <= a


def validate(instance: Instance) -> list[str]:
    """Return a list of human-readable violations; empty means valid."""
    out: list[str] = []
    if instance.mode not in MODES:
        out.append(f"unknown mode {instance.mode!r}")
    if instance.num_dimensions < 0:
        out.append("negative num_dimensions")
    bidder_ids = [b.id for b in instance.bidders]
    if len(set(bidder_ids)) != len(bidder_ids):
        out.append("duplicate bidder id")
    for b in instance.bidders:
        ids = [c.id for c in b.constraints]
        if len(set(ids)) != len(ids):
            out.append(f"bidder {b.id}: duplicate constraint id")
        for c in b.constraints:
            if not c.dims:
                out.append(f"bidder {b.id}: constraint {c.id} has empty dims")
            if c.budget <= 0:
                out.append(f"bidder {b.id}: constraint {c.id} non-positive budget")
            bad = [k for k in c.dims if not 0 <= k < instance.num_dimensions]
            if bad:
                out.append(f"bidder {b.id}: constraint {c.id} dims out of range {bad}")
        if instance.mode == LAMINAR:
            sets = [c.dimset for c in b.constraints]
            for i in range(len(sets)):
                for j in range(i + 1, len(sets)):
                    if not _laminar_pair_ok(sets[i], sets[j]):
                        out.append(
                            f"bidder {b.id}: non-laminar pair "
                            f"{b.constraints[i].id}, {b.constraints[j].id}"
                        )
    known = set(bidder_ids)
    seen_impressions = set()
    for v in instance.impressions:
        if v.id in seen_impressions:
            out.append(f"duplicate impression id {v.id}")
        seen_impressions.add(v.id)
        for bidder_id, row in v.bids.items():
            if bidder_id not in known:
                out.append(f"impression {v.id}: unknown bidder {bidder_id}")
            for k, r in row.items():
                if r < 0:
                    out.append(f"impression {v.id}: negative bid")
                if not 0 <= k < instance.num_dimensions:
                    out.append(f"impression {v.id}: dim {k} out of range")
    if instance.mode == LAMINAR:
        for b in instance.bidders:
            singles = {c.dims[0] for c in b.constraints if len(c.dims) == 1}
            bid_dims = {
                k for v in instance.impressions for k, r in v.bid_row(b.id).items() if r > 0
            }
            missing = sorted(bid_dims - singles)
            if missing:
                out.append(f"bidder {b.id}: missing singleton budgets for dims {missing}")
    return out


def complete_singletons(instance: Instance) -> Instance:
    """Add a singleton budget ``{k}`` for every dimension a bidder touches.

    The synthesized budget is the tightest enclosing budget, so it never binds
    before the enclosing one does. A dimension with bids but no enclosing
    constraint gets the bidder's total bid on it, which can never bind.
    """
    bidders = []
    for b in instance.bidders:
        singles = {c.dims[0] for c in b.constraints if len(c.dims) == 1}
        covered = {k for c in b.constraints for k in c.dims}
        bid_total: dict[int, Fraction] = {}
        for v in instance.impressions:
            for k, r in v.bid_row(b.id).items():
                if r > 0:
                    bid_total[k] = bid_total.get(k, Q(0)) + r
        extra = []
        used_ids = {c.id for c in b.constraints}
        for k in sorted((covered | set(bid_total)) - singles):
            enclosing = [c.budget for c in b.constraints if k in c.dims]
            budget = min(enclosing) if enclosing else bid_total[k]
            cid = f"auto-{k}"
            while cid in used_ids:
                cid += "'"
            used_ids.add(cid)
            extra.append(BudgetConstraint(cid, (k,), budget))
        bidders.append(Bidder(b.id, b.constraints + tuple(extra)))
    return Instance(instance.num_dimensions, tuple(bidders), instance.impressions, instance.mode)


def small_bids_threshold(p: int) -> Fraction:
    """Exact-or-conservative rational for 1/lg(2p+2).

    When 2p+2 is a power of two the value is rational and returned exactly;
    otherwise the double evaluation is nudged one ulp toward zero.
    """
    q = 2 * p + 2
    if q & (q - 1) == 0:
        return Fraction(1, q.bit_length() - 1)
    return Fraction(math.nextafter(1.0 / math.log2(q), 0.0))


@dataclass(frozen=True)
class InstanceStats:
    p: int
    eps: Fraction
    small_bids_ok: bool


def constraint_multiplicity(instance: Instance) -> int:
    """p: the largest number of one bidder's constraints sharing a dimension."""
    p = 0
    for b in instance.bidders:
        count: dict[int, int] = {}
        for c in b.constraints:
            for k in c.dims:
                count[k] = count.get(k, 0) + 1
        if count:
            p = max(p, max(count.values()))
    return p


def bid_ratio(bidder: Bidder, impression: Impression) -> Fraction:
    """max over constraints s of sum_{k in s} r^(k) / B^(s) for one pair."""
    row = impression.bid_row(bidder.id)
    if not row:
        return Q(0)
    best = Q(0)
    for c in bidder.constraints:
        tot = sum((row.get(k, 0) for k in c.dims), Q(0))
        if tot:
            best = max(best, tot / c.budget)
    return best


def instance_stats(instance: Instance) -> InstanceStats:
    p = constraint_multiplicity(instance)
    eps = Q(0)
    for v in instance.impressions:
        for b in instance.bidders:
            eps = max(eps, bid_ratio(b, v))
    ok = eps <= small_bids_threshold(max(p, 1))
    return InstanceStats(p, eps, ok)


# --------------------------------------------------------------------------
# allocation ledger


@dataclass
class Assignment:
    impression_id: str
    bidder: int | None
    amounts: dict[int, Fraction]

    @property
    def total(self) -> Fraction:
        return sum(self.amounts.values(), Q(0))


class AllocationState:
    """Revenue earned per (bidder, dimension) plus an append-only log.

    Per-constraint usage is maintained incrementally so utilization queries
    are O(1).
    """

    def __init__(self, instance: Instance):
        self.instance = instance
        self.earned: dict[tuple[int, int], Fraction] = {}
        self.log: list[Assignment] = []
        self.primal_total = Q(0)
        self._used = [[Q(0)] * len(b.constraints) for b in instance.bidders]
        # constraints at capacity, per bidder
        self.full: list[set[int]] = [set() for _ in instance.bidders]
        # containing[u][k] -> constraint indices of bidder u that contain k
        self.containing: list[dict[int, list[int]]] = []
        for b in instance.bidders:
            idx: dict[int, list[int]] = {}
            for i, c in enumerate(b.constraints):
                for k in c.dims:
                    idx.setdefault(k, []).append(i)
            self.containing.append(idx)

    def used(self, u: int, s: int) -> Fraction:
        return self._used[u][s]

    def kappa(self, u: int, s: int) -> Fraction:
        return self._used[u][s] / self.instance.bidders[u].constraints[s].budget

    def remaining(self, u: int, s: int) -> Fraction:
        c = self.instance.bidders[u].constraints[s]
        return max(c.budget - self._used[u][s], Q(0))

    def remaining_capacity(self, bidder_id: str, constraint_id: str) -> Fraction:
        u = self.instance.bidder_index(bidder_id)
        s = self.instance.bidders[u].constraint_index(constraint_id)
        return self.remaining(u, s)

    def dim_headroom(self, u: int, k: int) -> Fraction | None:
        """Smallest remaining capacity over constraints containing k (None: unconstrained)."""
        cs = self.containing[u].get(k)
        if not cs:
            return None
        return min(self.remaining(u, s) for s in cs)

    def dim_open(self, u: int, k: int) -> bool:
        """True iff k lies in at least one constraint and none of them is at capacity."""
        cs = self.containing[u].get(k)
        if not cs:
            return False
        full = self.full[u]
        return not any(s in full for s in cs)

    def earned_on(self, u: int, k: int) -> Fraction:
        return self.earned.get((u, k), Q(0))

    def check_fits(self, u: int, amounts: Mapping[int, Fraction]) -> list[int]:
        """Constraint indices of bidder u that ``amounts`` would overflow."""
        extra: dict[int, Fraction] = {}
        for k, a in amounts.items():
            for s in self.containing[u].get(k, ()):
                extra[s] = extra.get(s, Q(0)) + a
        budgets = self.instance.bidders[u].constraints
        return [s for s, a in extra.items() if self._used[u][s] + a > budgets[s].budget]

    def earn(self, u: int, impression: Impression, amounts: Mapping[int, Fraction], *,
             fits_checked: bool = False) -> Assignment:
        """Record earnings; ``fits_checked`` skips the capacity test the caller already did."""
        bidder = self.instance.bidders[u]
        amounts = {k: parse_money(a) for k, a in amounts.items()}
        row = impression.bid_row(bidder.id)
        for k, a in amounts.items():
            if a < 0:
                raise ValueError("negative earning")
            if a > row.get(k, 0):
                raise ValueError(f"earning {a} on dim {k} exceeds bid")
        over = [] if fits_checked else self.check_fits(u, amounts)
        if over:
            names = [bidder.constraints[s].id for s in over]
            raise BudgetOverflow(f"budget overflow for bidder {bidder.id} on {names}")
        for k, a in amounts.items():
            if not a:
                continue
            self.earned[(u, k)] = self.earned_on(u, k) + a
            for s in self.containing[u].get(k, ()):
                self._used[u][s] += a
                if self._used[u][s] == bidder.constraints[s].budget:
                    self.full[u].add(s)
        entry = Assignment(impression.id, u, dict(amounts))
        self.log.append(entry)
        self.primal_total += entry.total
        return entry

    def reject(self, impression: Impression) -> Assignment:
        entry = Assignment(impression.id, None, {})
        self.log.append(entry)
        return entry

    def recompute_total(self) -> Fraction:
        return sum((a.total for a in self.log), Q(0))

    def kappas(self) -> dict[tuple[str, str], Fraction]:
        return {
            (b.id, c.id): self.kappa(u, s)
            for u, b in enumerate(self.instance.bidders)
            for s, c in enumerate(b.constraints)
        }


# --------------------------------------------------------------------------
# JSON file format


def instance_to_dict(instance: Instance) -> dict:
    return {
        "mode": instance.mode,
        "num_dimensions": instance.num_dimensions,
        "bidders": [
            {
                "id": b.id,
                "constraints": [
                    {"id": c.id, "dims": list(c.dims), "budget": format_money(c.budget)}
                    for c in b.constraints
                ],
            }
            for b in instance.bidders
        ],
        "impressions": [
            {
                "id": v.id,
                "bids": {
                    bid: {str(k): format_money(r) for k, r in sorted(row.items())}
                    for bid, row in v.bids.items()
                },
            }
            for v in instance.impressions
        ],
    }


def instance_from_dict(data: dict, *, synthesize: bool = True) -> Instance:
    bidders = tuple(
        Bidder(
            b["id"],
            tuple(
                BudgetConstraint(c["id"], tuple(int(k) for k in c["dims"]), parse_money(c["budget"]))
                for c in b["constraints"]
            ),
        )
        for b in data["bidders"]
    )
    impressions = tuple(
        Impression(v["id"], {bid: {int(k): parse_money(r) for k, r in row.items()}
                             for bid, row in v.get("bids", {}).items()})
        for v in data.get("impressions", [])
    )
    inst = Instance(int(data["num_dimensions"]), bidders, impressions, data.get("mode", LAMINAR))
    if synthesize and inst.mode == LAMINAR:
        inst = complete_singletons(inst)
    return inst


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=1, sort_keys=False) + "\n"


def loads_instance(text: str, *, synthesize: bool = True) -> Instance:
    return instance_from_dict(json.loads(text), synthesize=synthesize)


def load_instance(path, *, synthesize: bool = True) -> Instance:
    with open(path) as fh:
        return loads_instance(fh.read(), synthesize=synthesize)


def save_instance(instance: Instance, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(instance))
