"""Per-bidder laminar forest and the label machine.

Every constraint ``s`` carries a label ``num[s] / den[s]`` where ``num`` sums
the revenue of the singleton dimensions in ``L(s)`` and ``den`` is the budget
of ``s`` minus the budgets in ``T(s)``. Adding revenue to one dimension grows
every label whose ``L`` contains it, affinely in the added amount, so the
points where two labels meet can be solved for in closed form. Between those
points the sets are fixed; at them an Event 1 or Event 2 reshuffles the sets
without moving any label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .core import Q, BudgetConstraint, parse_money

EVENT1 = 1
EVENT2 = 2

# hard stop for zero-length event cascades inside one increment
_MAX_EVENTS_PER_INCREMENT = 100_000


class ZeroDenominator(ArithmeticError):
    pass


class NotAtTransition(ValueError):
    pass


class LaminarForest:
    """Constraints of one bidder arranged by containment.

    Node ids are the constraint indices in the bidder's constraint list.
    """

    def __init__(self, constraints: Sequence[BudgetConstraint]):
        self.constraints = tuple(constraints)
        n = len(self.constraints)
        sets = [c.dimset for c in self.constraints]
        self.budget = [c.budget for c in self.constraints]
        order = sorted(range(n), key=lambda i: (len(sets[i]), i))
        rank = {node: r for r, node in enumerate(order)}
        self.parent: list[int | None] = [None] * n
        for pos, i in enumerate(order):
            for j in order[pos + 1:]:
                if sets[i] <= sets[j]:
                    self.parent[i] = j
                    break
                if sets[i] & sets[j] and not sets[j] <= sets[i]:
                    raise ValueError(
                        f"constraints {self.constraints[i].id} and {self.constraints[j].id} are not laminar"
                    )
        self.children: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(self.parent):
            if p is not None:
                self.children[p].append(i)
        self.ancestors: list[tuple[int, ...]] = []
        for i in range(n):
            chain = [i]
            while self.parent[chain[-1]] is not None:
                chain.append(self.parent[chain[-1]])
            self.ancestors.append(tuple(chain))
        self.depth = [len(a) - 1 for a in self.ancestors]
        # leaf singleton for each dimension: the lowest-ranked {k}
        self.singleton: dict[int, int] = {}
        for i in order:
            if len(sets[i]) == 1:
                (k,) = sets[i]
                self.singleton.setdefault(k, i)
        self.leaf_dims: list[frozenset[int]] = [
            frozenset(k for k in sets[i] if k in self.singleton and i in self.ancestors[self.singleton[k]])
            for i in range(n)
        ]
        self.roots = [i for i in range(n) if self.parent[i] is None]
        self._rank = rank

    def __len__(self) -> int:
        return len(self.constraints)

    def is_strict_descendant(self, a: int, b: int) -> bool:
        """True iff a lies strictly below b."""
        return a != b and b in self.ancestors[a]

    def path(self, k: int) -> tuple[int, ...]:
        """Nodes from the singleton {k} up to its root."""
        return self.ancestors[self.singleton[k]]

    def leaves_are_singletons(self) -> bool:
        return all(
            len(self.constraints[i].dims) == 1
            for i in range(len(self)) if not self.children[i]
        )


@dataclass(frozen=True)
class Crossing:
    x: Fraction
    events: tuple[tuple[int, int, int], ...]  # (kind, s, s_prime)


class LabelState:
    """L/T bookkeeping and labels for one bidder's forest."""

    def __init__(self, forest: LaminarForest):
        self.forest = forest
        n = len(forest)
        self.L: list[set[int]] = [set(forest.leaf_dims[i]) for i in range(n)]
        self.T: list[set[int]] = [set() for _ in range(n)]
        self.R: dict[int, Fraction] = {k: Q(0) for k in forest.singleton}
        self.num: list[Fraction] = [Q(0)] * n
        self.den: list[Fraction] = list(forest.budget)
        self.labels: list[Fraction] = [Q(0)] * n
        self.events_fired = 0
        self._gcache: dict[int, float] = {}

    # -- queries ---------------------------------------------------------

    def label(self, s: int) -> Fraction:
        if self.den[s] == 0:
            raise ZeroDenominator(f"label denominator of node {s} is zero")
        return self.labels[s]

    def g(self, s: int) -> Fraction:
        """Largest label over s and its ancestors."""
        return max(self.labels[a] for a in self.forest.ancestors[s])

    def g_dim(self, k: int) -> Fraction:
        return self.g(self.forest.singleton[k])

    def g_dim_float(self, k: int) -> float:
        """float(g_dim(k)), cached until the labels next change."""
        val = self._gcache.get(k)
        if val is None:
            val = self._gcache[k] = float(self.g_dim(k))
        return val

    def growing(self, k: int) -> list[int]:
        """Nodes whose label grows with revenue on k, leaf first."""
        return [s for s in self.forest.path(k) if k in self.L[s]]

    def snapshot(self):
        return (
            tuple(frozenset(x) for x in self.L),
            tuple(frozenset(x) for x in self.T),
            tuple(self.labels),
            tuple(sorted(self.R.items())),
        )

    # -- crossings and events -----------------------------------------------

    def next_crossing(self, k: int) -> Crossing | None:
        """Smallest extra revenue on k at which two labels meet, with all events there."""
        f = self.forest
        grow = self.growing(k)
        cands: list[tuple[Fraction, int, int, int]] = []
        for idx, s in enumerate(grow):
            ls, ds = self.labels[s], self.den[s]
            # Event 1: a faster-growing descendant on the path catches s
            for sp in grow[:idx]:
                dsp = self.den[sp]
                if dsp < ds:
                    x = (ls - self.labels[sp]) / (1 / dsp - 1 / ds)
                    if x < 0:
                        raise AssertionError("label order broken on growth path")
                    cands.append((x, EVENT1, s, sp))
            # Event 2: s climbs to a member of T(s)
            for sp in self.T[s]:
                x = self.labels[sp] * ds - self.num[s]
                if x < 0:
                    raise AssertionError("T member below its ancestor label")
                cands.append((x, EVENT2, s, sp))
        if not cands:
            return None
        xmin = min(c[0] for c in cands)
        events = [(kind, s, sp) for x, kind, s, sp in cands if x == xmin]
        events.sort(key=lambda e: self._event_key(e))
        return Crossing(xmin, tuple(events))

    def _event_key(self, e):
        kind, s, sp = e
        f = self.forest
        if kind == EVENT2:
            return (0, f.depth[s], f.depth[sp], s, sp)
        # deepest s first; for one s the fastest descendant, then the closest
        return (1, -f.depth[s], self.den[sp], f.depth[sp], s, sp)

    def _event_valid(self, e, k: int) -> bool:
        kind, s, sp = e
        if k not in self.L[s] or self.labels[s] != self.labels[sp]:
            return False
        if kind == EVENT2:
            return sp in self.T[s]
        return k in self.L[sp] and self.den[sp] < self.den[s]

    def apply_event1(self, s: int, sp: int) -> None:
        """Move the descendant sp into T(s)."""
        f = self.forest
        if not f.is_strict_descendant(sp, s):
            raise ValueError("Event 1 needs a strict descendant")
        if self.labels[s] != self.labels[sp]:
            raise NotAtTransition(f"labels of {s} and {sp} differ")
        before = self.labels[s]
        gone_L = self.L[s] & f.leaf_dims[sp]
        gone_T = {w for w in self.T[s] if f.is_strict_descendant(w, sp)}
        self.L[s] -= gone_L
        self.T[s] -= gone_T
        self.T[s].add(sp)
        self.num[s] -= sum((self.R[j] for j in gone_L), Q(0))
        self.den[s] += sum((f.budget[w] for w in gone_T), Q(0)) - f.budget[sp]
        self._refresh(s)
        if self.labels[s] != before:
            raise AssertionError("Event 1 moved a label")
        self.events_fired += 1

    def apply_event2(self, s: int, sp: int) -> None:
        """Release sp from T(s), absorbing its L and T sets."""
        if sp not in self.T[s]:
            raise ValueError(f"node {sp} is not in T({s})")
        if self.labels[s] != self.labels[sp]:
            raise NotAtTransition(f"labels of {s} and {sp} differ")
        before = self.labels[s]
        f = self.forest
        self.T[s].discard(sp)
        self.T[s] |= self.T[sp]
        self.L[s] |= self.L[sp]
        self.num[s] += self.num[sp]
        self.den[s] += self.den[sp]
        self._refresh(s)
        if self.labels[s] != before:
            raise AssertionError("Event 2 moved a label")
        self.events_fired += 1

    def _refresh(self, s: int) -> None:
        self._gcache.clear()
        if self.den[s] <= 0:
            raise ZeroDenominator(f"label denominator of node {s} became {self.den[s]}")
        self.labels[s] = self.num[s] / self.den[s]

    def _fire(self, crossing: Crossing, k: int, *, only_event2: bool = False) -> int:
        fired = 0
        for e in crossing.events:
            if only_event2 and e[0] != EVENT2:
                continue
            if not self._event_valid(e, k):
                continue
            if e[0] == EVENT1:
                self.apply_event1(e[1], e[2])
            else:
                self.apply_event2(e[1], e[2])
            fired += 1
        return fired

    def _advance(self, k: int, x: Fraction) -> None:
        self._gcache.clear()
        for s in self.growing(k):
            self.num[s] += x
            self.labels[s] = self.num[s] / self.den[s]
        self.R[k] += x

    # -- the engine ------------------------------------------------------------

    def increment_revenue(self, k: int, amount: Fraction) -> float:
        """Add ``amount`` of revenue on dimension k.

        Returns the integral of ``exp(g_dim(k) - 1)`` over the added revenue,
        which the primal-dual strategy uses to price the increment.
        """
        amount = parse_money(amount)
        if amount < 0:
            raise ValueError("revenue increments must be non-negative")
        if k not in self.R:
            raise KeyError(f"dimension {k} has no singleton budget")
        remaining = amount
        integral = 0.0
        g0 = self.g_dim(k)
        budget = _MAX_EVENTS_PER_INCREMENT
        while remaining > 0:
            nc = self.next_crossing(k)
            if nc is None or nc.x >= remaining:
                self._advance(k, remaining)
                g1 = self.g_dim(k)
                integral += _exp_integral(g0, g1, remaining)
                if nc is not None and nc.x == remaining:
                    # an equality reached at the very end must not leave T(s)
                    # holding a member with the same label
                    while True:
                        again = self.next_crossing(k)
                        if again is None or again.x != 0 or not self._fire(again, k, only_event2=True):
                            break
                break
            if nc.x > 0:
                self._advance(k, nc.x)
                g1 = self.g_dim(k)
                integral += _exp_integral(g0, g1, nc.x)
                g0 = g1
                remaining -= nc.x
            if not self._fire(nc, k):
                raise AssertionError("crossing reported but no event applicable")
            budget -= 1
            if budget <= 0:
                raise AssertionError("event cascade did not settle")
        return integral

    # -- validity ---------------------------------------------------------------

    def check(self) -> list[str]:
        """Exact check of the partition invariant and Properties 1-3."""
        f = self.forest
        out = []
        for s in range(len(f)):
            covered = list(self.L[s])
            for w in self.T[s]:
                if not f.is_strict_descendant(w, s):
                    out.append(f"T({s}) holds non-descendant {w}")
                covered.extend(f.leaf_dims[w])
            if len(covered) != len(set(covered)) or set(covered) != set(f.leaf_dims[s]):
                out.append(f"L/T of node {s} do not partition its dimensions")
            ls = self.labels[s]
            for k in self.L[s]:
                node = f.singleton[k]
                for a in f.ancestors[node]:
                    if self.labels[a] > ls:
                        out.append(f"property 1 fails at node {s} via {a}")
                    if a == s:
                        break
            for w in self.T[s]:
                if not self.labels[w] > ls:
                    out.append(f"property 2 fails: T({s}) member {w} not above")
                for a in f.ancestors[w][1:]:
                    if a == s:
                        break
                    if self.labels[a] > ls:
                        out.append(f"property 2 fails between {w} and {s} at {a}")
            den = f.budget[s] - sum((f.budget[w] for w in self.T[s]), Q(0))
            num = sum((self.R[k] for k in self.L[s]), Q(0))
            if den <= 0:
                out.append(f"denominator of node {s} not positive")
            elif num / den != ls or den != self.den[s] or num != self.num[s]:
                out.append(f"property 3 fails at node {s}")
        return out

    def dump(self) -> str:
        f = self.forest
        lines = []
        for s in range(len(f)):
            lab = self.labels[s]
            Ls = ",".join(f"{{{k}}}" for k in sorted(self.L[s]))
            Ts = ",".join(f.constraints[w].id for w in sorted(self.T[s]))
            lines.append(
                f"{f.constraints[s].id} | {lab.numerator}/{lab.denominator} | L={{{Ls}}} | T={{{Ts}}}"
            )
        return "\n".join(lines) + "\n"


def _exp_integral(g0: Fraction, g1: Fraction, length: Fraction) -> float:
    """Integral of exp(g - 1) over ``length`` with g moving affinely g0 -> g1."""
    if length == 0:
        return 0.0
    base = math.exp(float(g0) - 1.0)
    dg = float(g1 - g0)
    if dg == 0.0:
        return float(length) * base
    return float(length) * base * math.expm1(dg) / dg


def init_labels(forest: LaminarForest) -> LabelState:
    return LabelState(forest)
