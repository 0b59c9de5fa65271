"""Online strategies behind a single session interface.

A session owns the allocation ledger and whatever auxiliary state its
strategy needs. ``offer`` is called once per impression in arrival order and
returns the decision; adversaries drive sessions impression by impression,
batch runs go through :func:`run_online`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping

from .core import (
    Q,
    GENERAL,
    LAMINAR,
    AllocationState,
    Impression,
    Instance,
    constraint_multiplicity,
    format_money,
    instance_stats,
    parse_money,
    small_bids_threshold,
)
from .labels import LabelState, LaminarForest

E = math.e
RHO = E / (E - 1.0)

STRATEGIES = ("adlaminar", "adgeneral", "adgen-aon", "adgen-p", "greedy-laminar")
SIGMA_RULES = ("posterior", "integrated", "arrival")

# earned amounts under AdGen-P are kept on this grid when not exactly representable
_P_GRID = 2**40


class FeasibilityLemmaViolated(AssertionError):
    """Earning on active dimensions overflowed although the bid precondition holds."""


class IncompatibleStrategy(ValueError):
    pass


@dataclass
class Decision:
    impression_id: str
    bidder: int | None
    earned: dict[int, Fraction]
    score: float | Fraction = 0
    sigma: float | Fraction = 0

    @property
    def total(self) -> Fraction:
        return sum(self.earned.values(), Q(0))


class Session:
    """Base class: bookkeeping shared by all strategies."""

    name = ""

    def __init__(self, instance: Instance, *, hooks: Iterable[Callable] = ()):
        self.instance = instance
        self.state = AllocationState(instance)
        self.decisions: list[Decision] = []
        self.offered: list[Impression] = []
        self.warnings: list[str] = []
        self.hooks = list(hooks)
        self._uidx = {b.id: u for u, b in enumerate(instance.bidders)}

    def offer(self, impression: Impression) -> Decision:
        for bid in impression.bids:
            if bid not in self._uidx:
                raise KeyError(f"impression {impression.id} bids for unknown bidder {bid}")
        self.offered.append(impression)
        d = self._decide(impression)
        self.decisions.append(d)
        for hook in self.hooks:
            hook(self, d)
        return d

    def _decide(self, impression: Impression) -> Decision:
        raise NotImplementedError

    def row(self, u: int, impression: Impression) -> Mapping[int, Fraction]:
        return impression.bid_row(self.instance.bidders[u].id)

    def _warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def _capped(self, u: int, impression: Impression, dims: Iterable[int]) -> tuple[dict[int, Fraction], bool]:
        """Full bids on ``dims`` (increasing index), each cut to the capacity left."""
        row = self.row(u, impression)
        budgets = self.instance.bidders[u].constraints
        used = self.state._used[u]
        pending: dict[int, Fraction] = {}
        out: dict[int, Fraction] = {}
        capped = False
        for k in sorted(dims):
            r = row.get(k, Q(0))
            if r <= 0:
                continue
            cs = self.state.containing[u].get(k, ())
            amt = r
            for s in cs:
                room = budgets[s].budget - used[s]
                if s in pending:
                    room -= pending[s]
                if room < amt:
                    amt = room
            if amt < r:
                capped = True
            if amt > 0:
                out[k] = amt
                for s in cs:
                    pending[s] = pending.get(s, Q(0)) + amt
        return out, capped


def _argmax(scores: Mapping[int, object]) -> int | None:
    best = None
    for u in sorted(scores):
        if best is None or scores[u] > scores[best]:
            best = u
    return best


# --------------------------------------------------------------------------
# AdLaminar


class AdLaminarSession(Session):
    """Primal-dual strategy on laminar budgets, priced by the label engine."""

    name = "adlaminar"

    def __init__(self, instance: Instance, *, sigma_rule: str = "posterior", hooks=()):
        if instance.mode != LAMINAR:
            raise IncompatibleStrategy("adlaminar requires a laminar instance")
        if sigma_rule not in SIGMA_RULES:
            raise ValueError(f"unknown sigma rule {sigma_rule!r}")
        super().__init__(instance, hooks=hooks)
        self.sigma_rule = sigma_rule
        self.forests = [LaminarForest(b.constraints) for b in instance.bidders]
        self.labels = [LabelState(f) for f in self.forests]
        self.sigma: dict[str, float] = {}

    def active_dims(self, u: int) -> set[int]:
        st = self.state
        return {
            k for k in self.forests[u].singleton
            if all(st.used(u, s) < st.instance.bidders[u].constraints[s].budget
                   for s in st.containing[u][k])
        }

    def _is_active(self, u: int, k: int) -> bool:
        return self.state.dim_open(u, k)

    def score(self, u: int, impression: Impression) -> float:
        """D_uv: bids on active dimensions weighted by 1 - exp(g - 1)."""
        lab = self.labels[u]
        total = 0.0
        for k, r in self.row(u, impression).items():
            if r > 0 and self._is_active(u, k):
                total += -math.expm1(lab.g_dim_float(k) - 1.0) * float(r)
        return total

    def _decide(self, impression: Impression) -> Decision:
        cands = {}
        for bid_id, row in impression.bids.items():
            u = self._uidx[bid_id]
            for k, r in row.items():
                if r > 0 and k not in self.forests[u].singleton:
                    raise ValueError(f"bidder {bid_id} has no singleton budget for dim {k}")
            if any(r > 0 and self._is_active(u, k) for k, r in row.items()):
                cands[u] = self.score(u, impression)
        u = _argmax(cands)
        if u is None:
            self.state.reject(impression)
            self.sigma[impression.id] = 0.0
            return Decision(impression.id, None, {}, 0.0, 0.0)
        arrival = cands[u]
        dims = [k for k, r in self.row(u, impression).items() if r > 0 and self._is_active(u, k)]
        amounts, capped = self._capped(u, impression, dims)
        if capped:
            self._warn(f"impression {impression.id}: small-bids assumption violated, earning capped")
        self.state.earn(u, impression, amounts, fits_checked=True)
        integrated = 0.0
        for k in sorted(amounts):
            integrated += float(amounts[k]) - self.labels[u].increment_revenue(k, amounts[k])
        if self.sigma_rule == "arrival":
            sigma = RHO * arrival
        elif self.sigma_rule == "integrated":
            sigma = RHO * integrated
        else:
            # cheapest price that stays feasible once labels only grow further
            post = max(self.score(u, impression),
                       max((d for w, d in cands.items() if w != u), default=0.0))
            sigma = RHO * post
        self.sigma[impression.id] = sigma
        return Decision(impression.id, u, amounts, arrival, sigma)


# --------------------------------------------------------------------------
# AdGeneral family


class PotentialSession(Session):
    """Greedy on bids restricted to dimensions with a small enough potential.

    ``kind`` selects the potential and the earning rule: ``"general"`` (base
    2p+2, partial earnings capped), ``"aon"`` (base p+1 stretched by
    1/(1-eps), full bids only) and ``"p"`` (the AON potential with
    eps = 1/lg(2p+2), earning that fraction of every bid).
    """

    def __init__(self, instance: Instance, kind: str = "general", *, p: int | None = None,
                 eps: Fraction | None = None, hooks=()):
        if kind not in ("general", "aon", "p"):
            raise ValueError(kind)
        super().__init__(instance, hooks=hooks)
        self.kind = kind
        self.name = {"general": "adgeneral", "aon": "adgen-aon", "p": "adgen-p"}[kind]
        stats = instance_stats(instance)
        self.p = max(p if p is not None else constraint_multiplicity(instance), 1)
        self.eps = parse_money(eps) if eps is not None else stats.eps
        self.small_bids_ok = self.eps <= small_bids_threshold(self.p)
        if kind == "general":
            self.base = 2.0 * self.p + 2.0
            self.stretch = 1.0
        elif kind == "aon":
            if self.eps >= 1:
                raise ValueError("all-or-nothing potential needs bid-to-budget ratio below 1")
            self.base = self.p + 1.0
            self.stretch = 1.0 / (1.0 - float(self.eps))
        else:
            self.scale = 1.0 / math.log2(2 * self.p + 2)
            self.base = self.p + 1.0
            self.stretch = 1.0 / (1.0 - self.scale)

    def phi(self, u: int, s: int) -> float:
        c = self.instance.bidders[u].constraints[s]
        kappa = float(self.state.kappa(u, s))
        return float(c.budget) / self.p * (self.base ** (kappa * self.stretch) - 1.0)

    def potential_table(self) -> dict[tuple[int, int], float]:
        return {
            (u, s): self.phi(u, s)
            for u, b in enumerate(self.instance.bidders)
            for s in range(len(b.constraints))
        }

    def _is_active(self, u: int, k: int) -> bool:
        cons = self.instance.bidders[u].constraints
        load = 0.0
        for s in self.state.containing[u].get(k, ()):
            load += self.phi(u, s) / float(cons[s].budget)
        return load <= 1.0

    def active_dims(self, u: int) -> set[int]:
        dims = set(self.state.containing[u])
        return {k for k in dims if self._is_active(u, k)}

    def score(self, u: int, impression: Impression) -> Fraction:
        return sum(
            (r for k, r in self.row(u, impression).items() if r > 0 and self._is_active(u, k)),
            Q(0),
        )

    def _decide(self, impression: Impression) -> Decision:
        scores = {self._uidx[b]: self.score(self._uidx[b], impression) for b in impression.bids}
        u = _argmax(scores)
        if u is None or scores[u] <= 0:
            self.state.reject(impression)
            return Decision(impression.id, None, {}, Q(0), Q(0))
        row = self.row(u, impression)
        dims = [k for k, r in row.items() if r > 0 and self._is_active(u, k)]
        if self.kind == "p":
            amounts = {k: _scaled(row[k], self.scale) for k in dims}
            amounts = {k: a for k, a in amounts.items() if a > 0}
        else:
            amounts = {k: row[k] for k in dims}
        over = self.state.check_fits(u, amounts)
        if over:
            names = [self.instance.bidders[u].constraints[s].id for s in over]
            if self.kind == "general" and not self.small_bids_ok:
                amounts, _ = self._capped(u, impression, dims)
                self._warn(f"impression {impression.id}: small-bids assumption violated, earning capped")
            else:
                raise FeasibilityLemmaViolated(
                    f"feasibility lemma violated: impression {impression.id} overflows {names}"
                )
        self.state.earn(u, impression, amounts)
        total = sum(amounts.values(), Q(0))
        return Decision(impression.id, u, amounts, scores[u], total)


def _scaled(r: Fraction, scale: float) -> Fraction:
    exact = r * Q(scale)
    if exact.denominator <= _P_GRID:
        return exact
    return Q(math.floor(exact * _P_GRID), _P_GRID)


# --------------------------------------------------------------------------
# greedy with general bids


def max_earnable_laminar(state: AllocationState, u: int, impression: Impression) -> dict[int, Fraction]:
    """Largest total earnable from one impression under the remaining laminar capacities."""
    bidder = state.instance.bidders[u]
    e = {k: r for k, r in impression.bid_row(bidder.id).items() if r > 0}
    order = sorted(range(len(bidder.constraints)), key=lambda s: (len(bidder.constraints[s].dims), s))
    for s in order:
        dims = [k for k in bidder.constraints[s].dims if k in e]
        excess = sum((e[k] for k in dims), Q(0)) - state.remaining(u, s)
        for k in sorted(dims, reverse=True):
            if excess <= 0:
                break
            cut = min(excess, e[k])
            e[k] -= cut
            excess -= cut
    return {k: a for k, a in e.items() if a > 0}


class GreedyLaminarSession(Session):
    name = "greedy-laminar"

    def __init__(self, instance: Instance, *, hooks=()):
        if instance.mode != LAMINAR:
            raise IncompatibleStrategy("greedy-laminar requires a laminar instance")
        super().__init__(instance, hooks=hooks)

    def _decide(self, impression: Impression) -> Decision:
        options = {}
        for bid_id in impression.bids:
            u = self._uidx[bid_id]
            options[u] = max_earnable_laminar(self.state, u, impression)
        totals = {u: sum(a.values(), Q(0)) for u, a in options.items()}
        u = _argmax(totals)
        if u is None or totals[u] <= 0:
            self.state.reject(impression)
            return Decision(impression.id, None, {}, Q(0), Q(0))
        self.state.earn(u, impression, options[u])
        return Decision(impression.id, u, options[u], totals[u], totals[u])


# --------------------------------------------------------------------------
# entry points


def make_session(instance: Instance, strategy: str, **kw) -> Session:
    if strategy == "adlaminar":
        return AdLaminarSession(instance, **kw)
    if strategy == "adgeneral":
        return PotentialSession(instance, "general", **kw)
    if strategy == "adgen-aon":
        return PotentialSession(instance, "aon", **kw)
    if strategy == "adgen-p":
        return PotentialSession(instance, "p", **kw)
    if strategy == "greedy-laminar":
        return GreedyLaminarSession(instance, **kw)
    raise ValueError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


class AuditFailure(AssertionError):
    pass


@dataclass
class Report:
    strategy: str
    primal: Fraction
    decisions: list[Decision]
    kappas: dict[tuple[str, str], Fraction]
    warnings: list[str]
    dual_objective: float | None = None
    feasibility: dict | None = None
    session: Session | None = field(default=None, repr=False, compare=False)

    @property
    def ratio(self) -> float | None:
        if self.dual_objective is None:
            return None
        if self.primal == 0:
            return 1.0 if self.dual_objective <= 1e-12 else math.inf
        return self.dual_objective / float(self.primal)

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "primal": format_money(self.primal),
            "dual_objective": self.dual_objective,
            "ratio": self.ratio,
            "feasibility": self.feasibility,
            "warnings": list(self.warnings),
        }


def run_online(instance: Instance, strategy: str, *, audit: str = "end", strict: bool = False,
               **kw) -> Report:
    """Feed every impression of ``instance`` to a fresh session and audit the result."""
    from . import duals

    if audit not in ("off", "end", "paranoid"):
        raise ValueError(f"unknown audit mode {audit!r}")
    hooks = list(kw.pop("hooks", ()))
    if audit == "paranoid":
        hooks.append(duals.paranoid_hook)
    session = make_session(instance, strategy, hooks=hooks, **kw)
    for v in instance.impressions:
        session.offer(v)
    report = Report(
        strategy=strategy,
        primal=session.state.primal_total,
        decisions=session.decisions,
        kappas=session.state.kappas(),
        warnings=session.warnings,
        session=session,
    )
    if audit != "off":
        duals.attach_certificate(report, session)
        if strict and report.feasibility is not None and not report.feasibility["pass"]:
            raise AuditFailure(f"dual certificate failed: {report.feasibility}")
    return report
