"""Dual certificates for the online runs and the auditors that check them.

Two certificates are built here. The exponential one prices every laminar
budget by ``gamma = (e^g - 1)/(e - 1)`` of its current g value and every
impression by the sigma recorded at assignment time. The dual fit for greedy
with general bids pays each impression its earned revenue and puts weight 1
on the maximal budgets that ended at capacity.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .core import Q, Impression, Instance, parse_money
from .labels import LaminarForest

E = math.e
RHO = E / (E - 1.0)

_BRUTE_TYPES_LIMIT = 12


def gamma_of(g: Fraction) -> float:
    """(e^g - 1)/(e - 1), pinned exactly at g = 0 and g = 1."""
    if g == 0:
        return 0.0
    if g == 1:
        return 1.0
    return math.expm1(float(g)) / (E - 1.0)


def _forests(instance: Instance) -> list[LaminarForest]:
    return [LaminarForest(b.constraints) for b in instance.bidders]


# --------------------------------------------------------------------------
# exponential certificate


@dataclass
class DualPrime:
    sigma: dict[str, float]
    g: dict[tuple[int, int], Fraction]
    gamma: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.gamma:
            self.gamma = {key: gamma_of(val) for key, val in self.g.items()}


def dual_prime_from_session(session) -> DualPrime:
    g = {}
    for u, lab in enumerate(session.labels):
        for s in range(len(lab.forest)):
            g[(u, s)] = lab.g(s)
    return DualPrime(dict(session.sigma), g)


def dual_prime_objective(dual: DualPrime, instance: Instance,
                         forests: Sequence[LaminarForest] | None = None) -> float:
    """sum sigma + sum over budgets of B * (gamma - gamma of the parent)."""
    forests = forests or _forests(instance)
    total = math.fsum(dual.sigma.values())
    parts = []
    for u, f in enumerate(forests):
        for s in range(len(f)):
            par = f.parent[s]
            gp = dual.gamma.get((u, par), 0.0) if par is not None else 0.0
            parts.append(float(f.budget[s]) * (dual.gamma.get((u, s), 0.0) - gp))
    return total + math.fsum(parts)


@dataclass
class RatioAudit:
    ok: bool
    residual: float  # slack of the bound; negative means violated


def audit_ratio(primal_total, dual_objective: float, rho: float = RHO) -> RatioAudit:
    primal = float(primal_total)
    scale = max(1.0, primal)
    bound = rho * primal * (1 + 1e-9) + 1e-9 * scale
    return RatioAudit(dual_objective <= bound, bound - dual_objective)


@dataclass
class FeasibilityAudit:
    ok: bool
    worst_residual: float  # largest violation found, 0.0 when none
    failures: list[str] = field(default_factory=list)
    checked: int = 0

    def to_json(self) -> dict:
        return {"worst_residual": self.worst_residual, "pass": self.ok}


def _pair_requirement(row, gamma_leaf) -> tuple[float, float]:
    """Amount sigma must cover at the worst type, and the scale for tolerance."""
    need = []
    scale = 0.0
    for k, r in row.items():
        if r <= 0:
            continue
        gk = gamma_leaf(k)
        scale += float(r)
        if gk < 1.0:
            need.append((1.0 - gk) * float(r))
    return math.fsum(need), scale


def _brute_requirement(row, gamma_leaf) -> float:
    dims = [k for k, r in row.items() if r > 0]
    worst = 0.0
    for n in range(1, len(dims) + 1):
        for t in itertools.combinations(dims, n):
            worst = max(worst, math.fsum((1.0 - gamma_leaf(k)) * float(row[k]) for k in t))
    return worst


def audit_feasibility_dprime(dual: DualPrime, instance: Instance, impressions: Iterable[Impression],
                             forests: Sequence[LaminarForest] | None = None,
                             tol: float = 1e-9) -> FeasibilityAudit:
    """Check every (bidder, impression) covering constraint at its worst type, and monotonicity."""
    forests = forests or _forests(instance)
    res = FeasibilityAudit(True, 0.0)
    for u, f in enumerate(forests):
        for s in range(len(f)):
            par = f.parent[s]
            if par is not None and dual.g[(u, s)] < dual.g[(u, par)]:
                res.ok = False
                res.failures.append(f"bidder {u}: gamma of node {s} below its parent")
    for v in impressions:
        sigma = dual.sigma.get(v.id, 0.0)
        for bid_id, row in v.bids.items():
            u = instance.bidder_index(bid_id)
            f = forests[u]

            def gamma_leaf(k, u=u, f=f):
                node = f.singleton.get(k)
                return 1.0 if node is None else dual.gamma[(u, node)]

            need, scale = _pair_requirement(row, gamma_leaf)
            if sum(1 for r in row.values() if r > 0) <= _BRUTE_TYPES_LIMIT:
                brute = _brute_requirement(row, gamma_leaf)
                if abs(brute - need) > 1e-12 * max(1.0, scale):
                    raise AssertionError("worst-type shortcut disagrees with enumeration")
            res.checked += 1
            gap = need - sigma
            if gap > 0:
                res.worst_residual = max(res.worst_residual, gap)
                if gap > tol * max(1.0, scale):
                    res.ok = False
                    res.failures.append(f"impression {v.id}, bidder {bid_id}: short by {gap:.3e}")
    return res


# --------------------------------------------------------------------------
# dual fitting for greedy


@dataclass
class DualFit:
    sigma: dict[str, Fraction]
    alpha: dict[tuple[int, int], int]


def greedy_dual_fit(session, instance: Instance | None = None) -> DualFit:
    """sigma = earned revenue per impression; alpha = 1 on maximal tight budgets."""
    instance = instance or session.instance
    state = session.state
    sigma = {d.impression_id: d.total for d in session.decisions}
    alpha = {}
    for u, b in enumerate(instance.bidders):
        f = LaminarForest(b.constraints)
        tight = [state.kappa(u, s) == 1 for s in range(len(f))]
        for s in range(len(f)):
            alpha[(u, s)] = int(tight[s] and not any(tight[a] for a in f.ancestors[s][1:]))
    return DualFit(sigma, alpha)


@dataclass
class DualFitAudit:
    feasible: bool
    objective: Fraction
    primal: Fraction
    worst_residual: Fraction
    failures: list[str] = field(default_factory=list)

    @property
    def ratio_ok(self) -> bool:
        return self.objective <= 2 * self.primal

    @property
    def ok(self) -> bool:
        return self.feasible and self.ratio_ok

    def to_json(self) -> dict:
        return {"worst_residual": float(self.worst_residual), "pass": self.ok}


def audit_dualfit(dual: DualFit, instance: Instance, impressions: Iterable[Impression],
                  primal: Fraction) -> DualFitAudit:
    """Exact check of the covering constraints (all dimensions as the type) and the factor 2."""
    objective = sum(dual.sigma.values(), Q(0))
    for (u, s), a in dual.alpha.items():
        if a:
            objective += instance.bidders[u].constraints[s].budget
    res = DualFitAudit(True, objective, parse_money(primal), Q(0))
    for v in impressions:
        sigma = dual.sigma.get(v.id, Q(0))
        for bid_id, row in v.bids.items():
            u = instance.bidder_index(bid_id)
            cons = instance.bidders[u].constraints
            lhs = sigma
            for s, c in enumerate(cons):
                if dual.alpha.get((u, s)):
                    lhs += sum((row.get(k, 0) for k in c.dims), Q(0))
            rhs = sum((r for r in row.values() if r > 0), Q(0))
            gap = rhs - lhs
            if gap > 0:
                res.feasible = False
                res.worst_residual = max(res.worst_residual, gap)
                res.failures.append(f"impression {v.id}, bidder {bid_id}: short by {gap}")
    return res


# --------------------------------------------------------------------------
# potential-based bound for the AdGeneral family


def adgeneral_bound_factor(p: int) -> float:
    return 1.0 + 4.0 * math.log2(2 * p + 2)


def adgeneral_ratio_bound(primal_total, opt_value, p: int) -> bool:
    """True iff OPT <= (1 + 4 lg(2p+2)) * ALG, with relative slack 1e-6."""
    return float(opt_value) <= adgeneral_bound_factor(p) * float(primal_total) * (1 + 1e-6)


# --------------------------------------------------------------------------
# wiring into reports


def attach_certificate(report, session) -> None:
    from .algorithms import AdLaminarSession, GreedyLaminarSession, PotentialSession

    inst = session.instance
    if isinstance(session, AdLaminarSession):
        dual = dual_prime_from_session(session)
        obj = dual_prime_objective(dual, inst, session.forests)
        feas = audit_feasibility_dprime(dual, inst, session.offered, session.forests)
        ratio = audit_ratio(report.primal, obj)
        report.dual_objective = obj
        report.feasibility = feas.to_json() | {"ratio_pass": ratio.ok}
        report.warnings.extend(feas.failures[:20])
    elif isinstance(session, GreedyLaminarSession):
        fit = greedy_dual_fit(session)
        audit = audit_dualfit(fit, inst, session.offered, report.primal)
        report.dual_objective = float(audit.objective)
        report.feasibility = audit.to_json() | {"ratio_pass": audit.ratio_ok}
        report.warnings.extend(audit.failures[:20])
    elif isinstance(session, PotentialSession):
        # ALG plus the final potential bounds OPT from above
        report.dual_objective = float(report.primal) + math.fsum(session.potential_table().values())


def paranoid_hook(session, decision) -> None:
    """Per-impression checks; problems become warnings, never errors."""
    from .algorithms import AdLaminarSession

    if not isinstance(session, AdLaminarSession):
        return
    prev = getattr(session, "_paranoid_g", None)
    dual = dual_prime_from_session(session)
    if prev is not None:
        for key, g in dual.g.items():
            if g < prev[key]:
                session.warnings.append(f"gamma decreased at {key} after {decision.impression_id}")
    session._paranoid_g = dict(dual.g)
    if decision.bidder is not None:
        for msg in session.labels[decision.bidder].check():
            session.warnings.append(f"after {decision.impression_id}: {msg}")
    feas = audit_feasibility_dprime(dual, session.instance, session.offered, session.forests)
    for msg in feas.failures:
        session.warnings.append(f"interim: {msg}")
