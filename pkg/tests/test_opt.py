import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from budgetalloc.adversary import intro_scenarios, run_admission_lb, run_aon_lb
from budgetalloc.algorithms import PotentialSession, run_online
from budgetalloc.core import GENERAL, LAMINAR, Q
from budgetalloc.generators import RandomInstanceSpec, generate
from budgetalloc.opt import (
    NotGeneratedTranscript,
    OracleLimitExceeded,
    opt_analytic,
    opt_brute,
    opt_lp,
)
from helpers import imp, single_bidder


def scipy_offline_lp(inst):
    """The same relaxation written densely, one x per (impression, bidder), no merging."""
    cols = []  # ("x", v, u) or ("e", v, u, k)
    for vi, v in enumerate(inst.impressions):
        for u, b in enumerate(inst.bidders):
            row = {k: r for k, r in v.bid_row(b.id).items() if r > 0}
            if row:
                cols.append(("x", vi, u))
                cols.extend(("e", vi, u, k) for k in row)
    idx = {c: i for i, c in enumerate(cols)}
    A, rhs = [], []
    for c in cols:
        if c[0] == "e":
            _, vi, u, k = c
            r = np.zeros(len(cols))
            r[idx[c]] = 1
            r[idx[("x", vi, u)]] = -float(inst.impressions[vi].bid(inst.bidders[u].id, k))
            A.append(r)
            rhs.append(0.0)
    for vi in range(len(inst.impressions)):
        r = np.zeros(len(cols))
        for c in cols:
            if c[0] == "x" and c[1] == vi:
                r[idx[c]] = 1
        A.append(r)
        rhs.append(1.0)
    for u, b in enumerate(inst.bidders):
        for con in b.constraints:
            r = np.zeros(len(cols))
            for c in cols:
                if c[0] == "e" and c[2] == u and c[3] in con.dims:
                    r[idx[c]] = 1
            A.append(r)
            rhs.append(float(con.budget))
    if not cols:
        return 0.0
    obj = np.array([-1.0 if c[0] == "e" else 0.0 for c in cols])
    res = linprog(obj, A_ub=np.array(A), b_ub=rhs, bounds=[(0, None)] * len(cols), method="highs")
    return -res.fun


def naive_brute(inst, semantics):
    """Enumerate every impression -> bidder-or-nobody map; earnings via a per-bidder LP."""
    U, V = inst.bidders, inst.impressions
    best = 0.0
    for choice in itertools.product(range(len(U) + 1), repeat=len(V)):
        total = 0.0
        feasible = True
        for u, b in enumerate(U):
            caps = {}
            for v, c in zip(V, choice):
                if c == u + 1:
                    for k, r in v.bid_row(b.id).items():
                        caps[k] = caps.get(k, 0) + float(r)
            if not caps:
                continue
            dims = sorted(caps)
            A = [[1.0 if k in con.dims else 0.0 for k in dims] for con in b.constraints]
            bub = [float(con.budget) for con in b.constraints]
            if semantics == "aon":
                if any(sum(a * caps[k] for a, k in zip(row, dims)) > bb + 1e-12 for row, bb in zip(A, bub)):
                    feasible = False
                    break
                total += sum(caps.values())
            else:
                res = linprog(-np.ones(len(dims)), A_ub=np.array(A), b_ub=bub,
                              bounds=[(0, caps[k]) for k in dims], method="highs")
                total += -res.fun
        if feasible:
            best = max(best, total)
    return best


def tiny(seed, mode=LAMINAR, bidders=2, impressions=4):
    spec = RandomInstanceSpec(mode=mode, bidders=bidders, dims=4 if mode == GENERAL else None,
                              depth=2, branching=3, impressions=impressions, seed=seed,
                              bid_ratio=Fraction(1, 2))
    return generate(spec)


class TestLP:
    def test_budget_capped(self):
        inst = single_bidder([("a", (1,), 1)], [imp("v", u0={1: 3})])
        assert opt_lp(inst) == 1

    def test_two_bids_one_budget(self):
        inst = single_bidder([("a", (1,), 1)], [imp("v", u0={1: 1}), imp("w", u0={1: 1})])
        assert opt_lp(inst) == 1

    def test_intro_a(self):
        a, b = intro_scenarios()
        assert opt_lp(a) == 2 and opt_lp(b) == 1

    def test_empty(self):
        assert opt_lp(single_bidder([("a", (1,), 1)])) == 0

    @pytest.mark.parametrize("seed", range(12))
    @pytest.mark.parametrize("mode", [LAMINAR, GENERAL])
    def test_matches_dense_scipy_formulation(self, seed, mode):
        inst = tiny(seed, mode, bidders=3, impressions=7)
        assert float(opt_lp(inst)) == pytest.approx(scipy_offline_lp(inst), rel=1e-9, abs=1e-9)

    @pytest.mark.parametrize("strategy", ["adlaminar", "greedy-laminar"])
    def test_upper_bounds_online_revenue(self, strategy):
        inst = generate(RandomInstanceSpec(impressions=40, seed=4, bid_ratio=Fraction(1, 5)))
        assert opt_lp(inst) >= run_online(inst, strategy, audit="off").primal


class TestBrute:
    def test_empty(self):
        assert opt_brute(single_bidder([("a", (1,), 1)])) == 0

    def test_intro(self):
        a, b = intro_scenarios()
        assert opt_brute(a) == 2 and opt_brute(b) == 1
        assert opt_brute(a, "aon") == 2 and opt_brute(b, "aon") == 1

    def test_limits(self):
        inst = single_bidder([("a", (1,), 1)], [imp(f"v{i}", u0={1: 1}) for i in range(13)])
        with pytest.raises(OracleLimitExceeded, match="too large"):
            opt_brute(inst)

    def test_partial_earns_part_of_a_bid(self):
        inst = single_bidder([("a", (1,), 1)], [imp("v", u0={1: 3})])
        assert opt_brute(inst, "partial") == 1
        assert opt_brute(inst, "aon") == 0

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("mode", [LAMINAR, GENERAL])
    def test_matches_naive_enumeration(self, seed, mode):
        inst = tiny(seed, mode)
        for sem in ("partial", "aon"):
            assert float(opt_brute(inst, sem)) == pytest.approx(naive_brute(inst, sem), rel=1e-9, abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([LAMINAR, GENERAL]))
    def test_relations(self, seed, mode):
        inst = tiny(seed, mode, bidders=3, impressions=6)
        part = opt_brute(inst, "partial")
        assert opt_brute(inst, "aon") <= part
        assert part <= opt_lp(inst)


class TestAnalytic:
    def test_admission_stop_phase(self):
        class Reject:
            def __init__(self, inst, eps):
                from budgetalloc.algorithms import Session
                self.inner = Session(inst)
                self.state = self.inner.state
                self.offered = self.inner.offered

            def offer(self, v):
                self.offered.append(v)
                self.state.reject(v)
                from budgetalloc.algorithms import Decision
                return Decision(v.id, None, {})

        t = run_admission_lb(4, Reject)
        assert t.details["stop_phase"] == 0
        assert opt_analytic(t) == 1 and t.alg_revenue == 0

    def test_passthrough_from_metadata(self):
        assert opt_analytic({"transcript": {"opt_analytic": "8"}}) == 8
        assert opt_analytic('{"transcript": {"opt_analytic": "3/2"}}') == Q(3, 2)

    def test_plain_instance_rejected(self):
        with pytest.raises(NotGeneratedTranscript, match="not a generated transcript"):
            opt_analytic({"bidders": []})

    def test_aon_accept_one_branch(self):
        t = run_aon_lb(4, Q(1, 2), Q(1, 1000), lambda inst, eps: PotentialSession(inst, "aon", eps=eps))
        assert opt_analytic(t) == 4

    def test_brute_and_lp_dominate_analytic_on_small_transcript(self):
        t = run_aon_lb(4, Q(1, 2), Q(1, 1000), lambda inst, eps: PotentialSession(inst, "aon", eps=eps))
        assert len(t.instance.impressions) <= 12
        assert opt_brute(t.instance, "aon") >= t.opt_analytic
        assert opt_lp(t.instance) >= t.opt_analytic
