from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from budgetalloc.core import (
    GENERAL,
    LAMINAR,
    AllocationState,
    BudgetOverflow,
    Q,
    complete_singletons,
    dumps_instance,
    format_money,
    instance_stats,
    loads_instance,
    parse_money,
    small_bids_threshold,
    validate,
)
from helpers import imp, single_bidder


class TestMoney:
    def test_parse_forms(self):
        assert parse_money("0.25") == Q(1, 4)
        assert parse_money("1/4") == Q(1, 4)
        assert parse_money(3) == 3
        assert parse_money(Fraction(2, 6)) == Q(1, 3)

    def test_floats_rejected(self):
        with pytest.raises(TypeError):
            parse_money(0.5)
        with pytest.raises(TypeError):
            parse_money(True)

    @given(st.fractions())
    def test_round_trip(self, f):
        assert parse_money(format_money(parse_money(f))) == f

    def test_lowest_terms(self):
        q = parse_money("6/8")
        assert (q.numerator, q.denominator) == (3, 4)


class TestValidate:
    def test_non_laminar_pair(self):
        inst = single_bidder([("a", (1, 2), 1), ("b", (2, 3), 1)])
        assert any("non-laminar pair" in v for v in validate(inst))

    def test_general_allows_overlap(self):
        inst = single_bidder([("a", (1, 2), 1), ("b", (2, 3), 1)], mode=GENERAL)
        assert validate(inst) == []

    def test_zero_budget(self):
        inst = single_bidder([("a", (0,), 0)], mode=GENERAL)
        assert any("non-positive budget" in v for v in validate(inst))

    def test_missing_singleton(self):
        inst = single_bidder([("a", (0, 1), 2), ("b", (0,), 1)], [imp("v", u0={1: 1})])
        assert any("missing singleton" in v for v in validate(inst))

    def test_out_of_range_dim(self):
        inst = single_bidder([("a", (0,), 1)], [imp("v", u0={5: 1})], dims=2)
        assert any("out of range" in v for v in validate(inst))

    def test_negative_bid(self):
        inst = single_bidder([("a", (0,), 1)], [imp("v", u0={0: -1})])
        assert any("negative bid" in v for v in validate(inst))


class TestCompleteSingletons:
    def test_synthesized_budget_is_tightest_enclosing(self):
        inst =single_bidder([("root", (0, 1, 2), 5), ("mid", (1, 2), 3)], [imp("v", u0={2: 1})])
        done = complete_singletons(inst)
        assert validate(done) == []
        added = {c.dims: c.budget for c in done.bidders[0].constraints if c.id.startswith("auto")}
        assert added == {(0,): 5, (1,): 3, (2,): 3}

    def test_unconstrained_dimension_gets_total_bid(self):
        inst = single_bidder([("a", (0,), 5)], [imp("v", u0={1: "1/2"}), imp("w", u0={1: "1/4"})], dims=2)
        done = complete_singletons(inst)
        (extra,) = [c for c in done.bidders[0].constraints if c.id.startswith("auto")]
        assert extra.dims == (1,) and extra.budget == Q(3, 4)


class TestStats:
    def test_p_counts_nested_sets(self):
        inst = single_bidder([("a", (1,), 1), ("b", (2,), 1), ("c", (1, 2), 2)])
        assert instance_stats(inst).p == 2

    def test_eps_full_bid(self):
        inst = single_bidder([("a", (0,), 1)], [imp("v", u0={0: 1})])
        assert instance_stats(inst).eps == 1

    def test_small_bids_at_p1(self):
        assert small_bids_threshold(1) == Q(1, 2)
        inst = single_bidder([("a", (0,), 1)], [imp("v", u0={0: "1/2"})])
        assert instance_stats(inst).small_bids_ok
        inst = single_bidder([("a", (0,), 1)], [imp("v", u0={0: "51/100"})])
        assert not instance_stats(inst).small_bids_ok

    @pytest.mark.parametrize("p", [2, 4, 5, 9])
    def test_threshold_never_above_true_value(self, p):
        import math

        assert float(small_bids_threshold(p)) <= 1 / math.log2(2 * p + 2)


class TestAllocationState:
    def make(self):
        inst = single_bidder([("k1", (1,), 5), ("k2", (2,), 5), ("s", (1, 2), 5)],
                             [imp("v", u0={1: 10, 2: 10})])
        return inst, AllocationState(inst)

    def test_remaining_capacity(self):
        inst, st_ = self.make()
        v = inst.impressions[0]
        assert st_.remaining_capacity("u0", "s") == 5
        st_.earn(0, v, {1: 2})
        assert st_.remaining_capacity("u0", "s") == 3
        st_.earn(0, v, {2: 3})
        assert st_.remaining_capacity("u0", "s") == 0
        assert not st_.dim_open(0, 1)

    def test_overflow(self):
        inst, st_ = self.make()
        with pytest.raises(BudgetOverflow, match="budget overflow"):
            st_.earn(0, inst.impressions[0], {1: 6})
        assert st_.primal_total == 0 and not st_.log

    def test_earning_above_bid(self):
        inst, st_ = self.make()
        with pytest.raises(ValueError):
            st_.earn(0, inst.impressions[0], {1: 11})

    def test_accumulates_on_dimension(self):
        inst = single_bidder([("k", (1,), 1000)], [imp("a", u0={1: 500}), imp("b", u0={1: 10})])
        st_ = AllocationState(inst)
        st_.earn(0, inst.impressions[0], {1: 500})
        st_.earn(0, inst.impressions[1], {1: 10})
        assert st_.earned_on(0, 1) == 510

    def test_zero_earning_only_logs(self):
        inst, st_ = self.make()
        st_.earn(0, inst.impressions[0], {1: 0, 2: 0})
        assert st_.earned == {} and st_.primal_total == 0 and len(st_.log) == 1

    @given(st.lists(st.tuples(st.sampled_from([1, 2]), st.fractions(0, 3)), max_size=30))
    def test_kappa_bounded_and_total_matches_log(self, steps):
        inst, st_ = self.make()
        v = inst.impressions[0]
        for k, a in steps:
            try:
                st_.earn(0, v, {k: a})
            except BudgetOverflow:
                pass
            for s in range(3):
                assert 0 <= st_.kappa(0, s) <= 1
        assert st_.primal_total == st_.recompute_total()


class TestJson:
    def test_round_trip(self):
        inst = single_bidder([("a", (0, 1), "5/2"), ("b", (0,), 1), ("c", (1,), 2)],
                             [imp("v", u0={0: "1/3", 1: "0.2"})])
        again = loads_instance(dumps_instance(inst))
        assert again == inst

    def test_loader_synthesizes_singletons(self):
        inst = single_bidder([("a", (0, 1), 2)], [imp("v", u0={0: 1})])
        again = loads_instance(dumps_instance(inst))
        assert validate(again) == []
        raw = loads_instance(dumps_instance(inst), synthesize=False)
        assert validate(raw)

    def test_mode_kept(self):
        inst = single_bidder([("a", (0, 1), 2)], mode=GENERAL)
        assert loads_instance(dumps_instance(inst)).mode == GENERAL
        assert single_bidder([("a", (0,), 2)]).mode == LAMINAR
