import collections
import itertools
import json
import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peco.data import DataSet
from peco.errors import AssumptionViolated, FingerprintMismatch, NoFeasibleZ, ZTooLarge
from peco.samplesize import (
    RhoInput,
    comb0,
    draw_d_emb,
    min_z,
    monte_carlo_rho,
    plan_for_family,
    plan_sample_size,
    rho,
    rho_exact,
)
from peco.sdds import SddsFamily


def inp(sets, D):
    return RhoInput.from_family(SddsFamily.from_sets(sets), D)


def brute_rho(sets, D, z) -> Fraction:
    """Exact containment probability by listing every z-subset."""
    hits = total = 0
    for sub in itertools.combinations(range(D), z):
        s = set(sub)
        total += 1
        hits += any(set(m) <= s for m in sets)
    return Fraction(hits, total)


families = st.lists(
    st.frozensets(st.integers(0, 7), min_size=1, max_size=3), min_size=1, max_size=3, unique=True
)


class TestRho:
    def test_single_point_family(self):
        i = inp([(0,)], 10)
        assert [rho(i, z) for z in range(11)] == [z / 10 for z in range(11)]

    def test_two_disjoint_singletons(self):
        assert rho(RhoInput(10, ((1, 1), (1, 1), (2, 2))), 1) == 0.2

    def test_full_draw_is_certain(self):
        assert rho_exact(inp([(0, 1), (1, 2, 3)], 9), 9) == 1

    def test_empty_family_is_certain(self):
        i = RhoInput(5, ())
        assert all(rho_exact(i, z) == 1 for z in range(6))

    def test_singleton_closed_form(self):
        D, r = 12, 3
        i = inp([tuple(range(r))], D)
        for z in range(D + 1):
            assert rho_exact(i, z) == Fraction(comb0(D - r, z - r), math.comb(D, z))

    @given(families, st.integers(8, 9))
    @settings(max_examples=40, deadline=None)
    def test_matches_enumeration(self, sets, D):
        i = inp(sets, D)
        for z in range(D + 1):
            assert rho_exact(i, z) == brute_rho(sets, D, z)

    @given(families, st.integers(8, 14))
    @settings(max_examples=60)
    def test_range_and_monotone(self, sets, D):
        i = inp(sets, D)
        values = [rho_exact(i, z) for z in range(D + 1)]
        assert all(0 <= v <= 1 for v in values)
        assert all(b >= a for a, b in zip(values, values[1:]))

    def test_z_range(self):
        with pytest.raises(ValueError):
            rho(inp([(0,)], 4), 5)

    def test_assumption(self):
        with pytest.raises(AssumptionViolated):
            RhoInput(2, ((1, 3),))

    def test_malformed_r_bar(self):
        with pytest.raises(ValueError):
            RhoInput(10, ((1, 2), (1, 2)))

    def test_comb0(self):
        assert comb0(5, -1) == 0 and comb0(5, 6) == 0 and comb0(5, 2) == 10


class TestMinZ:
    def test_linear_family(self):
        assert min_z(inp([(0,)], 10), 0.5) == 5

    def test_target_one(self):
        assert min_z(inp([(0, 1)], 8), 1.0) == 8
        # two disjoint pairs: leaving out any one point still keeps a pair
        assert min_z(inp([(0, 1), (2, 3)], 8), 1.0) == 7

    def test_tiny_target_hits_smallest_member(self):
        assert min_z(inp([(0, 1, 2), (3, 4)], 10), 1e-12) == 2

    def test_empty_family(self):
        assert min_z(RhoInput(6, ()), 0.99) == 0

    def test_target_range(self):
        with pytest.raises(ValueError):
            min_z(inp([(0,)], 3), 0.0)

    def test_unreachable(self):
        # only reachable when validation is bypassed: a member larger than the pool
        i = RhoInput(3, ((1, 1),))
        object.__setattr__(i, "r_bar", ((1, 4),))
        with pytest.raises(NoFeasibleZ):
            min_z(i, 0.5)


class TestMonteCarlo:
    def test_linear_family(self):
        assert monte_carlo_rho([(0,)], 10, 5, 100_000, 1) == pytest.approx(0.5, abs=0.005)

    def test_extremes(self):
        assert monte_carlo_rho([(0, 1)], 6, 0, 1000, 1) == 0.0
        assert monte_carlo_rho([(0, 1)], 6, 6, 1000, 1) == 1.0

    def test_deterministic(self):
        a = monte_carlo_rho([(0, 2), (1,)], 9, 3, 25_000, 42)
        assert a == monte_carlo_rho([(0, 2), (1,)], 9, 3, 25_000, 42)

    @pytest.mark.parametrize("sets, D", [([(0, 1), (1, 2)], 8), ([(0,), (1, 2, 3)], 12)])
    def test_agreement(self, sets, D):
        i = inp(sets, D)
        for z in range(D + 1):
            p = rho(i, z)
            mc = monte_carlo_rho(sets, D, z, 20_000, z)
            assert abs(mc - p) <= 4 * math.sqrt(p * (1 - p) / 20_000) + 0.002

    def test_labels_are_remapped(self):
        assert monte_carlo_rho([(100,)], 4, 2, 10_000, 3) == pytest.approx(0.5, abs=0.03)


class TestDraw:
    def test_full_draw_is_permutation(self):
        d = DataSet.from_points([(1,), (2,), (2,), (3,)])
        out = draw_d_emb(d, 3, 9)
        assert sorted(out) == [(1.0,), (2.0,), (3.0,)]

    def test_same_seed_same_draw(self):
        d = DataSet.from_points([(i,) for i in range(20)])
        assert draw_d_emb(d, 7, 5) == draw_d_emb(d, 7, 5)

    def test_too_large(self):
        with pytest.raises(ZTooLarge):
            draw_d_emb(DataSet.from_points([(1,), (1,)]), 2, 0)

    def test_uniform_single_draw(self):
        d = DataSet.from_points([(1,), (2,), (3,), (4,)])
        freq = collections.Counter(draw_d_emb(d, 1, s).values[0, 0] for s in range(10_000))
        for v in (1, 2, 3, 4):
            assert freq[v] / 10_000 == pytest.approx(0.25, abs=0.02)


class TestPlan:
    def test_json_shape(self):
        plan = plan_sample_size(RhoInput(10, ((1, 3), (1, 3), (2, 4))), 0.5, seed=11)
        obj = json.loads(plan.to_json())
        assert obj["r_bar"] == [[1, 3], [1, 3], [2, 4]]
        assert obj["target"] == 0.5 and obj["seed"] == 11
        assert len(obj["rho_table"]) == 11 and obj["rho_table"][-1] == [10, 1.0]
        z = obj["z_min"]
        assert obj["rho_table"][z][1] >= 0.5 > obj["rho_table"][z - 1][1]

    def test_fingerprint_guard(self):
        fam = SddsFamily.from_sets([(0,)], fingerprint={"solver_id": "grid-oracle"})
        plan_for_family(fam, 4, 0.5, fingerprint={"solver_id": "grid-oracle"})
        with pytest.raises(FingerprintMismatch):
            plan_for_family(fam, 4, 0.5, fingerprint={"solver_id": "builtin-penalty"})
