import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dndebias.errors import ArityError, InsufficientDataError, QuantizationError, UndefinedBPCError
from dndebias.metrics import (
    BiasReport,
    attribute_bias,
    bpc,
    build_roc,
    equalized_odds_thresholds,
    group_mean_std,
    group_std,
    report_from_scores,
    report_from_table,
    tpr_at_fpr,
)
from oracles import best_tpr_at, sweep_points

unit = st.floats(0, 1, allow_nan=False)
scores = st.lists(st.floats(-1, 1, allow_nan=False).map(lambda v: round(v, 2)), min_size=1, max_size=60)


class TestBuildRoc:
    def test_perfect_separation(self):
        roc = build_roc(np.ones(5), np.zeros(7))
        pt = tpr_at_fpr(roc, 1 / 7)
        assert pt.tpr == 1.0 and pt.achieved_fpr == 0.0

    def test_identical_distributions_on_diagonal(self):
        s = np.linspace(0, 1, 50)
        roc = build_roc(s, s)
        np.testing.assert_array_equal(roc.tpr, roc.fpr)

    def test_twenty_hand_listed_scores(self):
        gen = [0.9, 0.85, 0.85, 0.7, 0.66, 0.6, 0.6, 0.55, 0.3, 0.1]
        imp = [0.8, 0.6, 0.5, 0.45, 0.4, 0.3, 0.3, 0.2, 0.05, -0.2]
        roc = build_roc(gen, imp)
        pts = sweep_points(gen, imp)
        assert len(roc) == len(pts)
        for i, (t, tpr, fpr) in enumerate(pts):
            assert roc.thresholds[i] == t
            assert roc.tpr[i] == tpr and roc.fpr[i] == fpr

    @given(scores, scores)
    def test_monotone_with_endpoints(self, gen, imp):
        roc = build_roc(gen, imp)
        assert (np.diff(roc.tpr) >= 0).all() and (np.diff(roc.fpr) >= 0).all()
        assert (roc.tpr[0], roc.fpr[0]) == (0, 0)
        assert (roc.tpr[-1], roc.fpr[-1]) == (1, 1)

    def test_errors(self):
        with pytest.raises(InsufficientDataError):
            build_roc([], [0.1])
        with pytest.raises(InsufficientDataError):
            build_roc([0.1], [])
        with pytest.raises(ValueError):
            build_roc([np.nan], [0.1])


class TestTprAtFpr:
    def test_exact_operating_point(self):
        roc = build_roc([0.9, 0.8, 0.7, 0.2], [0.85, 0.5, 0.4, 0.1])
        pt = tpr_at_fpr(roc, 0.25)
        assert (pt.tpr, pt.achieved_fpr, pt.threshold) == (0.75, 0.25, 0.7)

    def test_ten_vs_hundred(self):
        r = np.random.default_rng(4)
        gen = r.normal(1.0, 1.0, 10)
        imp = r.normal(0.0, 1.0, 100)
        pt = tpr_at_fpr(build_roc(gen, imp), 0.05)
        assert (pt.tpr, pt.achieved_fpr, pt.threshold) == best_tpr_at(gen, imp, 0.05)

    def test_ties_move_together(self):
        roc = build_roc([0.5, 0.5, 0.2], [0.5, 0.5] + [0.1] * 8)
        # the 0.5 run crosses as a block: one impostor alone can never be accepted
        assert tpr_at_fpr(roc, 0.1).tpr == 0.0
        assert tpr_at_fpr(roc, 0.2).tpr == 1.0

    def test_quantization(self):
        roc = build_roc([1.0], np.zeros(10))
        with pytest.raises(QuantizationError):
            tpr_at_fpr(roc, 0.05)
        tpr_at_fpr(roc, 0.1)

    def test_interpolation_flag(self):
        # tie at 0.7 gives a diagonal segment from (0, .5) to (.5, 1)
        roc = build_roc([0.9, 0.7], [0.7, 0.7, 0.2, 0.1])
        assert tpr_at_fpr(roc, 0.25).tpr == 0.5
        assert tpr_at_fpr(roc, 0.25, interpolate=True).tpr == pytest.approx(0.75)


class TestBias:
    def test_published_value(self):
        assert attribute_bias(0.869, 0.794) == pytest.approx(0.075, abs=1e-12)
        assert round(attribute_bias(0.869, 0.794), 3) == 0.075

    def test_equal(self):
        assert attribute_bias(0.4, 0.4) == 0

    @given(unit, unit)
    def test_symmetric_bounded(self, x, y):
        assert attribute_bias(x, y) == attribute_bias(y, x)
        assert 0 <= attribute_bias(x, y) <= 1

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            attribute_bias(1.2, 0.3)


class TestBpc:
    # frozen from direct evaluation of (b - b') / b - (t - t') / t
    def test_row_1e5(self):
        v = bpc(0.879, 0.042, 0.825, 0.002)
        assert v == pytest.approx(0.8909475052819762, abs=1e-12)
        assert abs(v - 0.891) <= 0.001

    def test_row_1e4(self):
        v = bpc(0.914, 0.032, 0.880, 0.009)
        assert v == pytest.approx(0.681550875273523, abs=1e-12)
        assert abs(v - 0.682) <= 0.001

    @given(st.floats(0.01, 1), st.floats(0.01, 1))
    def test_endpoints(self, t, b):
        assert bpc(t, b, t, b) == 0
        assert bpc(t, b, t, 0.0) == 1

    def test_undefined(self):
        with pytest.raises(UndefinedBPCError):
            bpc(0.9, 0.0, 0.8, 0.0)
        with pytest.raises(UndefinedBPCError):
            bpc(0.0, 0.1, 0.8, 0.0)


class TestGroupStd:
    def test_published_triple(self):
        mean, std = group_mean_std([0.912, 0.883, 0.883])
        assert mean == pytest.approx(0.8926666666666666, abs=1e-12)
        assert std == pytest.approx(0.013670731102939931, abs=1e-12)
        assert abs(std - 0.0137) <= 0.0005 and abs(mean - 0.893) <= 0.0005
        # the sample (ddof=1) convention would not round to the reported 0.014
        assert round(float(np.std([0.912, 0.883, 0.883], ddof=1)), 3) != 0.014

    def test_constant(self):
        assert group_std([0.7, 0.7, 0.7]) == 0

    @given(st.lists(unit, min_size=2, max_size=6), st.randoms())
    def test_permutation_and_textbook(self, vals, rnd):
        shuffled = list(vals)
        rnd.shuffle(shuffled)
        assert group_std(shuffled) == pytest.approx(group_std(vals), abs=1e-15)
        mean = sum(vals) / len(vals)
        textbook = math.sqrt(sum((v - mean) ** 2 for v in vals) / len(vals))
        assert group_std(vals) == pytest.approx(textbook, abs=1e-12)

    def test_arity(self):
        with pytest.raises(ArityError):
            group_std([0.5])


class TestEqualizedOdds:
    def test_identical_groups(self):
        r = np.random.default_rng(0)
        gen, imp = r.normal(1, 1, 50), r.normal(0, 1, 200)
        pts = equalized_odds_thresholds({"a": (gen, imp), "b": (gen.copy(), imp.copy())}, 0.05)
        assert pts["a"] == pts["b"]

    @pytest.mark.parametrize("seed", range(5))
    def test_conservative_bound_and_brute_force(self, seed):
        r = np.random.default_rng(seed)
        groups = {
            "a": (r.normal(1, 1, 30), r.normal(0, 1, 80)),
            "b": (r.normal(0.5, 1, 25), r.normal(0, 1, 60)),
        }
        F = 0.1
        pts = equalized_odds_thresholds(groups, F)
        for g, (gen, imp) in groups.items():
            assert abs(pts[g].achieved_fpr - F) <= 1 / len(imp)
            assert (pts[g].tpr, pts[g].achieved_fpr, pts[g].threshold) == best_tpr_at(gen, imp, F)

    def test_arity_and_quantization(self):
        with pytest.raises(ArityError):
            equalized_odds_thresholds({"a": ([1], [0])}, 0.5)
        with pytest.raises(QuantizationError, match="'b'"):
            equalized_odds_thresholds({"a": ([1], np.zeros(10)), "b": ([1], np.zeros(5))}, 0.1)


def _groups(seed, n=(40, 40, 40)):
    r = np.random.default_rng(seed)
    out = {}
    for label, shift, k in zip(("l", "m", "d"), (1.5, 1.0, 0.5), n):
        out[label] = (r.normal(shift, 1, k), r.normal(0, 1, 4 * k))
    return out


def _overall(groups):
    return (np.concatenate([g for g, _ in groups.values()]), np.concatenate([i for _, i in groups.values()]))


class TestReports:
    def test_against_itself(self):
        g = _groups(0)
        ref = report_from_scores(_overall(g), g, [0.05, 0.1], ("l", "d"), tag="ref")
        rep = report_from_scores(_overall(g), g, [0.05, 0.1], ("l", "d"), reference=ref)
        assert [r.bpc for r in rep.rows] == [0.0, 0.0]
        assert rep.reference == "ref"

    def test_three_group_std(self):
        g = _groups(1)
        rep = report_from_scores(_overall(g), g, [0.1], ("l", "d"))
        row = rep.row(0.1)
        assert row.std == group_std([row.tpr_per_group[k] for k in ("l", "m", "d")])
        assert row.bias == abs(row.tpr_per_group["l"] - row.tpr_per_group["d"])

    def test_two_groups_no_std(self):
        g = _groups(1)
        del g["m"]
        assert report_from_scores(_overall(g), g, [0.1], ("l", "d")).rows[0].std is None

    def test_transcribed_table_row(self):
        ref = report_from_table(
            {1e-5: {"tpr": 0.879, "bias": 0.042, "tpr_per_group": {"m": 0.884, "f": 0.841}}},
            ("m", "f"),
            tag="baseline",
        )
        deb = report_from_table({1e-5: {"tpr": 0.825, "bias": 0.002}}, ("m", "f"), reference=ref)
        assert ref.rows[0].bias == 0.042
        assert abs(deb.rows[0].bpc - 0.891) <= 0.001
        table = deb.to_table()
        assert "0.891" in table and "-" in table

    def test_zero_reference_bias_leaves_bpc_empty(self, caplog):
        same = (np.array([0.9, 0.8]), np.array([0.1, 0.2, 0.3, 0.4]))
        groups = {"a": same, "b": same}
        ref = report_from_scores(same, groups, [0.25], ("a", "b"))
        with caplog.at_level(logging.WARNING):
            rep = report_from_scores(same, groups, [0.25], ("a", "b"), reference=ref)
        assert rep.rows[0].bpc is None
        assert "BPC" in caplog.text

    def test_json_round_trip_and_table(self):
        g = _groups(2)
        ref = report_from_scores(_overall(g), g, [0.01, 0.1], ("l", "d"), tag="ref")
        rep = report_from_scores(_overall(g), g, [0.01, 0.1], ("l", "d"), reference=ref, tag="x")
        back = BiasReport.from_json(rep.to_json())
        assert back == rep
        lines = rep.to_table().splitlines()
        assert lines[1].split() == ["FPR", "TPR", "TPR_l", "TPR_d", "TPR_m", "Bias", "BPC", "STD"]
        assert len(lines) == 4

    def test_group_quantization_named(self):
        g = {"a": ([1.0], np.zeros(100)), "b": ([1.0], np.zeros(5))}
        with pytest.raises(QuantizationError, match="'b' at FPR 0.01"):
            report_from_scores(_overall(g), g, [0.01], ("a", "b"))
