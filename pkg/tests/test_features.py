"""Unit and property tests for rewards, costs, and feature builders."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brushbandit.features import (
    DEFAULT_GAMMA,
    LOOKBACK,
    CostParams,
    NormalizationSpec,
    UserHistory,
    alg_advantage_features,
    alg_baseline_features,
    brushing_quality,
    cost_term,
    discount_weight_constant,
    env_baseline_features,
    env_treatment_features,
    exp_avg,
    is_weekend_day,
    surrogate_reward,
)

DEPLOY_COST = CostParams(xi1=100.0, xi2=100.0)


def history_with(qualities, actions, **kwargs):
    return UserHistory(
        past_qualities=list(qualities), past_actions=list(actions), **kwargs
    )


class TestBrushingQuality:
    def test_upper_truncation(self):
        assert brushing_quality(200, 10) == 180

    def test_zero_case(self):
        assert brushing_quality(0, 0) == 0

    def test_plain_subtraction(self):
        assert brushing_quality(100, 30) == 70

    def test_lower_clamp(self):
        assert brushing_quality(10, 50) == 0

    def test_negative_inputs_rejected(self):
        with pytest.raises(ValueError):
            brushing_quality(-1, 0)
        with pytest.raises(ValueError):
            brushing_quality(10, -2)

    @given(
        st.floats(min_value=0, max_value=1e6),
        st.floats(min_value=0, max_value=1e6),
    )
    def test_always_in_range(self, d, p):
        q = brushing_quality(d, p)
        assert 0.0 <= q <= 180.0


class TestDiscountWeights:
    def test_default_gamma_value(self):
        # Oracle: exact rational evaluation of (1-g) / (1 - g**14).
        g = Fraction(13, 14)
        oracle = float((1 - g) / (1 - g**14))
        assert oracle == pytest.approx(0.110628, abs=1e-6)
        assert discount_weight_constant(13 / 14) == pytest.approx(oracle, abs=1e-12)

    def test_half_gamma_value(self):
        g = Fraction(1, 2)
        oracle = float((1 - g) / (1 - g**14))
        assert oracle == pytest.approx(0.5000305194408838, abs=1e-12)
        assert discount_weight_constant(0.5) == pytest.approx(oracle, abs=1e-12)

    @given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
    def test_weights_sum_to_one(self, gamma):
        c = discount_weight_constant(gamma)
        total = sum(c * gamma ** (j - 1) for j in range(1, LOOKBACK + 1))
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.2, 1.5])
    def test_invalid_gamma_rejected(self, gamma):
        with pytest.raises(ValueError):
            discount_weight_constant(gamma)


class TestExpAvg:
    def test_saturated_quality(self):
        h = history_with([180.0] * 14, [0] * 14)
        assert exp_avg(h, "quality", DEFAULT_GAMMA) == pytest.approx(180.0)

    def test_saturated_actions(self):
        h = history_with([0.0] * 14, [1] * 14)
        assert exp_avg(h, "action", DEFAULT_GAMMA) == pytest.approx(1.0)

    def test_single_most_recent_entry_weights_c_gamma(self):
        h = history_with([1.0], [0])
        c = discount_weight_constant(DEFAULT_GAMMA)
        assert exp_avg(h, "quality", DEFAULT_GAMMA) == pytest.approx(c)
        assert c == pytest.approx(0.110628, abs=1e-6)

    def test_empty_history_is_zero(self):
        h = UserHistory.at_entry()
        assert exp_avg(h, "quality", DEFAULT_GAMMA) == 0.0
        assert exp_avg(h, "action", DEFAULT_GAMMA) == 0.0

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError):
            exp_avg(UserHistory.at_entry(), "reward", DEFAULT_GAMMA)

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(5)
        q = list(rng.uniform(0, 180, size=9))
        h = history_with(q, [0] * 9)
        c = discount_weight_constant(0.7)
        direct = sum(c * 0.7 ** (j - 1) * q[j - 1] for j in range(1, 10))
        assert exp_avg(h, "quality", 0.7) == pytest.approx(direct, rel=1e-12)

    @given(
        st.lists(st.floats(min_value=0, max_value=180), max_size=14),
        st.floats(min_value=0.05, max_value=0.95),
    )
    def test_quality_range(self, qualities, gamma):
        h = history_with(qualities, [0] * len(qualities))
        assert 0.0 <= exp_avg(h, "quality", gamma) <= 180.0

    @given(
        st.lists(st.integers(min_value=0, max_value=1), max_size=14),
        st.floats(min_value=0.05, max_value=0.95),
    )
    def test_action_range(self, actions, gamma):
        h = history_with([0.0] * len(actions), actions)
        assert 0.0 <= exp_avg(h, "action", gamma) <= 1.0


class TestCostTerm:
    def test_no_send_no_cost(self):
        assert cost_term(120, 0.6, 0, DEPLOY_COST) == 0.0

    def test_first_term_only(self):
        assert cost_term(120, 0.6, 1, DEPLOY_COST) == 100.0

    def test_second_term_only(self):
        assert cost_term(50, 0.9, 1, DEPLOY_COST) == 100.0

    def test_both_terms(self):
        assert cost_term(120, 0.9, 1, DEPLOY_COST) == 200.0

    def test_threshold_ties_are_free(self):
        # Strict inequalities: sitting exactly on a threshold costs nothing.
        assert cost_term(111.0, 0.9, 1, DEPLOY_COST) == 100.0
        assert cost_term(120.0, 0.5, 1, DEPLOY_COST) == 0.0
        assert cost_term(120.0, 0.8, 1, DEPLOY_COST) == 100.0

    @given(
        st.floats(min_value=0, max_value=180),
        st.floats(min_value=0, max_value=180),
        st.floats(min_value=0, max_value=1),
        st.floats(min_value=0, max_value=1),
    )
    def test_monotone_in_both_averages(self, b1, b2, a1, a2):
        lo_b, hi_b = sorted((b1, b2))
        lo_a, hi_a = sorted((a1, a2))
        assert cost_term(lo_b, lo_a, 1, DEPLOY_COST) <= cost_term(
            hi_b, lo_a, 1, DEPLOY_COST
        )
        assert cost_term(lo_b, lo_a, 1, DEPLOY_COST) <= cost_term(
            lo_b, hi_a, 1, DEPLOY_COST
        )
        assert cost_term(lo_b, lo_a, 0, DEPLOY_COST) == 0.0

    def test_param_validation(self):
        with pytest.raises(ValueError):
            CostParams(xi1=-1)
        with pytest.raises(ValueError):
            CostParams(a1=0.8, a2=0.5)
        with pytest.raises(ValueError):
            CostParams(gamma=1.0)


class TestSurrogateReward:
    def test_zero_cost(self):
        assert surrogate_reward(180, 0) == 180

    def test_can_go_negative(self):
        assert surrogate_reward(0, 200) == -200
        assert surrogate_reward(80, 100) == -20

    @given(
        st.floats(min_value=0, max_value=180),
        st.floats(min_value=0, max_value=500),
    )
    def test_bounded_by_quality(self, q, c):
        r = surrogate_reward(q, c)
        assert r <= q
        if c == 0:
            assert r == q
        elif c > 1e-6 * max(1.0, q):  # below that, subtraction can round away
            assert r < q


class TestHistoryCalendar:
    def test_entry_state(self):
        h = UserHistory.at_entry()
        assert (h.day_in_study, h.decision_index, h.time_of_day) == (1, 1, 0)
        assert not h.is_weekend
        assert h.prior_day_total_quality == 0.0

    def test_two_records_roll_the_day(self):
        h = UserHistory.at_entry()
        h.record(60.0, 1)
        assert (h.day_in_study, h.decision_index, h.time_of_day) == (1, 2, 1)
        h.record(40.0, 0)
        assert (h.day_in_study, h.decision_index, h.time_of_day) == (2, 3, 0)
        assert h.prior_day_total_quality == 100.0
        assert h.past_qualities == [40.0, 60.0]
        assert h.past_actions == [0, 1]

    def test_monday_start_weekend_days(self):
        h = UserHistory.at_entry()
        weekend_by_day = {}
        for _ in range(20):
            weekend_by_day.setdefault(h.day_in_study, h.is_weekend)
            h.record(0.0, 0)
        assert [d for d, w in weekend_by_day.items() if w] == [6, 7]
        assert is_weekend_day(13) and is_weekend_day(14) and not is_weekend_day(8)

    def test_lookback_trimmed_to_14(self):
        h = UserHistory.at_entry()
        for i in range(20):
            h.record(float(i), i % 2)
        assert len(h.past_qualities) == 14
        assert h.past_qualities[0] == 19.0

    def test_invalid_history_rejected(self):
        with pytest.raises(ValueError):
            history_with([200.0], [0])
        with pytest.raises(ValueError):
            history_with([10.0], [2])
        with pytest.raises(ValueError):
            history_with([10.0, 20.0], [1])


class TestEnvFeatures:
    def test_day_one_no_history(self):
        h = UserHistory.at_entry()
        g = env_baseline_features(h)
        expected = [1.0, 0.0, (0 - 154) / 163, 0.0, 0.0, (1 - 35.5) / 34.5]
        np.testing.assert_allclose(g, expected)

    def test_centered_prior_day_quality(self):
        h = UserHistory.at_entry()
        h.day_in_study = 2
        h.prior_day_total_quality = 154.0
        assert env_baseline_features(h)[2] == 0.0

    def test_day_seventy_maps_to_one(self):
        h = UserHistory.at_entry()
        h.day_in_study = 70
        assert env_baseline_features(h)[5] == pytest.approx(1.0)

    def test_day_thirty_six(self):
        h = UserHistory.at_entry()
        h.day_in_study = 36
        assert env_treatment_features(h)[4] == pytest.approx((36 - 35.5) / 34.5)

    def test_treatment_is_baseline_minus_proportion(self):
        h = history_with([0.0, 50.0, 0.0], [1, 0, 1])
        h.day_in_study = 9
        h.time_of_day = 1
        h.is_weekend = False
        h.prior_day_total_quality = 88.0
        g = env_baseline_features(h)
        t = env_treatment_features(h)
        np.testing.assert_allclose(t, np.delete(g, 4))

    def test_proportion_nonzero_uses_observed_denominator(self):
        h = history_with([0.0, 50.0, 0.0, 10.0], [0, 0, 0, 0])
        assert env_baseline_features(h)[4] == pytest.approx(0.5)

    def test_morning_weekday_binary_entries(self):
        h = UserHistory.at_entry()
        g = env_baseline_features(h)
        assert g[1] == 0.0 and g[3] == 0.0

    def test_custom_normalization(self):
        norm = NormalizationSpec.for_study_length(29)
        assert norm.norm_day(1) == pytest.approx(-1.0)
        assert norm.norm_day(29) == pytest.approx(1.0)
        assert norm.norm_day(15) == pytest.approx(0.0)


class TestAlgFeatures:
    def test_no_history_vector(self):
        h = UserHistory.at_entry()
        np.testing.assert_allclose(
            alg_advantage_features(h), [1.0, 0.0, -154 / 163, 0.0]
        )

    def test_saturated_history(self):
        h = history_with([180.0] * 14, [1] * 14)
        h.time_of_day = 1
        f = alg_advantage_features(h)
        np.testing.assert_allclose(f, [1.0, 1.0, (180 - 154) / 163, 1.0])

    def test_centered_discounted_quality(self):
        h = history_with([154.0] * 14, [0] * 14)
        assert alg_advantage_features(h)[2] == pytest.approx(0.0, abs=1e-12)

    def test_baseline_appends_weekend(self):
        h = history_with([10.0] * 3, [1, 0, 1])
        h.is_weekend = True
        f = alg_advantage_features(h)
        m = alg_baseline_features(h)
        np.testing.assert_array_equal(m[:4], f)
        assert m[4] == 1.0

    def test_consistency_with_cost_inputs(self):
        # The bandit's discounted-average entries and the cost term's
        # inputs must come from the same history computation.
        rng = np.random.default_rng(11)
        q = list(rng.uniform(0, 180, 10))
        a = [int(x) for x in rng.integers(0, 2, 10)]
        h = history_with(q, a)
        b_bar = exp_avg(h, "quality", DEFAULT_GAMMA)
        a_bar = exp_avg(h, "action", DEFAULT_GAMMA)
        f = alg_advantage_features(h, DEFAULT_GAMMA)
        assert f[2] == (b_bar - 154) / 163
        assert f[3] == a_bar


@settings(max_examples=50)
@given(
    st.lists(st.floats(min_value=0, max_value=180), min_size=0, max_size=14),
    st.lists(st.integers(min_value=0, max_value=1), min_size=14, max_size=14),
)
def test_ranges_hold_for_arbitrary_histories(qualities, actions):
    h = history_with(qualities, actions[: len(qualities)])
    assert 0.0 <= exp_avg(h, "quality", DEFAULT_GAMMA) <= 180.0
    assert 0.0 <= exp_avg(h, "action", DEFAULT_GAMMA) <= 1.0
    g = env_baseline_features(h)
    assert g[1] in (0.0, 1.0) and g[3] in (0.0, 1.0)
    assert 0.0 <= g[4] <= 1.0
