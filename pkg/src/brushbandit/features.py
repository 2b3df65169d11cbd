"""Brushing quality, burden costs, surrogate rewards, and state features.

Everything downstream (the user environment, the bandit, the study loop)
reads its inputs from a single :class:`UserHistory`, so the discounted
averages that enter the cost term are bitwise the same values that enter
the bandit's advantage features.

Conventions baked in here:

* Quality is ``max(min(duration - pressure, 180), 0)`` seconds.
* Discounted lookback covers the past 14 decision times (7 days, two
  sessions per day); weights ``c_gamma * gamma**(j-1)`` sum to one.
* Histories shorter than 14 entries are zero-padded: missing lookback
  terms contribute 0, and the proportion-of-nonzero feature divides by
  the number of sessions actually observed (0 if none).
* The study clock starts on a Monday, so day-in-study 6 and 7 of each
  week are the weekend.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

LOOKBACK = 14
MAX_QUALITY = 180.0
DEFAULT_GAMMA = 13.0 / 14.0

# z-score constants for quality features and the [-1, 1] rescaling of
# day-in-study over a 70-day deployment.
QUALITY_MEAN = 154.0
QUALITY_SD = 163.0
DAY_CENTER = 35.5
DAY_HALFSPAN = 34.5


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine rescalings applied to quality and day-in-study features."""

    quality_mean: float = QUALITY_MEAN
    quality_sd: float = QUALITY_SD
    day_center: float = DAY_CENTER
    day_halfspan: float = DAY_HALFSPAN

    def __post_init__(self):
        if self.quality_sd <= 0 or self.day_halfspan <= 0:
            raise ValueError("quality_sd and day_halfspan must be positive")

    @classmethod
    def for_study_length(cls, n_days: int) -> "NormalizationSpec":
        """Day rescaling for a user observed for ``n_days`` days.

        Maps day 1 to -1 and day ``n_days`` to +1. Used when fitting user
        models on observational data where study lengths vary; single-day
        users get a degenerate halfspan of 1 so the feature is 0.
        """
        if n_days < 1:
            raise ValueError(f"n_days must be >= 1, got {n_days}")
        halfspan = (n_days - 1) / 2 if n_days > 1 else 1.0
        return cls(day_center=(n_days + 1) / 2, day_halfspan=halfspan)

    def norm_quality(self, q: float) -> float:
        return (q - self.quality_mean) / self.quality_sd

    def norm_day(self, day: int) -> float:
        return (day - self.day_center) / self.day_halfspan


DEFAULT_NORMALIZATION = NormalizationSpec()


def is_weekend_day(day_in_study: int) -> bool:
    """Monday-start calendar: days 6, 13, 20, ... start each weekend."""
    return (day_in_study - 1) % 7 >= 5


@dataclass
class UserHistory:
    """Rolling per-user state: recent qualities/actions plus calendar.

    ``past_qualities`` and ``past_actions`` are aligned, most-recent-first,
    and trimmed to the 14-entry lookback. Constructed via :meth:`at_entry`
    and advanced with :meth:`record`, which maintains the calendar fields.
    """

    past_qualities: list[float] = field(default_factory=list)
    past_actions: list[int] = field(default_factory=list)
    day_in_study: int = 1
    decision_index: int = 1
    time_of_day: int = 0
    is_weekend: bool = False
    prior_day_total_quality: float = 0.0
    _today_qualities: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.validate()

    @classmethod
    def at_entry(cls) -> "UserHistory":
        """Fresh history for a user's first (Monday morning) decision."""
        return cls()

    def validate(self):
        if len(self.past_qualities) != len(self.past_actions):
            raise ValueError("past_qualities and past_actions must align")
        if len(self.past_qualities) > LOOKBACK:
            raise ValueError(f"history retains at most {LOOKBACK} entries")
        for q in self.past_qualities:
            if not 0.0 <= q <= MAX_QUALITY:
                raise ValueError(f"quality {q} outside [0, {MAX_QUALITY}]")
        for a in self.past_actions:
            if a not in (0, 1):
                raise ValueError(f"action {a} not in {{0, 1}}")
        if self.day_in_study < 1 or self.decision_index < 1:
            raise ValueError("day_in_study and decision_index start at 1")
        if self.time_of_day not in (0, 1):
            raise ValueError("time_of_day must be 0 (morning) or 1 (evening)")

    @property
    def n_observed(self) -> int:
        return len(self.past_qualities)

    @property
    def proportion_nonzero(self) -> float:
        """Share of observed lookback sessions with any brushing (0 if none)."""
        if not self.past_qualities:
            return 0.0
        return sum(1 for q in self.past_qualities if q > 0) / len(self.past_qualities)

    def record(self, quality: float, action: int):
        """Append the just-observed session and advance the calendar."""
        if not 0.0 <= quality <= MAX_QUALITY:
            raise ValueError(f"quality {quality} outside [0, {MAX_QUALITY}]")
        if action not in (0, 1):
            raise ValueError(f"action {action} not in {{0, 1}}")
        self.past_qualities.insert(0, float(quality))
        self.past_actions.insert(0, int(action))
        del self.past_qualities[LOOKBACK:]
        del self.past_actions[LOOKBACK:]
        self._today_qualities.append(float(quality))
        self.decision_index += 1
        if self.time_of_day == 0:
            self.time_of_day = 1
        else:
            self.time_of_day = 0
            self.day_in_study += 1
            self.prior_day_total_quality = sum(self._today_qualities)
            self._today_qualities = []
            self.is_weekend = is_weekend_day(self.day_in_study)


@dataclass(frozen=True)
class CostParams:
    """Burden-cost parameterization: penalty weights and thresholds.

    ``xi1`` penalizes messaging a well-brushing user who has already seen
    a moderate number of messages; ``xi2`` penalizes heavy messaging
    regardless of performance (so ``a1 < a2``).
    """

    xi1: float = 100.0
    xi2: float = 100.0
    b: float = 111.0
    a1: float = 0.5
    a2: float = 0.8
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.xi1 < 0 or self.xi2 < 0:
            raise ValueError("xi1 and xi2 must be nonnegative")
        if not self.a1 < self.a2:
            raise ValueError(f"a1 must be < a2, got {self.a1} >= {self.a2}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")


def brushing_quality(duration_s: float, pressure_s: float) -> float:
    """Session quality in seconds: duration minus over-pressure, clamped to [0, 180]."""
    if duration_s < 0 or pressure_s < 0:
        raise ValueError(
            f"durations must be nonnegative, got ({duration_s}, {pressure_s})"
        )
    return max(min(duration_s - pressure_s, MAX_QUALITY), 0.0)


def discount_weight_constant(gamma: float) -> float:
    """Normalizer making the 14 lookback weights gamma**(j-1) sum to one."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    # expm1/log1p form of (1 - gamma**14); avoids cancellation near 1.
    return (1.0 - gamma) / -math.expm1(LOOKBACK * math.log1p(gamma - 1.0))


@lru_cache(maxsize=8)
def _discount_weights(gamma: float) -> np.ndarray:
    c = discount_weight_constant(gamma)
    return c * gamma ** np.arange(LOOKBACK)


def exp_avg(history: UserHistory, which: str, gamma: float = DEFAULT_GAMMA) -> float:
    """Exponentially discounted lookback average of quality or actions.

    ``which`` selects the series: "quality" gives the discounted brushing
    quality (in [0, 180]), "action" the discounted send rate (in [0, 1]).
    Missing lookback entries contribute zero.
    """
    if which == "quality":
        values = history.past_qualities
    elif which == "action":
        values = history.past_actions
    else:
        raise ValueError(f"which must be 'quality' or 'action', got {which!r}")
    if not values:
        return 0.0
    w = _discount_weights(gamma)
    k = len(values)
    return float(np.dot(w[:k], values[:k]))


def cost_term(b_bar: float, a_bar: float, action: int, params: CostParams) -> float:
    """Burden cost incurred when a message is sent; zero otherwise.

    Indicators are strict, so values exactly at a threshold incur no cost.
    """
    if action == 0:
        return 0.0
    cost = 0.0
    if b_bar > params.b and a_bar > params.a1:
        cost += params.xi1
    if a_bar > params.a2:
        cost += params.xi2
    return cost


def surrogate_reward(quality: float, cost: float) -> float:
    """Learning signal: quality minus burden cost (may be negative)."""
    return quality - cost


def env_baseline_features(
    history: UserHistory, norm: NormalizationSpec = DEFAULT_NORMALIZATION
) -> np.ndarray:
    """6-vector driving the no-message part of the user environment.

    [1, time of day, normalized prior-day total quality, weekend,
    proportion of nonzero lookback sessions, normalized day in study].
    """
    return np.array(
        [
            1.0,
            float(history.time_of_day),
            norm.norm_quality(history.prior_day_total_quality),
            float(history.is_weekend),
            history.proportion_nonzero,
            norm.norm_day(history.day_in_study),
        ]
    )


def env_treatment_features(
    history: UserHistory, norm: NormalizationSpec = DEFAULT_NORMALIZATION
) -> np.ndarray:
    """5-vector interacting with the treatment effect in the environment.

    The baseline features minus the proportion-nonzero entry.
    """
    return np.array(
        [
            1.0,
            float(history.time_of_day),
            norm.norm_quality(history.prior_day_total_quality),
            float(history.is_weekend),
            norm.norm_day(history.day_in_study),
        ]
    )


def alg_advantage_features(
    history: UserHistory, gamma: float = DEFAULT_GAMMA
) -> np.ndarray:
    """4-vector the bandit uses to predict the send advantage.

    [1, time of day, normalized discounted quality, discounted send rate].
    """
    b_bar = exp_avg(history, "quality", gamma)
    a_bar = exp_avg(history, "action", gamma)
    return np.array(
        [
            1.0,
            float(history.time_of_day),
            DEFAULT_NORMALIZATION.norm_quality(b_bar),
            a_bar,
        ]
    )


def alg_baseline_features(
    history: UserHistory, gamma: float = DEFAULT_GAMMA
) -> np.ndarray:
    """5-vector the bandit uses for the baseline reward: advantage features plus weekend."""
    f = alg_advantage_features(history, gamma)
    return np.append(f, float(history.is_weekend))
