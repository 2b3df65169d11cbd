"""Full simulated deployments: recruitment, decisions, updates, habituation.

One study runs N users for 140 decision times each (70 days, two
sessions per day), with four users entering per study week. All users
share a single bandit posterior that is recomputed from the pooled
decision history at the start of every study week; within a week every
decision reads the same frozen snapshot.

Randomness is structured for reproducibility and parallelism: every
(trial, user slot) pair owns generators derived from the master seed, so
a study is bitwise reproducible and sweep cells can share environment
randomness (common random numbers) by sharing the stream key.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit import (
    DecisionRecord,
    PosteriorState,
    PriorSpec,
    clip,
    posterior_update,
    prob_positive_advantage,
    select_action,
)
from .environment import (
    HabituationState,
    PopulationEffectStats,
    UserEnvModel,
    habituation_step,
    impute_effect_sizes,
    population_effect_stats,
    sample_quality,
)
from .features import (
    CostParams,
    UserHistory,
    alg_advantage_features,
    cost_term,
    env_baseline_features,
    env_treatment_features,
    exp_avg,
    surrogate_reward,
)


class StudyError(RuntimeError):
    """A study failed mid-run; the message carries (user, decision) context."""


@dataclass(frozen=True)
class StudyConfig:
    n_users: int = 72
    t_decisions: int = 140
    recruit_per_week: int = 4
    decisions_per_day: int = 2
    update_cadence_decisions: int = 14
    cost_params: CostParams = field(default_factory=CostParams)
    effect_shrink_e: float = 0.0
    pi_min: float = 0.1
    pi_max: float = 0.9
    master_seed: int = 0

    def __post_init__(self):
        if self.n_users < 1 or self.recruit_per_week < 1:
            raise ValueError("n_users and recruit_per_week must be positive")
        if self.t_decisions < 2 or self.t_decisions % 2 != 0:
            raise ValueError("t_decisions must be a positive even number")
        if self.decisions_per_day != 2:
            raise ValueError("the calendar assumes two decisions per day")
        if self.update_cadence_decisions < 1:
            raise ValueError("update_cadence_decisions must be positive")
        if not 0.0 <= self.effect_shrink_e <= 1.0:
            raise ValueError("effect_shrink_e must lie in [0, 1]")
        if not 0.0 <= self.pi_min <= self.pi_max <= 1.0:
            raise ValueError("need 0 <= pi_min <= pi_max <= 1")


@dataclass
class StudyResult:
    """Everything a finished study produced, in per-(user, decision) arrays."""

    config: StudyConfig
    model_ids: list[str]
    entry_weeks: np.ndarray
    deltas: np.ndarray  # (N, 2): per-user (delta_b, delta_n)
    qualities: np.ndarray
    actions: np.ndarray
    pis: np.ndarray
    b_bars: np.ndarray
    a_bars: np.ndarray
    costs: np.ndarray
    rewards: np.ndarray
    shrink_powers: np.ndarray  # exponent in effect at each decision
    study_weeks: np.ndarray
    records: list[DecisionRecord]

    @property
    def cumulative_qualities(self) -> np.ndarray:
        return self.qualities.sum(axis=1)

    def write_decision_log_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["user_slot", "model_id", "t", "study_week", "pi", "action",
                 "quality", "b_bar", "a_bar", "cost", "reward", "shrink_power"]
            )
            n, t_max = self.qualities.shape
            for i in range(n):
                for t in range(t_max):
                    writer.writerow(
                        [i, self.model_ids[i], t + 1, int(self.study_weeks[i, t]),
                         repr(float(self.pis[i, t])), int(self.actions[i, t]),
                         repr(float(self.qualities[i, t])),
                         repr(float(self.b_bars[i, t])),
                         repr(float(self.a_bars[i, t])),
                         repr(float(self.costs[i, t])),
                         repr(float(self.rewards[i, t])),
                         int(self.shrink_powers[i, t])]
                    )

    def write_user_summary_csv(self, path: str | Path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["user_slot", "model_id", "entry_week", "delta_b", "delta_n",
                 "cumulative_quality", "n_sends", "final_shrink_power"]
            )
            for i in range(self.qualities.shape[0]):
                writer.writerow(
                    [i, self.model_ids[i], int(self.entry_weeks[i]),
                     repr(float(self.deltas[i, 0])), repr(float(self.deltas[i, 1])),
                     repr(float(self.cumulative_qualities[i])),
                     int(self.actions[i].sum()),
                     int(self.shrink_powers[i, -1])]
                )


@dataclass
class _SimUser:
    slot: int
    entry_week: int
    model: UserEnvModel
    history: UserHistory
    env_rng: np.random.Generator
    action_rng: np.random.Generator


def _user_streams(key: list[int], slot: int):
    ss = np.random.SeedSequence(key + [slot + 1])
    env_child, action_child = ss.spawn(2)
    return np.random.default_rng(env_child), np.random.default_rng(action_child)


def run_study(
    config: StudyConfig,
    user_models: list[UserEnvModel],
    prior: PriorSpec,
    *,
    trial_index: int = 0,
    effect_stats: PopulationEffectStats | None = None,
    stream_key: tuple[int, ...] | None = None,
) -> StudyResult:
    """Simulate one full study against a pool of fitted user models.

    Users are drawn from the pool with replacement, each with freshly
    imputed effect sizes, and enter in weekly cohorts. ``stream_key``
    overrides the default (master_seed, trial_index) randomness root so
    sweeps can share environment draws across cells.
    """
    if not user_models:
        raise ValueError("user model pool is empty")
    key = list(stream_key) if stream_key is not None else [
        config.master_seed, trial_index,
    ]
    key = [int(k) for k in key]
    setup_rng = np.random.default_rng(np.random.SeedSequence(key + [0]))
    if effect_stats is None:
        effect_stats = (
            population_effect_stats(user_models)
            if len(user_models) >= 2
            else PopulationEffectStats()
        )

    pool_idx = setup_rng.integers(0, len(user_models), size=config.n_users)
    users = []
    for slot in range(config.n_users):
        base = user_models[pool_idx[slot]]
        delta_b, delta_n = impute_effect_sizes(effect_stats, setup_rng)
        model = UserEnvModel(
            user_id=base.user_id,
            w_b=base.w_b.copy(),
            w_p=base.w_p.copy(),
            delta_b=delta_b,
            delta_n=delta_n,
            habituation=HabituationState(),
        )
        env_rng, action_rng = _user_streams(key, slot)
        users.append(
            _SimUser(
                slot=slot,
                entry_week=slot // config.recruit_per_week + 1,
                model=model,
                history=UserHistory.at_entry(),
                env_rng=env_rng,
                action_rng=action_rng,
            )
        )

    n, t_max = config.n_users, config.t_decisions
    cadence = config.update_cadence_decisions
    weeks_per_user = -(-t_max // cadence)  # ceil
    n_weeks = max(u.entry_week for u in users) + weeks_per_user - 1
    cp = config.cost_params
    gamma = cp.gamma

    qualities = np.zeros((n, t_max))
    actions = np.zeros((n, t_max), dtype=np.int8)
    pis = np.zeros((n, t_max))
    b_bars = np.zeros((n, t_max))
    a_bars = np.zeros((n, t_max))
    costs = np.zeros((n, t_max))
    rewards = np.zeros((n, t_max))
    shrink_powers = np.zeros((n, t_max), dtype=np.int16)
    study_weeks = np.zeros((n, t_max), dtype=np.int16)
    records: list[DecisionRecord] = []

    for week in range(1, n_weeks + 1):
        # Weekly update, before the first decision of the new week, from
        # every record pooled through the end of the prior week.
        posterior = posterior_update(prior, records)
        for user in users:
            personal_week = week - user.entry_week + 1
            if personal_week < 1 or personal_week > weeks_per_user:
                continue
            t_first = (personal_week - 1) * cadence + 1
            t_last = min(personal_week * cadence, t_max)
            for t in range(t_first, t_last + 1):
                try:
                    _advance_one_decision(
                        config, posterior, user, t, week, cp, gamma,
                        qualities, actions, pis, b_bars, a_bars, costs,
                        rewards, shrink_powers, study_weeks, records,
                    )
                except Exception as exc:
                    raise StudyError(
                        f"user slot {user.slot} (model {user.model.user_id}), "
                        f"decision {t}: {exc}"
                    ) from exc

    return StudyResult(
        config=config,
        model_ids=[u.model.user_id for u in users],
        entry_weeks=np.array([u.entry_week for u in users]),
        deltas=np.array([[u.model.delta_b, u.model.delta_n] for u in users]),
        qualities=qualities,
        actions=actions,
        pis=pis,
        b_bars=b_bars,
        a_bars=a_bars,
        costs=costs,
        rewards=rewards,
        shrink_powers=shrink_powers,
        study_weeks=study_weeks,
        records=records,
    )


def _advance_one_decision(
    config, posterior: PosteriorState, user: _SimUser, t: int, week: int,
    cp: CostParams, gamma: float, qualities, actions, pis, b_bars, a_bars,
    costs, rewards, shrink_powers, study_weeks, records,
):
    hist = user.history
    b_bar = exp_avg(hist, "quality", gamma)
    a_bar = exp_avg(hist, "action", gamma)
    f = alg_advantage_features(hist, gamma)
    m = np.append(f, float(hist.is_weekend))
    g = env_baseline_features(hist)
    h = env_treatment_features(hist)

    pi = clip(prob_positive_advantage(posterior, f), config.pi_min, config.pi_max)
    action = select_action(pi, user.action_rng)
    quality = sample_quality(
        user.model, g, h, action, config.effect_shrink_e, user.env_rng
    )
    cost = cost_term(b_bar, a_bar, action, cp)
    reward = surrogate_reward(quality, cost)

    i = user.slot
    qualities[i, t - 1] = quality
    actions[i, t - 1] = action
    pis[i, t - 1] = pi
    b_bars[i, t - 1] = b_bar
    a_bars[i, t - 1] = a_bar
    costs[i, t - 1] = cost
    rewards[i, t - 1] = reward
    shrink_powers[i, t - 1] = user.model.habituation.shrink_power
    study_weeks[i, t - 1] = week
    records.append(
        DecisionRecord(
            user_id=str(i), decision_index=t, m=m, f=f, pi=pi,
            action=action, surrogate_reward=reward,
        )
    )
    user.model.habituation = habituation_step(
        user.model.habituation, b_bar, a_bar, cp, t
    )
    hist.record(quality, action)


def mean_cumulative_quality(result: StudyResult) -> float:
    """Criterion 1: average over users of each user's total quality."""
    return float(result.cumulative_qualities.mean())


def percentile25_cumulative_quality(result: StudyResult) -> float:
    """Criterion 2: 25th percentile (linear interpolation) of total quality."""
    return float(np.percentile(result.cumulative_qualities, 25))
