"""Generative user environments: zero-inflated Poisson brushing with habituation.

Each simulated user is a zero-inflated Poisson model of session quality.
The Bernoulli component is the latent intention to brush, the Poisson
component the quality when brushing happens. Sending a message shifts
both components through user-specific effect sizes, which shrink by a
factor ``E`` whenever a weekly burden criterion fires (and recover fully
when it stops firing).

Effect sizes are drawn from zero-truncated normals whose population
parameters come from the fitted user pool (absolute non-intercept
weights, averaged over users and dimensions).
"""

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.special import expit

from .features import CostParams, MAX_QUALITY

N_BASELINE_FEATURES = 6
N_TREATMENT_FEATURES = 5

# Population effect-size parameters derived from the 13-user reference
# pool (mean/SD of average absolute non-intercept weights).
DEFAULT_DELTA_B_MEAN = 0.743
DEFAULT_DELTA_N_MEAN = 0.227
DEFAULT_SIGMA_B = 0.177
DEFAULT_SIGMA_N = 0.109


class ModelDegenerateError(RuntimeError):
    """Raised when a user model produces a non-finite Poisson rate."""


@dataclass(frozen=True)
class HabituationState:
    """Where a user sits in the weekly effect-shrinkage cycle.

    ``shrink_power`` is the exponent k of the current multiplier E**k.
    While ``last_check_decision_index`` is set, the burden criterion is
    only re-evaluated exactly 14 decisions after it; once cleared (full
    recovery), every decision time is checked again.
    """

    shrink_power: int = 0
    last_check_decision_index: int | None = None
    ever_triggered: bool = False

    def multiplier(self, effect_shrink: float) -> float:
        return effect_shrink**self.shrink_power


@dataclass
class UserEnvModel:
    """One simulated user: fitted ZIP weights, effect sizes, habituation."""

    user_id: str
    w_b: np.ndarray
    w_p: np.ndarray
    delta_b: float | None = None
    delta_n: float | None = None
    habituation: HabituationState = field(default_factory=HabituationState)

    def __post_init__(self):
        self.w_b = np.asarray(self.w_b, dtype=float)
        self.w_p = np.asarray(self.w_p, dtype=float)
        if self.w_b.shape != (N_BASELINE_FEATURES,):
            raise ValueError(f"w_b must have shape ({N_BASELINE_FEATURES},)")
        if self.w_p.shape != (N_BASELINE_FEATURES,):
            raise ValueError(f"w_p must have shape ({N_BASELINE_FEATURES},)")
        if not (np.isfinite(self.w_b).all() and np.isfinite(self.w_p).all()):
            raise ValueError("model weights must be finite")
        for d in (self.delta_b, self.delta_n):
            if d is not None and d < 0:
                raise ValueError("effect sizes must be nonnegative")


@dataclass(frozen=True)
class PopulationEffectStats:
    """Truncated-normal parameters for drawing per-user effect sizes."""

    delta_b_mean: float = DEFAULT_DELTA_B_MEAN
    delta_n_mean: float = DEFAULT_DELTA_N_MEAN
    sigma_b: float = DEFAULT_SIGMA_B
    sigma_n: float = DEFAULT_SIGMA_N

    def __post_init__(self):
        vals = (self.delta_b_mean, self.delta_n_mean, self.sigma_b, self.sigma_n)
        if any(v < 0 for v in vals):
            raise ValueError("effect statistics must be nonnegative")


def zip_params(
    model: UserEnvModel,
    g: np.ndarray,
    h: np.ndarray,
    action: int,
    effect_shrink: float,
) -> tuple[float, float]:
    """Zero-inflation probability and Poisson rate for one decision.

    Returns (p_zero, lam): quality is 0 with probability p_zero plus the
    Poisson mass at zero, and Poisson(lam) otherwise. Treatment effects
    are clipped at zero so a message can never hurt immediate brushing,
    and are scaled by the current habituation multiplier.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    mult = model.habituation.multiplier(effect_shrink)
    delta_b = (model.delta_b or 0.0) * mult
    delta_n = (model.delta_n or 0.0) * mult
    h_sum = float(h.sum())
    bern_shift = action * max(delta_b * h_sum, 0.0)
    pois_shift = action * max(delta_n * h_sum, 0.0)
    p_zero = float(expit(float(g @ model.w_b) - bern_shift))
    try:
        lam = math.exp(float(g @ model.w_p) + pois_shift)
    except OverflowError:
        lam = math.inf
    return p_zero, lam


# numpy's Poisson sampler rejects rates near 2**63; anything close is a
# broken model, not a brushing session
_MAX_POISSON_RATE = 1e15


def sample_quality(
    model: UserEnvModel,
    g: np.ndarray,
    h: np.ndarray,
    action: int,
    effect_shrink: float,
    rng: np.random.Generator,
) -> int:
    """Draw one session quality from the user's zero-inflated Poisson model."""
    p_zero, lam = zip_params(model, g, h, action, effect_shrink)
    if not math.isfinite(lam) or lam > _MAX_POISSON_RATE:
        raise ModelDegenerateError(
            f"user {model.user_id}: Poisson rate overflowed (lam={lam})"
        )
    z = int(rng.random() < 1.0 - p_zero)
    y = int(rng.poisson(lam))
    return min(z * y, int(MAX_QUALITY))


def habituation_step(
    state: HabituationState,
    b_bar: float,
    a_bar: float,
    params: CostParams,
    decision_index: int,
) -> HabituationState:
    """Advance the weekly burden cycle after the decision at ``decision_index``.

    The burden criterion is the cost term's indicator structure: the user
    brushes well and has seen a moderate number of messages, or has simply
    seen too many. On a fresh trigger the multiplier drops by one power of
    E starting at the next decision; 14 decisions later the criterion is
    re-checked, either deepening the shrinkage by another power of E or
    restoring the original effect sizes. Between checks nothing happens.
    """
    criterion = (b_bar > params.b and a_bar > params.a1) or a_bar > params.a2
    if state.last_check_decision_index is None:
        if criterion:
            return HabituationState(
                shrink_power=1,
                last_check_decision_index=decision_index,
                ever_triggered=True,
            )
        return state
    if decision_index == state.last_check_decision_index + 14:
        if criterion:
            return HabituationState(
                shrink_power=state.shrink_power + 1,
                last_check_decision_index=decision_index,
                ever_triggered=True,
            )
        return HabituationState(
            shrink_power=0, last_check_decision_index=None, ever_triggered=True
        )
    return state


def sample_truncated_normal(
    mean: float, sd: float, rng: np.random.Generator
) -> float:
    """Draw from a normal truncated to [0, inf) by rejection.

    Acceptance probability is 1 - Phi(-mean/sd), which stays near 1 for
    the effect-size parameters in use; the loop is a guard, not a cost.
    """
    if sd == 0.0:
        if mean < 0:
            raise ValueError("degenerate truncated normal with negative mean")
        return mean
    while True:
        draw = rng.normal(mean, sd)
        if draw >= 0.0:
            return float(draw)


def impute_effect_sizes(
    stats: PopulationEffectStats, rng: np.random.Generator
) -> tuple[float, float]:
    """Draw one user's (Bernoulli, Poisson) effect sizes, both >= 0."""
    delta_b = sample_truncated_normal(stats.delta_b_mean, stats.sigma_b, rng)
    delta_n = sample_truncated_normal(stats.delta_n_mean, stats.sigma_n, rng)
    return delta_b, delta_n


def population_effect_stats(models: list[UserEnvModel]) -> PopulationEffectStats:
    """Population effect-size parameters from a pool of fitted models.

    Per user, average the absolute non-intercept weights of each
    component; the population mean is the average of those per-user
    means, the spread their sample (n-1) standard deviation.
    """
    if len(models) < 2:
        raise ValueError(
            f"need at least 2 fitted models to estimate effect statistics, got {len(models)}"
        )
    mu_b = np.array([np.mean(np.abs(m.w_b[1:])) for m in models])
    mu_p = np.array([np.mean(np.abs(m.w_p[1:])) for m in models])
    return PopulationEffectStats(
        delta_b_mean=float(mu_b.mean()),
        delta_n_mean=float(mu_p.mean()),
        sigma_b=float(mu_b.std(ddof=1)),
        sigma_n=float(mu_p.std(ddof=1)),
    )


MODEL_FIELDS = (
    ["user_id"]
    + [f"w_b{i}" for i in range(1, 7)]
    + [f"w_p{i}" for i in range(1, 7)]
    + ["delta_b", "delta_n"]
)


def save_models(path: str | Path, models: list[UserEnvModel]):
    """Write a user-model pool to CSV (one user per row, deltas optional)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MODEL_FIELDS)
        for m in models:
            row = [m.user_id]
            row += [repr(float(v)) for v in m.w_b]
            row += [repr(float(v)) for v in m.w_p]
            row.append("" if m.delta_b is None else repr(float(m.delta_b)))
            row.append("" if m.delta_n is None else repr(float(m.delta_n)))
            writer.writerow(row)


def load_models(path: str | Path) -> list[UserEnvModel]:
    """Read a user-model pool written by :func:`save_models`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model file not found: {path}")
    models = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MODEL_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"model file {path} missing columns: {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            try:
                w_b = np.array([float(row[f"w_b{j}"]) for j in range(1, 7)])
                w_p = np.array([float(row[f"w_p{j}"]) for j in range(1, 7)])
                delta_b = float(row["delta_b"]) if row["delta_b"] else None
                delta_n = float(row["delta_n"]) if row["delta_n"] else None
            except ValueError as exc:
                raise ValueError(f"model file {path} row {i}: {exc}") from exc
            models.append(
                UserEnvModel(
                    user_id=row["user_id"],
                    w_b=w_b,
                    w_p=w_p,
                    delta_b=delta_b,
                    delta_n=delta_n,
                )
            )
    return models


def attach_effect_sizes(
    models: list[UserEnvModel],
    rng: np.random.Generator,
    stats: PopulationEffectStats | None = None,
) -> list[UserEnvModel]:
    """Return copies of ``models`` with freshly drawn effect sizes.

    Statistics default to the pool's own fitted weights when the pool is
    large enough to estimate them.
    """
    if stats is None:
        stats = (
            population_effect_stats(models)
            if len(models) >= 2
            else PopulationEffectStats()
        )
    out = []
    for m in models:
        delta_b, delta_n = impute_effect_sizes(stats, rng)
        out.append(replace(m, delta_b=delta_b, delta_n=delta_n))
    return out


def make_synthetic_pool(
    n_users: int, rng: np.random.Generator, id_prefix: str = "synth"
) -> list[UserEnvModel]:
    """Generate a plausible user pool without observational data.

    Intercepts target roughly half of sessions skipped and a quality of
    about a minute when brushing happens; feature weights are modest so
    the implied population effect sizes land near the reference values.
    """
    models = []
    for i in range(n_users):
        intercept_b = rng.normal(0.0, 0.8)
        slopes_b = rng.normal(0.0, 0.9, size=5)
        intercept_p = rng.normal(math.log(60.0), 0.25)
        slopes_p = rng.normal(0.0, 0.28, size=5)
        models.append(
            UserEnvModel(
                user_id=f"{id_prefix}_{i:02d}",
                w_b=np.concatenate([[intercept_b], slopes_b]),
                w_p=np.concatenate([[intercept_p], slopes_p]),
            )
        )
    return models
