"""Session-data ingestion and per-user MAP fitting of the brushing model.

The observational input is a CSV of brushing sessions (user, day, time of
day, duration, over-pressure). Column names are mapped through a config
dict so differently-labeled exports load without editing code.

Each user's zero-inflated Poisson weights are fit jointly by maximizing
the log posterior under independent standard-normal priors, restarting
the optimizer from random initializations and keeping the best optimum.
The first initialization is always the zero vector, so the achieved
optimum can never fall below the prior mode's value.
"""

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from .environment import UserEnvModel
from .features import NormalizationSpec, brushing_quality, is_weekend_day

LOOKBACK = 14

# Canonical field -> CSV column name. Override any entry via the
# column_map argument (or --column-map on the CLI).
DEFAULT_COLUMN_MAP = {
    "user_id": "user_id",
    "day": "day",
    "time_of_day": "time_of_day",
    "duration": "duration",
    "pressure": "pressure",
}

_MORNING_TOKENS = {"0", "morning", "am", "m"}
_EVENING_TOKENS = {"1", "evening", "pm", "e"}

# Box bounds for the optimizer; wide enough to be inactive at any MAP
# optimum under the N(0, I) prior but keeping exp(g @ w_p) finite.
_WEIGHT_BOUND = 25.0


class SessionParseError(ValueError):
    """Malformed session CSV: bad schema, bad values, or duplicate rows."""


@dataclass(frozen=True)
class SessionRecord:
    user_id: str
    day_index: int
    time_of_day: int
    brushing_duration_s: float
    pressure_duration_s: float

    @property
    def quality(self) -> float:
        return brushing_quality(self.brushing_duration_s, self.pressure_duration_s)


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 50
    max_iterations: int = 500
    convergence_tol: float = 1e-6
    init_scale: float = 1.0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iterations < 1:
            raise ValueError("restarts and max_iterations must be positive")
        if self.convergence_tol <= 0 or self.init_scale <= 0:
            raise ValueError("convergence_tol and init_scale must be positive")


@dataclass
class FitResult:
    w_b: np.ndarray
    w_p: np.ndarray
    log_posterior: float


class FitFailureError(RuntimeError):
    """No optimizer restart produced a usable optimum."""


def _parse_time_of_day(token: str, row_num: int) -> int:
    t = token.strip().lower()
    if t in _MORNING_TOKENS:
        return 0
    if t in _EVENING_TOKENS:
        return 1
    raise SessionParseError(
        f"row {row_num}: unrecognized time_of_day {token!r} "
        f"(expected morning/evening or 0/1)"
    )


def load_sessions(
    path: str | Path, column_map: dict[str, str] | None = None
) -> dict[str, list[SessionRecord]]:
    """Parse a session CSV into per-user record lists sorted by (day, time).

    Rejects files whose header lacks a mapped column, rows with missing
    or unparseable values, and duplicate (user, day, time) rows; every
    error names the offending CSV row.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"session file not found: {path}")
    cols = dict(DEFAULT_COLUMN_MAP)
    if column_map:
        unknown = set(column_map) - set(cols)
        if unknown:
            raise ValueError(f"unknown column_map keys: {sorted(unknown)}")
        cols.update(column_map)

    by_user: dict[str, list[SessionRecord]] = {}
    seen: set[tuple[str, int, int]] = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in cols.values() if c not in header]
        if missing:
            raise SessionParseError(
                f"{path}: header missing mapped columns {missing}; found {header}"
            )
        for row_num, row in enumerate(reader, start=2):
            raw = {k: row.get(v) for k, v in cols.items()}
            absent = [cols[k] for k, v in raw.items() if v is None or v.strip() == ""]
            if absent:
                raise SessionParseError(f"row {row_num}: missing value(s) in {absent}")
            try:
                day = int(float(raw["day"]))
                duration = float(raw["duration"])
                pressure = float(raw["pressure"])
            except ValueError as exc:
                raise SessionParseError(f"row {row_num}: {exc}") from exc
            if day < 1:
                raise SessionParseError(f"row {row_num}: day index {day} < 1")
            if duration < 0 or pressure < 0:
                raise SessionParseError(
                    f"row {row_num}: negative duration or pressure"
                )
            tod = _parse_time_of_day(raw["time_of_day"], row_num)
            user = raw["user_id"].strip()
            key = (user, day, tod)
            if key in seen:
                raise SessionParseError(
                    f"row {row_num}: duplicate session for user={user} "
                    f"day={day} time_of_day={tod}"
                )
            seen.add(key)
            by_user.setdefault(user, []).append(
                SessionRecord(user, day, tod, duration, pressure)
            )
    for user in by_user:
        by_user[user].sort(key=lambda r: (r.day_index, r.time_of_day))
    return by_user


def fit_feature_matrix(
    sessions: list[SessionRecord], n_days: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Baseline feature matrix and integer qualities for one user's sessions.

    Features mirror the runtime baseline features, except day-in-study is
    rescaled by this user's own observed span (``n_days`` overrides the
    inferred span, e.g. when generating synthetic data incrementally).
    Lookback features use whatever sessions were actually observed.
    """
    if not sessions:
        return np.zeros((0, 6)), np.zeros(0)
    sessions = sorted(sessions, key=lambda r: (r.day_index, r.time_of_day))
    t_days = n_days if n_days is not None else max(r.day_index for r in sessions)
    norm = NormalizationSpec.for_study_length(t_days)

    rows = []
    qualities = []
    day_totals: dict[int, float] = {}
    recent: list[float] = []
    for rec in sessions:
        prior_total = day_totals.get(rec.day_index - 1, 0.0)
        prop_nonzero = (
            sum(1 for q in recent if q > 0) / len(recent) if recent else 0.0
        )
        rows.append(
            [
                1.0,
                float(rec.time_of_day),
                norm.norm_quality(prior_total),
                float(is_weekend_day(rec.day_index)),
                prop_nonzero,
                norm.norm_day(rec.day_index),
            ]
        )
        q = rec.quality
        qualities.append(round(q))
        day_totals[rec.day_index] = day_totals.get(rec.day_index, 0.0) + q
        recent.insert(0, q)
        del recent[LOOKBACK:]
    return np.array(rows), np.array(qualities, dtype=float)


def _log_lik_terms(w_b, w_p, features, qualities):
    """Per-session log likelihood pieces shared by value and gradient."""
    x_b = features @ w_b
    x_p = features @ w_p
    lam = np.exp(x_p)
    log_p = -np.logaddexp(0.0, -x_b)  # log sigmoid(x_b)
    log_1mp = -np.logaddexp(0.0, x_b)
    zero = qualities == 0
    ll = np.empty_like(x_b)
    ll[zero] = np.logaddexp(log_p[zero], log_1mp[zero] - lam[zero])
    q_pos = qualities[~zero]
    ll[~zero] = (
        log_1mp[~zero] + q_pos * x_p[~zero] - lam[~zero] - gammaln(q_pos + 1.0)
    )
    return x_b, x_p, lam, log_p, log_1mp, zero, ll


def zip_log_posterior(
    w_b: np.ndarray, w_p: np.ndarray, features: np.ndarray, qualities: np.ndarray
) -> float:
    """Joint log posterior (up to a constant) of one user's ZIP weights.

    Sessions with zero quality mix the intention-to-skip mass with the
    Poisson mass at zero; positive sessions are Poisson counts gated by
    the intention to brush. Standard-normal priors on both weight
    vectors contribute the quadratic penalty.
    """
    w_b = np.asarray(w_b, dtype=float)
    w_p = np.asarray(w_p, dtype=float)
    qualities = np.asarray(qualities, dtype=float)
    if features.shape[0] != qualities.shape[0]:
        raise ValueError("features and qualities must have matching length")
    prior = -0.5 * float(w_b @ w_b) - 0.5 * float(w_p @ w_p)
    if features.shape[0] == 0:
        return prior
    *_, ll = _log_lik_terms(w_b, w_p, features, qualities)
    value = float(ll.sum()) + prior
    if not np.isfinite(value):
        raise ValueError("log posterior is not finite at these weights")
    return value


def zip_log_posterior_grad(
    w_b: np.ndarray, w_p: np.ndarray, features: np.ndarray, qualities: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of :func:`zip_log_posterior` w.r.t. both weight vectors."""
    w_b = np.asarray(w_b, dtype=float)
    w_p = np.asarray(w_p, dtype=float)
    qualities = np.asarray(qualities, dtype=float)
    if features.shape[0] == 0:
        return -w_b, -w_p
    x_b, x_p, lam, log_p, log_1mp, zero, ll = _log_lik_terms(
        w_b, w_p, features, qualities
    )
    d_xb = np.empty_like(x_b)
    d_xp = np.empty_like(x_p)
    # Zero sessions: d/dx of log(p + (1-p) e^-lam), with the mixture's
    # own log value ll reused as the normalizer.
    d_xb[zero] = np.exp(log_p[zero] + log_1mp[zero] - ll[zero]) * (
        -np.expm1(-lam[zero])
    )
    d_xp[zero] = -lam[zero] * np.exp(log_1mp[zero] - lam[zero] - ll[zero])
    d_xb[~zero] = -np.exp(log_p[~zero])
    d_xp[~zero] = qualities[~zero] - lam[~zero]
    grad_b = features.T @ d_xb - w_b
    grad_p = features.T @ d_xp - w_p
    return grad_b, grad_p


def fit_user_model(
    sessions: list[SessionRecord],
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
    n_days: int | None = None,
) -> FitResult:
    """MAP-fit one user's ZIP weights from their session records.

    Builds the feature matrix with this user's own day normalization,
    then delegates to :func:`fit_zip_map`.
    """
    if not sessions:
        raise ValueError("cannot fit a user model with no sessions")
    if len(sessions) < 20:
        warnings.warn(
            f"user {sessions[0].user_id}: only {len(sessions)} sessions; "
            f"fit may be unreliable",
            stacklevel=2,
        )
    features, qualities = fit_feature_matrix(sessions, n_days=n_days)
    return fit_zip_map(features, qualities, config, rng)


def fit_zip_map(
    features: np.ndarray,
    qualities: np.ndarray,
    config: FitConfig = FitConfig(),
    rng: np.random.Generator | None = None,
) -> FitResult:
    """Maximize the ZIP log posterior with random-restart quasi-Newton ascent.

    The first restart always starts from the zero vector, so the achieved
    optimum is never below the prior mode's log posterior. Deterministic
    given the generator state; ties between restarts go to the lowest
    restart index.
    """
    rng = rng if rng is not None else np.random.default_rng()
    dim = features.shape[1]

    def objective(x):
        w_b, w_p = x[:dim], x[dim:]
        try:
            value = zip_log_posterior(w_b, w_p, features, qualities)
        except ValueError:
            return np.inf, np.zeros_like(x)
        g_b, g_p = zip_log_posterior_grad(w_b, w_p, features, qualities)
        return -value, -np.concatenate([g_b, g_p])

    bounds = [(-_WEIGHT_BOUND, _WEIGHT_BOUND)] * (2 * dim)
    best: FitResult | None = None
    diagnostics = []
    for restart in range(config.restarts):
        if restart == 0:
            x0 = np.zeros(2 * dim)
        else:
            x0 = np.clip(
                rng.normal(0.0, config.init_scale, size=2 * dim),
                -_WEIGHT_BOUND + 1.0,
                _WEIGHT_BOUND - 1.0,
            )
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={
                "maxiter": config.max_iterations,
                "ftol": config.convergence_tol,
            },
        )
        value = -float(res.fun)
        if not np.isfinite(value):
            diagnostics.append(f"restart {restart}: non-finite optimum")
            continue
        diagnostics.append(f"restart {restart}: log_post={value:.6f} {res.message}")
        if best is None or value > best.log_posterior:
            best = FitResult(
                w_b=res.x[:dim].copy(), w_p=res.x[dim:].copy(), log_posterior=value
            )
    if best is None:
        raise FitFailureError(
            "all restarts failed to produce a finite optimum:\n"
            + "\n".join(diagnostics)
        )
    return best


def fit_all_users(
    sessions_by_user: dict[str, list[SessionRecord]],
    config: FitConfig = FitConfig(),
    seed: int = 0,
) -> list[UserEnvModel]:
    """Fit every user in the pool, in sorted user-id order, deterministically."""
    models = []
    for i, user_id in enumerate(sorted(sessions_by_user)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        result = fit_user_model(sessions_by_user[user_id], config, rng)
        models.append(UserEnvModel(user_id=user_id, w_b=result.w_b, w_p=result.w_p))
    return models
