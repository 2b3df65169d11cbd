"""Posterior-sampling bandit with an action-centered linear reward model.

The reward model is Bayesian linear regression on a 13-dimensional joint
feature [m, pi*f, (a - pi)*f]: a 5-dim baseline block, a 4-dim block
scaled by the selection probability, and a 4-dim advantage block scaled
by the centered action. Action centering makes the advantage estimate
insensitive to baseline misspecification; only the advantage block's
posterior enters action selection.

Updates are weekly batch recomputations from the full pooled history
(closed-form conjugate normal), which at study scale is cheap and
avoids incremental drift. Selection probabilities have a closed form
(normal CDF of the advantage's posterior z-score) and are clipped away
from 0 and 1 to keep exploration and after-study analyses alive.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve
from scipy.special import ndtr

N_BASELINE = 5
N_ADVANTAGE = 4
N_JOINT = N_BASELINE + 2 * N_ADVANTAGE
BETA_SLICE = slice(N_BASELINE + N_ADVANTAGE, N_JOINT)

PI_MIN = 0.1
PI_MAX = 0.9


class DecompositionError(RuntimeError):
    """The posterior linear system could not be factorized."""


def _default_mu_alpha0():
    return np.array([0.0, 4.925, 0.0, 0.0, 82.209])


def _default_sigma_alpha0():
    return np.diag(np.array([29.090, 30.186, 29.624, 12.989, 46.240]) ** 2)


def _default_mu_beta():
    return np.zeros(N_ADVANTAGE)


def _default_sigma_beta():
    return 29.624**2 * np.eye(N_ADVANTAGE)


@dataclass
class PriorSpec:
    """Informative prior for the joint reward-model weights.

    Defaults are the deployment values fit from earlier observational
    brushing data; the advantage block and its probability-scaled twin
    share the same zero-mean prior. The noise variance is fixed for the
    whole study.
    """

    mu_alpha0: np.ndarray = field(default_factory=_default_mu_alpha0)
    sigma_alpha0: np.ndarray = field(default_factory=_default_sigma_alpha0)
    mu_beta: np.ndarray = field(default_factory=_default_mu_beta)
    sigma_beta: np.ndarray = field(default_factory=_default_sigma_beta)
    sigma2: float = 3396.449

    def __post_init__(self):
        self.mu_alpha0 = np.asarray(self.mu_alpha0, dtype=float)
        self.sigma_alpha0 = np.asarray(self.sigma_alpha0, dtype=float)
        self.mu_beta = np.asarray(self.mu_beta, dtype=float)
        self.sigma_beta = np.asarray(self.sigma_beta, dtype=float)
        if self.mu_alpha0.shape != (N_BASELINE,):
            raise ValueError(f"mu_alpha0 must have shape ({N_BASELINE},)")
        if self.sigma_alpha0.shape != (N_BASELINE, N_BASELINE):
            raise ValueError("sigma_alpha0 must be 5x5")
        if self.mu_beta.shape != (N_ADVANTAGE,):
            raise ValueError(f"mu_beta must have shape ({N_ADVANTAGE},)")
        if self.sigma_beta.shape != (N_ADVANTAGE, N_ADVANTAGE):
            raise ValueError("sigma_beta must be 4x4")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    @property
    def mu_joint(self) -> np.ndarray:
        return np.concatenate([self.mu_alpha0, self.mu_beta, self.mu_beta])

    @property
    def sigma_joint(self) -> np.ndarray:
        return block_diag(self.sigma_alpha0, self.sigma_beta, self.sigma_beta)


@dataclass
class PosteriorState:
    """Gaussian posterior over the 13 joint weights, with fixed noise variance."""

    mu: np.ndarray
    sigma: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != (N_JOINT,) or self.sigma.shape != (N_JOINT, N_JOINT):
            raise ValueError(f"posterior must be {N_JOINT}-dimensional")

    @property
    def mu_beta(self) -> np.ndarray:
        return self.mu[BETA_SLICE]

    @property
    def sigma_beta(self) -> np.ndarray:
        return self.sigma[BETA_SLICE, BETA_SLICE]


@dataclass
class DecisionRecord:
    """One logged decision: features, probability used, action, reward."""

    user_id: str
    decision_index: int
    m: np.ndarray
    f: np.ndarray
    pi: float
    action: int
    surrogate_reward: float

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.m.shape != (N_BASELINE,) or self.f.shape != (N_ADVANTAGE,):
            raise ValueError("m must be 5-dim and f 4-dim")
        if not 0.0 <= self.pi <= 1.0:
            raise ValueError(f"pi={self.pi} outside [0, 1]")
        if self.action not in (0, 1):
            raise ValueError(f"action {self.action} not in {{0, 1}}")

    @property
    def phi(self) -> np.ndarray:
        return joint_feature(self.m, self.f, self.pi, self.action)


def joint_feature(m: np.ndarray, f: np.ndarray, pi: float, action: int) -> np.ndarray:
    """Stack [m, pi*f, (action - pi)*f] into the 13-dim regression feature."""
    m = np.asarray(m, dtype=float)
    f = np.asarray(f, dtype=float)
    return np.concatenate([m, pi * f, (action - pi) * f])


def posterior_from_batch(
    mu_prior: np.ndarray,
    sigma_prior: np.ndarray,
    sigma2: float,
    phi: np.ndarray,
    rewards: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Conjugate normal update from stacked features and rewards.

    Returns (mu, sigma) solving the ridge-style system with the prior as
    regularizer; both solves share one Cholesky factorization and the
    covariance is re-symmetrized afterwards.
    """
    dim = mu_prior.shape[0]
    try:
        prior_prec = cho_solve(cho_factor(sigma_prior), np.eye(dim))
    except LinAlgError as exc:
        raise DecompositionError(f"prior covariance not SPD: {exc}") from exc
    a = phi.T @ phi / sigma2 + prior_prec
    rhs = phi.T @ rewards / sigma2 + prior_prec @ mu_prior
    try:
        factor = cho_factor(a)
    except LinAlgError as exc:
        raise DecompositionError(f"posterior system not SPD: {exc}") from exc
    sigma = cho_solve(factor, np.eye(dim))
    sigma = (sigma + sigma.T) / 2.0
    mu = cho_solve(factor, rhs)
    return mu, sigma


def posterior_update(
    prior: PriorSpec, records: list[DecisionRecord]
) -> PosteriorState:
    """Recompute the posterior from every pooled decision record so far.

    An empty batch returns the prior exactly (no numerical round trip).
    """
    if not records:
        return PosteriorState(
            mu=prior.mu_joint.copy(), sigma=prior.sigma_joint.copy(), sigma2=prior.sigma2
        )
    phi = np.stack([r.phi for r in records])
    rewards = np.array([r.surrogate_reward for r in records])
    mu, sigma = posterior_from_batch(
        prior.mu_joint, prior.sigma_joint, prior.sigma2, phi, rewards
    )
    return PosteriorState(mu=mu, sigma=sigma, sigma2=prior.sigma2)


class _Diagnostics:
    """Counters for numerically suspect events; useful in long sweeps."""

    def __init__(self):
        self.negative_variance_events = 0

    def reset(self):
        self.negative_variance_events = 0


diagnostics = _Diagnostics()


def prob_positive_advantage(post: PosteriorState, f: np.ndarray) -> float:
    """Posterior probability that sending has a positive modeled advantage.

    Closed form: Phi(f @ mu_beta / sqrt(f @ Sigma_beta @ f)) over the
    advantage block's marginal. Degenerate variance falls back to 0.5
    on a zero mean and to the mean's sign otherwise.
    """
    f = np.asarray(f, dtype=float)
    mean = float(f @ post.mu_beta)
    var = float(f @ post.sigma_beta @ f)
    if var < 0.0:
        diagnostics.negative_variance_events += 1
        var = 0.0
    if var == 0.0:
        if mean == 0.0:
            return 0.5
        return 1.0 if mean > 0.0 else 0.0
    return float(ndtr(mean / np.sqrt(var)))


def clip(pi: float, pi_min: float = PI_MIN, pi_max: float = PI_MAX) -> float:
    """Bound a selection probability away from deterministic 0/1 play."""
    return min(pi_max, max(pi, pi_min))


def select_action(pi: float, rng: np.random.Generator) -> int:
    """Draw the send/skip action from Bernoulli(pi)."""
    return int(rng.random() < pi)


# -- persistence -----------------------------------------------------------

DECISION_LOG_FIELDS = (
    ["user_id", "decision_index", "pi", "action", "surrogate_reward"]
    + [f"m{i}" for i in range(1, N_BASELINE + 1)]
    + [f"f{i}" for i in range(1, N_ADVANTAGE + 1)]
)


def write_decision_log(path: str | Path, records: list[DecisionRecord]):
    """Persist decision records to CSV for audit and replay."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DECISION_LOG_FIELDS)
        for r in records:
            writer.writerow(
                [r.user_id, r.decision_index, repr(r.pi), r.action,
                 repr(r.surrogate_reward)]
                + [repr(float(v)) for v in r.m]
                + [repr(float(v)) for v in r.f]
            )


def read_decision_log(path: str | Path) -> list[DecisionRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(
                DecisionRecord(
                    user_id=row["user_id"],
                    decision_index=int(row["decision_index"]),
                    m=np.array([float(row[f"m{i}"]) for i in range(1, 6)]),
                    f=np.array([float(row[f"f{i}"]) for i in range(1, 5)]),
                    pi=float(row["pi"]),
                    action=int(row["action"]),
                    surrogate_reward=float(row["surrogate_reward"]),
                )
            )
    return records


def save_posterior(path: str | Path, post: PosteriorState):
    """Plain-text snapshot: sigma2 line, mu line, then covariance rows."""
    with open(path, "w") as fh:
        fh.write(f"sigma2 {post.sigma2!r}\n")
        fh.write("mu " + " ".join(repr(float(v)) for v in post.mu) + "\n")
        for row in post.sigma:
            fh.write("sigma " + " ".join(repr(float(v)) for v in row) + "\n")


def load_posterior(path: str | Path) -> PosteriorState:
    sigma_rows = []
    mu = None
    sigma2 = None
    with open(path) as fh:
        for line in fh:
            tag, *vals = line.split()
            if tag == "sigma2":
                sigma2 = float(vals[0])
            elif tag == "mu":
                mu = np.array([float(v) for v in vals])
            elif tag == "sigma":
                sigma_rows.append([float(v) for v in vals])
    if mu is None or sigma2 is None or len(sigma_rows) != N_JOINT:
        raise ValueError(f"malformed posterior snapshot: {path}")
    return PosteriorState(mu=mu, sigma=np.array(sigma_rows), sigma2=sigma2)
