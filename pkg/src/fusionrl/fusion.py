"""Session-MDP vocabulary: fused ranking scores, linear rewards, action boxes.

A recommender session is an MDP where the action is a vector of per-task
fusion weights. Candidates carry one predicted score per task; the serving
layer ranks them by a log-weighted sum of those scores and the user's
feedback on the chosen item is collapsed into a scalar reward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_ACTION_LOW = 0.01
DEFAULT_ACTION_HIGH = 2.0
DEFAULT_SMOOTHING = 0.1
DEFAULT_REWARD_WEIGHTS = (1.0, 0.5, 1.0, 1.0, 1.0, -0.5)
FEEDBACK_FIELDS = ("play_time", "integrity", "like", "share", "comment", "fast_exit")


def _vec(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class TaskScores:
    """Per-task predicted scores of one candidate item, each in (0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = _vec(self.values, "task scores")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise ValueError(f"task scores must lie in (0, 1], got {v}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FusionAction:
    """Normalized fusion-weight vector, one entry per task, each in [-1, 1]."""

    alpha: np.ndarray

    def __post_init__(self) -> None:
        a = _vec(self.alpha, "action")
        if np.any(np.abs(a) > 1.0):
            raise ValueError(f"action entries must lie in [-1, 1], got {a}")
        object.__setattr__(self, "alpha", a)


@dataclass(frozen=True)
class SmoothingBias:
    """Per-task additive bias keeping log arguments positive; entries >= 0."""

    beta: np.ndarray

    def __post_init__(self) -> None:
        b = _vec(self.beta, "smoothing bias")
        if np.any(b < 0.0):
            raise ValueError(f"smoothing bias must be non-negative, got {b}")
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class RewardWeights:
    """Business weights combining feedback channels into a scalar reward."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = _vec(self.weights, "reward weights")
        if not np.any(w != 0.0):
            raise ValueError("reward weights must have at least one nonzero entry")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class FeedbackVector:
    """One step of user feedback: play_time, integrity, like, share, comment,
    fast_exit. Play time is non-negative, integrity sits in [0, 1], the rest
    are 0/1 flags."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = _vec(self.values, "feedback")
        if v.shape != (len(FEEDBACK_FIELDS),):
            raise ValueError(f"feedback must have {len(FEEDBACK_FIELDS)} entries, got {v.shape}")
        if v[0] < 0.0:
            raise ValueError(f"play time must be non-negative, got {v[0]}")
        if not 0.0 <= v[1] <= 1.0:
            raise ValueError(f"integrity must lie in [0, 1], got {v[1]}")
        for i in range(2, len(FEEDBACK_FIELDS)):
            if v[i] not in (0.0, 1.0):
                raise ValueError(f"{FEEDBACK_FIELDS[i]} must be a 0/1 flag, got {v[i]}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class UserState:
    """Observable user state: static profile block plus behavior-history block.

    ``vector`` is the flat concatenation consumed by networks and datasets.
    """

    profile: np.ndarray
    history: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "profile", _vec(self.profile, "profile"))
        object.__setattr__(self, "history", _vec(self.history, "history"))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.profile, self.history])

    @property
    def dim(self) -> int:
        return self.profile.size + self.history.size


def _values_of(x, name: str) -> np.ndarray:
    if isinstance(x, TaskScores):
        return x.values
    if isinstance(x, FusionAction):
        return x.alpha
    if isinstance(x, SmoothingBias):
        return x.beta
    if isinstance(x, RewardWeights):
        return x.weights
    if isinstance(x, FeedbackVector):
        return x.values
    return _vec(x, name)


def fuse(scores, alpha, beta) -> float:
    """Fused ranking score: sum_i alpha_i * log(scores_i + beta_i)."""
    o = _values_of(scores, "task scores")
    a = _values_of(alpha, "fusion weights")
    b = _values_of(beta, "smoothing bias")
    if not (o.shape == a.shape == b.shape):
        raise ValueError(f"length mismatch: scores {o.shape}, weights {a.shape}, bias {b.shape}")
    shifted = o + b
    if np.any(shifted <= 0.0):
        bad = int(np.argmax(shifted <= 0.0))
        raise ValueError(f"score + bias must be positive, task {bad} has {shifted[bad]}")
    return float(a @ np.log(shifted))


def fuse_batch(score_matrix, alpha, beta) -> np.ndarray:
    """Vectorized ``fuse`` over a (candidates, tasks) score matrix."""
    o = np.asarray(score_matrix, dtype=float)
    a = _values_of(alpha, "fusion weights")
    b = _values_of(beta, "smoothing bias")
    if o.ndim != 2 or o.shape[1] != a.size or b.size != a.size:
        raise ValueError(f"score matrix {o.shape} incompatible with {a.size} tasks")
    shifted = o + b
    if np.any(shifted <= 0.0):
        raise ValueError("score + bias must be positive for every candidate and task")
    return np.log(shifted) @ a


def rank(candidates, alpha, beta) -> tuple[int, np.ndarray]:
    """Order candidates by fused score, best first. Ties keep the lower index.

    Accepts a list of :class:`TaskScores` or a (candidates, tasks) array.
    Returns (index of the top candidate, full ordering).
    """
    if isinstance(candidates, np.ndarray):
        matrix = candidates
    else:
        matrix = np.stack([_values_of(c, "task scores") for c in candidates])
    if matrix.shape[0] == 0:
        raise ValueError("cannot rank an empty candidate list")
    scores = fuse_batch(matrix, alpha, beta)
    order = np.argsort(-scores, kind="stable")
    return int(order[0]), order


def reward(feedback, weights) -> float:
    """Scalar reward: weighted sum of feedback channels."""
    v = _values_of(feedback, "feedback")
    w = _values_of(weights, "reward weights")
    if v.shape != w.shape:
        raise ValueError(f"feedback {v.shape} and weights {w.shape} length mismatch")
    return float(v @ w)


@dataclass(frozen=True)
class ActionBounds:
    """Per-task box of raw (serving-scale) fusion weights; low < high."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self) -> None:
        lo = _vec(self.low, "lower bounds")
        hi = _vec(self.high, "upper bounds")
        if lo.shape != hi.shape:
            raise ValueError(f"bound length mismatch: {lo.shape} vs {hi.shape}")
        if np.any(lo >= hi):
            bad = int(np.argmax(lo >= hi))
            raise ValueError(f"bounds must satisfy low < high, task {bad}: [{lo[bad]}, {hi[bad]}]")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @classmethod
    def uniform(
        cls, n_tasks: int, low: float = DEFAULT_ACTION_LOW, high: float = DEFAULT_ACTION_HIGH
    ) -> "ActionBounds":
        return cls(np.full(n_tasks, low), np.full(n_tasks, high))

    @property
    def n_tasks(self) -> int:
        return self.low.size


def normalize_action(raw, bounds: ActionBounds) -> np.ndarray:
    """Map raw weights into [-1, 1]^k: clamp to the box, then affine rescale."""
    r = np.asarray(raw, dtype=float)
    if r.shape != bounds.low.shape:
        raise ValueError(f"raw action {r.shape} does not match bounds {bounds.low.shape}")
    clamped = np.clip(r, bounds.low, bounds.high)
    return 2.0 * (clamped - bounds.low) / (bounds.high - bounds.low) - 1.0


def denormalize_action(alpha, bounds: ActionBounds) -> np.ndarray:
    """Inverse of :func:`normalize_action` on the clamped box."""
    a = _values_of(alpha, "action")
    if a.shape != bounds.low.shape:
        raise ValueError(f"action {a.shape} does not match bounds {bounds.low.shape}")
    a = np.clip(a, -1.0, 1.0)
    return bounds.low + (a + 1.0) * 0.5 * (bounds.high - bounds.low)
