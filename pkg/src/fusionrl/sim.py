"""Seeded session simulator for short-video style recommendation.

Each session: a hidden user taste vector drives per-task affinities of
candidate items; the agent's fusion-weight action picks which candidate is
served; the user emits multi-channel feedback and may leave. Two mechanisms
give the MDP delayed-satisfaction structure:

* per-task fatigue builds up from consuming high-affinity items and depresses
  future feedback,
* the leave probability rises with accumulated fatigue, so chasing the
  highest instant reward shortens sessions.

Everything is driven by ``np.random.default_rng`` seed sequences: the config
seed fixes global population structure, the session seed fixes one user's
trajectory, and rerunning either reproduces it bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import fusion
from .fusion import ActionBounds, FeedbackVector, UserState

GLOBAL_STREAM = 0
SESSION_STREAM = 1
POLICY_STREAM = 1  # suffix appended to session seeds for policy noise


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the session environment. Defaults are the desk-scale setup."""

    profile_dim: int = 8
    n_tasks: int = 4
    n_feedback: int = 6
    n_candidates: int = 20
    max_session_length: int = 25
    latent_dim: int = 8
    history_window: int = 20
    score_noise: float = 0.4
    profile_noise: float = 0.1
    affinity_scale: float = 1.2
    affinity_bias: float = 0.8
    fatigue_strength: float = 2.0
    fatigue_decay: float = 0.8
    fatigue_power: float = 2.0
    fatigue_unit: float = 0.4
    fatigue_threshold: float = 1.0
    leave_base: float = -2.0
    leave_satisfaction: float = 0.8
    leave_fatigue: float = 0.6
    play_scale: float = 4.0
    play_cap: float = 5.0
    play_noise: float = 0.5
    integrity_gain: float = 1.5
    integrity_noise: float = 0.5
    flag_gain: float = 1.5
    like_bias: float = -2.0
    share_bias: float = -2.5
    comment_bias: float = -2.5
    exit_bias: float = -1.0
    exit_gain: float = 1.0
    reward_weights: tuple[float, ...] = fusion.DEFAULT_REWARD_WEIGHTS
    action_low: float = fusion.DEFAULT_ACTION_LOW
    action_high: float = fusion.DEFAULT_ACTION_HIGH
    smoothing_bias: float = fusion.DEFAULT_SMOOTHING
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_candidates < 2:
            raise ValueError("need at least 2 candidates per request")
        if self.max_session_length < 1:
            raise ValueError("sessions must allow at least one step")
        if self.n_tasks < 1 or self.profile_dim < 1 or self.latent_dim < 1:
            raise ValueError("dimensions must be positive")
        if len(self.reward_weights) != self.n_feedback:
            raise ValueError(
                f"reward weights ({len(self.reward_weights)}) must match "
                f"feedback channels ({self.n_feedback})"
            )
        if not 0.0 <= self.fatigue_decay < 1.0:
            raise ValueError("fatigue decay must lie in [0, 1)")
        for name in ("score_noise", "profile_noise", "fatigue_strength", "play_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.affinity_scale <= 0 or self.fatigue_power <= 0:
            raise ValueError("affinity_scale and fatigue_power must be positive")
        if self.history_window < 1:
            raise ValueError("history window must be >= 1")

    @property
    def history_dim(self) -> int:
        return self.n_tasks * self.n_feedback

    @property
    def state_dim(self) -> int:
        return self.profile_dim + self.history_dim

    @property
    def action_dim(self) -> int:
        return self.n_tasks

    def bounds(self) -> ActionBounds:
        return ActionBounds.uniform(self.n_tasks, self.action_low, self.action_high)

    def beta(self) -> np.ndarray:
        return np.full(self.n_tasks, self.smoothing_bias)

    def max_step_reward(self) -> float:
        """Upper bound of the one-step reward under these weights.

        Positive weights hit their channel maxima (play capped, others 1),
        negative weights contribute zero.
        """
        w = np.asarray(self.reward_weights)
        caps = np.array([self.play_cap, 1.0, 1.0, 1.0, 1.0, 1.0][: self.n_feedback])
        return float(np.sum(np.maximum(w, 0.0) * caps))


@dataclass
class SessionState:
    """Full simulator state of one running session (latent parts included)."""

    latent: np.ndarray
    profile: np.ndarray
    history: np.ndarray
    fatigue: np.ndarray
    step: int
    done: bool
    pending_scores: np.ndarray  # (c, k) observed task scores of waiting candidates
    pending_affinity: np.ndarray  # (c, k) true affinities behind them
    rng: np.random.Generator

    @property
    def observation(self) -> np.ndarray:
        return np.concatenate([self.profile, self.history])

    @property
    def user_state(self) -> UserState:
        return UserState(self.profile.copy(), self.history.copy())


class SessionSim:
    """Session environment; all methods are deterministic given the seeds."""

    def __init__(self, config: SimConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, GLOBAL_STREAM])
        h = config.latent_dim
        # Population-level structure: per-task mixing matrices and the
        # projection from hidden taste to the visible profile block.
        self.mixing = rng.standard_normal((config.n_tasks, h, h))
        self.profile_proj = rng.standard_normal((config.profile_dim, h)) / np.sqrt(h)

    # -- session lifecycle ---------------------------------------------------

    def reset(self, session_seed) -> SessionState:
        cfg = self.config
        seed_parts = [cfg.seed, SESSION_STREAM] + _seed_list(session_seed)
        rng = np.random.default_rng(seed_parts)
        latent = rng.standard_normal(cfg.latent_dim)
        profile = self.profile_proj @ latent + cfg.profile_noise * rng.standard_normal(
            cfg.profile_dim
        )
        state = SessionState(
            latent=latent,
            profile=profile,
            history=np.zeros(cfg.history_dim),
            fatigue=np.zeros(cfg.n_tasks),
            step=0,
            done=False,
            pending_scores=np.empty((0, 0)),
            pending_affinity=np.empty((0, 0)),
            rng=rng,
        )
        self._draw_candidates(state)
        return state

    def _draw_candidates(self, state: SessionState) -> None:
        cfg = self.config
        items = state.rng.standard_normal((cfg.n_candidates, cfg.latent_dim))
        # affinity of item j on task i: items_j . M_i . latent / h, shifted by
        # the pool quality bias (upstream candidate generation pre-filters).
        affinity = cfg.affinity_bias + (
            cfg.affinity_scale
            * np.einsum("jh,ihg,g->ji", items, self.mixing, state.latent)
            / cfg.latent_dim
        )
        noise = cfg.score_noise * state.rng.standard_normal((cfg.n_candidates, cfg.n_tasks))
        state.pending_affinity = affinity
        state.pending_scores = sigmoid(affinity + noise)

    def candidates(self, state: SessionState) -> list[fusion.TaskScores]:
        """Observed per-task scores of the candidates waiting at this step."""
        if state.done:
            raise ValueError("session is over; no candidates to rank")
        return [fusion.TaskScores(row.copy()) for row in state.pending_scores]

    def step(
        self, state: SessionState, action: np.ndarray
    ) -> tuple[FeedbackVector, float, SessionState, bool]:
        """Serve the candidate picked by ``action``; returns feedback, reward,
        the advanced state, and the session-over flag."""
        cfg = self.config
        if state.done:
            raise ValueError("cannot step a finished session")
        action = np.asarray(action, dtype=float)
        if action.shape != (cfg.n_tasks,):
            raise ValueError(f"action shape {action.shape}, expected ({cfg.n_tasks},)")
        if np.any(np.abs(action) > 1.0 + 1e-12):
            raise ValueError(f"action outside [-1, 1]: {action}")

        raw_weights = fusion.denormalize_action(action, self.bounds_cached)
        chosen, _ = fusion.rank(state.pending_scores, raw_weights, self.beta_cached)
        g_true = state.pending_affinity[chosen]
        g_eff = g_true - cfg.fatigue_strength * state.fatigue
        satisfaction = float(np.mean(g_eff))

        rng = state.rng
        play = min(
            cfg.play_cap,
            cfg.play_scale
            * float(sigmoid(g_eff[0]))
            * float(np.exp(cfg.play_noise * rng.standard_normal() - 0.5 * cfg.play_noise**2)),
        )
        integrity = float(
            sigmoid(cfg.integrity_gain * g_eff[1] + cfg.integrity_noise * rng.standard_normal())
        )
        like = float(rng.random() < sigmoid(cfg.like_bias + cfg.flag_gain * g_eff[2]))
        share = float(rng.random() < sigmoid(cfg.share_bias + cfg.flag_gain * g_eff[3]))
        comment = float(rng.random() < sigmoid(cfg.comment_bias + cfg.flag_gain * g_eff[3]))
        fast_exit = float(rng.random() < sigmoid(cfg.exit_bias - cfg.exit_gain * satisfaction))
        feedback = FeedbackVector(
            np.array([play, integrity, like, share, comment, fast_exit])
        )
        reward = fusion.reward(feedback.values, np.asarray(cfg.reward_weights))

        # Fatigue accrues only for consumption above the comfort threshold, and
        # superlinearly, so chasing extreme items is disproportionately costly
        # later. This is what delays satisfaction.
        new_fatigue = cfg.fatigue_decay * state.fatigue + (1.0 - cfg.fatigue_decay) * (
            cfg.fatigue_unit
            * np.maximum(g_true - cfg.fatigue_threshold, 0.0) ** cfg.fatigue_power
        )
        ema = 1.0 / cfg.history_window
        scaled = feedback.values / np.array(
            [cfg.play_cap, 1.0, 1.0, 1.0, 1.0, 1.0][: cfg.n_feedback]
        )
        impression = np.outer(state.pending_scores[chosen], scaled).ravel()
        new_history = (1.0 - ema) * state.history + ema * impression

        leave_u = rng.random()
        next_step = state.step + 1
        p_leave = float(
            sigmoid(
                cfg.leave_base
                - cfg.leave_satisfaction * satisfaction
                + cfg.leave_fatigue * float(np.mean(new_fatigue))
            )
        )
        done = next_step >= cfg.max_session_length or leave_u < p_leave

        next_state = SessionState(
            latent=state.latent,
            profile=state.profile,
            history=new_history,
            fatigue=new_fatigue,
            step=next_step,
            done=done,
            pending_scores=state.pending_scores,
            pending_affinity=state.pending_affinity,
            rng=rng,
        )
        if not done:
            self._draw_candidates(next_state)
        return feedback, reward, next_state, done

    # -- helpers -------------------------------------------------------------

    @property
    def bounds_cached(self) -> ActionBounds:
        b = getattr(self, "_bounds", None)
        if b is None:
            b = self.config.bounds()
            self._bounds = b
        return b

    @property
    def beta_cached(self) -> np.ndarray:
        b = getattr(self, "_beta", None)
        if b is None:
            b = self.config.beta()
            self._beta = b
        return b

    def leave_probability(self, satisfaction: float, mean_fatigue: float) -> float:
        """The leave model on its own, for inspection and tests."""
        cfg = self.config
        return float(
            sigmoid(
                cfg.leave_base
                - cfg.leave_satisfaction * satisfaction
                + cfg.leave_fatigue * mean_fatigue
            )
        )

    def expected_instant_reward(self, state: SessionState, action: np.ndarray) -> float:
        """Noise-free estimate of the next reward an action would earn.

        Uses the true candidate affinities, so this is a simulator-side oracle
        (for greedy baselines and tests), not something an agent observes.
        """
        cfg = self.config
        raw_weights = fusion.denormalize_action(np.asarray(action, dtype=float), self.bounds_cached)
        chosen, _ = fusion.rank(state.pending_scores, raw_weights, self.beta_cached)
        g_eff = state.pending_affinity[chosen] - cfg.fatigue_strength * state.fatigue
        satisfaction = float(np.mean(g_eff))
        expected = np.array(
            [
                min(cfg.play_cap, cfg.play_scale * float(sigmoid(g_eff[0]))),
                float(sigmoid(cfg.integrity_gain * g_eff[1])),
                float(sigmoid(cfg.like_bias + cfg.flag_gain * g_eff[2])),
                float(sigmoid(cfg.share_bias + cfg.flag_gain * g_eff[3])),
                float(sigmoid(cfg.comment_bias + cfg.flag_gain * g_eff[3])),
                float(sigmoid(cfg.exit_bias - cfg.exit_gain * satisfaction)),
            ]
        )
        return float(expected @ np.asarray(cfg.reward_weights))


def _seed_list(seed) -> list[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def mc_value(env, policy, n_sessions: int, seed: int, gamma: float) -> float:
    """Monte-Carlo estimate of the discounted return of ``policy``."""
    return float(np.mean(mc_returns(env, policy, n_sessions, seed, gamma)))


def mc_returns(env, policy, n_sessions: int, seed: int, gamma: float) -> np.ndarray:
    """Per-session discounted returns; ``mc_value`` is their mean.

    Works against any env exposing reset(session_seed) -> state with
    ``.observation``/``.done`` and step(state, action) -> (feedback, reward,
    next_state, done). Session i uses env seed [seed, i] and policy stream
    [seed, i, 1].
    """
    if n_sessions <= 0:
        raise ValueError(f"need a positive session count, got {n_sessions}")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    returns = np.zeros(n_sessions)
    for i in range(n_sessions):
        state = env.reset([seed, i])
        prng = np.random.default_rng([seed, i, POLICY_STREAM])
        total, disc = 0.0, 1.0
        done = state.done
        while not done:
            action = policy(state.observation, prng)
            _, reward, state, done = env.step(state, action)
            total += disc * reward
            disc *= gamma
        returns[i] = total
    return returns


def myopic_greedy_returns(
    sim: SessionSim, n_sessions: int, seed: int, gamma: float, grid_points: int = 3
) -> np.ndarray:
    """Returns of the one-step-greedy oracle policy.

    At every step it scans a fixed action grid and plays the action whose
    noise-free instant reward is highest. Useful as the "impatient" reference
    when probing the delayed-satisfaction structure.
    """
    cfg = sim.config
    grid = np.array(
        list(itertools.product(np.linspace(-1.0, 1.0, grid_points), repeat=cfg.n_tasks))
    )
    returns = np.zeros(n_sessions)
    for i in range(n_sessions):
        state = sim.reset([seed, i])
        total, disc = 0.0, 1.0
        done = state.done
        while not done:
            best_action, best_value = None, -np.inf
            for action in grid:
                value = sim.expected_instant_reward(state, action)
                if value > best_value:
                    best_action, best_value = action, value
            _, reward, state, done = sim.step(state, best_action)
            total += disc * reward
            disc *= gamma
        returns[i] = total
    return returns
