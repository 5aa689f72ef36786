"""Exploration data collection: random, action-noise, and mixed session rollouts.

Sessions are tagged by mode through their ids ("random-000017",
"noise-000003") so a mixed dataset can be split back into its two halves.
Seeding is per session and per mode: session i of mode m uses environment
stream (base_seed, m, i) and policy stream (base_seed, m, i, 1). Because the
streams depend only on (mode, index), a mixed collection is exactly the
deterministic interleaving of the two standalone collections run with the
same base seed.
"""

from __future__ import annotations

import numpy as np

from .data import DatasetMeta, Transition, TransitionDataset
from .policies import NoisyPolicy, RandomPolicy
from .sim import POLICY_STREAM, SessionSim, SimConfig

RANDOM_MODE = 0
NOISE_MODE = 1


def _roll_session(sim: SessionSim, policy, mode: int, index: int, base_seed: int, session_id: str):
    """One full on-policy session, returned as transition rows."""
    state = sim.reset([base_seed, mode, index])
    prng = np.random.default_rng([base_seed, mode, index, POLICY_STREAM])
    rows = []
    step = 0
    done = state.done
    while not done:
        obs = state.observation
        action = np.asarray(policy(obs, prng), dtype=float).copy()
        _, reward, state, done = sim.step(state, action)
        rows.append(
            Transition(
                session_id=session_id,
                step=step,
                state=obs,
                action=action,
                reward=reward,
                next_state=state.observation,
                done=done,
            )
        )
        step += 1
    return rows


def _meta(config: SimConfig, base_seed: int, policy_name: str) -> DatasetMeta:
    return DatasetMeta(
        state_dim=config.state_dim,
        action_dim=config.n_tasks,
        feedback_dim=config.n_feedback,
        seed=base_seed,
        policy=policy_name,
    )


def collect_random(config: SimConfig, n_sessions: int, base_seed: int) -> TransitionDataset:
    """Sessions played by the clamped-Gaussian random policy."""
    if n_sessions < 1:
        raise ValueError(f"need at least one session, got {n_sessions}")
    sim = SessionSim(config)
    policy = RandomPolicy(config.n_tasks)
    rows = []
    for i in range(n_sessions):
        rows.extend(_roll_session(sim, policy, RANDOM_MODE, i, base_seed, f"random-{i:06d}"))
    return TransitionDataset(rows, _meta(config, base_seed, "random"))


def collect_action_noise(
    config: SimConfig, policy, noise_std: float, n_sessions: int, base_seed: int
) -> TransitionDataset:
    """Sessions played by ``policy`` with Gaussian action noise, clamped.

    ``policy`` is any (observation, rng) -> action callable: a served agent,
    a behavior clone, or a constant default. noise_std = 0 is allowed here
    (it reproduces the base policy exactly); the CLI layer requires > 0.
    """
    if n_sessions < 1:
        raise ValueError(f"need at least one session, got {n_sessions}")
    if policy is None:
        raise ValueError("action-noise exploration needs a source policy")
    sim = SessionSim(config)
    noisy = NoisyPolicy(policy, noise_std)
    rows = []
    for i in range(n_sessions):
        rows.extend(_roll_session(sim, noisy, NOISE_MODE, i, base_seed, f"noise-{i:06d}"))
    return TransitionDataset(rows, _meta(config, base_seed, "action_noise"))


def collect_mixed(
    config: SimConfig, policy, noise_std: float, n_sessions: int, base_seed: int
) -> TransitionDataset:
    """Half random, half action-noise sessions, deterministically interleaved.

    floor(n/2) sessions are random and ceil(n/2) use action noise. Paired
    slots alternate random, noise, random, noise, ...; when n is odd the
    trailing unpaired slot is an action-noise session. Per-mode seeds and ids
    match the standalone collectors, so splitting the result by id prefix
    recovers exactly collect_random(floor(n/2)) and
    collect_action_noise(ceil(n/2)).
    """
    if n_sessions < 2:
        raise ValueError(f"mixed exploration needs at least 2 sessions, got {n_sessions}")
    if policy is None:
        raise ValueError("mixed exploration needs a source policy for its noise half")
    sim = SessionSim(config)
    random_policy = RandomPolicy(config.n_tasks)
    noisy = NoisyPolicy(policy, noise_std)
    n_random = n_sessions // 2
    rows = []
    r_idx, z_idx = 0, 0
    for slot in range(n_sessions):
        if slot % 2 == 0 and r_idx < n_random:
            rows.extend(
                _roll_session(sim, random_policy, RANDOM_MODE, r_idx, base_seed, f"random-{r_idx:06d}")
            )
            r_idx += 1
        else:
            rows.extend(
                _roll_session(sim, noisy, NOISE_MODE, z_idx, base_seed, f"noise-{z_idx:06d}")
            )
            z_idx += 1
    return TransitionDataset(rows, _meta(config, base_seed, "mixed"))


def split_by_mode(dataset: TransitionDataset) -> dict[str, list[Transition]]:
    """Group transitions by the mode prefix of their session ids."""
    out: dict[str, list[Transition]] = {}
    for t in dataset.transitions:
        mode = t.session_id.split("-")[0]
        out.setdefault(mode, []).append(t)
    return out


def dataset_returns(dataset: TransitionDataset, gamma: float) -> np.ndarray:
    """Per-session discounted returns of the logged rollouts.

    These are on-policy samples, so their mean is the Monte-Carlo value
    estimate of whatever behavior generated the dataset.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    returns = []
    for t in dataset.transitions:
        if t.step == 0:
            returns.append(0.0)
        returns[-1] += gamma**t.step * t.reward
    return np.asarray(returns)
