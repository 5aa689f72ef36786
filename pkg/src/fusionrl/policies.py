"""Policy callables. Every policy maps (observation, rng) -> action in [-1, 1]^k."""

from __future__ import annotations

import hashlib

import numpy as np


def state_keyed_rng(observation: np.ndarray, base_seed: int) -> np.random.Generator:
    """Deterministic per-state generator: same observation, same stream.

    Keyed by blake2b over the observation bytes and the base seed, so a
    stochastic policy becomes a fixed state -> action map, which is what
    off-policy evaluation and reproducible serving need.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(np.ascontiguousarray(observation, dtype=float).tobytes())
    h.update(int(base_seed).to_bytes(8, "little", signed=True))
    return np.random.default_rng(int.from_bytes(h.digest(), "little"))


class RandomPolicy:
    """Standard normal per dimension, clamped to [-1, 1]."""

    def __init__(self, action_dim: int):
        self.action_dim = action_dim

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return np.clip(rng.standard_normal(self.action_dim), -1.0, 1.0)


class ConstantPolicy:
    """Always the same action; handy as a fixed serving baseline."""

    def __init__(self, action: np.ndarray):
        self.action = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.action.copy()


class NoisyPolicy:
    """Base policy plus N(0, sigma^2) exploration noise, clamped to [-1, 1]."""

    def __init__(self, base, sigma: float):
        if sigma < 0:
            raise ValueError(f"noise scale must be non-negative, got {sigma}")
        self.base = base
        self.sigma = sigma

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        action = np.asarray(self.base(observation, rng), dtype=float)
        noise = self.sigma * rng.standard_normal(action.size)
        return np.clip(action + noise, -1.0, 1.0)


class FrozenPolicy:
    """Deterministic pin of a stochastic policy.

    Replaces the caller's rng with a state-keyed stream, so each observation
    always maps to one action. Offline evaluation needs policies in this
    form, and freezing keeps the pinned version usable for Monte-Carlo
    rollouts of the identical state -> action map.
    """

    def __init__(self, base, key_seed: int = 0):
        self.base = base
        self.key_seed = key_seed

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        del rng
        return self.base(observation, state_keyed_rng(observation, self.key_seed))
