"""Conservative offline policy evaluation via a penalized fitted Q-function.

Plain fitted-Q evaluation overestimates policies that act outside the logged
data, for the same extrapolation reason an offline-trained actor-critic
diverges. The fix here subtracts probability mass from out-of-distribution
actions: the fitting loss adds a penalty proportional to
mean Q(s, pi_e(s)) - mean Q(s, a_logged), so Q values at evaluated-policy
actions are pushed down exactly where they leave the batch support, and the
resulting value estimate lower-bounds rather than flatters.

The estimate itself is the average fitted Q over session-initial states,
with the evaluated policy collapsed to a point mass (every policy evaluated
here is deterministic; stochastic ones must be frozen first, see
policies.FrozenPolicy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .data import TrainingLog, TransitionDataset
from .nets import Net, NetworkSpec
from .sim import mc_value


@dataclass(frozen=True)
class OpeConfig:
    """Fitting and evaluation settings for the conservative estimator."""

    train_batch: int = 512
    test_batch: int = 5000
    gamma: float = 0.95
    cql_penalty: float = 5e-4
    iterations: int = 5000
    lr: float = 1e-4
    hidden: tuple[int, ...] = (64, 64)
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.train_batch < 1 or self.test_batch < 1 or self.iterations < 1:
            raise ValueError("batch sizes and iteration count must be at least 1")
        if self.cql_penalty < 0:
            raise ValueError(f"penalty must be non-negative, got {self.cql_penalty}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


@dataclass
class FittedQ:
    """Frozen fitted Q-function tied to the policy it was fitted for."""

    spec: NetworkSpec
    params: nets.NetworkParams
    policy_name: str
    gamma: float

    def __post_init__(self) -> None:
        if not self.params.finite():
            raise ValueError("fitted Q parameters must be finite")

    def value(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        return nets.forward(self.params, self.spec, x).ravel()


def check_deterministic(policy, observation: np.ndarray) -> None:
    """Reject stochastic policies: two calls with distinct rngs must agree."""
    a = policy(observation, np.random.default_rng(0))
    b = policy(observation, np.random.default_rng(1))
    if not np.array_equal(np.asarray(a), np.asarray(b)):
        raise ValueError(
            "evaluation policy is stochastic; wrap it in FrozenPolicy to pin "
            "a deterministic state-to-action map first"
        )


def _policy_actions(policy, states: np.ndarray, action_dim: int) -> np.ndarray:
    """Evaluate a deterministic policy row by row."""
    out = np.zeros((states.shape[0], action_dim))
    rng = np.random.default_rng(0)  # ignored by deterministic policies
    for i, s in enumerate(states):
        a = np.asarray(policy(s, rng), dtype=float)
        if a.shape != (action_dim,):
            raise ValueError(f"policy returned shape {a.shape}, expected ({action_dim},)")
        out[i] = a
    return out


def fit_conservative_q(
    dataset: TransitionDataset,
    policy,
    config: OpeConfig,
    seed: int,
    policy_name: str = "policy",
) -> tuple[FittedQ, TrainingLog]:
    """Fit the penalized Q-function for one deterministic evaluation policy.

    Each iteration samples ``train_batch`` transitions, bootstraps targets
    y = r + gamma * Q(s', pi_e(s')) from the current network with gradients
    blocked (y = r on terminal rows), and takes one Adam step on

        cql_penalty * (mean Q(s, pi_e(s)) - mean Q(s, a))
        + 0.5 * mean (Q(s, a) - y)^2.

    Policy actions are precomputed once for every dataset row. A non-finite
    loss aborts with the failing iteration in the message.
    """
    if len(dataset) == 0:
        raise ValueError("cannot fit on an empty dataset")
    arrays = dataset.arrays()
    check_deterministic(policy, arrays.states[0])
    action_dim = dataset.meta.action_dim
    pi_now = _policy_actions(policy, arrays.states, action_dim)
    pi_next = _policy_actions(policy, arrays.next_states, action_dim)

    rng = np.random.default_rng([seed, 0x0E])
    spec = NetworkSpec((dataset.meta.state_dim + action_dim, *config.hidden, 1))
    net = nets.build_net(spec, rng, learning_rate=config.lr, zero_output_layer=True)
    n = len(arrays)
    m = config.train_batch
    log = TrainingLog(["iteration", "loss", "td_loss", "penalty_term", "mean_q_pi", "mean_q_data"])
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, n, size=m)
        s = arrays.states[idx]
        a = arrays.actions[idx]
        r = arrays.rewards[idx]
        d = arrays.dones[idx].astype(float)
        # bootstrap from the current network, gradients blocked through y
        x_next = np.concatenate([arrays.next_states[idx], pi_next[idx]], axis=1)
        q_next = net(x_next).ravel()
        y = r + config.gamma * (1.0 - d) * q_next

        q_pi, cache_pi = net.cached(np.concatenate([s, pi_now[idx]], axis=1))
        q_data, cache_data = net.cached(np.concatenate([s, a], axis=1))
        q_pi = q_pi.ravel()
        q_data = q_data.ravel()
        resid = q_data - y
        td_loss = 0.5 * float(np.mean(resid**2))
        penalty_term = config.cql_penalty * float(np.mean(q_pi) - np.mean(q_data))
        loss = penalty_term + td_loss
        if not np.isfinite(loss):
            raise FloatingPointError(f"fitting diverged at iteration {it}: loss {loss}")

        g_pi, _ = net.backward(cache_pi, np.full((m, 1), config.cql_penalty / m))
        g_data, _ = net.backward(cache_data, ((resid - config.cql_penalty) / m)[:, None])
        net.step(nets.Gradients.add(g_pi, g_data))
        if it % config.log_every == 0 or it == 1 or it == config.iterations:
            log.append(
                iteration=it,
                loss=loss,
                td_loss=td_loss,
                penalty_term=penalty_term,
                mean_q_pi=float(np.mean(q_pi)),
                mean_q_data=float(np.mean(q_data)),
            )
    fitted = FittedQ(spec=spec, params=net.params, policy_name=policy_name, gamma=config.gamma)
    return fitted, log


def initial_states(dataset: TransitionDataset, n: int, rng: np.random.Generator) -> np.ndarray:
    """Sample n session-initial states (with replacement) from the dataset."""
    arrays = dataset.arrays()
    firsts = arrays.states[arrays.first_step]
    if firsts.shape[0] == 0:
        raise ValueError("dataset has no session-initial states")
    idx = rng.integers(0, firsts.shape[0], size=n)
    return firsts[idx]


def estimate_value(fitted: FittedQ, states: np.ndarray, policy) -> float:
    """Point-mass value estimate: mean fitted Q at the policy's own actions."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ValueError("need at least one initial state")
    action_dim = fitted.spec.layer_sizes[0] - states.shape[1]
    actions = _policy_actions(policy, states, action_dim)
    return float(np.mean(fitted.value(states, actions)))


@dataclass
class EvalReport:
    """One policy's offline evaluation, with the optional simulator check."""

    policy_name: str
    ope_value: float
    n_initial_states: int
    iterations: int
    final_loss: float
    final_td_loss: float
    mean_q_pi: float
    mean_q_data: float
    action_mean: tuple[float, ...]
    action_std: tuple[float, ...]
    dataset_action_mean: tuple[float, ...]
    dataset_action_std: tuple[float, ...]
    mc_value: float = float("nan")
    ope_minus_mc: float = float("nan")

    def lines(self) -> list[str]:
        out = []
        for key, val in self.__dict__.items():
            out.append(f"{key} = {nets.format_kv_value(val)}")
        return out


def evaluate_policy(
    dataset: TransitionDataset,
    policy,
    config: OpeConfig,
    seed: int,
    policy_name: str = "policy",
    sim=None,
    mc_sessions: int = 2000,
) -> tuple[EvalReport, TrainingLog]:
    """Fit, estimate, and (optionally) compare against the simulator.

    When ``sim`` is given, the same frozen policy is rolled out for
    ``mc_sessions`` Monte-Carlo sessions and the report records the gap
    between the offline estimate and the simulated ground truth.
    """
    fitted, log = fit_conservative_q(dataset, policy, config, seed, policy_name=policy_name)
    rng = np.random.default_rng([seed, 0x0E, 1])
    states = initial_states(dataset, config.test_batch, rng)
    v_hat = estimate_value(fitted, states, policy)

    actions = _policy_actions(policy, states[: min(len(states), 1000)], dataset.meta.action_dim)
    data_actions = dataset.arrays().actions
    report = EvalReport(
        policy_name=policy_name,
        ope_value=v_hat,
        n_initial_states=config.test_batch,
        iterations=config.iterations,
        final_loss=log.column("loss")[-1],
        final_td_loss=log.column("td_loss")[-1],
        mean_q_pi=log.column("mean_q_pi")[-1],
        mean_q_data=log.column("mean_q_data")[-1],
        action_mean=tuple(float(v) for v in actions.mean(axis=0)),
        action_std=tuple(float(v) for v in actions.std(axis=0)),
        dataset_action_mean=tuple(float(v) for v in data_actions.mean(axis=0)),
        dataset_action_std=tuple(float(v) for v in data_actions.std(axis=0)),
    )
    if sim is not None:
        mc = mc_value(sim, policy, mc_sessions, seed=seed, gamma=config.gamma)
        report.mc_value = mc
        report.ope_minus_mc = v_hat - mc
    return report, log


# ---------------------------------------------------------------------------
# Behavior cloning (the comparison policy for evaluation reports)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CloneConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    iterations: int = 2000
    minibatch: int = 256

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.minibatch < 1:
            raise ValueError("iterations and minibatch must be at least 1")
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


class BehaviorClone:
    """Deterministic state-to-action regressor fitted to the logged pairs."""

    def __init__(self, net: Net):
        self.net = net

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        del rng
        return self.net(np.asarray(observation, dtype=float)).copy()


def fit_behavior_clone(
    dataset: TransitionDataset, config: CloneConfig, seed: int
) -> tuple[BehaviorClone, TrainingLog]:
    """Tanh-head regression of logged actions on states (mean squared error)."""
    if len(dataset) == 0:
        raise ValueError("cannot clone from an empty dataset")
    arrays = dataset.arrays()
    rng = np.random.default_rng([seed, 0xBC10])
    spec = NetworkSpec(
        (dataset.meta.state_dim, *config.hidden, dataset.meta.action_dim),
        output_activation="tanh",
    )
    net = nets.build_net(spec, rng, learning_rate=config.lr)
    n = arrays.states.shape[0]
    log = TrainingLog(["iteration", "loss"])
    for it in range(1, config.iterations + 1):
        idx = rng.integers(0, n, size=config.minibatch)
        s, a = arrays.states[idx], arrays.actions[idx]
        pred, cache = net.cached(s)
        err = pred - a
        loss = float(np.mean(np.sum(err**2, axis=1)))
        grads, _ = net.backward(cache, 2.0 * err / config.minibatch)
        net.step(grads)
        if it % 100 == 0 or it == 1 or it == config.iterations:
            log.append(iteration=it, loss=loss)
    return BehaviorClone(net), log
