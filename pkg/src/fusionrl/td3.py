"""Twin-delayed deterministic actor-critic, trained purely offline.

This baseline runs the standard online algorithm against a fixed batch with
no environment interaction, which is exactly the setting where its value
estimates extrapolate: the actor proposes actions the batch never covered,
the critics bootstrap from their own guesses there, and the estimated Q
climbs past any return the environment can pay. The training loop logs mean
estimated Q per epoch so the divergence is visible next to the
batch-constrained agent's curve (same data pathways, same units, same gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .bcq import critic_loss_and_grads
from .data import ReplayBuffer, TrainingLog, TransitionDataset
from .nets import Net, NetworkParams, NetworkSpec


@dataclass(frozen=True)
class Td3Config:
    """Published defaults for the delay and target-noise settings."""

    gamma: float = 0.95
    tau: float = 0.005
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    minibatch: int = 256
    epochs: int = 50000
    buffer_capacity: int = 100000
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    hidden: tuple[int, ...] = (128, 128)
    log_every: int = 100
    q_stop: float = 0.0  # stop once mean estimated Q exceeds this; 0 disables

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"target rate must lie in [0, 1], got {self.tau}")
        if self.policy_delay < 1:
            raise ValueError("policy delay must be at least 1")
        if self.target_noise < 0 or self.noise_clip < 0:
            raise ValueError("target noise settings must be non-negative")
        if self.minibatch < 1 or self.epochs < 0 or self.buffer_capacity < 1:
            raise ValueError("bad minibatch/epochs/buffer settings")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class Td3Agent:
    state_dim: int
    action_dim: int
    config: Td3Config
    actor: Net  # s -> action, tanh head
    critic_1: Net  # (s, a) -> value, zero-initialized linear head
    critic_2: Net
    target_actor: NetworkParams
    target_critic_1: NetworkParams
    target_critic_2: NetworkParams


def build_agent(
    state_dim: int, action_dim: int, config: Td3Config, rng: np.random.Generator
) -> Td3Agent:
    """Fresh agent; networks are drawn from ``rng`` in a fixed order."""
    h = tuple(config.hidden)
    actor_spec = NetworkSpec((state_dim, *h, action_dim), output_activation="tanh")
    q_spec = NetworkSpec((state_dim + action_dim, *h, 1))
    actor = nets.build_net(actor_spec, rng, learning_rate=config.lr_actor)
    critic_1 = nets.build_net(q_spec, rng, learning_rate=config.lr_critic, zero_output_layer=True)
    critic_2 = nets.build_net(q_spec, rng, learning_rate=config.lr_critic, zero_output_layer=True)
    return Td3Agent(
        state_dim=state_dim,
        action_dim=action_dim,
        config=config,
        actor=actor,
        critic_1=critic_1,
        critic_2=critic_2,
        target_actor=actor.copy_params(),
        target_critic_1=critic_1.copy_params(),
        target_critic_2=critic_2.copy_params(),
    )


def select_action(agent: Td3Agent, state: np.ndarray) -> np.ndarray:
    """Deterministic greedy action: the actor's output, already in (-1, 1)."""
    state = np.asarray(state, dtype=float)
    if state.ndim != 1 or state.shape[0] != agent.state_dim:
        raise ValueError(f"expected a single state of dim {agent.state_dim}, got {state.shape}")
    return agent.actor(state).copy()


class ActorPolicy:
    """Policy adapter matching the (observation, rng) calling convention."""

    def __init__(self, agent: Td3Agent):
        self.agent = agent

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        del rng  # the actor is deterministic
        return select_action(self.agent, observation)


def critic_target(
    agent: Td3Agent,
    rewards: np.ndarray,
    next_states: np.ndarray,
    dones: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Clipped double-Q targets with smoothed target-actor actions."""
    r = np.asarray(rewards, dtype=float).ravel()
    d = np.asarray(dones, dtype=float).ravel()
    s2 = np.asarray(next_states, dtype=float)
    if s2.ndim != 2 or s2.shape[1] != agent.state_dim:
        raise ValueError(f"next states have shape {s2.shape}, expected (*, {agent.state_dim})")
    if not (len(r) == len(d) == s2.shape[0]):
        raise ValueError("rewards, dones and next states must align")
    cfg = agent.config
    a2 = nets.forward(agent.target_actor, agent.actor.spec, s2)
    noise = np.clip(
        cfg.target_noise * rng.standard_normal(a2.shape), -cfg.noise_clip, cfg.noise_clip
    )
    a2 = np.clip(a2 + noise, -1.0, 1.0)
    xa = np.concatenate([s2, a2], axis=1)
    q1 = nets.forward(agent.target_critic_1, agent.critic_1.spec, xa).ravel()
    q2 = nets.forward(agent.target_critic_2, agent.critic_2.spec, xa).ravel()
    return r + cfg.gamma * (1.0 - d) * np.minimum(q1, q2)


def actor_objective_and_grads(
    actor: Net, critic: Net, states: np.ndarray
) -> tuple[float, nets.Gradients]:
    """Mean critic value of the actor's own actions, with actor gradients."""
    actions, a_cache = actor.cached(states)
    q, q_cache = critic.cached(np.concatenate([states, actions], axis=1))
    objective = float(np.mean(q))
    _, q_in_grad = critic.backward(q_cache, np.full_like(q, 1.0 / q.shape[0]))
    g_action = q_in_grad[:, states.shape[1] :]
    a_grads, _ = actor.backward(a_cache, g_action)
    return objective, a_grads


def train_td3(
    dataset: TransitionDataset,
    config: Td3Config,
    seed: int,
    agent: Td3Agent | None = None,
) -> tuple[Td3Agent, TrainingLog]:
    """Offline training loop; logs the mean estimated Q per logged epoch.

    Per epoch: minibatch draw, smoothed bootstrap targets, double-critic
    regression; every ``policy_delay`` epochs an actor ascent step followed by
    soft target updates at rate ``tau``. The rng stream order per epoch is:
    batch indices, target noise. The logged mean_q is the critic-1 value of
    the actor's own actions on the minibatch states (the agent's estimate of
    its policy), next to data_q at the logged data actions. When ``q_stop``
    is positive the loop ends early once a logged mean_q exceeds it (used to
    cap divergence runs; the check runs only at logged epochs).
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    state_dim, action_dim = dataset.meta.state_dim, dataset.meta.action_dim
    rng = np.random.default_rng([seed, 0xD3])
    if agent is None:
        agent = build_agent(state_dim, action_dim, config, rng)
    elif agent.state_dim != state_dim or agent.action_dim != action_dim:
        raise ValueError(
            f"agent dims ({agent.state_dim}, {agent.action_dim}) do not match "
            f"dataset ({state_dim}, {action_dim})"
        )
    buffer = ReplayBuffer(config.buffer_capacity, state_dim, action_dim)
    buffer.extend(dataset.transitions)
    arrays = buffer.to_arrays()
    n = len(arrays)
    log = TrainingLog(["epoch", "mean_q", "data_q", "critic_loss"])
    for epoch in range(1, config.epochs + 1):
        idx = rng.integers(0, n, size=config.minibatch)
        s, a, r, s2, d = arrays.take(idx)
        y = critic_target(agent, r, s2, d, rng)
        loss1, g1, q1 = critic_loss_and_grads(agent.critic_1, s, a, y)
        loss2, g2, _ = critic_loss_and_grads(agent.critic_2, s, a, y)
        agent.critic_1.step(g1)
        agent.critic_2.step(g2)
        data_q = float(np.mean(q1))
        critic_loss = 0.5 * (loss1 + loss2)
        if epoch % config.policy_delay == 0:
            _, a_grads = actor_objective_and_grads(agent.actor, agent.critic_1, s)
            agent.actor.step(a_grads.scaled(-1.0))
            tau = config.tau
            agent.target_actor = nets.soft_update(agent.target_actor, agent.actor.params, tau)
            agent.target_critic_1 = nets.soft_update(
                agent.target_critic_1, agent.critic_1.params, tau
            )
            agent.target_critic_2 = nets.soft_update(
                agent.target_critic_2, agent.critic_2.params, tau
            )
        if epoch % config.log_every == 0 or epoch == 1 or epoch == config.epochs:
            pi = agent.actor(s)
            mean_q = float(np.mean(agent.critic_1(np.concatenate([s, pi], axis=1))))
            log.append(epoch=epoch, mean_q=mean_q, data_q=data_q, critic_loss=critic_loss)
            if config.q_stop > 0 and mean_q > config.q_stop:
                break
    return agent, log


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_NETWORKS = (
    "actor",
    "critic_1",
    "critic_2",
    "target_actor",
    "target_critic_1",
    "target_critic_2",
)


def save_agent(agent: Td3Agent, path: str) -> None:
    cfg = agent.config
    hyper: dict[str, object] = {
        "algo": "td3",
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "gamma": cfg.gamma,
        "tau": cfg.tau,
        "policy_delay": cfg.policy_delay,
        "target_noise": cfg.target_noise,
        "noise_clip": cfg.noise_clip,
        "minibatch": cfg.minibatch,
        "epochs": cfg.epochs,
        "buffer_capacity": cfg.buffer_capacity,
        "lr_actor": cfg.lr_actor,
        "lr_critic": cfg.lr_critic,
        "hidden": cfg.hidden,
        "log_every": cfg.log_every,
        "q_stop": cfg.q_stop,
    }
    networks = {
        "actor": (agent.actor.spec, agent.actor.params),
        "critic_1": (agent.critic_1.spec, agent.critic_1.params),
        "critic_2": (agent.critic_2.spec, agent.critic_2.params),
        "target_actor": (agent.actor.spec, agent.target_actor),
        "target_critic_1": (agent.critic_1.spec, agent.target_critic_1),
        "target_critic_2": (agent.critic_2.spec, agent.target_critic_2),
    }
    nets.save_sections(path, hyper, networks)


def load_agent(path: str) -> Td3Agent:
    """Rebuild a serving agent from a checkpoint (fresh optimizer state)."""
    hyper, networks = nets.load_sections(path)
    if hyper.get("algo") != "td3":
        raise ValueError(f"{path}: not a td3 checkpoint (algo={hyper.get('algo')!r})")
    missing = [n for n in _NETWORKS if n not in networks]
    if missing:
        raise ValueError(f"{path}: checkpoint missing networks {missing}")
    config = Td3Config(
        gamma=float(hyper["gamma"]),
        tau=float(hyper["tau"]),
        policy_delay=int(hyper["policy_delay"]),
        target_noise=float(hyper["target_noise"]),
        noise_clip=float(hyper["noise_clip"]),
        minibatch=int(hyper["minibatch"]),
        epochs=int(hyper["epochs"]),
        buffer_capacity=int(hyper["buffer_capacity"]),
        lr_actor=float(hyper["lr_actor"]),
        lr_critic=float(hyper["lr_critic"]),
        hidden=tuple(int(t) for t in hyper["hidden"].split(",")),
        log_every=int(hyper.get("log_every", 100)),
        q_stop=float(hyper.get("q_stop", 0.0)),
    )

    def net_of(name: str, lr: float) -> Net:
        spec, params = networks[name]
        return Net(spec, params, nets.init_adam(params, lr))

    return Td3Agent(
        state_dim=int(hyper["state_dim"]),
        action_dim=int(hyper["action_dim"]),
        config=config,
        actor=net_of("actor", config.lr_actor),
        critic_1=net_of("critic_1", config.lr_critic),
        critic_2=net_of("critic_2", config.lr_critic),
        target_actor=networks["target_actor"][1],
        target_critic_1=networks["target_critic_1"][1],
        target_critic_2=networks["target_critic_2"][1],
    )
