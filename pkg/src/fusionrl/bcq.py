"""Batch-constrained offline Q-learning over continuous fusion-weight actions.

The agent keeps its policy inside the support of the logged behavior data:
a conditional VAE imitates the batch action distribution, a bounded
perturbation network nudges sampled candidates toward higher value, and
clipped double Q critics score them. Acting means: sample candidates from the
VAE, perturb, take the argmax under critic 1. Targets use the slow-moving
target copies with a min over both critics and a max over candidates.

All losses are exposed as pure (loss, gradients) functions of explicit noise
draws so each can be validated against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .data import ReplayBuffer, TrainingLog, TransitionDataset
from .nets import Net, NetworkParams, NetworkSpec
from .policies import state_keyed_rng


@dataclass(frozen=True)
class BcqConfig:
    """Hyperparameters of the batch-constrained agent."""

    gamma: float = 0.95
    rho: float = 0.15
    n_action_samples: int = 10
    latent_clip: float = 0.5
    minibatch: int = 256
    epochs: int = 50000
    buffer_capacity: int = 100000
    target_interval: int = 10
    target_rate: float = 0.05
    lr_vae: float = 1e-3
    lr_perturb: float = 1e-4
    lr_critic: float = 2e-4
    hidden: tuple[int, ...] = (128, 128)
    z_dim: int = 0  # 0 means 2 * action_dim, fixed when the agent is built
    log_every: int = 100

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.rho < 0:
            raise ValueError(f"perturbation bound must be non-negative, got {self.rho}")
        if self.n_action_samples < 1:
            raise ValueError("need at least one action sample")
        if self.minibatch < 1 or self.epochs < 0 or self.buffer_capacity < 1:
            raise ValueError("bad minibatch/epochs/buffer settings")
        if self.target_interval < 1 or not 0.0 <= self.target_rate <= 1.0:
            raise ValueError("bad target update settings")
        for lr in (self.lr_vae, self.lr_perturb, self.lr_critic):
            if lr <= 0:
                raise ValueError("learning rates must be positive")


@dataclass
class BcqAgent:
    state_dim: int
    action_dim: int
    z_dim: int
    config: BcqConfig
    encoder: Net  # (s, a) -> (mu, log_std), linear head
    decoder: Net  # (s, z) -> action, tanh head
    perturb: Net  # (s, a) -> bounded nudge, tanh head
    critic_1: Net  # (s, a) -> value, zero-initialized linear head
    critic_2: Net
    target_perturb: NetworkParams
    target_critic_1: NetworkParams
    target_critic_2: NetworkParams


def build_agent(
    state_dim: int, action_dim: int, config: BcqConfig, rng: np.random.Generator
) -> BcqAgent:
    """Fresh agent; networks are drawn from ``rng`` in a fixed order."""
    z_dim = config.z_dim if config.z_dim > 0 else 2 * action_dim
    h = tuple(config.hidden)
    enc_spec = NetworkSpec((state_dim + action_dim, *h, 2 * z_dim))
    dec_spec = NetworkSpec((state_dim + z_dim, *h, action_dim), output_activation="tanh")
    pert_spec = NetworkSpec((state_dim + action_dim, *h, action_dim), output_activation="tanh")
    q_spec = NetworkSpec((state_dim + action_dim, *h, 1))
    encoder = nets.build_net(enc_spec, rng, learning_rate=config.lr_vae)
    decoder = nets.build_net(dec_spec, rng, learning_rate=config.lr_vae)
    perturb = nets.build_net(pert_spec, rng, learning_rate=config.lr_perturb)
    critic_1 = nets.build_net(q_spec, rng, learning_rate=config.lr_critic, zero_output_layer=True)
    critic_2 = nets.build_net(q_spec, rng, learning_rate=config.lr_critic, zero_output_layer=True)
    return BcqAgent(
        state_dim=state_dim,
        action_dim=action_dim,
        z_dim=z_dim,
        config=config,
        encoder=encoder,
        decoder=decoder,
        perturb=perturb,
        critic_1=critic_1,
        critic_2=critic_2,
        target_perturb=perturb.copy_params(),
        target_critic_1=critic_1.copy_params(),
        target_critic_2=critic_2.copy_params(),
    )


def _rows(x: np.ndarray, dim: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} has shape {np.shape(x)}, expected (*, {dim})")
    return arr


def gaussian_kl(mu: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """Per-sample KL(N(mu, std^2) || N(0, 1)), summed over latent dims."""
    var = np.exp(2.0 * log_std)
    return 0.5 * np.sum(mu**2 + var - 1.0 - 2.0 * log_std, axis=-1)


def vae_loss_and_grads(
    encoder: Net, decoder: Net, states: np.ndarray, actions: np.ndarray, eps: np.ndarray
) -> tuple[float, nets.Gradients, nets.Gradients, dict]:
    """Reconstruction + KL objective with exact gradients for both networks.

    ``eps`` is the explicit reparameterization noise, one row per sample, so
    the function is deterministic and finite-difference checkable. Gradients
    flow through z = mu + std * eps into the encoder.
    """
    B = states.shape[0]
    enc_in = np.concatenate([states, actions], axis=1)
    enc_out, enc_cache = encoder.cached(enc_in)
    z_dim = enc_out.shape[1] // 2
    mu, log_std = enc_out[:, :z_dim], enc_out[:, z_dim:]
    if not np.all(np.isfinite(enc_out)):
        raise FloatingPointError("encoder produced non-finite moments")
    std = np.exp(log_std)
    z = mu + std * eps
    recon, dec_cache = decoder.cached(np.concatenate([states, z], axis=1))
    err = recon - actions
    recon_term = float(np.mean(np.sum(err**2, axis=1)))
    kl_term = float(np.mean(gaussian_kl(mu, log_std)))
    loss = recon_term + kl_term
    if not np.isfinite(loss):
        raise FloatingPointError(
            f"non-finite VAE loss (reconstruction {recon_term}, kl {kl_term})"
        )

    dec_grads, dec_in_grad = decoder.backward(dec_cache, 2.0 * err / B)
    g_z = dec_in_grad[:, states.shape[1] :]
    d_mu = g_z + mu / B
    d_log_std = g_z * std * eps + (std**2 - 1.0) / B
    enc_grads, _ = encoder.backward(enc_cache, np.concatenate([d_mu, d_log_std], axis=1))
    parts = {"reconstruction": recon_term, "kl": kl_term}
    return loss, enc_grads, dec_grads, parts


def decode(agent: BcqAgent, states: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Run the decoder on explicit latents; rows of z pair with rows of states."""
    s = _rows(states, agent.state_dim, "states")
    zz = _rows(z, agent.z_dim, "latents")
    if s.shape[0] != zz.shape[0]:
        raise ValueError(f"{s.shape[0]} states vs {zz.shape[0]} latents")
    return agent.decoder(np.concatenate([s, zz], axis=1))


def sample_actions(
    agent: BcqAgent, state: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n candidate actions per state from the VAE decoder.

    Latents are standard normal clipped to +-latent_clip. For a single state
    the result is (n, action_dim); for a batch of B states it is
    (B * n, action_dim) with each state's candidates contiguous.
    """
    if n < 1:
        raise ValueError(f"need at least one sample, got {n}")
    s = _rows(state, agent.state_dim, "state")
    rep = np.repeat(s, n, axis=0)
    clip = agent.config.latent_clip
    z = np.clip(rng.standard_normal((rep.shape[0], agent.z_dim)), -clip, clip)
    return decode(agent, rep, z)


def perturb(
    agent: BcqAgent, states: np.ndarray, actions: np.ndarray, use_target: bool = False
) -> np.ndarray:
    """Serving-path perturbation: a + rho * psi(s, a), clamped to [-1, 1]^k."""
    s = _rows(states, agent.state_dim, "states")
    a = _rows(actions, agent.action_dim, "actions")
    if s.shape[0] != a.shape[0]:
        raise ValueError(f"{s.shape[0]} states vs {a.shape[0]} actions")
    x = np.concatenate([s, a], axis=1)
    params = agent.target_perturb if use_target else agent.perturb.params
    psi = nets.forward(params, agent.perturb.spec, x)
    return np.clip(a + agent.config.rho * psi, -1.0, 1.0)


def select_action(agent: BcqAgent, state: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Greedy serving action: best perturbed VAE candidate under critic 1.

    Ties keep the lowest candidate index.
    """
    state = np.asarray(state, dtype=float)
    if state.ndim != 1:
        raise ValueError(f"select_action takes a single state, got shape {state.shape}")
    n = agent.config.n_action_samples
    cands = sample_actions(agent, state, n, rng)
    tiled = np.repeat(state[None, :], n, axis=0)
    perturbed = perturb(agent, tiled, cands)
    q = agent.critic_1(np.concatenate([tiled, perturbed], axis=1)).ravel()
    return perturbed[int(np.argmax(q))].copy()


def policy_value_estimate(agent: BcqAgent, states: np.ndarray, rng: np.random.Generator) -> float:
    """Mean critic-1 value of the greedy serving action over a state batch.

    Replicates select_action per row (n candidates, perturb, argmax under
    critic 1) and averages the winning Q values. This is the number the
    training log reports as mean_q: what the agent believes its own policy
    is worth on batch states.
    """
    s = _rows(states, agent.state_dim, "states")
    n = agent.config.n_action_samples
    cands = sample_actions(agent, s, n, rng)
    tiled = np.repeat(s, n, axis=0)
    perturbed = perturb(agent, tiled, cands)
    q = agent.critic_1(np.concatenate([tiled, perturbed], axis=1)).ravel()
    return float(q.reshape(s.shape[0], n).max(axis=1).mean())


class AgentPolicy:
    """Deterministic serving policy: per-state rng derived from a base seed.

    The same observation always maps to the same action, which makes the
    policy usable for off-policy evaluation and as an exploration backbone.
    """

    def __init__(self, agent: BcqAgent, base_seed: int = 0):
        self.agent = agent
        self.base_seed = base_seed

    def __call__(self, observation: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        del rng  # determinism comes from the state-keyed stream
        return select_action(self.agent, observation, state_keyed_rng(observation, self.base_seed))


def critic_target(
    agent: BcqAgent,
    rewards: np.ndarray,
    next_states: np.ndarray,
    dones: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Bootstrapped regression targets from the target networks.

    Per next state: decode n candidates, perturb with the *target* nudge
    network, take min over both target critics, then max over candidates.
    Terminal transitions bootstrap nothing.
    """
    r = np.asarray(rewards, dtype=float).ravel()
    d = np.asarray(dones, dtype=float).ravel()
    s2 = _rows(next_states, agent.state_dim, "next states")
    if not (len(r) == len(d) == s2.shape[0]):
        raise ValueError("rewards, dones and next states must align")
    n = agent.config.n_action_samples
    rep = np.repeat(s2, n, axis=0)
    clip = agent.config.latent_clip
    z = np.clip(rng.standard_normal((rep.shape[0], agent.z_dim)), -clip, clip)
    cands = decode(agent, rep, z)
    x = np.concatenate([rep, cands], axis=1)
    psi = nets.forward(agent.target_perturb, agent.perturb.spec, x)
    acts = np.clip(cands + agent.config.rho * psi, -1.0, 1.0)
    xa = np.concatenate([rep, acts], axis=1)
    q1 = nets.forward(agent.target_critic_1, agent.critic_1.spec, xa).ravel()
    q2 = nets.forward(agent.target_critic_2, agent.critic_2.spec, xa).ravel()
    v = np.minimum(q1, q2).reshape(len(r), n).max(axis=1)
    return r + agent.config.gamma * (1.0 - d) * v


def critic_loss_and_grads(
    critic: Net, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> tuple[float, nets.Gradients, np.ndarray]:
    """Mean squared TD error of one critic against fixed targets."""
    x = np.concatenate([states, actions], axis=1)
    out, cache = critic.cached(x)
    q = out.ravel()
    resid = q - targets
    loss = float(np.mean(resid**2))
    grads, _ = critic.backward(cache, (2.0 / len(q)) * resid[:, None])
    return loss, grads, q


def critic_update(
    agent: BcqAgent, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> dict:
    """Adam step on both critics; reports pre-update Q statistics."""
    loss1, g1, q1 = critic_loss_and_grads(agent.critic_1, states, actions, targets)
    loss2, g2, _ = critic_loss_and_grads(agent.critic_2, states, actions, targets)
    agent.critic_1.step(g1)
    agent.critic_2.step(g2)
    return {"critic_loss": 0.5 * (loss1 + loss2), "mean_q": float(np.mean(q1))}


def perturbation_objective_and_grads(
    perturb_net: Net,
    critic: Net,
    states: np.ndarray,
    sampled_actions: np.ndarray,
    rho: float,
) -> tuple[float, nets.Gradients]:
    """Mean critic value of nudged candidates, with gradients for the nudge net.

    The training objective is unclamped (the clamp only guards the serving
    path), which keeps it differentiable everywhere.
    """
    x = np.concatenate([states, sampled_actions], axis=1)
    psi, p_cache = perturb_net.cached(x)
    pert_actions = sampled_actions + rho * psi
    q, q_cache = critic.cached(np.concatenate([states, pert_actions], axis=1))
    objective = float(np.mean(q))
    _, q_in_grad = critic.backward(q_cache, np.full_like(q, 1.0 / q.shape[0]))
    g_action = q_in_grad[:, states.shape[1] :]
    p_grads, _ = perturb_net.backward(p_cache, rho * g_action)
    return objective, p_grads


def perturbation_update(agent: BcqAgent, states: np.ndarray, rng: np.random.Generator) -> float:
    """Ascent step: nudge decoder samples toward higher critic-1 value."""
    clip = agent.config.latent_clip
    z = np.clip(rng.standard_normal((states.shape[0], agent.z_dim)), -clip, clip)
    cands = decode(agent, states, z)
    objective, grads = perturbation_objective_and_grads(
        agent.perturb, agent.critic_1, states, cands, agent.config.rho
    )
    agent.perturb.step(grads.scaled(-1.0))
    return objective


def train(
    dataset: TransitionDataset,
    config: BcqConfig,
    seed: int,
    agent: BcqAgent | None = None,
) -> tuple[BcqAgent, TrainingLog]:
    """Offline training loop over a fixed batch.

    Per epoch: minibatch draw, VAE update, bootstrapped targets, nudge-net
    ascent, clipped double-Q regression; every ``target_interval`` epochs the
    three target networks move by ``target_rate`` toward their sources. The
    rng stream order per epoch is: batch indices, VAE noise, target latents,
    nudge latents. Passing ``agent`` continues training it in place.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    state_dim, action_dim = dataset.meta.state_dim, dataset.meta.action_dim
    rng = np.random.default_rng([seed, 0xBC])
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
    # Candidate draws for the logged policy value come from a side stream so
    # that changing log_every cannot alter the trained parameters.
    qrng = np.random.default_rng([seed, 0xBC, 1])
    log = TrainingLog(["epoch", "mean_q", "data_q", "critic_loss", "vae_loss", "perturb_obj"])
    for epoch in range(1, config.epochs + 1):
        idx = rng.integers(0, n, size=config.minibatch)
        s, a, r, s2, d = arrays.take(idx)
        eps = rng.standard_normal((config.minibatch, agent.z_dim))
        vae_loss, enc_g, dec_g, _ = vae_loss_and_grads(agent.encoder, agent.decoder, s, a, eps)
        agent.encoder.step(enc_g)
        agent.decoder.step(dec_g)
        y = critic_target(agent, r, s2, d, rng)
        perturb_obj = perturbation_update(agent, s, rng)
        stats = critic_update(agent, s, a, y)
        if epoch % config.target_interval == 0:
            rate = config.target_rate
            agent.target_perturb = nets.soft_update(agent.target_perturb, agent.perturb.params, rate)
            agent.target_critic_1 = nets.soft_update(
                agent.target_critic_1, agent.critic_1.params, rate
            )
            agent.target_critic_2 = nets.soft_update(
                agent.target_critic_2, agent.critic_2.params, rate
            )
        if epoch % config.log_every == 0 or epoch == 1 or epoch == config.epochs:
            log.append(
                epoch=epoch,
                mean_q=policy_value_estimate(agent, s, qrng),
                data_q=stats["mean_q"],
                critic_loss=stats["critic_loss"],
                vae_loss=vae_loss,
                perturb_obj=perturb_obj,
            )
    return agent, log


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_NETWORKS = (
    "encoder",
    "decoder",
    "perturb",
    "critic_1",
    "critic_2",
    "target_perturb",
    "target_critic_1",
    "target_critic_2",
)


def save_agent(agent: BcqAgent, path: str) -> None:
    cfg = agent.config
    hyper: dict[str, object] = {
        "algo": "bcq",
        "state_dim": agent.state_dim,
        "action_dim": agent.action_dim,
        "z_dim": agent.z_dim,
        "gamma": cfg.gamma,
        "rho": cfg.rho,
        "n_action_samples": cfg.n_action_samples,
        "latent_clip": cfg.latent_clip,
        "minibatch": cfg.minibatch,
        "epochs": cfg.epochs,
        "buffer_capacity": cfg.buffer_capacity,
        "target_interval": cfg.target_interval,
        "target_rate": cfg.target_rate,
        "lr_vae": cfg.lr_vae,
        "lr_perturb": cfg.lr_perturb,
        "lr_critic": cfg.lr_critic,
        "hidden": cfg.hidden,
        "log_every": cfg.log_every,
    }
    networks = {
        "encoder": (agent.encoder.spec, agent.encoder.params),
        "decoder": (agent.decoder.spec, agent.decoder.params),
        "perturb": (agent.perturb.spec, agent.perturb.params),
        "critic_1": (agent.critic_1.spec, agent.critic_1.params),
        "critic_2": (agent.critic_2.spec, agent.critic_2.params),
        "target_perturb": (agent.perturb.spec, agent.target_perturb),
        "target_critic_1": (agent.critic_1.spec, agent.target_critic_1),
        "target_critic_2": (agent.critic_2.spec, agent.target_critic_2),
    }
    nets.save_sections(path, hyper, networks)


def load_agent(path: str) -> BcqAgent:
    """Rebuild a serving agent from a checkpoint (fresh optimizer state)."""
    hyper, networks = nets.load_sections(path)
    if hyper.get("algo") != "bcq":
        raise ValueError(f"{path}: not a bcq checkpoint (algo={hyper.get('algo')!r})")
    missing = [n for n in _NETWORKS if n not in networks]
    if missing:
        raise ValueError(f"{path}: checkpoint missing networks {missing}")
    config = BcqConfig(
        gamma=float(hyper["gamma"]),
        rho=float(hyper["rho"]),
        n_action_samples=int(hyper["n_action_samples"]),
        latent_clip=float(hyper["latent_clip"]),
        minibatch=int(hyper["minibatch"]),
        epochs=int(hyper["epochs"]),
        buffer_capacity=int(hyper["buffer_capacity"]),
        target_interval=int(hyper["target_interval"]),
        target_rate=float(hyper["target_rate"]),
        lr_vae=float(hyper["lr_vae"]),
        lr_perturb=float(hyper["lr_perturb"]),
        lr_critic=float(hyper["lr_critic"]),
        hidden=tuple(int(t) for t in hyper["hidden"].split(",")),
        log_every=int(hyper.get("log_every", 100)),
    )

    def net_of(name: str, lr: float) -> Net:
        spec, params = networks[name]
        return Net(spec, params, nets.init_adam(params, lr))

    agent = BcqAgent(
        state_dim=int(hyper["state_dim"]),
        action_dim=int(hyper["action_dim"]),
        z_dim=int(hyper["z_dim"]),
        config=config,
        encoder=net_of("encoder", config.lr_vae),
        decoder=net_of("decoder", config.lr_vae),
        perturb=net_of("perturb", config.lr_perturb),
        critic_1=net_of("critic_1", config.lr_critic),
        critic_2=net_of("critic_2", config.lr_critic),
        target_perturb=networks["target_perturb"][1],
        target_critic_1=networks["target_critic_1"][1],
        target_critic_2=networks["target_critic_2"][1],
    )
    return agent
