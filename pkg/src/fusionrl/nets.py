"""Minimal dense-network engine used by every learner in this package.

Plain-NumPy multilayer perceptrons with hand-derived exact gradients, Adam,
Polyak-style soft target updates, and a flat text checkpoint format. All math
runs in float64 and there is no autodiff framework underneath, so every
gradient path can be validated against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("linear", "tanh")

FLOAT_FMT = ".17g"  # round-trips IEEE doubles exactly


class ShapeError(ValueError):
    """Raised when inputs do not match a network's layer layout."""


@dataclass(frozen=True)
class NetworkSpec:
    """Layer layout of a fully connected network.

    ``layer_sizes`` runs input -> hidden... -> output. Hidden layers use ReLU;
    the output layer is linear or tanh.
    """

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ValueError(f"need at least input and output sizes, got {sizes!r}")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes!r}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unsupported output activation {self.output_activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1


@dataclass
class NetworkParams:
    """Weights (fan_in, fan_out) and biases (fan_out,) per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class Gradients:
    """Same shapes as :class:`NetworkParams`; one array per parameter tensor."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )

    def scaled(self, factor: float) -> "Gradients":
        return Gradients([factor * w for w in self.weights], [factor * b for b in self.biases])

    @staticmethod
    def zeros_like(params: NetworkParams) -> "Gradients":
        return Gradients(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )

    @staticmethod
    def add(a: "Gradients", b: "Gradients") -> "Gradients":
        return Gradients(
            [x + y for x, y in zip(a.weights, b.weights)],
            [x + y for x, y in zip(a.biases, b.biases)],
        )


def init_params(
    spec: NetworkSpec, rng: np.random.Generator, zero_output_layer: bool = False
) -> NetworkParams:
    """Glorot-uniform weights, zero biases.

    ``zero_output_layer`` zeroes the final weight matrix after drawing it
    (value heads start at exactly 0 without changing the RNG stream length).
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if zero_output_layer:
        weights[-1][:] = 0.0
    return NetworkParams(weights, biases)


def _check_params(params: NetworkParams, spec: NetworkSpec) -> None:
    if len(params.weights) != spec.n_layers or len(params.biases) != spec.n_layers:
        raise ShapeError(
            f"parameter count mismatch: spec has {spec.n_layers} layers, "
            f"params have {len(params.weights)} weight / {len(params.biases)} bias tensors"
        )
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        expect = (spec.layer_sizes[i], spec.layer_sizes[i + 1])
        if w.shape != expect:
            raise ShapeError(f"layer {i} weight shape {w.shape}, expected {expect}")
        if b.shape != (expect[1],):
            raise ShapeError(f"layer {i} bias shape {b.shape}, expected {(expect[1],)}")


def _as_batch(x: np.ndarray, spec: NetworkSpec) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.ndim != 2 or h.shape[-1] != spec.in_dim:
        raise ShapeError(f"input shape {x.shape} incompatible with input size {spec.in_dim}")
    return h, single


def forward(params: NetworkParams, spec: NetworkSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a single vector or a batch of rows."""
    _check_params(params, spec)
    h, single = _as_batch(x, spec)
    last = spec.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < last:
            h = np.maximum(z, 0.0)
        elif spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    return h[0] if single else h


def forward_cached(
    params: NetworkParams, spec: NetworkSpec, x: np.ndarray
) -> tuple[np.ndarray, dict]:
    """Forward pass that records layer inputs and pre-activations for backprop."""
    _check_params(params, spec)
    h, single = _as_batch(x, spec)
    acts = [h]
    preacts = []
    last = spec.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        preacts.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
        acts.append(h)
    cache = {"acts": acts, "preacts": preacts, "single": single}
    return (h[0], cache) if single else (h, cache)


def backward(
    params: NetworkParams, spec: NetworkSpec, cache: dict, adjoint: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Backpropagate ``adjoint`` (dLoss/dOutput) through a cached forward pass.

    Returns parameter gradients plus the gradient with respect to the network
    input, which lets callers chain networks (critic -> action -> actor).
    """
    acts, preacts, single = cache["acts"], cache["preacts"], cache["single"]
    delta = np.asarray(adjoint, dtype=float)
    if single and delta.ndim == 1:
        delta = delta[None, :]
    if delta.shape != acts[-1].shape:
        raise ShapeError(f"adjoint shape {delta.shape}, expected {acts[-1].shape}")
    if not np.all(np.isfinite(delta)):
        raise ValueError("non-finite adjoint")
    if spec.output_activation == "tanh":
        delta = delta * (1.0 - acts[-1] ** 2)
    g_w: list[np.ndarray] = [None] * spec.n_layers  # type: ignore[list-item]
    g_b: list[np.ndarray] = [None] * spec.n_layers  # type: ignore[list-item]
    for i in range(spec.n_layers - 1, -1, -1):
        g_w[i] = acts[i].T @ delta
        g_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T
        if i > 0:
            delta = delta * (preacts[i - 1] > 0.0)
    input_grad = delta[0] if single else delta
    return Gradients(g_w, g_b), input_grad


def gradients(
    params: NetworkParams, spec: NetworkSpec, x: np.ndarray, adjoint: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Exact parameter and input gradients for output adjoint at input ``x``."""
    _, cache = forward_cached(params, spec, x)
    return backward(params, spec, cache, adjoint)


@dataclass
class AdamState:
    """Adam moment estimates; one slot per parameter tensor of the network."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def init_adam(
    params: NetworkParams,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    if learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {learning_rate}")
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ValueError("betas must lie in [0, 1)")
    return AdamState(
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        m_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_weights=[np.zeros_like(w) for w in params.weights],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(
    state: AdamState, params: NetworkParams, grads: Gradients
) -> tuple[NetworkParams, AdamState]:
    """One Adam update with bias correction. Validates before mutating.

    Non-finite gradients are rejected with params and state untouched. Note
    the usual Adam caveat: a zero gradient leaves parameters unchanged only
    from a fresh state; once moments are nonzero they keep decaying.
    """
    if len(grads.weights) != len(params.weights) or len(grads.biases) != len(params.biases):
        raise ShapeError("gradient/parameter tensor count mismatch")
    for g, p in zip(grads.weights + grads.biases, params.weights + params.biases):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
    if not grads.finite():
        raise ValueError("non-finite gradient; parameters left untouched")
    t = state.step_count + 1
    b1, b2, eps, lr = state.beta1, state.beta2, state.epsilon, state.learning_rate
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for m, v, p, g in (
        list(zip(state.m_weights, state.v_weights, params.weights, grads.weights))
        + list(zip(state.m_biases, state.v_biases, params.biases, grads.biases))
    ):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    state.step_count = t
    return params, state


def soft_update(target: NetworkParams, source: NetworkParams, rate: float) -> NetworkParams:
    """Polyak average: new_target = (1 - rate) * target + rate * source."""
    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"update rate must lie in [0, 1], got {rate}")
    if len(target.weights) != len(source.weights):
        raise ShapeError("target/source layer count mismatch")
    new_w, new_b = [], []
    for tw, sw in zip(target.weights, source.weights):
        if tw.shape != sw.shape:
            raise ShapeError(f"target weight {tw.shape} vs source {sw.shape}")
        new_w.append((1.0 - rate) * tw + rate * sw)
    for tb, sb in zip(target.biases, source.biases):
        if tb.shape != sb.shape:
            raise ShapeError(f"target bias {tb.shape} vs source {sb.shape}")
        new_b.append((1.0 - rate) * tb + rate * sb)
    return NetworkParams(new_w, new_b)


@dataclass
class Net:
    """Convenience bundle of spec + params (+ optional Adam state)."""

    spec: NetworkSpec
    params: NetworkParams
    adam: AdamState | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, self.spec, x)

    def cached(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        return forward_cached(self.params, self.spec, x)

    def backward(self, cache: dict, adjoint: np.ndarray) -> tuple[Gradients, np.ndarray]:
        return backward(self.params, self.spec, cache, adjoint)

    def step(self, grads: Gradients) -> None:
        if self.adam is None:
            raise ValueError("network has no optimizer state")
        adam_step(self.adam, self.params, grads)

    def copy_params(self) -> NetworkParams:
        return self.params.copy()


def build_net(
    spec: NetworkSpec,
    rng: np.random.Generator,
    learning_rate: float | None = None,
    zero_output_layer: bool = False,
) -> Net:
    params = init_params(spec, rng, zero_output_layer=zero_output_layer)
    adam = init_adam(params, learning_rate) if learning_rate is not None else None
    return Net(spec, params, adam)


# ---------------------------------------------------------------------------
# Text checkpoints
#
# Layout per network:
#   <sizes comma-joined> <hidden_activation> <output_activation>
#   W0 v v v ...      (row-major, 17 significant digits)
#   b0 v v ...
#   ...
# Agent checkpoints stack sections:
#   #hyperparams
#   key = value
#   #network <name>
#   <network block>
# ---------------------------------------------------------------------------


def format_float(v: float) -> str:
    return format(float(v), FLOAT_FMT)


def format_network(spec: NetworkSpec, params: NetworkParams) -> list[str]:
    _check_params(params, spec)
    lines = [
        f"{','.join(str(s) for s in spec.layer_sizes)} "
        f"{spec.hidden_activation} {spec.output_activation}"
    ]
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        lines.append(f"W{i} " + " ".join(format_float(v) for v in w.ravel()))
        lines.append(f"b{i} " + " ".join(format_float(v) for v in b.ravel()))
    return lines


def parse_network(lines: list[str]) -> tuple[NetworkSpec, NetworkParams]:
    if not lines:
        raise ValueError("empty network block")
    head = lines[0].split()
    if len(head) != 3:
        raise ValueError(f"malformed network header: {lines[0]!r}")
    sizes = tuple(int(s) for s in head[0].split(","))
    spec = NetworkSpec(sizes, head[1], head[2])
    expect = []
    for i in range(spec.n_layers):
        expect.append((f"W{i}", (sizes[i], sizes[i + 1])))
        expect.append((f"b{i}", (sizes[i + 1],)))
    if len(lines) - 1 != len(expect):
        raise ValueError(f"expected {len(expect)} tensor lines, found {len(lines) - 1}")
    weights, biases = [], []
    for line, (label, shape) in zip(lines[1:], expect):
        parts = line.split()
        if parts[0] != label:
            raise ValueError(f"expected tensor {label}, found {parts[0]!r}")
        values = np.array([float(t) for t in parts[1:]])
        if values.size != int(np.prod(shape)):
            raise ValueError(f"tensor {label}: {values.size} values, expected {np.prod(shape)}")
        arr = values.reshape(shape)
        (weights if label.startswith("W") else biases).append(arr)
    return spec, NetworkParams(weights, biases)


def save_network(path: str, spec: NetworkSpec, params: NetworkParams) -> None:
    with open(path, "w") as fh:
        fh.write("\n".join(format_network(spec, params)) + "\n")


def load_network(path: str) -> tuple[NetworkSpec, NetworkParams]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    return parse_network(lines)


def format_kv_value(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (tuple, list)):
        return ",".join(format_kv_value(x) for x in v)
    return str(v)


def save_sections(
    path: str, hyperparams: dict[str, object], networks: dict[str, tuple[NetworkSpec, NetworkParams]]
) -> None:
    """Write an agent checkpoint: one #hyperparams block, one #network per net."""
    with open(path, "w") as fh:
        fh.write("#hyperparams\n")
        for k, v in hyperparams.items():
            fh.write(f"{k} = {format_kv_value(v)}\n")
        for name, (spec, params) in networks.items():
            fh.write(f"#network {name}\n")
            for line in format_network(spec, params):
                fh.write(line + "\n")


def load_sections(path: str) -> tuple[dict[str, str], dict[str, tuple[NetworkSpec, NetworkParams]]]:
    """Parse an agent checkpoint. Hyperparam values come back as strings."""
    hyper: dict[str, str] = {}
    networks: dict[str, tuple[NetworkSpec, NetworkParams]] = {}
    section = None
    block: list[str] = []
    name = None

    def flush() -> None:
        if name is not None:
            networks[name] = parse_network(block)

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#hyperparams"):
                flush()
                section, name = "hyper", None
                block = []
            elif line.startswith("#network"):
                flush()
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise ValueError(f"line {lineno}: #network needs a name")
                section, name = "net", parts[1].strip()
                block = []
            elif section == "hyper":
                if "=" not in line:
                    raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
                k, v = line.split("=", 1)
                hyper[k.strip()] = v.strip()
            elif section == "net":
                block.append(line)
            else:
                raise ValueError(f"line {lineno}: content before any section header")
    flush()
    return hyper, networks
