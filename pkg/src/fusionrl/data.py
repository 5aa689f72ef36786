"""Transition datasets, tab-separated persistence, replay buffer, flat configs.

File format (one transition per line, vectors comma-joined, 17 significant
digits so doubles round-trip exactly):

    #fields session_id step state action reward next_state done
    #meta state_dim 32
    #meta policy random
    random-000000<TAB>0<TAB>0.1,...<TAB>0.2,...<TAB>1.5<TAB>0.3,...<TAB>0

The ``#meta`` lines are optional on load; dimensions are inferred from the
first record when absent.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from collections import deque
from dataclasses import dataclass

import numpy as np

from .nets import format_float

FIELDS = ("session_id", "step", "state", "action", "reward", "next_state", "done")
HEADER = "#fields " + " ".join(FIELDS)


@dataclass
class Transition:
    """One logged interaction step."""

    session_id: str
    step: int
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class DatasetMeta:
    state_dim: int
    action_dim: int
    feedback_dim: int = 0
    seed: int | None = None
    policy: str = "unknown"


class DatasetError(ValueError):
    """Malformed dataset content (bad line, field, or ordering)."""


@dataclass
class TransitionArrays:
    """Column-stacked view of a dataset for minibatch training."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    first_step: np.ndarray  # boolean mask of session-initial transitions

    def __len__(self) -> int:
        return self.states.shape[0]

    def take(self, idx: np.ndarray) -> tuple[np.ndarray, ...]:
        return (
            self.states[idx],
            self.actions[idx],
            self.rewards[idx],
            self.next_states[idx],
            self.dones[idx],
        )


class TransitionDataset:
    """Ordered collection of whole sessions, validated on construction.

    Invariants: constant state/action dims; each session's rows are contiguous
    with steps 0..L-1; ``done`` marks exactly the last row of each session.
    """

    def __init__(self, transitions: list[Transition], meta: DatasetMeta):
        self.transitions = transitions
        self.meta = meta
        self._arrays: TransitionArrays | None = None
        self._validate()

    def _validate(self) -> None:
        seen_sessions: set[str] = set()
        current: str | None = None
        prev_step = -1
        for i, t in enumerate(self.transitions):
            if t.state.shape != (self.meta.state_dim,):
                raise DatasetError(
                    f"transition {i}: state dim {t.state.shape[0]} != {self.meta.state_dim}"
                )
            if t.next_state.shape != (self.meta.state_dim,):
                raise DatasetError(
                    f"transition {i}: next_state dim {t.next_state.shape[0]} "
                    f"!= {self.meta.state_dim}"
                )
            if t.action.shape != (self.meta.action_dim,):
                raise DatasetError(
                    f"transition {i}: action dim {t.action.shape[0]} != {self.meta.action_dim}"
                )
            if t.session_id != current:
                if current is not None and not self.transitions[i - 1].done:
                    raise DatasetError(f"session {current!r} ends without done=true")
                if t.session_id in seen_sessions:
                    raise DatasetError(f"session {t.session_id!r} is not contiguous")
                seen_sessions.add(t.session_id)
                current = t.session_id
                prev_step = -1
            if t.step != prev_step + 1:
                raise DatasetError(
                    f"session {t.session_id!r}: step {t.step} after {prev_step}, expected "
                    f"{prev_step + 1}"
                )
            prev_step = t.step
            if t.done and i + 1 < len(self.transitions):
                nxt = self.transitions[i + 1]
                if nxt.session_id == t.session_id:
                    raise DatasetError(f"session {t.session_id!r} continues past done=true")
        if self.transitions and not self.transitions[-1].done:
            raise DatasetError(f"session {current!r} ends without done=true")

    def __len__(self) -> int:
        return len(self.transitions)

    def session_ids(self) -> list[str]:
        out: list[str] = []
        for t in self.transitions:
            if not out or out[-1] != t.session_id:
                out.append(t.session_id)
        return out

    @property
    def n_sessions(self) -> int:
        return len(self.session_ids())

    def arrays(self) -> TransitionArrays:
        if self._arrays is None:
            n = len(self.transitions)
            states = np.zeros((n, self.meta.state_dim))
            actions = np.zeros((n, self.meta.action_dim))
            rewards = np.zeros(n)
            next_states = np.zeros((n, self.meta.state_dim))
            dones = np.zeros(n, dtype=bool)
            first = np.zeros(n, dtype=bool)
            for i, t in enumerate(self.transitions):
                states[i] = t.state
                actions[i] = t.action
                rewards[i] = t.reward
                next_states[i] = t.next_state
                dones[i] = t.done
                first[i] = t.step == 0
            self._arrays = TransitionArrays(states, actions, rewards, next_states, dones, first)
        return self._arrays


def _fmt_vec(v: np.ndarray) -> str:
    return ",".join(format_float(x) for x in v)


def save_dataset(dataset: TransitionDataset, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        m = dataset.meta
        fh.write(f"#meta state_dim {m.state_dim}\n")
        fh.write(f"#meta action_dim {m.action_dim}\n")
        fh.write(f"#meta feedback_dim {m.feedback_dim}\n")
        if m.seed is not None:
            fh.write(f"#meta seed {m.seed}\n")
        fh.write(f"#meta policy {m.policy}\n")
        for t in dataset.transitions:
            fh.write(
                "\t".join(
                    (
                        t.session_id,
                        str(t.step),
                        _fmt_vec(t.state),
                        _fmt_vec(t.action),
                        format_float(t.reward),
                        _fmt_vec(t.next_state),
                        "1" if t.done else "0",
                    )
                )
                + "\n"
            )


def _parse_vec(text: str, lineno: int, fieldname: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split(",")])
    except ValueError as exc:
        raise DatasetError(f"line {lineno}: bad float in field {fieldname!r}: {exc}") from None


def load_dataset(path: str) -> TransitionDataset:
    transitions: list[Transition] = []
    meta_kv: dict[str, str] = {}
    saw_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#fields"):
                if line != HEADER:
                    raise DatasetError(f"line {lineno}: unexpected field list {line!r}")
                saw_header = True
                continue
            if line.startswith("#meta"):
                parts = line.split(None, 2)
                if len(parts) != 3:
                    raise DatasetError(f"line {lineno}: malformed #meta line")
                meta_kv[parts[1]] = parts[2]
                continue
            if line.startswith("#"):
                continue
            if not saw_header:
                raise DatasetError(f"line {lineno}: data before #fields header")
            cols = line.split("\t")
            if len(cols) != len(FIELDS):
                raise DatasetError(
                    f"line {lineno}: expected {len(FIELDS)} tab-separated fields, got {len(cols)}"
                )
            try:
                step = int(cols[1])
            except ValueError:
                raise DatasetError(f"line {lineno}: bad int in field 'step': {cols[1]!r}") from None
            try:
                rew = float(cols[4])
            except ValueError:
                raise DatasetError(
                    f"line {lineno}: bad float in field 'reward': {cols[4]!r}"
                ) from None
            if cols[6] not in ("0", "1"):
                raise DatasetError(f"line {lineno}: field 'done' must be 0 or 1, got {cols[6]!r}")
            transitions.append(
                Transition(
                    session_id=cols[0],
                    step=step,
                    state=_parse_vec(cols[2], lineno, "state"),
                    action=_parse_vec(cols[3], lineno, "action"),
                    reward=rew,
                    next_state=_parse_vec(cols[5], lineno, "next_state"),
                    done=cols[6] == "1",
                )
            )
    if not saw_header:
        raise DatasetError("missing #fields header")
    if transitions:
        state_dim = int(meta_kv.get("state_dim", transitions[0].state.size))
        action_dim = int(meta_kv.get("action_dim", transitions[0].action.size))
    else:
        state_dim = int(meta_kv.get("state_dim", 0))
        action_dim = int(meta_kv.get("action_dim", 0))
    meta = DatasetMeta(
        state_dim=state_dim,
        action_dim=action_dim,
        feedback_dim=int(meta_kv.get("feedback_dim", 0)),
        seed=int(meta_kv["seed"]) if "seed" in meta_kv else None,
        policy=meta_kv.get("policy", "unknown"),
    )
    return TransitionDataset(transitions, meta)


def time_split(
    dataset: TransitionDataset, train_fraction: float = 0.9
) -> tuple[TransitionDataset, TransitionDataset]:
    """Split whole sessions in arrival order; earlier sessions train, later test.

    n_train = ceil(fraction * n_sessions), clamped so the test side keeps at
    least one session. Needs two or more sessions.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    ids = dataset.session_ids()
    if len(ids) < 2:
        raise ValueError(f"need at least 2 sessions to split, have {len(ids)}")
    n_train = min(math.ceil(train_fraction * len(ids)), len(ids) - 1)
    train_ids = set(ids[:n_train])
    train_rows = [t for t in dataset.transitions if t.session_id in train_ids]
    test_rows = [t for t in dataset.transitions if t.session_id not in train_ids]
    return (
        TransitionDataset(train_rows, dataclasses.replace(dataset.meta)),
        TransitionDataset(test_rows, dataclasses.replace(dataset.meta)),
    )


def sample_minibatch(source, size: int, rng: np.random.Generator) -> list[Transition]:
    """Uniform sample with replacement from a dataset or replay buffer."""
    if size <= 0:
        raise ValueError(f"minibatch size must be positive, got {size}")
    if isinstance(source, TransitionDataset):
        pool = source.transitions
    elif isinstance(source, ReplayBuffer):
        pool = source.entries
    else:
        pool = source
    n = len(pool)
    if n == 0:
        raise ValueError("cannot sample from an empty source")
    idx = rng.integers(0, n, size=size)
    return [pool[i] for i in idx]


class ReplayBuffer:
    """FIFO transition store with a hard capacity and fixed dimensions."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity <= 0:
            raise ValueError(f"capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.entries: deque[Transition] = deque(maxlen=capacity)

    def push(self, t: Transition) -> None:
        if t.state.shape != (self.state_dim,) or t.next_state.shape != (self.state_dim,):
            raise ValueError(
                f"state dim {t.state.shape} does not match buffer ({self.state_dim},)"
            )
        if t.action.shape != (self.action_dim,):
            raise ValueError(
                f"action dim {t.action.shape} does not match buffer ({self.action_dim},)"
            )
        self.entries.append(t)

    def extend(self, transitions: list[Transition]) -> None:
        for t in transitions:
            self.push(t)

    def __len__(self) -> int:
        return len(self.entries)

    def to_arrays(self) -> TransitionArrays:
        n = len(self.entries)
        states = np.zeros((n, self.state_dim))
        actions = np.zeros((n, self.action_dim))
        rewards = np.zeros(n)
        next_states = np.zeros((n, self.state_dim))
        dones = np.zeros(n, dtype=bool)
        first = np.zeros(n, dtype=bool)
        for i, t in enumerate(self.entries):
            states[i] = t.state
            actions[i] = t.action
            rewards[i] = t.reward
            next_states[i] = t.next_state
            dones[i] = t.done
            first[i] = t.step == 0
        return TransitionArrays(states, actions, rewards, next_states, dones, first)


class TrainingLog:
    """Column-oriented training telemetry with TSV persistence."""

    def __init__(self, columns: list[str]):
        if not columns:
            raise ValueError("need at least one column")
        self._cols: dict[str, list[float]] = {c: [] for c in columns}

    def append(self, **values: float) -> None:
        if set(values) != set(self._cols):
            raise ValueError(f"row keys {sorted(values)} != columns {sorted(self._cols)}")
        for k, v in values.items():
            self._cols[k].append(float(v))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self._cols[name])

    @property
    def columns(self) -> list[str]:
        return list(self._cols)

    def __len__(self) -> int:
        return len(next(iter(self._cols.values())))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write("\t".join(self._cols) + "\n")
            for i in range(len(self)):
                fh.write("\t".join(format_float(self._cols[c][i]) for c in self._cols) + "\n")

    @classmethod
    def load(cls, path: str) -> "TrainingLog":
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        if not lines:
            raise ValueError(f"{path}: empty log file")
        log = cls(lines[0].split("\t"))
        for line in lines[1:]:
            vals = line.split("\t")
            log.append(**{c: float(v) for c, v in zip(log.columns, vals)})
        return log


# ---------------------------------------------------------------------------
# Flat "key = value" config files
# ---------------------------------------------------------------------------


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def format_kv(pairs: dict[str, object]) -> str:
    lines = []
    for k, v in pairs.items():
        lines.append(f"{k} = {_format_value(v)}")
    return "\n".join(lines) + "\n"


def _format_value(v: object) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format_float(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_format_value(x) for x in v)
    return str(v)


def _coerce(value: str, hint) -> object:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if value.lower() in ("none", ""):
            return None
        return _coerce(value, args[0])
    if origin is tuple:
        inner = typing.get_args(hint)[0]
        if not value:
            return ()
        return tuple(_coerce(tok.strip(), inner) for tok in value.split(","))
    if hint is bool:
        low = value.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"bad bool {value!r}")
    if hint is int:
        return int(value)
    if hint is float:
        return float(value)
    return value


def dataclass_from_kv(cls, raw: dict[str, str]):
    """Build a dataclass from string key/values, coercing by field type."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        try:
            kwargs[key] = _coerce(value, hints[key])
        except ValueError as exc:
            raise ValueError(f"config key {key!r}: {exc}") from None
    return cls(**kwargs)


def dataclass_to_kv(obj) -> dict[str, object]:
    return {f.name: getattr(obj, f.name) for f in dataclasses.fields(obj)}


def load_config(cls, path: str):
    with open(path) as fh:
        return dataclass_from_kv(cls, parse_kv_text(fh.read()))


def save_config(obj, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(format_kv(dataclass_to_kv(obj)))
