"""Dataset persistence, session splitting, sampling, replay buffer, kv configs."""

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionrl import data


def make_session(sid: str, length: int, rng: np.random.Generator, ds=4, da=2):
    rows = []
    for step in range(length):
        rows.append(
            data.Transition(
                session_id=sid,
                step=step,
                state=rng.normal(size=ds),
                action=rng.uniform(-1, 1, size=da),
                reward=float(rng.normal()),
                next_state=rng.normal(size=ds),
                done=step == length - 1,
            )
        )
    return rows


def make_dataset(n_sessions: int, seed: int = 0, mean_len: int = 4, ds=4, da=2):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_sessions):
        length = int(rng.integers(1, 2 * mean_len))
        rows.extend(make_session(f"s{i:04d}", length, rng, ds=ds, da=da))
    meta = data.DatasetMeta(state_dim=ds, action_dim=da, feedback_dim=6, seed=seed, policy="test")
    return data.TransitionDataset(rows, meta)


class TestValidation:
    def test_noncontiguous_session_rejected(self):
        rng = np.random.default_rng(0)
        rows = make_session("a", 1, rng) + make_session("b", 1, rng) + make_session("a", 1, rng)
        with pytest.raises(data.DatasetError, match="contiguous"):
            data.TransitionDataset(rows, data.DatasetMeta(4, 2))

    def test_gap_in_steps_rejected(self):
        rng = np.random.default_rng(0)
        rows = make_session("a", 3, rng)
        rows[2].step = 5
        with pytest.raises(data.DatasetError, match="step"):
            data.TransitionDataset(rows, data.DatasetMeta(4, 2))

    def test_done_midway_rejected(self):
        rng = np.random.default_rng(0)
        rows = make_session("a", 3, rng)
        rows[1].done = True
        with pytest.raises(data.DatasetError, match="done"):
            data.TransitionDataset(rows, data.DatasetMeta(4, 2))

    def test_missing_final_done_rejected(self):
        rng = np.random.default_rng(0)
        rows = make_session("a", 3, rng)
        rows[2].done = False
        with pytest.raises(data.DatasetError, match="done"):
            data.TransitionDataset(rows, data.DatasetMeta(4, 2))

    def test_dim_mismatch_rejected(self):
        rng = np.random.default_rng(0)
        rows = make_session("a", 2, rng, ds=3)
        with pytest.raises(data.DatasetError, match="state dim"):
            data.TransitionDataset(rows, data.DatasetMeta(4, 2))


class TestRoundTrip:
    def test_empty_dataset(self, tmp_path):
        ds = data.TransitionDataset([], data.DatasetMeta(4, 2, 6, seed=1, policy="none"))
        path = str(tmp_path / "empty.tsv")
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert len(back) == 0
        assert back.meta.state_dim == 4
        assert back.meta.policy == "none"

    def test_single_transition(self, tmp_path):
        rng = np.random.default_rng(3)
        rows = make_session("solo", 1, rng)
        ds = data.TransitionDataset(rows, data.DatasetMeta(4, 2, 6, seed=3, policy="test"))
        path = str(tmp_path / "one.tsv")
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert len(back) == 1
        assert back.transitions[0].done is True

    def test_fields_roundtrip_exactly(self, tmp_path):
        ds = make_dataset(12, seed=7)
        path = str(tmp_path / "ds.tsv")
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert len(back) == len(ds)
        assert back.meta == ds.meta
        for a, b in zip(ds.transitions, back.transitions):
            assert a.session_id == b.session_id
            assert a.step == b.step
            assert a.done == b.done
            assert a.reward == b.reward  # bit-exact via 17 significant digits
            np.testing.assert_array_equal(a.state, b.state)
            np.testing.assert_array_equal(a.action, b.action)
            np.testing.assert_array_equal(a.next_state, b.next_state)

    def test_save_load_save_identical_bytes(self, tmp_path):
        ds = make_dataset(8, seed=11)
        p1, p2 = str(tmp_path / "a.tsv"), str(tmp_path / "b.tsv")
        data.save_dataset(ds, p1)
        data.save_dataset(data.load_dataset(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_larger_roundtrip(self, tmp_path):
        # ~10k transitions, exercise the throughput path
        ds = make_dataset(1500, seed=13, mean_len=4)
        assert len(ds) > 5000
        path = str(tmp_path / "big.tsv")
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert len(back) == len(ds)
        np.testing.assert_array_equal(back.arrays().states, ds.arrays().states)


class TestLoadErrors:
    def test_reports_line_and_field_for_bad_float(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(
            data.HEADER + "\n" + "a\t0\t1.0,2.0\tx,0.5\t1.0\t1.0,2.0\t1\n"
        )
        with pytest.raises(data.DatasetError, match="line 2.*'action'"):
            data.load_dataset(str(path))

    def test_reports_missing_column(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(data.HEADER + "\n" + "a\t0\t1.0\t0.5\t1.0\t1.0\n")
        with pytest.raises(data.DatasetError, match="line 2"):
            data.load_dataset(str(path))

    def test_rejects_bad_done_flag(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text(data.HEADER + "\n" + "a\t0\t1.0\t0.5\t1.0\t1.0\t2\n")
        with pytest.raises(data.DatasetError, match="done"):
            data.load_dataset(str(path))

    def test_rejects_missing_header(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("a\t0\t1.0\t0.5\t1.0\t1.0\t1\n")
        with pytest.raises(data.DatasetError, match="header"):
            data.load_dataset(str(path))


class TestTimeSplit:
    def test_ten_sessions_default_fraction(self):
        ds = make_dataset(10, seed=1)
        train, test = data.time_split(ds, 0.9)
        assert train.n_sessions == 9
        assert test.n_sessions == 1
        assert train.session_ids() == ds.session_ids()[:9]
        assert test.session_ids() == ds.session_ids()[9:]

    def test_two_sessions_half(self):
        ds = make_dataset(2, seed=2)
        train, test = data.time_split(ds, 0.5)
        assert train.n_sessions == 1
        assert test.n_sessions == 1

    def test_ceil_rule_keeps_test_nonempty(self):
        # ceil(0.9 * 7) = 7 would leave nothing; clamp keeps one test session
        ds = make_dataset(7, seed=3)
        train, test = data.time_split(ds, 0.9)
        assert train.n_sessions == 6
        assert test.n_sessions == 1

    def test_single_session_rejected(self):
        ds = make_dataset(1, seed=4)
        with pytest.raises(ValueError, match="2 sessions"):
            data.time_split(ds, 0.9)

    def test_bad_fraction_rejected(self):
        ds = make_dataset(3, seed=5)
        with pytest.raises(ValueError):
            data.time_split(ds, 1.0)

    @given(st.integers(2, 40), st.floats(0.05, 0.95))
    @settings(max_examples=40, deadline=None)
    def test_partition_is_exact(self, n_sessions, fraction):
        ds = make_dataset(n_sessions, seed=6)
        train, test = data.time_split(ds, fraction)
        assert train.n_sessions + test.n_sessions == ds.n_sessions
        assert len(train) + len(test) == len(ds)
        assert test.n_sessions >= 1
        # order preserved: concatenation reproduces the original id sequence
        assert train.session_ids() + test.session_ids() == ds.session_ids()


class TestSampling:
    def test_rejects_nonpositive_size(self):
        ds = make_dataset(2, seed=1)
        with pytest.raises(ValueError, match="positive"):
            data.sample_minibatch(ds, 0, np.random.default_rng(0))

    def test_rejects_empty_source(self):
        ds = data.TransitionDataset([], data.DatasetMeta(4, 2))
        with pytest.raises(ValueError, match="empty"):
            data.sample_minibatch(ds, 4, np.random.default_rng(0))

    def test_deterministic_given_seed(self):
        ds = make_dataset(5, seed=2)
        a = data.sample_minibatch(ds, 16, np.random.default_rng(42))
        b = data.sample_minibatch(ds, 16, np.random.default_rng(42))
        assert [id(x) for x in a] == [id(x) for x in b]

    def test_approximately_uniform(self):
        # frequency of each transition within 4 sigma of uniform expectation
        ds = make_dataset(4, seed=3, mean_len=3)
        n = len(ds)
        draws = 20000
        rng = np.random.default_rng(7)
        counts = np.zeros(n)
        index_of = {id(t): i for i, t in enumerate(ds.transitions)}
        for t in data.sample_minibatch(ds, draws, rng):
            counts[index_of[id(t)]] += 1
        expect = draws / n
        sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
        assert np.all(np.abs(counts - expect) < 4 * sigma + 1)


class TestReplayBuffer:
    def test_fifo_eviction_beyond_capacity(self):
        rng = np.random.default_rng(0)
        buf = data.ReplayBuffer(capacity=100000, state_dim=2, action_dim=1)
        for i in range(150000):
            buf.push(
                data.Transition(
                    session_id=f"s{i}",
                    step=0,
                    state=np.zeros(2),
                    action=np.zeros(1),
                    reward=float(i),
                    next_state=np.zeros(2),
                    done=True,
                )
            )
        assert len(buf) == 100000
        rewards = [t.reward for t in buf.entries]
        assert rewards[0] == 50000.0  # oldest 50k evicted
        assert rewards[-1] == 149999.0

    def test_rejects_wrong_dims(self):
        buf = data.ReplayBuffer(capacity=4, state_dim=2, action_dim=1)
        with pytest.raises(ValueError, match="action dim"):
            buf.push(
                data.Transition("a", 0, np.zeros(2), np.zeros(3), 0.0, np.zeros(2), True)
            )

    def test_rejects_nonpositive_capacity(self):
        with pytest.raises(ValueError):
            data.ReplayBuffer(capacity=0, state_dim=1, action_dim=1)

    def test_to_arrays_matches_entries(self):
        ds = make_dataset(3, seed=9)
        buf = data.ReplayBuffer(capacity=1000, state_dim=4, action_dim=2)
        buf.extend(ds.transitions)
        arr = buf.to_arrays()
        np.testing.assert_array_equal(arr.states, ds.arrays().states)
        np.testing.assert_array_equal(arr.dones, ds.arrays().dones)


@dataclass
class DemoConfig:
    alpha: float = 0.5
    steps: int = 10
    name: str = "demo"
    sizes: tuple[int, ...] = (4, 4)
    weights: tuple[float, ...] = (1.0, -0.5)
    flag: bool = False
    seed: int | None = None


class TestKvConfig:
    def test_roundtrip(self, tmp_path):
        cfg = DemoConfig(alpha=0.125, steps=3, name="x", sizes=(8, 2), flag=True, seed=7)
        path = str(tmp_path / "c.cfg")
        data.save_config(cfg, path)
        back = data.load_config(DemoConfig, path)
        assert back == cfg

    def test_parses_comments_and_blanks(self):
        kv = data.parse_kv_text("# top\nalpha = 0.5\n\nsteps = 3  # trailing\n")
        assert kv == {"alpha": "0.5", "steps": "3"}

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown"):
            data.dataclass_from_kv(DemoConfig, {"bogus": "1"})

    def test_bad_value_names_key(self):
        with pytest.raises(ValueError, match="'steps'"):
            data.dataclass_from_kv(DemoConfig, {"steps": "many"})

    def test_missing_keys_use_defaults(self):
        cfg = data.dataclass_from_kv(DemoConfig, {"alpha": "0.25"})
        assert cfg.alpha == 0.25
        assert cfg.steps == 10

    def test_malformed_line_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            data.parse_kv_text("just some words\n")
