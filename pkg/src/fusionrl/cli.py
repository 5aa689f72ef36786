"""Command-line front end tying the pipeline stages together.

Subcommands:
    simulate      roll sessions under a policy and report return statistics
    collect       write an exploration dataset (random / action_noise / mixed)
    train         fit bcq or td3 offline on a dataset file
    evaluate      conservative off-policy value of a policy on a dataset
    sweep         one train+eval row per hyperparameter value
    export-plots  training curves and action histograms as tab-separated text

Every run that produces artifacts also writes a manifest next to them
(``<out>.manifest`` for file outputs, ``manifest.txt`` inside directory
outputs) recording the command, package and library versions, seeds and the
full resolved config. Manifests contain no timestamps, so identical inputs
give byte-identical artifacts.

Sweep runs must not share rng state across parameter values: each run's seed
is derived as the first 4 bytes (little endian, sign bit cleared) of
blake2b("<base_seed>|<param>|<value>") where <value> is the formatted float.
The derived seed appears in the output table so any single row can be
reproduced with a plain ``train`` invocation.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import platform
import sys

import numpy as np

from . import __version__, bcq, data, nets, ope, td3
from .explore import collect_action_noise, collect_mixed, collect_random
from .policies import FrozenPolicy, RandomPolicy
from .sim import SessionSim, SimConfig, mc_returns


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _write_manifest(path: str, command: str, entries: dict[str, object]) -> None:
    pairs: dict[str, object] = {
        "command": command,
        "package_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
    }
    pairs.update(entries)
    with open(path, "w") as fh:
        fh.write(data.format_kv(pairs))


def _prefixed(prefix: str, obj) -> dict[str, object]:
    return {f"{prefix}.{k}": v for k, v in data.dataclass_to_kv(obj).items()}


def _load_sim_config(path: str | None) -> SimConfig:
    if path is None:
        return SimConfig()
    return data.load_config(SimConfig, path)


def _merge_config(cls, config_path: str | None, sets: list[str]):
    """File values override defaults, --set pairs override the file."""
    raw: dict[str, str] = {}
    if config_path is not None:
        with open(config_path) as fh:
            raw.update(data.parse_kv_text(fh.read()))
    for item in sets:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        raw[key.strip()] = value.strip()
    return data.dataclass_from_kv(cls, raw)


def load_any_agent(path: str):
    """Open a checkpoint regardless of which trainer wrote it."""
    hyper, _ = nets.load_sections(path)
    algo = hyper.get("algo")
    if algo == "bcq":
        return bcq.load_agent(path)
    if algo == "td3":
        return td3.load_agent(path)
    raise ValueError(f"{path}: unknown checkpoint algo {algo!r}")


def _serving_policy(agent, key_seed: int):
    if isinstance(agent, bcq.BcqAgent):
        return bcq.AgentPolicy(agent, key_seed)
    return td3.ActorPolicy(agent)


def _resolve_policy(name: str, dataset, seed: int):
    """Map an --policy argument to a deterministic policy object.

    "random" freezes the clamped-Gaussian explorer with state-keyed draws,
    "behavior-clone" (or "clone") regresses the dataset actions, anything
    else is read as a checkpoint path.
    """
    action_dim = dataset.meta.action_dim
    if name == "random":
        return FrozenPolicy(RandomPolicy(action_dim), seed), "random"
    if name in ("behavior-clone", "clone"):
        clone, _ = ope.fit_behavior_clone(dataset, ope.CloneConfig(), seed)
        return clone, "behavior-clone"
    agent = load_any_agent(name)
    return _serving_policy(agent, seed), os.path.basename(name)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    sim_config = _load_sim_config(args.sim_config)
    sim = SessionSim(sim_config)
    if args.policy == "random":
        policy = RandomPolicy(sim_config.n_tasks)
        policy_name = "random"
    else:
        policy = _serving_policy(load_any_agent(args.policy), args.seed)
        policy_name = os.path.basename(args.policy)
    returns = mc_returns(sim, policy, args.sessions, args.seed, args.gamma)
    report = {
        "policy": policy_name,
        "sessions": args.sessions,
        "seed": args.seed,
        "gamma": args.gamma,
        "mean_return": float(returns.mean()),
        "std_return": float(returns.std()),
        "min_return": float(returns.min()),
        "max_return": float(returns.max()),
    }
    text = data.format_kv(report)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        entries: dict[str, object] = dict(report)
        entries["out"] = args.out
        entries.update(_prefixed("sim", sim_config))
        _write_manifest(args.out + ".manifest", "simulate", entries)
    return 0


def cmd_collect(args: argparse.Namespace) -> int:
    sim_config = _load_sim_config(args.sim_config)
    if args.mode == "random":
        if args.agent is not None:
            raise ValueError("--agent only applies to the noise modes")
        dataset = collect_random(sim_config, args.sessions, args.seed)
    else:
        if args.agent is None:
            raise ValueError(f"--mode {args.mode} needs --agent")
        if args.sigma <= 0:
            raise ValueError(f"noise std must be positive, got {args.sigma}")
        base = _serving_policy(load_any_agent(args.agent), args.seed)
        collect = collect_action_noise if args.mode == "action_noise" else collect_mixed
        dataset = collect(sim_config, base, args.sigma, args.sessions, args.seed)
    data.save_dataset(dataset, args.out)
    entries: dict[str, object] = {
        "mode": args.mode,
        "sessions": args.sessions,
        "seed": args.seed,
        "sigma": args.sigma if args.mode != "random" else "",
        "agent": args.agent or "",
        "out": args.out,
        "transitions": len(dataset),
    }
    entries.update(_prefixed("sim", sim_config))
    _write_manifest(args.out + ".manifest", "collect", entries)
    print(f"wrote {len(dataset)} transitions ({dataset.n_sessions} sessions) to {args.out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    dataset = data.load_dataset(args.dataset)
    if args.algo == "bcq":
        config = _merge_config(bcq.BcqConfig, args.config, args.set)
        agent, log = bcq.train(dataset, config, args.seed)
        bcq.save_agent(agent, args.out)
    else:
        config = _merge_config(td3.Td3Config, args.config, args.set)
        agent, log = td3.train_td3(dataset, config, args.seed)
        td3.save_agent(agent, args.out)
    if args.log:
        log.save(args.log)
    entries: dict[str, object] = {
        "algo": args.algo,
        "dataset": args.dataset,
        "seed": args.seed,
        "out": args.out,
        "log": args.log or "",
        "epochs_run": float(log.column("epoch")[-1]) if len(log) else 0.0,
    }
    entries.update(_prefixed(args.algo, config))
    _write_manifest(args.out + ".manifest", "train", entries)
    final_q = log.column("mean_q")[-1] if len(log) else float("nan")
    print(f"trained {args.algo} on {len(dataset)} transitions, final mean_q {final_q:.3f}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    dataset = data.load_dataset(args.dataset)
    config = _merge_config(ope.OpeConfig, args.config, args.set)
    policy, policy_name = _resolve_policy(args.policy, dataset, args.seed)
    sim = None
    sim_config = _load_sim_config(args.sim_config)
    if args.with_mc:
        sim = SessionSim(sim_config)
    report, _ = ope.evaluate_policy(
        dataset,
        policy,
        config,
        args.seed,
        policy_name=policy_name,
        sim=sim,
        mc_sessions=args.mc_sessions,
    )
    text = "\n".join(report.lines()) + "\n"
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        entries: dict[str, object] = {
            "dataset": args.dataset,
            "policy": args.policy,
            "seed": args.seed,
            "with_mc": args.with_mc,
            "mc_sessions": args.mc_sessions,
            "out": args.out,
        }
        entries.update(_prefixed("ope", config))
        if sim is not None:
            entries.update(_prefixed("sim", sim_config))
        _write_manifest(args.out + ".manifest", "evaluate", entries)
    return 0


_SWEEP_PARAMS = {"rho": "rho", "critic_lr": "lr_critic"}


def derive_sweep_seed(base_seed: int, param: str, value: float) -> int:
    # 31 bits so the seed stays exact when the table stores it as a float
    token = f"{base_seed}|{param}|{data.format_float(value)}".encode()
    raw = hashlib.blake2b(token, digest_size=4).digest()
    return int.from_bytes(raw, "little") & 0x7FFFFFFF


def cmd_sweep(args: argparse.Namespace) -> int:
    dataset = data.load_dataset(args.dataset)
    values = [float(tok) for tok in args.values.split(",") if tok.strip()]
    if not values:
        raise ValueError("--values needs at least one number")
    field = _SWEEP_PARAMS[args.param]
    ope_config = _merge_config(ope.OpeConfig, args.ope_config, [])
    sim_config = _load_sim_config(args.sim_config)
    rows = []
    for value in values:
        run_seed = derive_sweep_seed(args.seed, args.param, value)
        config = _merge_config(
            bcq.BcqConfig, args.config, args.set + [f"{field}={data.format_float(value)}"]
        )
        agent, log = bcq.train(dataset, config, run_seed)
        policy = bcq.AgentPolicy(agent, run_seed)
        report, _ = ope.evaluate_policy(
            dataset,
            policy,
            ope_config,
            run_seed,
            policy_name=f"{args.param}={data.format_float(value)}",
            sim=SessionSim(sim_config) if args.mc_sessions > 0 else None,
            mc_sessions=args.mc_sessions,
        )
        rows.append(
            {
                "value": value,
                "seed": float(run_seed),
                "ope_value": report.ope_value,
                "mc_value": report.mc_value,
                "final_mean_q": log.column("mean_q")[-1] if len(log) else float("nan"),
                "final_critic_loss": log.column("critic_loss")[-1] if len(log) else float("nan"),
            }
        )
        print(f"{args.param}={value:g}: ope {report.ope_value:.4f}, mc {report.mc_value:.4f}")
    columns = list(rows[0])
    with open(args.out, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(data.format_float(float(row[c])) for c in columns) + "\n")
    entries: dict[str, object] = {
        "param": args.param,
        "values": args.values,
        "dataset": args.dataset,
        "seed": args.seed,
        "mc_sessions": args.mc_sessions,
        "out": args.out,
        "seed_derivation": "blake2b('<seed>|<param>|<value>', digest_size=4) little endian, sign bit cleared",
    }
    entries.update(_prefixed("ope", ope_config))
    _write_manifest(args.out + ".manifest", "sweep", entries)
    return 0


def _minmax(column: np.ndarray) -> np.ndarray:
    lo, hi = float(column.min()), float(column.max())
    if hi - lo == 0.0:
        return np.zeros_like(column)
    return (column - lo) / (hi - lo)


def _write_tsv(path: str, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    length = len(next(iter(columns.values())))
    with open(path, "w") as fh:
        fh.write("\t".join(names) + "\n")
        for i in range(length):
            fh.write("\t".join(data.format_float(float(columns[c][i])) for c in names) + "\n")


def cmd_export_plots(args: argparse.Namespace) -> int:
    if args.log is None and args.dataset is None:
        raise ValueError("need --log and/or --dataset")
    os.makedirs(args.out_dir, exist_ok=True)
    written: list[str] = []

    def emit(name: str, columns: dict[str, np.ndarray]) -> None:
        path = os.path.join(args.out_dir, name)
        _write_tsv(path, columns)
        written.append(name)

    if args.log is not None:
        log = data.TrainingLog.load(args.log)
        epoch = log.column("epoch")
        q_cols = [c for c in log.columns if c in ("mean_q", "data_q")]
        loss_cols = [c for c in log.columns if c not in ("epoch", "mean_q", "data_q")]
        transform = _minmax if args.normalize else (lambda col: col)
        if q_cols:
            emit("q_curve.tsv", {"epoch": epoch} | {c: transform(log.column(c)) for c in q_cols})
        if loss_cols:
            emit("losses.tsv", {"epoch": epoch} | {c: transform(log.column(c)) for c in loss_cols})
    if args.dataset is not None:
        dataset = data.load_dataset(args.dataset)
        actions = dataset.arrays().actions
        edges = np.linspace(-1.0, 1.0, args.bins + 1)
        for dim in range(actions.shape[1]):
            counts, _ = np.histogram(actions[:, dim], bins=edges)
            emit(
                f"actions_dim{dim}.tsv",
                {
                    "bin_left": edges[:-1],
                    "bin_right": edges[1:],
                    "count": counts.astype(float),
                },
            )
    entries: dict[str, object] = {
        "log": args.log or "",
        "dataset": args.dataset or "",
        "normalize": args.normalize,
        "bins": args.bins,
        "out_dir": args.out_dir,
        "files": ",".join(written),
    }
    _write_manifest(os.path.join(args.out_dir, "manifest.txt"), "export-plots", entries)
    print(f"wrote {len(written)} files to {args.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusionrl",
        description="Offline RL pipeline for personalized multi-task score fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="roll sessions and report return statistics")
    p.add_argument("--sessions", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=0.95)
    p.add_argument("--policy", default="random", help="'random' or a checkpoint path")
    p.add_argument("--sim-config", default=None, help="key=value SimConfig file")
    p.add_argument("--out", default=None, help="also write the report here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("collect", help="write an exploration dataset")
    p.add_argument("--mode", required=True, choices=["random", "action_noise", "mixed"])
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.1, help="action noise std (noise modes)")
    p.add_argument("--agent", default=None, help="source checkpoint for the noise modes")
    p.add_argument("--sim-config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="fit an agent offline on a dataset file")
    p.add_argument("--algo", required=True, choices=["bcq", "td3"])
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--log", default=None, help="write the training log TSV here")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="conservative off-policy value of a policy")
    p.add_argument("--dataset", required=True)
    p.add_argument(
        "--policy", required=True,
        help="'random', 'behavior-clone', or a checkpoint path",
    )
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="key=value OpeConfig file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--with-mc", action="store_true", help="also roll Monte-Carlo sessions")
    p.add_argument("--mc-sessions", type=int, default=2000)
    p.add_argument("--sim-config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="train one agent per hyperparameter value")
    p.add_argument("--param", required=True, choices=sorted(_SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated numbers")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="base key=value BcqConfig file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--ope-config", default=None)
    p.add_argument("--mc-sessions", type=int, default=0, help="0 skips Monte-Carlo rolls")
    p.add_argument("--sim-config", default=None)
    p.add_argument("--out", required=True, help="table TSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export-plots", help="curves and histograms as TSV")
    p.add_argument("--log", default=None, help="training log TSV")
    p.add_argument("--dataset", default=None, help="dataset for action histograms")
    p.add_argument("--normalize", action="store_true", help="min-max scale curve columns")
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_plots)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
