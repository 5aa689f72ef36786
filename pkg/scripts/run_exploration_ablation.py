#!/usr/bin/env python3
"""Mixed vs random-only exploration, measured by Monte-Carlo policy value.

Bootstraps a seed agent from random sessions, collects a mixed dataset
around it (half random, half action-noise), plus an equal-size random-only
control, trains one learner on each, and rolls both trained policies in the
simulator. The summary table also reports the mixed behavior value (mean
discounted return of the training data itself) as the improvement baseline.
"""

import argparse
import os
import sys

from fusionrl import bcq, data, explore
from fusionrl.cli import main as cli
from fusionrl.sim import SessionSim, SimConfig, mc_value

GAMMA = 0.95


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="study_exploration")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sessions", type=int, default=150,
                    help="scarce by design; plentiful data drowns the contrast")
    ap.add_argument("--boot-sessions", type=int, default=100)
    ap.add_argument("--boot-epochs", type=int, default=4000)
    ap.add_argument("--epochs", type=int, default=8000)
    ap.add_argument("--sigma", type=float, default=0.2)
    ap.add_argument("--mc-sessions", type=int, default=2000)
    ap.add_argument("--quick", action="store_true", help="toy sizes for a smoke run")
    args = ap.parse_args(argv)

    if args.quick:
        args.sessions, args.boot_sessions = 30, 20
        args.boot_epochs, args.epochs, args.mc_sessions = 200, 200, 40
    os.makedirs(args.out_dir, exist_ok=True)
    j = lambda name: os.path.join(args.out_dir, name)
    desk = ["--set", "hidden=48,48", "--set", "log_every=500"]

    steps = [
        ["collect", "--mode", "random", "--sessions", str(args.boot_sessions),
         "--seed", str(1000 + args.seed), "--out", j("boot.tsv")],
        ["train", "--algo", "bcq", "--dataset", j("boot.tsv"), "--seed", str(args.seed),
         *desk, "--set", f"epochs={args.boot_epochs}", "--out", j("boot.ckpt")],
        ["collect", "--mode", "mixed", "--sessions", str(args.sessions),
         "--seed", str(2000 + args.seed), "--sigma", str(args.sigma),
         "--agent", j("boot.ckpt"), "--out", j("mixed.tsv")],
        ["collect", "--mode", "random", "--sessions", str(args.sessions),
         "--seed", str(3000 + args.seed), "--out", j("random.tsv")],
        ["train", "--algo", "bcq", "--dataset", j("mixed.tsv"), "--seed", str(args.seed),
         *desk, "--set", f"epochs={args.epochs}", "--out", j("bcq_mixed.ckpt")],
        ["train", "--algo", "bcq", "--dataset", j("random.tsv"), "--seed", str(args.seed),
         *desk, "--set", f"epochs={args.epochs}", "--out", j("bcq_random.ckpt")],
    ]
    for step in steps:
        code = cli(step)
        if code != 0:
            return code

    sim = SessionSim(SimConfig())
    ds_mixed = data.load_dataset(j("mixed.tsv"))
    rows = {
        "behavior_mixed": float(explore.dataset_returns(ds_mixed, GAMMA).mean()),
        "bcq_mixed": mc_value(
            sim, bcq.AgentPolicy(bcq.load_agent(j("bcq_mixed.ckpt")), 9),
            args.mc_sessions, 4000 + args.seed, GAMMA,
        ),
        "bcq_random_only": mc_value(
            sim, bcq.AgentPolicy(bcq.load_agent(j("bcq_random.ckpt")), 9),
            args.mc_sessions, 4000 + args.seed, GAMMA,
        ),
    }
    table = j("values.tsv")
    with open(table, "w") as fh:
        fh.write("policy\tvalue\n")
        for name, value in rows.items():
            fh.write(f"{name}\t{data.format_float(value)}\n")
            print(f"{name:18s} {value:8.3f}")
    print(f"table written to {table}")
    return 0


if __name__ == "__main__":
    sys.exit(run())
