#!/usr/bin/env python3
"""Perturbation-bound and critic-learning-rate sweeps on a shared batch."""

import argparse
import os
import sys

from fusionrl.cli import main as cli


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="study_sensitivity")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sessions", type=int, default=460)
    ap.add_argument("--epochs", type=int, default=8000)
    ap.add_argument("--rho-values", default="0.05,0.1,0.15,0.2,0.3")
    ap.add_argument("--lr-values", default="0.0001,0.0002,0.0005")
    ap.add_argument("--mc-sessions", type=int, default=0, help="0 keeps the table OPE-only")
    ap.add_argument("--quick", action="store_true", help="toy sizes for a smoke run")
    args = ap.parse_args(argv)

    if args.quick:
        args.sessions, args.epochs = 40, 300
    os.makedirs(args.out_dir, exist_ok=True)
    j = lambda name: os.path.join(args.out_dir, name)
    desk = ["--set", "hidden=48,48", "--set", f"epochs={args.epochs}", "--set", "log_every=500"]

    code = cli(["collect", "--mode", "random", "--sessions", str(args.sessions),
                "--seed", str(args.seed), "--out", j("batch.tsv")])
    if code != 0:
        return code
    for param, values, table in (
        ("rho", args.rho_values, "sweep_rho.tsv"),
        ("critic_lr", args.lr_values, "sweep_critic_lr.tsv"),
    ):
        code = cli(["sweep", "--param", param, "--values", values,
                    "--dataset", j("batch.tsv"), "--seed", str(args.seed), *desk,
                    "--mc-sessions", str(args.mc_sessions), "--out", j(table)])
        if code != 0:
            return code
    print(f"sweep tables in {args.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(run())
