#!/usr/bin/env python3
"""Offline-divergence study: TD3 vs BCQ on one random-exploration batch.

Collects a random dataset, trains both learners on it, and exports the
Q-value curves plus per-dimension action histograms as TSV. TD3 runs in a
deliberately divergence-prone configuration (wide critics, hot learning
rate, fast target blending) with an early exit once its policy-value
estimate passes the analytic session bound; BCQ runs at the desk defaults.
"""

import argparse
import os
import sys

from fusionrl.cli import main as cli

Q_BOUND = 170.0  # r_max / (1 - gamma) for the default simulator


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="study_extrapolation")
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sessions", type=int, default=460)
    ap.add_argument("--td3-epochs", type=int, default=50000)
    ap.add_argument("--bcq-epochs", type=int, default=20000)
    ap.add_argument("--quick", action="store_true", help="toy sizes for a smoke run")
    args = ap.parse_args(argv)

    if args.quick:
        args.sessions, args.td3_epochs, args.bcq_epochs = 40, 400, 400
    os.makedirs(args.out_dir, exist_ok=True)
    j = lambda name: os.path.join(args.out_dir, name)

    steps = [
        ["collect", "--mode", "random", "--sessions", str(args.sessions),
         "--seed", str(args.seed), "--out", j("batch.tsv")],
        ["train", "--algo", "td3", "--dataset", j("batch.tsv"), "--seed", str(args.seed),
         "--set", "hidden=128,128", "--set", "lr_critic=0.001", "--set", "lr_actor=0.001",
         "--set", "tau=0.05", "--set", f"epochs={args.td3_epochs}",
         "--set", f"q_stop={Q_BOUND}", "--set", "log_every=200",
         "--log", j("td3_log.tsv"), "--out", j("td3.ckpt")],
        ["train", "--algo", "bcq", "--dataset", j("batch.tsv"), "--seed", str(args.seed),
         "--set", "hidden=48,48", "--set", f"epochs={args.bcq_epochs}",
         "--set", "log_every=200", "--log", j("bcq_log.tsv"), "--out", j("bcq.ckpt")],
        ["export-plots", "--log", j("td3_log.tsv"), "--dataset", j("batch.tsv"),
         "--out-dir", j("plots_td3")],
        ["export-plots", "--log", j("bcq_log.tsv"), "--out-dir", j("plots_bcq")],
    ]
    for step in steps:
        code = cli(step)
        if code != 0:
            return code
    print(f"study artifacts in {args.out_dir}/")
    return 0


if __name__ == "__main__":
    sys.exit(run())
