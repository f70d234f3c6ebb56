"""Compare networks trained on closed-loop MPC data with networks trained on
box-sampled states, both scored on held-out closed-loop data.

Writes per-seed MSEs to a CSV and the training curves of the median networks
to an SVG.

    python scripts/training_set_study.py --data tests/fixtures/desk --out runs/training_study
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
from pathlib import Path

import numpy as np

from probcert.config import load_config
from probcert.mlp import fit_policy, policy_features
from probcert.mpc import load_dataset
from probcert.report import training_curve_plot


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--data", type=Path, default=Path("tests/fixtures/desk"))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--out", type=Path, default=Path("runs/training_study"))
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    sets = {"opt": load_dataset(args.data / "opt_eta0.csv"), "feas": load_dataset(args.data / "feas_eta0.csv")}
    v_opt = load_dataset(args.data / "vopt_eta0.csv")
    args.out.mkdir(parents=True, exist_ok=True)
    rows, models = [], {k: [] for k in sets}
    for seed in range(args.seeds):
        for name, ds in sets.items():
            model = fit_policy(ds.X, ds.y, cfg.mlp, dataclasses.replace(cfg.train, seed=seed))
            mse = model.mse(policy_features(v_opt.X, model.features), v_opt.y)
            rows.append((name, seed, mse))
            models[name].append((mse, model))
    with open(args.out / "mse.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["training_set", "seed", "mse_on_v_opt"])
        w.writerows((n, s, f"{m:.6g}") for n, s, m in rows)
    curves = {}
    for name, ms in models.items():
        ms.sort(key=lambda t: t[0])
        _, med = ms[len(ms) // 2]
        curves[f"T_{name} train"] = med.train_curve
        curves[f"T_{name} validation"] = med.val_curve
        print(f"T_{name}: median MSE on V_opt = {np.median([m for m, _ in ms]):.4g}")
    training_curve_plot(curves, args.out / "training_curves.svg")


if __name__ == "__main__":
    main()
