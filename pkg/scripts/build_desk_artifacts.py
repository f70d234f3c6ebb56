"""Build the frozen desk-scale datasets and networks used by the acceptance suite.

Everything is seeded; rerunning reproduces the files byte for byte on the
same platform. Steps whose output already exists are skipped, so the script
can be resumed. Expect roughly 30 min per network on one core.

    python scripts/build_desk_artifacts.py --out tests/fixtures/desk
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

from probcert.config import load_config
from probcert.imitation import aggregate_and_fit
from probcert.mlp import fit_median, save_model
from probcert.mpc import generate_dataset, load_dataset, save_dataset

log = logging.getLogger("desk")


def dataset(cfg, path: Path, kind: str, n: int, eta: float, seed: int, n_sim: int):
    if path.exists():
        return load_dataset(path)
    t = time.time()
    sim = dataclasses.replace(cfg.sim, n_sim=n_sim)
    ds = generate_dataset(kind, n, eta, seed, tree=cfg.tree.build(), ocp=cfg.ocp_for(eta), p=cfg.kite, sim=sim,
                          family=cfg.distribution.build(), box=cfg.dataset.box)
    save_dataset(ds, path)
    log.info("%s: %d pairs in %.0f s", path.name, len(ds), time.time() - t)
    return ds


def network(cfg, base, path: Path, rounds: int, rollouts: int, seed: int):
    if path.exists():
        return
    t = time.time()
    _, data = aggregate_and_fit(base, rounds, rollouts, seed, arch=cfg.mlp, train_cfg=cfg.train,
                                    tree=cfg.tree.build(), ocp=cfg.ocp_for(float(base.meta["eta"])), p=cfg.kite,
                                    sim=cfg.sim, family=cfg.distribution.build(),
                                    progress=lambda r, n: log.info("%s: round %d/%d", path.name, r, n))
    # the delivered network is the median of five seeds on the final data
    model = fit_median(data.X, data.y, cfg.mlp, cfg.train)
    model.meta["aggregated_pairs"] = len(data)
    save_model(model, path)
    save_dataset(data, path.with_suffix(".data.csv"))
    log.info("%s: %d pairs after aggregation, %.0f s", path.name, len(data), time.time() - t)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path, help="base configuration (defaults otherwise)")
    ap.add_argument("--out", type=Path, default=Path("tests/fixtures/desk"))
    ap.add_argument("--etas", type=float, nargs="+", default=[0.0, 6.0, 11.0, 16.0])
    ap.add_argument("--pairs", type=int, default=1000)
    ap.add_argument("--n-sim", type=int, default=100, help="closed-loop length of the MPC datasets")
    ap.add_argument("--rounds", type=int, default=6)
    ap.add_argument("--rollouts", type=int, default=4)
    ap.add_argument("--skip-training-study", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    cfg = load_config(args.config)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    for eta in args.etas:
        base = dataset(cfg, out / f"opt_eta{eta:g}.csv", "opt", args.pairs, eta, 1, args.n_sim)
        network(cfg, base, out / f"net_eta{eta:g}.npz", args.rounds, args.rollouts, 7)
    if not args.skip_training_study:
        # T_opt is opt_eta0 (scenario seed 1); V_opt uses unseen scenarios
        dataset(cfg, out / "feas_eta0.csv", "feas", args.pairs, 0.0, 1, args.n_sim)
        dataset(cfg, out / "vopt_eta0.csv", "opt", args.pairs, 0.0, 3, args.n_sim)
    digest = {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
              for p in sorted(out.iterdir()) if p.suffix in (".csv", ".npz")}
    (out / "MANIFEST.json").write_text(json.dumps({"args": {k: str(v) for k, v in vars(args).items()},
                                                   "sha256": digest}, indent=1) + "\n")


if __name__ == "__main__":
    main()
