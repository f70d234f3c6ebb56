"""Certify networks trained at several back-offs on common scenarios.

Prints feasible counts, certified levels and mean thrust per eta, and writes
the campaign directory (tables, certificates, plots).

    python scripts/eta_sweep.py --nets tests/fixtures/desk --etas 0 6 11 16 --out runs/sweep
"""
from __future__ import annotations

import argparse
from pathlib import Path

from probcert.campaign import run_campaign
from probcert.config import CampaignSettings, ControllerSpec, from_dict, load_config, to_dict
from probcert.validation import RiskSpec


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", type=Path)
    ap.add_argument("--nets", type=Path, default=Path("tests/fixtures/desk"))
    ap.add_argument("--etas", type=float, nargs="+", default=[0.0, 6.0, 11.0, 16.0])
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=0.01)
    ap.add_argument("--r", type=int, default=2)
    ap.add_argument("--delay", type=float, default=0.0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("runs/sweep"))
    args = ap.parse_args(argv)

    base = to_dict(load_config(args.config))
    cfg = from_dict(base)
    ctrls = tuple(ControllerSpec("dnn", e, str(args.nets / f"net_eta{e:g}.npz")) for e in args.etas)
    d = {**base, "risk": RiskSpec(args.epsilon, args.delta, args.r, len(ctrls)).to_dict(),
         "sim": {**base["sim"], "input_delay": args.delay},
         "campaign": to_dict(CampaignSettings(controllers=ctrls, master_seed=cfg.campaign.master_seed,
                                              workers=args.workers))}
    report = run_campaign(from_dict(d), args.out)
    print(f"N = {report.n}")
    print("eta    feasible  level      mean thrust [kN]")
    for row in report.rows:
        print(f"{row.eta:<6g} {row.feasible:>4d}/{report.n:<4d} {row.level:>9.3f}  {row.mean_thrust / 1e3:9.2f}")


if __name__ == "__main__":
    main()
