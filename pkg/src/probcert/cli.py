"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 certification infeasible
(too few samples), 4 degraded campaign.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ControllerSpec, load_config

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_DEGRADED = 0, 2, 3, 4

log = logging.getLogger("probcert")


def _progress(label: str):
    def report(done, total):
        if done == total or done % max(1, total // 20) == 0:
            log.info("%s: %d/%d", label, done, total)
    return report


def _config(args):
    cfg = load_config(args.config, args.set or ())
    camp = cfg.campaign
    if getattr(args, "workers", None):
        camp = dataclasses.replace(camp, workers=args.workers)
    if getattr(args, "out_dir", None):
        camp = dataclasses.replace(camp, output_dir=str(args.out_dir))
    return dataclasses.replace(cfg, campaign=camp)


def cmd_samples(args) -> int:
    from .validation import binomial_tail, exact_min_samples, min_samples

    cfg = load_config(args.config, args.set or ())
    risk = cfg.risk
    kw = {k: v for k, v in (("epsilon", args.epsilon), ("delta", args.delta), ("r", args.r), ("m", args.m))
          if v is not None}
    try:
        risk = dataclasses.replace(risk, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    n, n_exact = min_samples(risk), exact_min_samples(risk)
    print(json.dumps({"risk": risk.to_dict(), "n_closed_form": n, "n_exact": n_exact,
                      "tail_at_n": binomial_tail(n, risk.epsilon, risk.r - 1),
                      "target": risk.delta / risk.m}, indent=1))
    return EXIT_OK


def cmd_sample_scenarios(args) -> int:
    from .scenarios import batch_hash, sample_scenario, save_batch

    cfg = _config(args)
    spec = cfg.distribution.build()
    batch = [sample_scenario(spec, cfg.sim.n_sim, cfg.sim.ekf_per_control, cfg.campaign.master_seed, i)
             for i in range(args.n)]
    save_batch(batch, args.out)
    print(json.dumps({"n": args.n, "family": spec.family, "hash": batch_hash(batch), "file": str(args.out)}))
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .mpc import generate_dataset, save_dataset

    cfg = _config(args)
    ds = cfg.dataset
    sim = cfg.sim if args.n_sim is None else dataclasses.replace(cfg.sim, n_sim=args.n_sim)
    eta = ds.eta if args.eta is None else args.eta
    data = generate_dataset(args.kind or ds.kind, args.n or ds.n_target, eta,
                            ds.seed if args.seed is None else args.seed, tree=cfg.tree.build(),
                            ocp=cfg.ocp_for(eta), p=cfg.kite, sim=sim,
                            family=cfg.distribution.build(), box=ds.box, progress=_progress("gen-data"))
    save_dataset(data, args.out)
    print(json.dumps({"pairs": len(data), "file": str(args.out), "solver_faults": data.meta["solver_faults"]}))
    return EXIT_OK


def cmd_train(args) -> int:
    from .imitation import aggregate_and_fit
    from .mlp import count_parameters, count_weights, fit_median, fit_policy, save_model
    from .mpc import load_dataset, save_dataset
    from .report import training_curve_plot

    cfg = _config(args)
    data = load_dataset(args.data)
    tc = cfg.train if args.seed is None else dataclasses.replace(cfg.train, seed=args.seed)
    if args.epochs:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    X_val = y_val = None
    if args.val:
        val = load_dataset(args.val)
        X_val, y_val = val.X, val.y
    if args.rounds:
        if args.val:
            raise ConfigError("--val cannot be combined with --rounds")
        eta = float(data.meta.get("eta", 0.0))
        sim = cfg.sim if args.rollout_steps is None else dataclasses.replace(cfg.sim, n_sim=args.rollout_steps)
        model, data = aggregate_and_fit(data, args.rounds, args.rollouts, tc.seed, arch=cfg.mlp, train_cfg=tc,
                                        tree=cfg.tree.build(), ocp=cfg.ocp_for(eta), p=cfg.kite, sim=sim,
                                        family=cfg.distribution.build(), progress=_progress("aggregate"))
        save_dataset(data, Path(args.out).with_suffix(".data.csv"))
    if args.repeats > 1:
        if args.val:
            raise ConfigError("--val cannot be combined with --repeats")
        model = fit_median(data.X, data.y, cfg.mlp, tc, range(tc.seed, tc.seed + args.repeats))
    elif not args.rounds:
        model = fit_policy(data.X, data.y, cfg.mlp, tc, X_val, y_val)
    arch = model.params.arch
    model.meta.update({"dataset": str(args.data), "dataset_meta": data.meta,
                       "eq22_weights": count_weights(3, 1, arch.L, arch.H),
                       "actual_parameters": count_parameters(arch)})
    save_model(model, args.out)
    curves = {"train": model.train_curve, "validation": model.val_curve}
    training_curve_plot(curves, Path(args.out).with_suffix(".svg"))
    print(json.dumps({"file": str(args.out), "best_epoch": model.best_epoch,
                      "best_score": model.meta["best_score"]}))
    return EXIT_OK


def _controller(args, cfg):
    from .campaign import build_controller

    spec = ControllerSpec(args.controller, args.eta, args.params)
    return spec, build_controller(spec, cfg)


def cmd_simulate(args) -> int:
    from .indicators import evaluate
    from .report import height_plot, phi_theta_plot
    from .scenarios import sample_scenario
    from .simulate import EkfEstimator, PerfectEstimator, simulate_closed_loop
    from .trajectory import save

    cfg = _config(args)
    if args.delay is not None:
        cfg = dataclasses.replace(cfg, sim=dataclasses.replace(cfg.sim, input_delay=args.delay))
    spec, ctrl = _controller(args, cfg)
    sc = sample_scenario(cfg.distribution.build(), cfg.sim.n_sim, cfg.sim.ekf_per_control,
                         cfg.campaign.master_seed, args.scenario)
    est = PerfectEstimator() if args.state_feedback else EkfEstimator(cfg.ekf_config(), cfg.kite)
    tr = simulate_closed_loop(sc, ctrl, est, cfg.sim, cfg.kite, cfg.wind, controller_id=spec.label)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save(tr, out)
    height_plot([tr], cfg.sim.t_c, cfg.kite.h_min, spec.eta, out.with_name(out.stem + "_height.svg"))
    phi_theta_plot([tr], out.with_name(out.stem + "_phi_theta.svg"))
    print(json.dumps({"file": str(out), "fault": tr.fault,
                      **{s.kind: evaluate(tr, s) for s in cfg.indicator_specs()}}))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .campaign import run_campaign

    cfg = _config(args)
    if args.n:
        cfg = dataclasses.replace(cfg, campaign=dataclasses.replace(cfg.campaign, n_override=args.n))
    rep = run_campaign(cfg, cfg.campaign.output_dir, progress=_progress("validate"))
    for r in rep.rows:
        print(f"{r.id}: feasible {r.feasible}/{rep.n}, level {r.level:.4g}, "
              f"mean thrust {r.mean_thrust / 1e3:.1f} kN, safe={r.safe}")
    return EXIT_DEGRADED if rep.degraded else EXIT_OK


def cmd_robustness(args) -> int:
    from .campaign import robustness_study
    from .config import DistributionSettings

    cfg = _config(args)
    specs = [DistributionSettings(f).build() for f in args.families.split(",")]
    rows = robustness_study(cfg, specs, cfg.campaign.output_dir, progress=_progress("robustness"))
    for r in rows:
        print(f"{r.family}: feasible {r.feasible} of {r.n}, levels {[round(x, 4) for x in r.levels]}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .campaign import regenerate

    rep = regenerate(args.dir)
    print(json.dumps({"dir": str(args.dir), "controllers": [r.id for r in rep.rows]}))
    return EXIT_DEGRADED if rep.degraded else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="probcert", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="YAML configuration file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. ocp.eta=2")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("samples", cmd_samples, "print the required number of scenarios")
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--r", type=int)
    sp.add_argument("--m", type=int)

    sp = add("sample-scenarios", cmd_sample_scenarios, "draw and store a scenario batch")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out", type=Path, required=True)

    sp = add("gen-data", cmd_gen_data, "generate MPC training data")
    sp.add_argument("--kind", choices=("opt", "feas"))
    sp.add_argument("--n", type=int)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-sim", type=int, help="closed-loop length for kind=opt")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("train", cmd_train, "fit a network to a dataset")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--val", type=Path)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--rounds", type=int, default=0, help="on-policy aggregation rounds (MPC relabelling)")
    sp.add_argument("--rollouts", type=int, default=4, help="network rollouts per aggregation round")
    sp.add_argument("--rollout-steps", type=int, help="closed-loop length of each rollout")
    sp.add_argument("--repeats", type=int, default=1, help="train this many seeds and keep the median network")
    sp.add_argument("--out", type=Path, required=True)

    sp = add("simulate", cmd_simulate, "run one closed loop")
    sp.add_argument("--controller", choices=("ms", "dnn"), default="ms")
    sp.add_argument("--eta", type=float, default=0.0)
    sp.add_argument("--params", help="network file for --controller dnn")
    sp.add_argument("--scenario", type=int, default=0)
    sp.add_argument("--delay", type=float, help="input delay in seconds")
    sp.add_argument("--state-feedback", action="store_true")
    sp.add_argument("--out", type=Path, required=True)

    for name, fn, help_ in (("validate", cmd_validate, "run a certification campaign"),
                            ("robustness", cmd_robustness, "re-run under other parameter distributions")):
        sp = add(name, fn, help_)
        sp.add_argument("--out-dir", type=Path)
        sp.add_argument("--workers", type=int)
        if name == "validate":
            sp.add_argument("--n", type=int, help="scenario count (must not be below the required N)")
        else:
            sp.add_argument("--families", default="normal,beta,pareto")

    sp = sub.add_parser("report", help="rebuild tables and plots from a campaign directory")
    sp.add_argument("dir", type=Path)
    sp.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    from .validation import CertificationError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificationError as exc:
        print(f"certification infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
