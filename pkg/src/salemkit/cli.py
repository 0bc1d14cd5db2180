"""Command-line front end.

Subcommands mirror the library layers: ``build`` one configuration,
``sweep`` its exponential sums, ``check`` the concentration bounds,
``estimate-dim`` either estimator, ``montecarlo`` a full trial battery,
``iterate`` the multi-stage measure refinement, and ``demo`` the three
worked examples.

Exit codes: 0 pass, 1 verdict failure (including construction failure),
2 input error, 3 resource exhaustion.
"""

import argparse
import json
import os
import sys

import numpy as np

from .errors import BudgetError, ConstructionFailure, DegenerateOverlapError
from .harness import (
    ExperimentConfig,
    demo_ap3,
    demo_isosceles,
    demo_linear_equations,
    hoeffding_check,
    make_pattern,
    run_experiment,
    split_sum_check,
)
from .sampler import ConstructionParams, WeightedConfiguration

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INPUT = 2
EXIT_RESOURCE = 3


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, payload):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _builder_for(pattern):
    from .sampler import build_rough, build_surface, build_translational

    return {
        "rough": build_rough,
        "surface": build_surface,
        "translational": build_translational,
    }[pattern.kind]


def cmd_build(args):
    data = _load_json(args.config)
    pattern = make_pattern(data["pattern"])
    cons = dict(data["construction"])
    if args.seed is not None:
        cons["seed"] = args.seed
    params = ConstructionParams(**cons)
    config = _builder_for(pattern)(pattern, params)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "configuration.csv")
    config.save(path)
    print(f"built N={config.N} points (removed {config.provenance.get('n_removed')}); wrote {path}")
    return EXIT_PASS


def cmd_sweep(args):
    config = WeightedConfiguration.load(args.config)
    from .expsum import calibrate_constant, sweep

    C = args.C
    if C is None:
        C, _ = calibrate_constant(
            N=config.N,
            d=config.d,
            lam=config.lam,
            weights=config.weights,
            seed=args.seed or 0,
            threads=args.threads,
        )
    report = sweep(
        config.points, config.weights, lam=config.lam, C=C, threads=args.threads
    )
    if args.out:
        _write_json(os.path.join(args.out, "sweep.json"), report.to_dict())
    print(
        f"sweep to |xi| <= {report.xi_max}: sup={report.sup_overall:.4g}, "
        f"violations={report.n_violations}, C={C:.4g}"
    )
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_check(args):
    data = _load_json(args.config) if args.config else {}
    pattern = make_pattern(data.get("pattern", {"id": "ap3", "m": 16}))
    cons = dict(data.get("construction", {"M": 256, "lam": 0.45}))
    if args.seed is not None:
        cons["seed"] = args.seed
    params = ConstructionParams(**cons)
    trials = args.trials or 50
    hoeff = hoeffding_check(np.ones(params.M), n_samples=10_000, seed=params.seed)
    split = split_sum_check(pattern, params, trials=max(trials, 50))
    ok = (
        not any(row["exceeds"] for row in hoeff)
        and split["reconstruction_ok"]
        and split["tail_pass_rate"] >= 0.9
    )
    if args.out:
        _write_json(
            os.path.join(args.out, "check.json"),
            {"hoeffding": hoeff, "split_sum": split},
        )
    print(
        f"hoeffding exceedances: {sum(r['exceeds'] for r in hoeff)}; "
        f"split reconstruction error {split['reconstruction_error']:.2e}; "
        f"tail pass-rate {split['tail_pass_rate']:.2f}"
    )
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_estimate_dim(args):
    from .dimension import box_dimension, fourier_dimension

    results = {}
    if args.config.endswith(".sfgm"):
        from .measures import GridMeasure

        mu = GridMeasure.load(args.config)
        results["fourier"] = fourier_dimension(mu).to_dict()
    else:
        config = WeightedConfiguration.load(args.config)
        r = config.radius_r
        results["box"] = box_dimension(
            config.points, scales=[16 * r, 8 * r, 4 * r, 2 * r, r], thicken=r
        ).to_dict()
        results["fourier"] = fourier_dimension(config).to_dict()
    if args.out:
        _write_json(os.path.join(args.out, "dimension.json"), results)
    for kind, est in results.items():
        print(f"{kind} dimension estimate: {est['value']:.4f}")
    return EXIT_PASS


def cmd_montecarlo(args):
    data = _load_json(args.config)
    if args.trials is not None:
        data["trials"] = args.trials
    if args.out is not None:
        data["out_dir"] = args.out
    if args.seed is not None:
        data.setdefault("construction", {})["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(data)
    report = run_experiment(cfg, threads=args.threads)
    agg = report.aggregate
    print(json.dumps(agg, indent=2, sort_keys=True, default=_default))
    ok = (
        agg["failed_trials"] == 0
        and agg.get("sweep_pass_rate", 1.0) >= 0.9
        and agg.get("scan_violations_total", 0) == 0
    )
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_iterate(args):
    data = _load_json(args.config)
    from .measures import geometric_schedule, salem_iterate

    pattern = make_pattern(data["pattern"])
    cons = dict(data["construction"])
    if args.seed is not None:
        cons["seed"] = args.seed
    params = ConstructionParams(**cons)
    stages = int(data.get("stages", 2))
    G = int(data.get("grid_G", 2048))
    gamma = float(data.get("gamma", params.lam))
    schedule = geometric_schedule(params, stages, factor=float(data.get("factor", 8.0)))
    trajectory = salem_iterate(pattern, schedule, G=G, gamma=gamma)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    rows = []
    for rec in trajectory:
        path = os.path.join(out, f"stage{rec['stage']}.sfgm")
        rec["measure"].save(path, provenance={"stage": rec["stage"]})
        rows.append(
            {
                "stage": rec["stage"],
                "radius": rec["radius"],
                "N": rec["config"].N,
                "sweep_violations": rec["sweep"].n_violations,
                "seminorm_step": rec["seminorm_step"]["value"],
                "measure_file": path,
            }
        )
    _write_json(os.path.join(out, "iterate.json"), {"stages": rows})
    print(f"completed {len(rows)} stages; wrote {out}/iterate.json")
    return EXIT_PASS


def cmd_demo(args):
    out = args.out
    if args.which == "ap3":
        report = demo_ap3(
            trials=args.trials or 50,
            seed=args.seed or 0,
            out_dir=out,
            threads=args.threads,
        )
        ok = (
            report.aggregate["failed_trials"] == 0
            and report.aggregate.get("scan_violations_total", 0) == 0
            and report.aggregate.get("sweep_pass_rate", 0.0) >= 0.9
        )
        print(json.dumps(report.aggregate, indent=2, sort_keys=True, default=_default))
        return EXIT_PASS if ok else EXIT_FAIL
    if args.which == "linear-eq":
        report = demo_linear_equations(
            coeff_bound=2,
            M=1024,
            lam=0.45,
            seed=args.seed or 0,
            trials=args.trials or 1,
            out_dir=out,
        )
        viol = sum(r["scan_violations"] for r in report.rows)
        print(json.dumps(report.aggregate, indent=2, sort_keys=True, default=_default))
        return EXIT_PASS if viol == 0 else EXIT_FAIL
    if args.which == "isosceles-parabola":
        report = demo_isosceles(
            route="surface",
            M=512,
            lam=4.0 / 9.0,
            seed=args.seed or 0,
            trials=args.trials or 1,
            out_dir=out,
        )
        ok = all(r["gap_positive"] for r in report.rows)
        print(json.dumps(report.aggregate, indent=2, sort_keys=True, default=_default))
        return EXIT_PASS if ok else EXIT_FAIL
    raise ValueError(f"unknown demo {args.which!r}")


def build_parser():
    p = argparse.ArgumentParser(
        prog="salemkit",
        description="Randomized pattern-avoiding constructions on the torus "
        "with Fourier-analytic certification.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="path to a JSON config or data file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("build", help="build one weighted configuration")
    common(sp)
    sp.set_defaults(func=cmd_build, needs_config=True)

    sp = sub.add_parser("sweep", help="exponential-sum sweep of a configuration")
    common(sp)
    sp.add_argument("--C", type=float, default=None, help="bound constant (default: calibrate)")
    sp.set_defaults(func=cmd_sweep, needs_config=True)

    sp = sub.add_parser("check", help="concentration and split-sum checks")
    common(sp)
    sp.set_defaults(func=cmd_check, needs_config=False)

    sp = sub.add_parser("estimate-dim", help="dimension estimates for a configuration or measure")
    common(sp)
    sp.set_defaults(func=cmd_estimate_dim, needs_config=True)

    sp = sub.add_parser("montecarlo", help="run a trial battery from a config file")
    common(sp)
    sp.set_defaults(func=cmd_montecarlo, needs_config=True)

    sp = sub.add_parser("iterate", help="multi-stage measure refinement")
    common(sp)
    sp.set_defaults(func=cmd_iterate, needs_config=True)

    sp = sub.add_parser("demo", help="run a worked example")
    sp.add_argument("which", choices=["ap3", "linear-eq", "isosceles-parabola"])
    common(sp)
    sp.set_defaults(func=cmd_demo, needs_config=False)

    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "needs_config", False) and not args.config:
        print("error: --config is required for this subcommand", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except (ConstructionFailure, DegenerateOverlapError) as exc:
        print(f"construction failure: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except BudgetError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
