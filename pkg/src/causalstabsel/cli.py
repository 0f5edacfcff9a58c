"""Command-line entry point: ``causalstabsel {select,simulate,validate,plot}``.

Exit codes: 0 success or check passed, 1 check failed or runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench, config
from .core import DataError, RngSpec, load_csv
from .pipeline import run_selection
from .svg import results_svg

log = logging.getLogger("causalstabsel")

CHECKS = ("variance-bound", "bias-decay", "efp-calibration")


class UsageError(Exception):
    pass


def _propensity(text):
    if text in ("estimated", "estimated_cv"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'estimated', 'estimated_cv' or a probability") from None
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("known propensity must lie in (0, 1)")
    return value


def _common(p):
    p.add_argument("--config", help="TOML file; flags override its values")
    p.add_argument("--preset", choices=sorted(config.PRESETS), help="named settings applied before --config")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--threads", type=int, help="worker cap (default 1)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalstabsel", description="Effect-modifier discovery by "
                                     "cross-fitted stability selection with efp scores.")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("select", help="score and select effect modifiers in a CSV file")
    p.add_argument("data", help="CSV with a header row")
    p.add_argument("--outcome", help="outcome column (default y)")
    p.add_argument("--treatment", help="binary treatment column (default z)")
    goal = p.add_mutually_exclusive_group()
    goal.add_argument("--target-efp", type=float, metavar="T", help="select {j : efp(j) <= T}")
    goal.add_argument("--fdr", type=float, metavar="ALPHA", help="largest set with T/|set| <= ALPHA")
    p.add_argument("--cate", choices=("t", "x", "dr"), type=str.lower)
    p.add_argument("--base-learner", choices=("ridge", "gbt"))
    p.add_argument("--selector", choices=("lasso", "gbt"))
    p.add_argument("--propensity", type=_propensity, help="estimated, estimated_cv or a known probability")
    p.add_argument("--B", type=int, dest="B", help="complementary pairs (default 100)")
    p.add_argument("--m", type=int, help="subsample size (default floor(n/2))")
    p.add_argument("--delta", type=float, help="measure exponent (default 1)")
    p.add_argument("--no-standardize", action="store_true", help="use covariates as given")
    _common(p)

    p = sub.add_parser("simulate", help="run a simulation experiment")
    p.add_argument("--trials", type=int)
    p.add_argument("--methods", nargs="+", choices=bench.METHODS)
    p.add_argument("--alphas", nargs="+", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--svg", action="store_true", help="also write curves.svg")
    _common(p)

    p = sub.add_parser("validate", help="Monte Carlo check of a theoretical bound")
    p.add_argument("--check", choices=CHECKS)
    p.add_argument("--replications", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--B", type=int, dest="B")
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--cate", choices=("dr", "true"), help="bias-decay estimator; 'true' plugs in tau")
    _common(p)

    p = sub.add_parser("plot", help="redraw curves.svg from a results CSV")
    p.add_argument("results", help="results.csv written by simulate")
    p.add_argument("--out", default="curves.svg")
    return parser


def _resolve(args, overrides):
    overrides.setdefault("run", {}).update({"seed": args.seed, "threads": args.threads})
    return config.resolve(args.config, args.preset, overrides)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_select(args) -> int:
    ov = {"select": {"outcome": args.outcome, "treatment": args.treatment, "cate": args.cate,
                     "base_learner": args.base_learner, "selector": args.selector,
                     "propensity": args.propensity, "B": args.B, "m": args.m, "delta": args.delta}}
    cfg = _resolve(args, ov)
    s = cfg["select"]
    if args.target_efp is not None:
        s["target_efp"], s["fdr"] = args.target_efp, None
    elif args.fdr is not None:
        s["fdr"], s["target_efp"] = args.fdr, None
    if args.no_standardize:
        s["standardize"] = False
    if args.dump_config:
        sys.stdout.write(config.dumps(cfg))
        return 0
    if (s["target_efp"] is None) == (s["fdr"] is None):
        raise UsageError("give exactly one of --target-efp or --fdr")
    if s["fdr"] is not None and not 0 <= s["fdr"] <= 0.5:
        raise UsageError("--fdr must lie in [0, 0.5]")
    if s["target_efp"] is not None and s["target_efp"] < 0:
        raise UsageError("--target-efp must be >= 0")
    try:
        data = load_csv(args.data, s["outcome"], s["treatment"])
    except DataError as exc:
        if "missing column" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.data}") from None
    result = run_selection(data, config.selection_config(cfg), RngSpec(cfg["run"]["seed"]),
                           cfg["run"]["threads"], standardize=s["standardize"])
    rep = result.report
    chosen = rep.select_at_target(s["target_efp"]) if s["target_efp"] is not None else rep.select_fdr(s["fdr"])
    path = _outdir(args) / "efp_report.csv"
    rep.to_csv(path, chosen)
    rule = f"efp <= {s['target_efp']}" if s["target_efp"] is not None else f"FDR level {s['fdr']}"
    print(f"selected {len(chosen)} of {data.p} features ({rule}); bound constant C = {rep.bound_constant:.6g}")
    for j in chosen:
        print(f"  {data.feature_names[j]}\tefp={rep.efp[j]:.4g}\tI={rep.integral_scores[j]:.4g}")
    print(f"report: {path}")
    return 0


def cmd_simulate(args) -> int:
    ov = {"sim": {"n": args.n, "p": args.p},
          "experiment": {"trials": args.trials, "methods": args.methods, "alphas": args.alphas}}
    cfg = _resolve(args, ov)
    if args.dump_config:
        sys.stdout.write(config.dumps(cfg))
        return 0
    e = cfg["experiment"]
    spec = bench.ExperimentSpec(config.sim_config(cfg), config.method_specs(cfg), tuple(e["alphas"]),
                                e["trials"], RngSpec(cfg["run"]["seed"]), str(_outdir(args)),
                                tuple(e["targets"]))
    rows, _ = bench.run_experiment(spec, cfg["run"]["threads"])
    out = Path(spec.output_dir)
    print(f"wrote {out / 'results.csv'} ({len(rows)} rows, {spec.trials} trials)")
    if args.svg:
        (out / "curves.svg").write_text(results_svg(rows, f"{spec.sim.setting} setting"), encoding="utf-8")
        print(f"wrote {out / 'curves.svg'}")
    return 0


def cmd_validate(args) -> int:
    ov = {"validate": {"check": args.check, "replications": args.replications, "trials": args.trials,
                       "B": args.B, "m": args.m, "cate": args.cate},
          "sim": {"n": args.n}}
    cfg = _resolve(args, ov)
    if args.dump_config:
        sys.stdout.write(config.dumps(cfg))
        return 0
    v = cfg["validate"]
    sim = config.sim_config(cfg)
    seed = RngSpec(cfg["run"]["seed"])
    threads = cfg["run"]["threads"]
    out = _outdir(args)
    if v["check"] == "variance-bound":
        rep = bench.validate_variance_bound(sim, v["B"], v["m"], v["replications"], None, v["selector"],
                                            v["grid_size"], seed, threads)
        rep.to_csv(out / "variance_bound.csv")
        print(f"variance bound {rep.bound:.6g}; max empirical variance {rep.emp_var.max():.6g}; "
              f"{rep.n_violations} violations beyond slack")
    elif v["check"] == "bias-decay":
        spec = "true" if v["cate"] == "true" else None
        rep = bench.validate_bias_decay(sim, v["ns"], spec, v["B"], v["m"], v["reference_B"],
                                        v["replications"], v["selector"], v["grid_size"], seed, threads)
        rep.to_csv(out / "bias_decay.csv")
        for n, g, se in zip(rep.ns, rep.gap_lambda_min, rep.se_lambda_min):
            print(f"n={n}: gap at lambda_min {g:.4f} (se {se:.4f})")
    else:
        rep = bench.validate_efp_calibration(sim, v["targets"], v["trials"], seed=seed, n_jobs=threads)
        rep.to_csv(out / "efp_calibration.csv")
        for t, mf, sf in zip(rep.targets, rep.mean_fp, rep.se_fp):
            print(f"t={t}: mean false positives {mf:.3f} (se {sf:.3f})")
    print("PASS" if rep.passed else "FAIL")
    return 0 if rep.passed else 1


def cmd_plot(args) -> int:
    rows = bench.read_results_csv(args.results)
    Path(args.out).write_text(results_svg(rows), encoding="utf-8")
    print(f"wrote {args.out}")
    return 0


COMMANDS = {"select": cmd_select, "simulate": cmd_simulate, "validate": cmd_validate, "plot": cmd_plot}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    if args.quiet:
        log.setLevel(logging.WARNING)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, config.ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"causalstabsel: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"causalstabsel: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
