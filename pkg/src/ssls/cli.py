"""Command-line front end.

Subcommands: estimate (groupwise effects + inference on a CSV), discover
(data-driven grouping then estimation), simulate (Monte-Carlo studies),
diagnose (residual diagnostics), power (minimum group size).

Exit codes: 0 success, 2 input/config error, 3 statistical gate failure,
1 internal error. All outputs are deterministic given --seed: JSON carries
full float precision, CSV is formatted to 6 significant digits.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .clustering import KMeansSpec
from .data import CrossFitPlan, Dataset, load_csv, make_crossfit_plan
from .diagnostics import flag_regions, residual_series
from .errors import (
    ClusteringDegenerate,
    DomainError,
    GroupTooSmall,
    OneArmOnly,
    SslsError,
)
from .estimator import SslsConfig, crossfit_nuisance, estimate_dssls, repeated_ssls
from .inference import Contrast, glh_test, power_min_n, simultaneous_cis
from .rng import Stream
from .learners import (
    CartProbSpec,
    CartSpec,
    GbmProbSpec,
    GbmSpec,
    KnownPropensity,
    LogisticSpec,
    OlsSpec,
    RidgeSpec,
)
from .simulation import (
    run_diagnostic_once,
    run_power_study,
    run_calibration_study,
    run_robustness_study,
)

GATE_ERRORS = (GroupTooSmall, OneArmOnly, ClusteringDegenerate)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _regression_spec(name: str):
    name = name.lower()
    if name == "ols":
        return OlsSpec()
    if name.startswith("ridge"):
        lam = float(name.split(":", 1)[1]) if ":" in name else 1e-3
        return RidgeSpec(lam)
    if name == "cart":
        return CartSpec()
    if name == "gbm":
        return GbmSpec()
    raise DomainError(f"unknown outcome learner '{name}' "
                      "(expected ols, ridge[:lam], cart, gbm)")


def _propensity_spec(name: str | None, column: np.ndarray | None):
    if column is not None:
        return KnownPropensity(column)
    name = (name or "logistic").lower()
    if name == "logistic":
        return LogisticSpec()
    if name == "cart":
        return CartProbSpec()
    if name == "gbm":
        return GbmProbSpec()
    raise DomainError(f"unknown propensity learner '{name}' "
                      "(expected logistic, cart, gbm)")


def _resolve_propensity(raw: str | None):
    """--propensity accepts a column name or a literal constant in (0,1)."""
    if raw is None:
        return None, None
    try:
        const = float(raw)
    except ValueError:
        return raw, None
    if not 0.0 < const < 1.0:
        raise DomainError(f"constant propensity must lie in (0, 1), got {const}")
    return None, const


def _load(args, need_group: bool):
    covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    if not covariates:
        raise DomainError("--covariates must name at least one column")
    prop_col_name, prop_const = _resolve_propensity(args.propensity)
    dataset, grouping, mapping = load_csv(
        args.data,
        outcome=args.outcome,
        treatment=args.treatment,
        covariates=covariates,
        group=args.group if need_group else None,
        propensity=prop_col_name,
    )
    if need_group and grouping is None:
        raise DomainError("--group is required for this subcommand")
    if prop_const is not None:
        dataset = Dataset(dataset.y, dataset.a, dataset.x,
                          np.full(dataset.n, prop_const))
    return dataset, grouping, mapping, covariates


def _build_config(args, dataset) -> SslsConfig:
    plan = CrossFitPlan(
        n_folds=args.folds,
        stratified=args.stratified,
        repeats=args.repeats,
        seed=args.seed,
    )
    propensity_column = dataset.known_propensity
    spec_e = _propensity_spec(args.learner_e, propensity_column)
    return SslsConfig(
        regression_spec=_regression_spec(args.learner_y),
        propensity_spec=spec_e,
        plan=plan,
        alpha=args.alpha,
    )


def _residual_outputs(out_dir: Path, dataset, grouping, effects, args,
                      suffix: str = "") -> None:
    xcol = dataset.x[:, args.diag_covariate]
    span = float(xcol.max() - xcol.min())
    bandwidth = args.bandwidth if args.bandwidth is not None else max(0.05 * span, 1e-12)
    series = residual_series(
        effects, dataset, covariate_index=args.diag_covariate,
        bandwidth=bandwidth, grid_size=args.grid_size,
    )
    raw_rows = [
        {
            "x": dataset.x[i, args.diag_covariate],
            "residual": effects.residuals[i],
            "arm": int(dataset.a[i]),
            "group": int(grouping.labels[i]),
        }
        for i in range(dataset.n)
    ]
    write_csv(out_dir / f"residuals_raw{suffix}.csv", raw_rows)
    smooth_rows = []
    for arm in (0, 1):
        rs = series[arm]
        for i in range(rs.grid.shape[0]):
            smooth_rows.append(
                {"x_grid": rs.grid[i], "curve": rs.smooth[i], "arm": arm}
            )
    write_csv(out_dir / f"residuals_smooth{suffix}.csv", smooth_rows)


def _load_contrast(path: str, n_groups: int) -> Contrast:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if row:
                rows.append([float(v) for v in row])
    mat = np.asarray(rows, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != n_groups + 1:
        raise DomainError(
            f"contrast file must have {n_groups} K columns plus a trailing m0 column"
        )
    return Contrast(mat[:, :-1], mat[:, -1])


def _nuisance_quality(dataset, grouping, cfg) -> dict:
    """Out-of-fold fit quality of the outcome model on the first split.

    There is no pass/fail rule here; a large value warns that the residual
    diagnostics ride on a poorly fitted conditional mean.
    """
    seed0 = Stream(cfg.plan.seed).child("repeat").child(0).key
    plan = make_crossfit_plan(dataset.n, replace(cfg.plan, folds=()),
                              grouping=grouping, seed=seed0)
    nf = crossfit_nuisance(dataset, replace(cfg, plan=plan), grouping=grouping)
    return {
        "outcome_oof_mse": float(np.mean((dataset.y - nf.m_hat) ** 2)),
        "outcome_variance": float(np.var(dataset.y)),
        "note": "out-of-fold MSE of the fitted conditional mean on the first "
                "split; no pass/fail rule is attached",
    }


def cmd_estimate(args) -> int:
    dataset, grouping, mapping, covariates = _load(args, need_group=True)
    cfg = _build_config(args, dataset)
    effects = repeated_ssls(dataset, grouping, cfg)
    report = simultaneous_cis(effects, alpha=args.alpha)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    payload = {
        "command": "estimate",
        "data": str(args.data),
        "columns": {
            "outcome": args.outcome,
            "treatment": args.treatment,
            "group": args.group,
            "covariates": covariates,
            "propensity": args.propensity,
        },
        "group_relabeling": {str(k): v for k, v in mapping.items()},
        "plan": {
            "n_folds": args.folds,
            "stratified": args.stratified,
            "repeats": args.repeats,
            "seed": args.seed,
            "aggregation": "componentwise-median" if args.repeats > 1 else "single-run",
            "variance_adjustment": "none",
            "note": "repeated-split medians are reported unadjusted; rerun with "
                    "another seed to gauge split-to-split stability",
        },
        "effects": effects.to_dict(),
        "inference": report.to_dict(),
        "nuisance_quality": _nuisance_quality(dataset, grouping, cfg),
    }
    if args.contrast:
        contrast = _load_contrast(args.contrast, effects.n_groups)
        glh = glh_test(effects, contrast, alpha=args.alpha)
        payload["contrast_test"] = {
            "statistic": glh.statistic,
            "rank": glh.rank,
            "p_value": glh.p_value,
            "critical_value": glh.critical_value,
            "reject": glh.reject,
        }
    write_json(out_dir / "report.json", payload)
    write_csv(out_dir / "groups.csv", [
        {**row, "n_g": int(effects.n_g[row["group"] - 1])}
        for row in report.csv_rows()
    ])
    _residual_outputs(out_dir, dataset, grouping, effects, args)
    print(f"wrote {out_dir}/report.json with {effects.n_groups} groups", file=sys.stderr)
    return 0


def cmd_discover(args) -> int:
    dataset, _, _, covariates = _load(args, need_group=False)
    cfg = _build_config(args, dataset)
    spec = KMeansSpec(
        n_groups=args.groups,
        seed=args.seed,
        min_group_size=args.min_group_size,
    )
    result = estimate_dssls(dataset, spec, cfg)
    report = simultaneous_cis(result.effects, alpha=args.alpha)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    write_csv(out_dir / "groups.csv", [
        {"row": int(i), "label": int(lbl)}
        for i, lbl in zip(result.estimation_indices, result.grouping.labels)
    ])
    assert result.clusterer is not None
    centroid_rows = []
    for g in range(result.clusterer.n_groups):
        row = {"label": g + 1}
        raw = (result.clusterer.centroids[g] * result.clusterer.col_scale
               + result.clusterer.col_mean)
        for j, name in enumerate(covariates):
            row[name] = raw[j]
        centroid_rows.append(row)
    write_csv(out_dir / "centroids.csv", centroid_rows)
    payload = {
        "command": "discover",
        "n_total": dataset.n,
        "n_clustering": int(len(result.clustering_indices)),
        "n_estimation": int(len(result.estimation_indices)),
        "effects": result.effects.to_dict(),
        "inference": report.to_dict(),
    }
    write_json(out_dir / "report.json", payload)
    print(f"wrote {out_dir}/report.json with {args.groups} discovered groups",
          file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.study == "calibration":
        learners = [s.strip() for s in args.learners.split(",") if s.strip()]
        sigmas_a = [float(v) for v in args.sigma_a.split(",")]
        sigmas_y = [float(v) for v in args.sigma_y.split(",")]
        grid = [(lrn, sa, sy)
                for lrn in learners
                for sa in sigmas_a
                for sy in sigmas_y]
        results = run_calibration_study(grid, reps=args.reps, n=args.n,
                                   seed=args.seed, workers=args.workers)
        rows = []
        for r in results:
            for g in range(len(r.bias)):
                rows.append({
                    "learner": r.learner, "sigma_a": r.sigma_a, "sigma_y": r.sigma_y,
                    "group": g + 1, "bias": r.bias[g], "ese": r.ese[g],
                    "ase": r.ase[g], "ese_ase_ratio": r.ese_ase_ratio[g],
                    "coverage": r.coverage, "reps": r.reps,
                })
        write_csv(out_dir / "calibration.csv", rows)
        for r in results:
            print(f"calibration {r.learner} sA={r.sigma_a} sY={r.sigma_y}: "
                  f"{r.runtime:.1f}s", file=sys.stderr)
    elif args.study == "power":
        distances = [float(v) for v in args.distances.split(",")]
        points = run_power_study(distances=distances, reps=args.reps, n=args.n,
                                 seed=args.seed, workers=args.workers)
        write_csv(out_dir / "power.csv", [
            {"distance": p.distance, "power": p.rejection_rate, "reps": p.reps}
            for p in points
        ])
    elif args.study == "robustness":
        rows = []
        for flag in (True, False):
            for row in run_robustness_study(reps=args.reps, seed=args.seed,
                                          constant_propensity=flag,
                                          workers=args.workers):
                for g in range(len(row.bias)):
                    rows.append({
                        "n": row.n,
                        "constant_propensity": int(row.constant_propensity),
                        "group": g + 1,
                        "bias": row.bias[g],
                        "mc_se": row.mc_se[g],
                        "reps": row.reps,
                    })
        write_csv(out_dir / "robustness.csv", rows)
    elif args.study == "diagnostic":
        for tag, mis in (("correct", False), ("misspecified", True)):
            run = run_diagnostic_once(n=args.n, use_misspecified_m=mis,
                                      seed=args.seed)
            raw_rows = [
                {
                    "x": run.dataset.x[i, 0],
                    "residual": run.residuals[i],
                    "arm": int(run.dataset.a[i]),
                    "group": int(run.grouping.labels[i]),
                }
                for i in range(run.dataset.n)
            ]
            write_csv(out_dir / f"residuals_raw_{tag}.csv", raw_rows)
            smooth_rows = []
            for arm in (0, 1):
                rs = run.series[arm]
                for i in range(rs.grid.shape[0]):
                    smooth_rows.append(
                        {"x_grid": rs.grid[i], "curve": rs.smooth[i], "arm": arm}
                    )
            write_csv(out_dir / f"residuals_smooth_{tag}.csv", smooth_rows)
    else:
        raise DomainError(f"unknown study '{args.study}'")
    return 0


def cmd_diagnose(args) -> int:
    dataset, grouping, _, _ = _load(args, need_group=True)
    cfg = _build_config(args, dataset)
    effects = repeated_ssls(dataset, grouping, cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _residual_outputs(out_dir, dataset, grouping, effects, args)
    xcol = dataset.x[:, args.diag_covariate]
    span = float(xcol.max() - xcol.min())
    bandwidth = args.bandwidth if args.bandwidth is not None else max(0.05 * span, 1e-12)
    series = residual_series(effects, dataset, covariate_index=args.diag_covariate,
                             bandwidth=bandwidth, grid_size=args.grid_size)
    flags = {
        str(arm): [[lo, hi] for lo, hi in flag_regions(rs, args.flag_multiplier)]
        for arm, rs in series.items()
    }
    write_json(out_dir / "flags.json", {
        "command": "diagnose",
        "covariate_index": args.diag_covariate,
        "bandwidth": bandwidth,
        "flag_multiplier": args.flag_multiplier,
        "flagged_regions": flags,
        "nuisance_quality": _nuisance_quality(dataset, grouping, cfg),
    })
    return 0


def cmd_power(args) -> int:
    n = power_min_n(args.ztilde, alpha=args.alpha, power=args.power)
    print(f"minimum group size: {n} "
          f"(z_tilde={args.ztilde}, alpha={args.alpha}, power={args.power})")
    return 0


def _add_common_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="input CSV path (header required)")
    p.add_argument("--outcome", required=True, help="outcome column name")
    p.add_argument("--treatment", required=True, help="0/1 treatment column name")
    p.add_argument("--covariates", required=True,
                   help="comma-separated covariate column names")
    p.add_argument("--group", help="group column name")
    p.add_argument("--propensity",
                   help="known propensity: column name or literal constant in (0,1)")
    p.add_argument("--learner-y", default="gbm",
                   help="outcome learner: ols, ridge[:lam], cart, gbm")
    p.add_argument("--learner-e", default=None,
                   help="propensity learner: logistic, cart, gbm "
                        "(ignored when --propensity is given)")
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--stratified", action=argparse.BooleanOptionalAction,
                   default=True,
                   help="stratify fold splits by group (default on)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default="ssls-out")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="residual smoother bandwidth "
                        "(default: 5%% of the covariate range)")
    p.add_argument("--grid-size", type=int, default=200)
    p.add_argument("--diag-covariate", type=int, default=0)
    p.add_argument("--flag-multiplier", type=float, default=8.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssls",
        description="Groupwise treatment effect estimation via cross-fitted "
                    "least squares",
    )
    parser.add_argument("--config", help="JSON file of default flag values")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate groupwise effects on a CSV")
    _add_common_data_flags(p_est)
    p_est.add_argument("--contrast",
                       help="CSV of contrast rows: G columns of K then m0")
    p_est.set_defaults(fn=cmd_estimate)

    p_disc = sub.add_parser("discover", help="discover groups, then estimate")
    _add_common_data_flags(p_disc)
    p_disc.add_argument("--groups", type=int, required=True,
                        help="number of groups to discover")
    p_disc.add_argument("--min-group-size", type=int, default=None)
    p_disc.set_defaults(fn=cmd_discover)

    p_sim = sub.add_parser("simulate", help="run a Monte-Carlo study")
    p_sim.add_argument("--study", required=True,
                       choices=["calibration", "power", "robustness", "diagnostic"])
    p_sim.add_argument("--reps", type=int, default=100)
    p_sim.add_argument("--n", type=int, default=1000)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--learners", default="oracle",
                       help="comma-separated learners for calibration")
    p_sim.add_argument("--sigma-a", default="0,1",
                       help="comma-separated treatment random-effect scales (calibration study)")
    p_sim.add_argument("--sigma-y", default="0",
                       help="comma-separated outcome random-effect scales (calibration study)")
    p_sim.add_argument("--distances", default="0,0.4,0.8,1.2,1.6,2.0",
                       help="comma-separated distances for the power study")
    p_sim.add_argument("--out-dir", default="ssls-out")
    p_sim.set_defaults(fn=cmd_simulate)

    p_diag = sub.add_parser("diagnose", help="residual diagnostics on a CSV")
    _add_common_data_flags(p_diag)
    p_diag.set_defaults(fn=cmd_diagnose)

    p_pow = sub.add_parser("power", help="minimum group size for a target power")
    p_pow.add_argument("--ztilde", type=float, required=True,
                       help="standardized effect size, must be > 0")
    p_pow.add_argument("--alpha", type=float, default=0.05)
    p_pow.add_argument("--power", type=float, default=0.8)
    p_pow.set_defaults(fn=cmd_power)
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Flags beat the JSON config file, which beats built-in defaults."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    config_path = argv[i + 1]
    with open(config_path) as fh:
        values = json.load(fh)
    extra: list[str] = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if isinstance(value, bool):
            extra.append(flag if value else f"--no-{key.replace('_', '-')}")
        else:
            extra.append(flag)
            extra.append(str(value))
    return argv + extra


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.fn(args)
    except GATE_ERRORS as err:
        print(f"gate failure: {err}", file=sys.stderr)
        return 3
    except (SslsError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # pragma: no cover - internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
