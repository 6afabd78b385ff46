"""Command-line surface: simulate, preprocess, fit, select, bootstrap, report.

Every subcommand validates its JSON config against a schema and fails with a
field-path message; runtime errors are emitted as machine-readable JSON on
stderr with a nonzero exit code.  Outputs are data tables (CSV) and JSON
documents plus a gnuplot-compatible script for the report tables.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .admm import FitConfig, fit
from .bootstrap import bootstrap
from .emissions import EmissionCoeffs
from .errors import ConfigError, HcthmmError
from .hierarchy import HierarchySpec
from .inference import forward_backward, time_in_state
from .params import to_natural
from .preprocess import PreprocessConfig, preprocess
from .schemas import (
    BOOTSTRAP_SCHEMA,
    FIT_SCHEMA,
    PREPROCESS_SCHEMA,
    REPORT_SCHEMA,
    SELECT_SCHEMA,
    SIMULATE_SCHEMA,
    validate_config,
)
from .serialize import (
    fit_result_from_json_dict,
    fit_result_to_json_dict,
    read_cohort_csv,
    read_json,
    write_cohort_csv,
    write_json,
)
from .simulate import SimDesign, generate_cohort

GROUPING_J = {"sex": 2, "sex_age": 4}


def _load_config(path, schema) -> dict:
    if path is None:
        return {}
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return validate_config(doc, schema)


def _solver_settings(cfg: dict, args) -> dict:
    """Merge config-file solver fields with CLI overrides."""
    out = {
        "states": cfg.get("states", 3),
        "hierarchy": cfg.get("hierarchy", "III"),
        "grouping": cfg.get("grouping", "sex"),
        "rho": cfg.get("rho", 1.0),
        "adapt_rho": cfg.get("adapt_rho", True),
        "tol_primal": cfg.get("tol_primal"),
        "tol_dual": cfg.get("tol_dual"),
        "max_iter": cfg.get("max_iter", 500),
        "n_starts": cfg.get("n_starts", 1),
        "seed": cfg.get("seed", 0),
        "workers": cfg.get("workers", 1),
        "inner_gtol": cfg.get("inner_gtol", 1e-6),
        "inner_maxiter": cfg.get("inner_maxiter", 100),
    }
    if getattr(args, "states", None) is not None:
        out["states"] = args.states
    if getattr(args, "hierarchy", None) is not None:
        out["hierarchy"] = args.hierarchy
    if getattr(args, "grouping", None) is not None:
        out["grouping"] = args.grouping
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        out["workers"] = args.workers
    return out


def _fit_config(s: dict) -> FitConfig:
    return FitConfig(
        rho=s["rho"],
        adapt_rho=s["adapt_rho"],
        tol_primal=s["tol_primal"],
        tol_dual=s["tol_dual"],
        max_iter=s["max_iter"],
        n_starts=s["n_starts"],
        seed=s["seed"],
        workers=s["workers"],
        inner_gtol=s["inner_gtol"],
        inner_maxiter=s["inner_maxiter"],
    )


def _spec_for(data, settings) -> HierarchySpec:
    return HierarchySpec.from_data(
        data, settings["hierarchy"], M=settings["states"], J=GROUPING_J[settings["grouping"]]
    )


def _outdir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, SIMULATE_SCHEMA)
    kwargs = {}
    for key in ("n_subjects", "weekend_placement"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if "length_range" in cfg:
        kwargs["length_range"] = tuple(cfg["length_range"])
    kwargs["seed"] = args.seed if args.seed is not None else cfg.get("seed", 0)
    design = SimDesign(**kwargs)
    data, truth = generate_cohort(design)
    out = _outdir(args)
    write_cohort_csv(data, out / "cohort.csv")
    write_json(truth.to_json_dict(), out / "truth.json")
    print(f"wrote {out / 'cohort.csv'} ({len(data)} subjects) and {out / 'truth.json'}")
    return 0


def cmd_preprocess(args) -> int:
    cfg = _load_config(args.config, PREPROCESS_SCHEMA)
    kwargs = {k: cfg[k] for k in cfg if k not in ("schema_version", "age_range")}
    if "age_range" in cfg:
        kwargs["age_range"] = tuple(cfg["age_range"])
    pconfig = PreprocessConfig(**kwargs)
    from .preprocess import _parse_csv

    records = _parse_csv(args.input)
    demog = {r.subject_id: (r.age, r.sex) for r in records}
    series, report = preprocess(records, pconfig)
    out = _outdir(args)
    ages = [demog[s.subject_id][0] for s in series]
    sexes = [demog[s.subject_id][1] for s in series]
    write_cohort_csv(series, out / "cohort.csv", ages=ages, sexes=sexes)
    write_json(report.to_json_dict(), out / "exclusions.json")
    print(
        f"kept {report.n_output_subjects}/{report.n_input_subjects} subjects "
        f"({report.excluded_by_age} by age, {report.excluded_by_min_minutes} too short)"
    )
    return 0


def _posterior_tables(data, result):
    fbs = [forward_backward(s, t) for s, t in zip(data, result.theta_hat)]
    groups = [s.group_id for s in data]
    return time_in_state(fbs, groups, J=result.spec.J)


def cmd_fit(args) -> int:
    cfg = _load_config(args.config, FIT_SCHEMA)
    settings = _solver_settings(cfg, args)
    data = read_cohort_csv(args.input, settings["grouping"])
    spec = _spec_for(data, settings)
    result = fit(data, spec, _fit_config(settings))
    out = _outdir(args)
    write_json(fit_result_to_json_dict(result), out / "fit.json")
    summary = _posterior_tables(data, result)
    _write_rows(
        out / "eta.csv",
        ["subject_id", "state", "eta"],
        [
            (s.subject_id, m + 1, summary.eta[i, m])
            for i, s in enumerate(data)
            for m in range(spec.M)
        ],
    )
    _write_rows(
        out / "phi.csv",
        ["group", "state", "phi"],
        [
            (j + 1, m + 1, summary.phi[j, m])
            for j in range(spec.J)
            for m in range(spec.M)
        ],
    )
    print(
        f"converged={result.converged} in {result.n_iterations} iterations, "
        f"neg_loglik={result.neg_loglik:.3f}, bic={result.bic:.3f}"
    )
    return 0


def cmd_select(args) -> int:
    cfg = _load_config(args.config, SELECT_SCHEMA)
    settings = _solver_settings(cfg, args)
    states_grid = cfg.get("states_grid", [settings["states"]])
    hierarchies = cfg.get("hierarchies", [settings["hierarchy"]])
    data = read_cohort_csv(args.input, settings["grouping"])
    rows = []
    for M in states_grid:
        for hierarchy in hierarchies:
            s = dict(settings, states=M, hierarchy=hierarchy)
            result = fit(data, _spec_for(data, s), _fit_config(s))
            label = hierarchy if isinstance(hierarchy, str) else json.dumps(hierarchy)
            rows.append(
                [M, label, result.neg_loglik, result.bic, result.converged]
            )
    rows.sort(key=lambda r: r[3])
    out = _outdir(args)
    table = [r + [i == 0] for i, r in enumerate(rows)]
    _write_rows(
        out / "bic_table.csv",
        ["states", "hierarchy", "neg_loglik", "bic", "converged", "selected"],
        table,
    )
    print(f"minimum BIC: states={rows[0][0]}, hierarchy={rows[0][1]}, bic={rows[0][3]:.3f}")
    return 0


def cmd_bootstrap(args) -> int:
    cfg = _load_config(args.config, BOOTSTRAP_SCHEMA)
    settings = _solver_settings(cfg, args)
    B = args.bootstrap_reps if args.bootstrap_reps is not None else cfg.get("replicates", 500)
    levels = tuple(cfg.get("levels", [0.95, 0.99]))
    data = read_cohort_csv(args.input, settings["grouping"])
    spec = _spec_for(data, settings)
    config = _fit_config(settings)
    result = bootstrap(
        data, spec, config, B=B, levels=levels, workers=settings["workers"]
    )
    out = _outdir(args)
    write_json(result.to_json_dict(), out / "bootstrap.json")
    _write_rows(
        out / "bootstrap_ci.csv",
        ["group", "state", "estimate", "level", "lower", "upper", "se"],
        [
            [r["group"], r["state"], r["estimate"], r["level"], r["lower"], r["upper"], r["se"]]
            for r in result.tidy_rows()
        ],
    )
    print(f"{B} replicates done ({result.n_failed} failed)")
    return 0


def _simulate_from_fit(data, result, rng):
    """Counts simulated from the fitted model on each subject's own grid."""
    from .ctmc import sample_path

    sim_counts = []
    for s, theta in zip(data, result.theta_hat):
        nat = to_natural(theta, theta.M, theta.q)
        coeffs = EmissionCoeffs.from_natural(nat)
        path = sample_path(nat.Q, nat.pi, horizon=float(s.times[-1]) + 1.0, rng=rng)
        states = path.states_at(s.times)
        lam = np.array(
            [coeffs.lambdas(s.covariates[k])[states[k]] for k in range(s.n_obs)]
        )
        counts = rng.poisson(lam)
        s1 = states == 0
        if s1.any():
            deltas = np.array([coeffs.delta(s.covariates[k]) for k in np.flatnonzero(s1)])
            counts[np.flatnonzero(s1)[rng.random(int(s1.sum())) < deltas]] = 0
        sim_counts.append(counts)
    return np.concatenate(sim_counts)


def cmd_report(args) -> int:
    cfg = _load_config(args.config, REPORT_SCHEMA)
    result = fit_result_from_json_dict(read_json(args.fit))
    settings_grouping = "sex" if result.spec.J == 2 else "sex_age"
    data = read_cohort_csv(args.input, settings_grouping)
    by_id = {s.subject_id: s for s in data}
    data = [by_id[sid] for sid in result.spec.group_map]
    out = _outdir(args)

    summary = _posterior_tables(data, result)
    if args.bootstrap is not None:
        boot = read_json(args.bootstrap)
        rows = []
        for level, ci in sorted(boot["phi_ci"].items()):
            ci = np.asarray(ci)
            for j in range(result.spec.J):
                for m in range(result.spec.M):
                    rows.append(
                        [
                            j + 1,
                            m + 1,
                            summary.phi[j, m],
                            float(level),
                            ci[j, m, 0],
                            ci[j, m, 1],
                            np.asarray(boot["phi_se"])[j, m],
                        ]
                    )
        _write_rows(
            out / "phi_by_group.csv",
            ["group", "state", "estimate", "level", "lower", "upper", "se"],
            rows,
        )
    else:
        _write_rows(
            out / "phi_by_group.csv",
            ["group", "state", "estimate"],
            [
                [j + 1, m + 1, summary.phi[j, m]]
                for j in range(result.spec.J)
                for m in range(result.spec.M)
            ],
        )

    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    rng = np.random.default_rng(seed)
    step = cfg.get("quantile_probs_step", 0.01)
    passes = cfg.get("n_sim_passes", 1)
    probs = np.round(np.arange(step, 1.0 - step / 2, step), 10)
    observed = np.concatenate([s.counts for s in data])
    fitted = np.concatenate([_simulate_from_fit(data, result, rng) for _ in range(passes)])
    _write_rows(
        out / "quantile_table.csv",
        ["probability", "observed", "fitted"],
        [
            [p, np.quantile(observed, p), np.quantile(fitted, p)]
            for p in probs
        ],
    )

    (out / "report.gp").write_text(
        "set datafile separator ','\n"
        "set key left top\n"
        "set xlabel 'observed quantile'\n"
        "set ylabel 'fitted quantile'\n"
        "plot 'quantile_table.csv' using 2:3 skip 1 with points title 'model vs data', x with lines title ''\n"
    )
    print(f"wrote {out / 'phi_by_group.csv'} and {out / 'quantile_table.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hcthmm",
        description="Hierarchical continuous-time HMMs for zero-inflated activity counts",
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, input_required=True):
        sp.add_argument("--config", type=str, default=None, help="JSON config file")
        if input_required:
            sp.add_argument("--input", type=str, required=True, help="input CSV path")
        sp.add_argument("--output", type=str, required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)

    sp = sub.add_parser("simulate", help="generate a synthetic cohort CSV + truth JSON")
    common(sp, input_required=False)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("preprocess", help="clean raw minute-level activity CSV")
    common(sp)
    sp.set_defaults(func=cmd_preprocess)

    def fit_flags(sp):
        sp.add_argument("--hierarchy", type=str, default=None, choices=["I", "II", "III", "IV"])
        sp.add_argument("--states", type=int, default=None)
        sp.add_argument("--grouping", type=str, default=None, choices=["sex", "sex_age"])

    sp = sub.add_parser("fit", help="fit the model, write fit.json + eta/phi CSV")
    common(sp)
    fit_flags(sp)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("select", help="sweep (states, hierarchy) grid, write a BIC table")
    common(sp)
    fit_flags(sp)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("bootstrap", help="stratified bootstrap confidence intervals")
    common(sp)
    fit_flags(sp)
    sp.add_argument("--bootstrap-reps", type=int, default=None)
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("report", help="phi CI table and fitted-vs-observed quantile table")
    common(sp)
    sp.add_argument("--fit", type=str, required=True, help="fit.json from the fit subcommand")
    sp.add_argument("--bootstrap", type=str, default=None, help="bootstrap.json (optional)")
    sp.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HcthmmError as e:
        doc = {"error": {"type": type(e).__name__, "message": str(e)}}
        if isinstance(e, ConfigError):
            doc["error"]["field_path"] = e.field_path
        print(json.dumps(doc), file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(
            json.dumps({"error": {"type": type(e).__name__, "message": str(e)}}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
