"""Command-line entry point.

Subcommands cover the full pipeline: `synth` writes a synthetic cohort,
`impute` fits an imputer over a cohort, `train` fits one model
configuration, `predict` scores a cohort with a saved model, `cv` runs the
cross-validated grid search and `report` regenerates the report CSVs from
a stored CV result. Every run writes its effective configuration (all
defaults materialized) and seed next to its outputs, and identical
configurations produce byte-identical output files.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, modelio, solver
from .cohort import assemble_design, extract_windows, imputed_copy, load_cohort, write_cohort
from .errors import DataError, NumericalError, UnimputedSampleError
from .evaluation import Grid, cross_validate, fit_method, grid_report, write_csv, write_report_csvs
from .imputation import build_imputation_matrix, cohort_matrix, fill_windows, make_imputer
from .synthetic import SyntheticSpec, generate_cohort


class UsageError(Exception):
    pass


DEFAULTS = {
    "synth": {
        "out": None, "seed": 0, "n_subjects": 60, "days_per_subject": 8, "num_vars": 10,
        "t_star": 5, "true_rank": 2, "noise_sigma": 1.0, "censor_horizon": 21.0,
        "missing_rate": 0.1, "latent_rank": 3, "round_onsets": False,
    },
    "impute": {
        "observations": None, "outcomes": None, "dictionary": None, "out": None,
        "imputer": "bmc", "imputer_rank": 3, "knn_k": 5, "seed": 0,
    },
    "train": {
        "observations": None, "outcomes": None, "dictionary": None, "out": None,
        "T": 5, "stride": 1, "horizon": 21.0, "imputer": "bmc", "imputer_rank": 3, "knn_k": 5,
        "method": "censored_lowrank", "rank": 2, "lambda": 0.05,
        "step_policy": "backtracking", "eta": None, "tol": 1e-4, "max_iter": 500,
        "precondition": True, "seed": 0,
    },
    "predict": {
        "observations": None, "outcomes": None, "dictionary": None, "model": None, "out": None,
        "stride": 1, "horizon": 21.0, "imputer_model": None, "seed": 0,
    },
    "cv": {
        "observations": None, "outcomes": None, "dictionary": None, "out": None,
        "durations": "3,4,5,6", "ranks": "2,3", "lambdas": "0.01,0.05,0.1",
        "methods": "censored_lowrank", "imputer": "bmc", "imputer_rank": 3, "knn_k": 5,
        "k": 5, "split_unit": "sample", "stride": 1, "horizon": 21.0,
        "step_policy": "backtracking", "eta": None, "tol": 1e-4, "max_iter": 500,
        "precondition": True, "jobs": 1, "seed": 0,
    },
    "report": {"cv_report": None, "out": None, "seed": 0},
}

REQUIRED = {
    "synth": ["out"],
    "impute": ["observations", "outcomes", "dictionary", "out"],
    "train": ["observations", "outcomes", "dictionary", "out"],
    "predict": ["observations", "outcomes", "dictionary", "model", "out"],
    "cv": ["observations", "outcomes", "dictionary", "out"],
    "report": ["cv_report", "out"],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="cenrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.error = parser.error
        p.add_argument("--config", help="JSON config file; flags override its keys")
        return p

    p = add("synth", "write a synthetic cohort with planted structure")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-subjects", type=int)
    p.add_argument("--days-per-subject", type=int)
    p.add_argument("--num-vars", type=int)
    p.add_argument("--T-star", dest="t_star", type=int)
    p.add_argument("--true-rank", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--censor-horizon", type=float)
    p.add_argument("--missing-rate", type=float)
    p.add_argument("--latent-rank", type=int)
    p.add_argument("--round-onsets", action="store_true", default=None)

    def add_cohort_args(p):
        p.add_argument("--observations")
        p.add_argument("--outcomes")
        p.add_argument("--dictionary")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)

    p = add("impute", "fit an imputer on a cohort and write the completed matrix")
    add_cohort_args(p)
    p.add_argument("--imputer", choices=["bmc", "mean", "knn"])
    p.add_argument("--imputer-rank", type=int)
    p.add_argument("--knn-k", type=int)

    p = add("train", "fit one model configuration and save it")
    add_cohort_args(p)
    p.add_argument("--T", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--imputer", choices=["bmc", "mean", "knn"])
    p.add_argument("--imputer-rank", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--method", choices=list(evaluation.METHODS))
    p.add_argument("--rank", type=int)
    p.add_argument("--lambda", dest="lambda", type=float)
    p.add_argument("--step-policy", choices=["backtracking", "fixed"])
    p.add_argument("--eta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--no-precondition", dest="precondition", action="store_false", default=None)

    p = add("predict", "score a cohort with a saved model")
    add_cohort_args(p)
    p.add_argument("--model")
    p.add_argument("--stride", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--imputer-model")

    p = add("cv", "cross-validated grid search over duration, rank and lambda")
    add_cohort_args(p)
    p.add_argument("--durations")
    p.add_argument("--ranks")
    p.add_argument("--lambdas")
    p.add_argument("--methods")
    p.add_argument("--imputer", choices=["bmc", "mean", "knn"])
    p.add_argument("--imputer-rank", type=int)
    p.add_argument("--knn-k", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--split-unit", choices=["sample", "subject"])
    p.add_argument("--stride", type=int)
    p.add_argument("--horizon", type=float)
    p.add_argument("--step-policy", choices=["backtracking", "fixed"])
    p.add_argument("--eta", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--no-precondition", dest="precondition", action="store_false", default=None)
    p.add_argument("--jobs", type=int)

    p = add("report", "regenerate report CSVs from a stored CV result")
    p.add_argument("--cv-report")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    return parser


def _merge_config(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError(f"config {args.config} must be a flat JSON object")
        unknown = sorted(set(file_cfg) - set(cfg))
        if unknown:
            raise UsageError(f"config {args.config}: unknown keys for {command!r}: {unknown}")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"{command}: missing required options: {', '.join('--' + m.replace('_', '-') for m in missing)}")
    return cfg


def _write_effective_config(out_dir: Path, command: str, cfg: dict):
    doc = {"command": command, **cfg}
    with open(out_dir / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _int_list(text, name):
    try:
        return [int(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"{name} must be a comma-separated list of integers: {text!r}") from exc


def _float_list(text, name):
    try:
        return [float(v) for v in str(text).split(",") if v != ""]
    except ValueError as exc:
        raise UsageError(f"{name} must be a comma-separated list of numbers: {text!r}") from exc


def _load_inputs(cfg):
    return load_cohort(cfg["observations"], cfg["outcomes"], cfg["dictionary"])


def _make_imputer(cfg):
    name = cfg["imputer"]
    if name == "bmc":
        return make_imputer("bmc", rank=cfg["imputer_rank"])
    if name == "knn":
        return make_imputer("knn", k=cfg["knn_k"])
    return make_imputer("mean")


def _solver_options(cfg) -> solver.SolverOptions:
    return solver.SolverOptions(
        step_policy=cfg["step_policy"],
        eta=cfg["eta"],
        tol=cfg["tol"],
        max_iter=cfg["max_iter"],
        precondition=cfg["precondition"],
        seed=cfg["seed"],
    )


def _cmd_synth(cfg, out_dir: Path):
    spec = SyntheticSpec(
        n_subjects=cfg["n_subjects"],
        days_per_subject=cfg["days_per_subject"],
        P=cfg["num_vars"],
        T_star=cfg["t_star"],
        true_rank=cfg["true_rank"],
        noise_sigma=cfg["noise_sigma"],
        censor_horizon=cfg["censor_horizon"],
        missing_rate=cfg["missing_rate"],
        latent_rank=cfg["latent_rank"],
        seed=cfg["seed"],
        round_onsets=cfg["round_onsets"],
    )
    cohort, truth = generate_cohort(spec)
    write_cohort(cohort, out_dir / "observations.csv", out_dir / "outcomes.csv", out_dir / "variables.txt")
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "b_star": truth.b_star,
                "w_star": [float(v) for v in truth.w_star.ravel()],
                "T_star": spec.T_star,
                "P": spec.P,
            },
            fh, indent=1, sort_keys=True,
        )
        fh.write("\n")
    n_event = sum(1 for s in cohort.subjects if hasattr(s.outcome, "onset_day"))
    print(f"wrote cohort with {len(cohort.subjects)} subjects ({n_event} with events) to {out_dir}")


def _cmd_impute(cfg, out_dir: Path):
    cohort = _load_inputs(cfg)
    matrix = cohort_matrix(cohort)
    imputer = _make_imputer(cfg).fit(matrix)
    header = ["subject_id", "day"] + cohort.variables
    rows = [
        [sid, day] + ["%.17g" % v for v in imputer.completed[i]]
        for i, (sid, day) in enumerate(matrix.row_index)
    ]
    write_csv(out_dir / "completed_matrix.csv", header, rows)
    modelio.save_imputer(out_dir / "imputer_model.json", imputer, cohort.variables)
    print(f"imputed {int((~matrix.mask).sum())} missing cells over {matrix.X.shape[0]} rows")


def _train_windows(cfg, cohort):
    windows = extract_windows(cohort, cfg["T"], stride=cfg["stride"], horizon=cfg["horizon"])
    if not windows:
        raise DataError(f"no windows of length {cfg['T']} could be extracted")
    matrix = build_imputation_matrix(windows)
    imputer = _make_imputer(cfg).fit(matrix)
    filled = fill_windows(windows, imputer.completed, matrix.row_index)
    return windows, filled, imputer


def _cmd_train(cfg, out_dir: Path):
    cohort = _load_inputs(cfg)
    _, filled, imputer = _train_windows(cfg, cohort)
    design = assemble_design(filled)
    method = cfg["method"]
    if method == "censored_lowrank":
        params, report = solver.fit_pgd(design, cfg["lambda"], cfg["rank"], _solver_options(cfg))
        modelio.save_model(out_dir / "model.json", params, cohort.variables, report)
        model = params
        print(f"fit converged={report.converged} iterations={report.iterations} "
              f"objective={report.final_objective:.6g} rank_w={report.rank_w}")
    else:
        model = fit_method(design, method, cfg["rank"], cfg["lambda"], _solver_options(cfg))
        modelio.save_model(out_dir / "model.json", model, cohort.variables, window_length=cfg["T"])
        print(f"fit {method} on {design.n_complete} complete / {design.n_censored} censored samples")
    modelio.save_imputer(out_dir / "imputer_model.json", imputer, cohort.variables)
    w = model.w if hasattr(model, "w") else model.w_vec.reshape(cfg["T"], -1)
    ranked = evaluation.coefficient_report(
        solver.ModelParams(w, 0.0, cfg["rank"], cfg["lambda"]), cohort.variables, top_n=w.size
    )
    evaluation.write_coefficients_csv(out_dir / "coefficients.csv", ranked)
    edges, comp, cen = evaluation.onset_distribution(model, filled, bins=20)
    evaluation.write_onset_hist_csv(out_dir / "onset_hist.csv", edges, comp, cen)


def _cmd_predict(cfg, out_dir: Path):
    cohort = _load_inputs(cfg)
    model, meta = modelio.load_model(cfg["model"])
    T = meta.get("window_length") or meta.get("T")
    if T is None:
        raise DataError(f"{cfg['model']}: model file does not record the window length")
    windows = extract_windows(cohort, int(T), stride=cfg["stride"], horizon=cfg["horizon"])
    if not windows:
        raise DataError(f"no windows of length {T} could be extracted")
    if cfg["imputer_model"]:
        imputer = modelio.load_imputer(cfg["imputer_model"])
        filled = []
        for w in windows:
            x = np.vstack([imputer.transform_row(w.x[t], w.x_mask[t]) for t in range(w.x.shape[0])])
            filled.append(imputed_copy(w, x))
        windows = filled
    elif any(not w.x_mask.all() for w in windows):
        raise UnimputedSampleError("cohort has missing cells; pass --imputer-model to fill them")
    preds = evaluation.predict_windows(model, windows)
    rows = [
        [w.subject_id, w.window_end_day, int(w.censored), "%.17g" % w.y, "%.17g" % p]
        for w, p in zip(windows, preds)
    ]
    write_csv(out_dir / "predictions.csv", ["subject_id", "window_end_day", "censored", "y", "prediction"], rows)
    edges, comp, cen = evaluation.onset_distribution(model, windows, bins=20)
    evaluation.write_onset_hist_csv(out_dir / "onset_hist.csv", edges, comp, cen)
    print(f"wrote {len(rows)} predictions")


def _cmd_cv(cfg, out_dir: Path):
    cohort = _load_inputs(cfg)
    grid = Grid(
        durations=_int_list(cfg["durations"], "durations"),
        ranks=_int_list(cfg["ranks"], "ranks"),
        lambdas=_float_list(cfg["lambdas"], "lambdas"),
    )
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    report = cross_validate(
        cohort, grid, methods, _make_imputer(cfg),
        k=cfg["k"], split_unit=cfg["split_unit"], seed=cfg["seed"],
        stride=cfg["stride"], horizon=cfg["horizon"],
        solver_options=_solver_options(cfg), n_jobs=cfg["jobs"],
    )
    evaluation.save_cv_report(report, out_dir / "cv_report.json")
    gr = grid_report(report)
    write_report_csvs(gr, report.k, out_dir)
    best = gr.best
    print(f"best: duration={best.duration} rank={best.rank} lambda={best.lambda_:g} "
          f"method={best.method} mean_mae={best.mean_mae:.6g}")


def _cmd_report(cfg, out_dir: Path):
    report = evaluation.load_cv_report(cfg["cv_report"])
    gr = grid_report(report)
    write_report_csvs(gr, report.k, out_dir)
    print(f"regenerated report CSVs for {len(report.entries)} grid entries")


COMMANDS = {
    "synth": _cmd_synth,
    "impute": _cmd_impute,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "cv": _cmd_cv,
    "report": _cmd_report,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required (synth, impute, train, predict, cv, report)")
        cfg = _merge_config(args.command, args)
        out_dir = Path(cfg["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_effective_config(out_dir, args.command, cfg)
        COMMANDS[args.command](cfg, out_dir)
        return 0
    except (UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def main(argv=None) -> None:
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
