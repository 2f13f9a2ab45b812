"""Command-line interface.

Every command writes its outputs plus ``manifest.json`` into ``--out``.
Settings are resolved as flags > ``--config`` JSON > built-in defaults.

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numerical
failure. Errors are reported on stderr as one JSON object with a
``category`` field.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as lio
from ._parallel import THREADS_ENV, default_threads
from .bootstrap import bootstrap_ate
from .errors import DataValidationError, LatentATEError
from .estimators import ALGORITHMS, DATA_ALGORITHMS, estimate
from .factorization import FitConfig, nmf_fit
from .imputation import assemble_potential_matrices, impute_counterfactuals
from .simulation import (
    MUTATION_TYPES,
    SimConfig,
    default_sim_config,
    generate_dataset,
    interference_report,
)

EXIT_USAGE = 2
EXIT_CODES = {"data_validation": 3, "numerical_failure": 4, "error": 4}

DEFAULTS = {
    "seed": 0,
    "n_runs": 5,
    "max_iterations": 2000,
    "rel_tolerance": 1e-6,
    "split_p": 0.5,
    "B": 50,
    "level": 0.95,
    "n": 100,
    "pi": 0.2,
    "pi_prime": 0.8,
    "datasets": 1,
    "effect": 2000.0,
    "R": 5,
    "algorithms": "oracle,all_data,impute_stabilize",
}

# Settings that name input files; recorded in the manifest by digest.
_INPUT_KEYS = ("counts", "treatment", "reference", "pool", "signatures")


def _common(p: argparse.ArgumentParser, fit: bool = True):
    p.add_argument("--out", help="output directory (created if missing)")
    p.add_argument("--config", help="JSON file of settings; flags take precedence")
    p.add_argument("--seed", type=int)
    if fit:
        p.add_argument("--n-runs", dest="n_runs", type=int, help="NMF restarts (default 5)")
        p.add_argument("--max-iterations", dest="max_iterations", type=int)
        p.add_argument("--rel-tolerance", dest="rel_tolerance", type=float)


def _data_inputs(p, treatment=True):
    p.add_argument("--counts", help="D x N count matrix CSV (header = subjects)")
    if treatment:
        p.add_argument("--treatment", help="CSV with columns subject,treatment")


def _sim_inputs(p):
    p.add_argument("--n", type=int, help="subjects per dataset")
    p.add_argument("--pi", type=float, help="treatment probability")
    p.add_argument("--datasets", type=int, help="number of datasets")
    p.add_argument("--effect", type=float, help="true effect on the last factor")
    p.add_argument("--pool", help="CSV pool of latent vectors (K columns)")
    p.add_argument("--signatures", help="D x K factor matrix CSV; columns sum to 1")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latent-ate",
        description="Causal effects on latent outcomes learned by Poisson NMF.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help=f"worker processes for replicates and realizations (default ${THREADS_ENV} or 1)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="Poisson NMF of a count matrix")
    _data_inputs(p, treatment=False)
    p.add_argument("--k", type=int)
    _common(p)

    p = sub.add_parser("impute", help="impute unobserved potential count data")
    _data_inputs(p)
    _common(p, fit=False)

    p = sub.add_parser("estimate", help="ATE on learned latent outcomes")
    _data_inputs(p)
    p.add_argument("--algorithm", choices=DATA_ALGORITHMS)
    p.add_argument("--k", type=int)
    p.add_argument("--split-p", dest="split_p", type=float, help="random_split subset proportion")
    p.add_argument("--reference", help="D x K factor matrix to align factors to")
    _common(p)

    p = sub.add_parser("bootstrap", help="bootstrap confidence intervals")
    _data_inputs(p)
    p.add_argument("--algorithm", choices=DATA_ALGORITHMS)
    p.add_argument("--k", type=int)
    p.add_argument("--B", type=int, help="bootstrap replicates (default 50)")
    p.add_argument("--level", type=float, help="confidence level (default 0.95)")
    p.add_argument("--split-p", dest="split_p", type=float)
    p.add_argument("--reference", help="align replicates to this D x K matrix instead of a consensus")
    p.add_argument("--replicates", action="store_true", default=None, help="also write replicates.csv")
    _common(p)

    p = sub.add_parser("simulate", help="generate synthetic cohorts")
    _sim_inputs(p)
    _common(p, fit=False)

    p = sub.add_parser("interference", help="learning-induced indirect effects on synthetic cohorts")
    _sim_inputs(p)
    p.add_argument("--pi-prime", dest="pi_prime", type=float)
    p.add_argument("--R", type=int, help="treatment realizations per assignment probability")
    p.add_argument("--k", type=int, help="rank (default: number of true factors)")
    p.add_argument(
        "--algorithms",
        help=f"comma-separated subset of {','.join(ALGORITHMS)} (default oracle,all_data,impute_stabilize)",
    )
    _common(p)
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataValidationError(f"{path}: no such config file")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(loaded, dict):
            raise DataValidationError(f"{path}: config must be a JSON object")
        settings.update({k.replace("-", "_"): v for k, v in loaded.items()})
    for key, value in vars(args).items():
        if key in ("config", "command", "threads") or value is None:
            continue
        settings[key] = value
    return settings


def _require(parser, settings, *keys):
    for key in keys:
        if settings.get(key) in (None, ""):
            parser.error(f"missing required setting --{key.replace('_', '-')}")


def _fit_cfg(s) -> FitConfig:
    return FitConfig(
        n_runs=int(s["n_runs"]),
        max_iterations=int(s["max_iterations"]),
        rel_tolerance=float(s["rel_tolerance"]),
        seed=int(s["seed"]),
    )


def _factor_labels(k, reference_labels=None):
    return tuple(reference_labels) if reference_labels else tuple(f"f{j + 1}" for j in range(k))


def _load_reference(path):
    values, rows, cols = lio.load_matrix(path)
    if not np.isfinite(values).all() or (values < 0).any():
        raise DataValidationError(f"{path}: reference factors must be finite and nonnegative")
    return values, rows, cols


def _load_data(s):
    y = lio.load_count_matrix(s["counts"])
    t = lio.load_treatment(s["treatment"], y.col_labels) if s.get("treatment") else None
    return y, t


def _write_manifest(out: Path, command, settings, used_keys):
    params = {k: settings[k] for k in sorted(used_keys) if k in settings and k not in _INPUT_KEYS}
    inputs = {k: settings[k] for k in _INPUT_KEYS if k in used_keys and settings.get(k)}
    lio.write_json(out / "manifest.json", lio.build_manifest(command, params, inputs, __version__))


# -- commands ------------------------------------------------------------------------------


def cmd_fit(s, out: Path):
    y, _ = _load_data({"counts": s["counts"]})
    cfg = _fit_cfg(s)
    model = nmf_fit(y, int(s["k"]), cfg)
    labels = _factor_labels(model.k)
    lio.save_matrix(out / "lambda.csv", model.lambda_, y.row_labels, labels)
    lio.save_matrix(out / "contributions.csv", model.contributions, labels, y.col_labels)
    lio.write_json(out / "fit.json", {"kl": model.kl_at_convergence, "n_iterations": model.n_iterations_used})
    return ("counts", "k", "seed", "n_runs", "max_iterations", "rel_tolerance")


def cmd_impute(s, out: Path):
    y, t = _load_data(s)
    imp = impute_counterfactuals(y, t)
    y0, y1 = assemble_potential_matrices(y, imp, t)
    lio.save_matrix(out / "y0.csv", y0.values, y.row_labels, y.col_labels)
    lio.save_matrix(out / "y1.csv", y1.values, y.row_labels, y.col_labels)
    lio.save_matrix(out / "psi_vst.csv", imp.psi_vst, y.row_labels, ("psi_vst",))
    lio.write_json(
        out / "imputation.json",
        {"variance_constant": imp.variance_constant, "n_floored": imp.n_floored, "n1": t.n1, "n0": t.n0},
    )
    return ("counts", "treatment")


def _aligned_estimate(s, y, t, cfg):
    kw = {"split_p": float(s["split_p"])} if s["algorithm"] == "random_split" else {}
    est = estimate(s["algorithm"], y, t, int(s["k"]), cfg, **kw)
    labels = None
    if s.get("reference"):
        ref, rows, cols = _load_reference(s["reference"])
        if ref.shape != est.factor_model.lambda_.shape:
            raise DataValidationError(
                f"reference is {ref.shape[0]} x {ref.shape[1]}, fitted factors are "
                f"{est.factor_model.lambda_.shape[0]} x {est.factor_model.lambda_.shape[1]}"
            )
        est, _ = est.aligned_to(ref)
        labels = cols
    return est, _factor_labels(est.psi.size, labels)


def cmd_estimate(s, out: Path):
    y, t = _load_data(s)
    cfg = _fit_cfg(s)
    est, labels = _aligned_estimate(s, y, t, cfg)
    lio.write_table(out / "psi.csv", ("factor", "psi"), zip(labels, est.psi))
    lio.save_matrix(out / "lambda.csv", est.factor_model.lambda_, y.row_labels, labels)
    cov = est.outcomes.covered_subjects
    lio.save_matrix(
        out / "contributions.csv", est.outcomes.observed_arm, labels, tuple(y.col_labels[i] for i in cov)
    )
    used = ["counts", "treatment", "algorithm", "k", "seed", "n_runs", "max_iterations", "rel_tolerance", "reference"]
    if s["algorithm"] == "random_split":
        used.append("split_p")
    return used


def cmd_bootstrap(s, out: Path, threads):
    y, t = _load_data(s)
    cfg = _fit_cfg(s)
    kw = {"split_p": float(s["split_p"])} if s["algorithm"] == "random_split" else {}
    ref_labels = None
    reference = None
    if s.get("reference"):
        reference, _, ref_labels = _load_reference(s["reference"])
    res = bootstrap_ate(
        y, t, s["algorithm"], int(s["k"]), int(s["B"]), cfg,
        reference=reference, level=float(s["level"]), threads=threads, **kw,
    )
    labels = _factor_labels(res.psi_mean.size, ref_labels)
    lio.write_table(
        out / "psi.csv",
        ("factor", "psi_mean", "ci_lower", "ci_upper"),
        zip(labels, res.psi_mean, res.ci_lower, res.ci_upper),
    )
    lio.save_matrix(out / "lambda.csv", res.consensus_lambda, y.row_labels, labels)
    lio.write_json(
        out / "bootstrap.json",
        {
            "B": int(s["B"]),
            "n_replicates": res.n_replicates,
            "n_failed_replicates": res.n_failed_replicates,
            "failures": list(res.failures),
            "level": res.level,
        },
    )
    if s.get("replicates"):
        rows = []
        for b, psi, sim in zip(res.replicate_ids, res.replicate_psis, res.similarities):
            rows += [(b, labels[j], psi[j], sim) for j in range(psi.size)]
        lio.write_table(out / "replicates.csv", ("replicate", "factor", "psi", "alignment_similarity"), rows)
    used = ["counts", "treatment", "algorithm", "k", "B", "level", "seed", "n_runs", "max_iterations",
            "rel_tolerance", "reference", "replicates"]
    if s["algorithm"] == "random_split":
        used.append("split_p")
    return used


def _sim_config(s) -> SimConfig:
    base = default_sim_config(n=int(s["n"]), pi=float(s["pi"]), seed=int(s["seed"]), effect=float(s["effect"]))
    lam = base.lambda_true
    pool = base.sample_pool
    if s.get("signatures"):
        lam, _, _ = _load_reference(s["signatures"])
    if s.get("pool"):
        pool = lio.load_pool(s["pool"])
    k = lam.shape[1]
    if k != base.k:
        psi = np.zeros(k)
        psi[-1] = float(s["effect"])
        sd = np.full(k, np.sqrt(10.0))
        sd1 = sd.copy()
        sd1[-1] = np.sqrt(20.0)
        return SimConfig(lam, pool, psi, sd, sd1, pi=float(s["pi"]), n=int(s["n"]), seed=int(s["seed"]))
    return SimConfig(
        lam, pool, base.psi_true, base.sigma0, base.sigma1, pi=float(s["pi"]), n=int(s["n"]), seed=int(s["seed"])
    )


def _row_labels(d):
    return MUTATION_TYPES if d == 96 else tuple(f"v{i + 1}" for i in range(d))


def cmd_simulate(s, out: Path):
    cfg = _sim_config(s)
    rows = _row_labels(cfg.d)
    labels = _factor_labels(cfg.k)
    lio.save_matrix(out / "lambda_true.csv", cfg.lambda_true, rows, labels)
    for i in range(int(s["datasets"])):
        ds = generate_dataset(cfg, i)
        subjects = ds.y.col_labels
        lio.save_matrix(out / f"counts_{i}.csv", ds.y.values, rows, subjects)
        lio.save_treatment(out / f"treatment_{i}.csv", ds.t, subjects)
        lio.save_matrix(out / f"l0_{i}.csv", ds.l0, labels, subjects)
        lio.save_matrix(out / f"l1_{i}.csv", ds.l1, labels, subjects)
    return ("n", "pi", "datasets", "effect", "seed", "pool", "signatures")


def cmd_interference(s, out: Path, threads):
    cfg = _sim_config(s)
    algorithms = [a.strip() for a in str(s["algorithms"]).split(",") if a.strip()]
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if unknown or not algorithms:
        raise _UsageError(f"unknown algorithm {unknown[0]!r}" if unknown else "no algorithms given")
    k = int(s.get("k") or cfg.k)
    fit_cfg = _fit_cfg(s)
    labels = _factor_labels(cfg.k)
    pi, pi_prime = float(s["pi"]), float(s["pi_prime"])
    paie_rows, abs_rows, iallo_rows = [], [], []
    for i in range(int(s["datasets"])):
        ds = generate_dataset(cfg, i)
        subjects = ds.y.col_labels
        for a in algorithms:
            rep = interference_report(
                cfg, ds, a, int(s["R"]), k, fit_cfg.with_seed(fit_cfg.seed + i),
                pi=pi, pi_prime=pi_prime, dataset_index=i, threads=threads,
            )
            paie_rows += [(i, a, labels[j], "liPAIE", v) for j, v in enumerate(rep.li_paie)]
            abs_rows += [(i, a, subjects[n], "scaled_total_abs", v) for n, v in enumerate(rep.scaled_total_abs)]
            for p in (pi, pi_prime):
                table = rep.iallo_by_pi[p].untreated
                metric = f"IALLO0_pi={lio.format_value(p)}"
                for n in range(table.shape[1]):
                    iallo_rows += [(i, a, subjects[n], labels[j], metric, table[j, n]) for j in range(table.shape[0])]
    lio.write_table(out / "liPAIE.csv", ("dataset", "algorithm", "factor", "metric", "value"), paie_rows)
    lio.write_table(out / "scaled_abs.csv", ("dataset", "algorithm", "individual", "metric", "value"), abs_rows)
    lio.write_table(out / "iallo.csv", ("dataset", "algorithm", "individual", "factor", "metric", "value"), iallo_rows)
    return ("n", "pi", "pi_prime", "datasets", "effect", "R", "k", "algorithms", "seed", "n_runs",
            "max_iterations", "rel_tolerance", "pool", "signatures")


class _UsageError(Exception):
    pass


_REQUIRED = {
    "fit": ("counts", "k", "out"),
    "impute": ("counts", "treatment", "out"),
    "estimate": ("counts", "treatment", "algorithm", "k", "out"),
    "bootstrap": ("counts", "treatment", "algorithm", "k", "out"),
    "simulate": ("out",),
    "interference": ("out",),
}


def _report(category: str, message: str):
    sys.stderr.write(json.dumps({"category": category, "message": message}, sort_keys=True) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads if args.threads is not None else default_threads()
    try:
        s = resolve_settings(args)
        _require(parser, s, *_REQUIRED[args.command])
        if s.get("algorithm") is not None and args.command in ("estimate", "bootstrap") and s["algorithm"] not in DATA_ALGORITHMS:
            parser.error(f"unknown algorithm {s['algorithm']!r}; choose from {', '.join(DATA_ALGORITHMS)}")
        out = Path(s["out"])
        out.mkdir(parents=True, exist_ok=True)
        handler = {
            "fit": lambda: cmd_fit(s, out),
            "impute": lambda: cmd_impute(s, out),
            "estimate": lambda: cmd_estimate(s, out),
            "bootstrap": lambda: cmd_bootstrap(s, out, threads),
            "simulate": lambda: cmd_simulate(s, out),
            "interference": lambda: cmd_interference(s, out, threads),
        }[args.command]
        used = handler()
        _write_manifest(out, args.command, s, used)
    except _UsageError as exc:
        _report("usage", str(exc))
        return EXIT_USAGE
    except LatentATEError as exc:
        _report(exc.category, str(exc))
        return EXIT_CODES.get(exc.category, 4)
    except (TypeError, ValueError) as exc:
        # Malformed config values (e.g. a string where a number belongs).
        _report("data_validation", f"invalid setting: {exc}")
        return EXIT_CODES["data_validation"]
    except OSError as exc:
        _report("data_validation", f"{exc.filename or ''}: {exc.strerror or exc}")
        return EXIT_CODES["data_validation"]
    return 0


def main_entry():
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
