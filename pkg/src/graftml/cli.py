"""Command-line pipeline: filter, synth, run, sweep.

Every command is driven by JSON config files and a mandatory seed, so any
published run can be reproduced byte for byte.  --threads changes wall time
only, never results.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forest as forest_mod
from . import kdri as kdri_mod
from . import metrics as metrics_mod
from . import survival as survival_mod
from .cohort import (
    Cohort,
    CohortError,
    DEFAULT_DATE_RANGE,
    SyntheticConfig,
    apply_filters,
    generate_synthetic_cohort,
    parse_cohort,
    write_cohort,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpecConfig:
    name: str
    kind: str  # "kdri" | "forest"
    coefficients_path: str | None = None
    n_trees: int = 1000
    mtry: int | None = None
    features: tuple[str, ...] | None = None  # None -> all predictors


@dataclass(frozen=True)
class RunConfig:
    models: tuple[ModelSpecConfig, ...]
    horizons: tuple[int, ...]
    seed: int
    input_path: str | None = None
    synthetic: SyntheticConfig | None = None
    k_folds: int = 10
    target_fnr: float = 0.10
    output_dir: str = "out"
    km_include_censored: bool = True
    date_range: tuple = DEFAULT_DATE_RANGE

    def __post_init__(self):
        if not self.models:
            raise ConfigError("config must list at least one model")
        if not self.horizons or any(h not in (12, 24, 36) for h in self.horizons):
            raise ConfigError("horizons must be a non-empty subset of {12, 24, 36}")
        if (self.input_path is None) == (self.synthetic is None):
            raise ConfigError("config needs exactly one of 'input' or 'synthetic'")
        names = [m.name for m in self.models]
        if len(names) != len(set(names)):
            raise ConfigError("model names must be unique")


def load_run_config(path, base_dir=None) -> RunConfig:
    with open(path) as fh:
        doc = json.load(fh)
    base = Path(base_dir) if base_dir else Path(path).parent

    if "seed" not in doc:
        raise ConfigError("config must set a seed (no wall-clock default)")

    models = []
    for m in doc.get("models", []):
        kind = m.get("type")
        if kind not in ("kdri", "forest"):
            raise ConfigError(f"model {m.get('name')!r}: type must be kdri or forest")
        if kind == "kdri" and "coefficients" not in m:
            raise ConfigError(f"model {m.get('name')!r}: kdri model needs a coefficients path")
        coeff = m.get("coefficients")
        if coeff is not None and not Path(coeff).is_absolute():
            coeff = str(base / coeff)
        models.append(ModelSpecConfig(
            name=m["name"], kind=kind, coefficients_path=coeff,
            n_trees=m.get("n_trees", 1000), mtry=m.get("mtry"),
            features=tuple(m["features"]) if "features" in m else None,
        ))

    synthetic = None
    input_path = doc.get("input")
    if input_path is not None and not Path(input_path).is_absolute():
        input_path = str(base / input_path)
    if "synthetic" in doc:
        syn_doc = doc["synthetic"]
        if isinstance(syn_doc, str):
            syn_path = syn_doc if Path(syn_doc).is_absolute() else str(base / syn_doc)
            synthetic = SyntheticConfig.from_file(syn_path)
        else:
            raise ConfigError("'synthetic' must be a path to a synthetic config file")

    date_range = DEFAULT_DATE_RANGE
    if "date_range" in doc:
        lo, hi = doc["date_range"]
        date_range = (datetime.date.fromisoformat(lo), datetime.date.fromisoformat(hi))

    return RunConfig(
        models=tuple(models),
        horizons=tuple(doc.get("horizons", [36])),
        seed=doc["seed"],
        input_path=input_path,
        synthetic=synthetic,
        k_folds=doc.get("k_folds", 10),
        target_fnr=doc.get("target_fnr", 0.10),
        output_dir=doc.get("output_dir", "out"),
        km_include_censored=doc.get("km_include_censored", True),
        date_range=date_range,
    )


def _model_spec(cfg: ModelSpecConfig, seed: int):
    if cfg.kind == "kdri":
        return metrics_mod.KdriSpec(coeffs=kdri_mod.load_coefficients(cfg.coefficients_path))
    features = cfg.features if cfg.features is not None else forest_mod.DEFAULT_FEATURES
    params = forest_mod.ForestParams(n_trees=cfg.n_trees, mtry=cfg.mtry, seed=seed)
    return metrics_mod.ForestSpec(params=params, features=features)


def _load_cohort(config: RunConfig) -> tuple[Cohort, object]:
    if config.synthetic is not None:
        cohort = generate_synthetic_cohort(config.synthetic, config.seed)
    else:
        cohort = parse_cohort(config.input_path)
    return apply_filters(cohort, config.date_range)


def _cm_dict(cm: metrics_mod.ConfusionMatrix) -> dict:
    return {"tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn}


def cmd_filter(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    date_range = (datetime.date.fromisoformat(args.date_start),
                  datetime.date.fromisoformat(args.date_end))
    cohort = parse_cohort(args.input)
    filtered, report = apply_filters(cohort, date_range)
    write_cohort(filtered, out_dir / "filtered.csv")
    report.to_csv(out_dir / "filter_report.csv")
    print(report.as_table())
    return 0


def cmd_synth(args) -> int:
    config = SyntheticConfig.from_file(args.config)
    cohort = generate_synthetic_cohort(config, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_cohort(cohort, args.out)
    print(f"wrote {len(cohort)} records to {args.out}")
    return 0


def run_pipeline(config: RunConfig, out_dir: Path, n_jobs: int = 1) -> dict:
    """Full evaluation pipeline; returns the summary document."""
    out_dir.mkdir(parents=True, exist_ok=True)
    cohort, filter_report = _load_cohort(config)
    manifest = []
    summary = {
        "seed": config.seed,
        "k_folds": config.k_folds,
        "target_fnr": config.target_fnr,
        "filter_report": {
            "initial": filter_report.initial_count,
            "final": filter_report.final_count,
            "counts": filter_report.counts,
        },
        "horizons": {},
    }

    for horizon in config.horizons:
        hkey = str(horizon)
        hres = {"models": {}, "delong": {}, "delta_tn": {}}
        preds_by_model = {}
        for mc in config.models:
            spec = _model_spec(mc, config.seed)
            preds, extended = metrics_mod.cross_validate(
                cohort, spec, horizon, k=config.k_folds, seed=config.seed,
                n_jobs=n_jobs, extended=True)
            preds_by_model[mc.name] = preds

            tag = f"{mc.name}_gf{horizon}"
            preds.to_csv(out_dir / f"preds_{tag}.csv")
            manifest.append(f"preds_{tag}.csv")
            roc = metrics_mod.roc_curve(preds)
            roc.to_csv(out_dir / f"roc_{tag}.csv")
            manifest.append(f"roc_{tag}.csv")

            threshold, sensitivity = metrics_mod.threshold_at_fnr(preds, config.target_fnr)
            cm = metrics_mod.confusion_at(preds, threshold)

            km_pop = extended if config.km_include_censored else preds
            grp_fail, grp_success = survival_mod.split_by_prediction(km_pop, threshold)
            logrank = None
            for grp, side in ((grp_fail, "pos"), (grp_success, "neg")):
                if len(grp):
                    survival_mod.km_estimate(grp).to_csv(out_dir / f"km_{tag}_{side}.csv")
                    manifest.append(f"km_{tag}_{side}.csv")
            if len(grp_fail) and len(grp_success):
                lr = survival_mod.log_rank(grp_fail, grp_success)
                logrank = {"chi_square": lr.chi_square, "p": lr.p,
                           "observed_pos": lr.observed_a, "expected_pos": lr.expected_a,
                           "observed_neg": lr.observed_b, "expected_neg": lr.expected_b}

            model_entry = {
                "auc": metrics_mod.auc(preds),
                "threshold": threshold,
                "sensitivity": sensitivity,
                "confusion": _cm_dict(cm),
                "log_rank": logrank,
            }
            if mc.kind == "forest":
                # Final model fit on all labeled records, for inspection/reuse.
                spec = _model_spec(mc, config.seed)
                final = _fit_full(cohort, spec, horizon, n_jobs)
                forest_mod.save_model(final, out_dir / f"model_{tag}.json")
                manifest.append(f"model_{tag}.json")
                model_entry["importance"] = [
                    [name, score] for name, score in forest_mod.variable_importance(final)
                ]
            hres["models"][mc.name] = model_entry

        names = [m.name for m in config.models]
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                res = metrics_mod.delong_test(preds_by_model[names[i]], preds_by_model[names[j]])
                hres["delong"][f"{names[i]}_vs_{names[j]}"] = {
                    "auc_a": res.auc_a, "auc_b": res.auc_b, "z": res.z, "p": res.p,
                }
        baseline = names[0]
        for other in names[1:]:
            delta = metrics_mod.compare_models_at_fnr(
                preds_by_model[baseline], preds_by_model[other], config.target_fnr)
            hres["delta_tn"][other] = {
                "baseline": baseline,
                "delta_tn": delta.delta_tn,
                "delta_fp": delta.delta_fp,
                "pct_tn": delta.pct_tn,
                "confusion_baseline": _cm_dict(delta.confusion_a),
                "confusion_model": _cm_dict(delta.confusion_b),
            }
        summary["horizons"][hkey] = hres

    summary["manifest"] = sorted(manifest)
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "summary.txt", "w") as fh:
        fh.write(_summary_table(summary))
    return summary


def _fit_full(cohort, spec: metrics_mod.ForestSpec, horizon: int, n_jobs: int):
    from .cohort import HorizonLabel, derive_label

    rows = []
    y = []
    for r in cohort.records:
        lab = derive_label(r, horizon)
        if lab is HorizonLabel.CENSORED:
            continue
        rows.append(r)
        y.append(1 if lab is HorizonLabel.POSITIVE else 0)
    X = forest_mod.feature_matrix(rows, spec.features)
    return forest_mod.train_forest(X, np.asarray(y), spec.params, spec.features, n_jobs=n_jobs)


def _summary_table(summary: dict) -> str:
    lines = []
    for horizon, hres in sorted(summary["horizons"].items(), key=lambda kv: int(kv[0])):
        lines.append(f"=== GF{horizon} ===")
        lines.append(f"{'model':<16}{'AUC':>8}{'thresh':>12}{'sens':>8}{'TN':>8}{'FP':>8}  log-rank p")
        for name, entry in hres["models"].items():
            cm = entry["confusion"]
            lr = entry["log_rank"]
            lrp = f"{lr['p']:.3g}" if lr else "n/a"
            lines.append(
                f"{name:<16}{entry['auc']:>8.4f}{entry['threshold']:>12.4f}"
                f"{entry['sensitivity']:>8.3f}{cm['tn']:>8}{cm['fp']:>8}  {lrp}"
            )
        for pair, res in hres["delong"].items():
            lines.append(f"DeLong {pair}: z={res['z']:.3f} p={res['p']:.3g}")
        for name, res in hres["delta_tn"].items():
            lines.append(
                f"dTN {name} vs {res['baseline']}: {res['delta_tn']:+d} ({res['pct_tn']:.1f}%)")
        lines.append("")
    return "\n".join(lines)


def cmd_run(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = RunConfig(**{**config.__dict__, "seed": args.seed})
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    run_pipeline(config, out_dir, n_jobs=args.threads)
    print((out_dir / "summary.txt").read_text())
    return 0


def cmd_sweep(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = RunConfig(**{**config.__dict__, "seed": args.seed})
    tree_counts = [int(t) for t in args.trees.split(",")]
    forest_cfgs = [m for m in config.models if m.kind == "forest"]
    if not forest_cfgs:
        raise ConfigError("sweep needs a forest model in the config")
    mc = forest_cfgs[0]
    horizon = config.horizons[0]

    cohort, _ = _load_cohort(config)
    out_dir = Path(args.out) if args.out else Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for n_trees in tree_counts:
        spec = _model_spec(ModelSpecConfig(
            name=mc.name, kind="forest", n_trees=n_trees, mtry=mc.mtry,
            features=mc.features), config.seed)
        preds = metrics_mod.cross_validate(
            cohort, spec, horizon, k=config.k_folds, seed=config.seed, n_jobs=args.threads)
        rows.append((n_trees, metrics_mod.auc(preds)))
        print(f"n_trees={n_trees}: AUC={rows[-1][1]:.4f}")
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write("n_trees,auc\n")
        for n_trees, value in rows:
            fh.write(f"{n_trees},{value!r}\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="graftml",
                                     description="Graft-survival prediction pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p_filter = sub.add_parser("filter", help="validate and filter a cohort CSV")
    p_filter.add_argument("--input", required=True)
    p_filter.add_argument("--out", required=True)
    p_filter.add_argument("--date-start", default=DEFAULT_DATE_RANGE[0].isoformat())
    p_filter.add_argument("--date-end", default=DEFAULT_DATE_RANGE[1].isoformat())
    p_filter.set_defaults(func=cmd_filter)

    p_synth = sub.add_parser("synth", help="generate a synthetic cohort CSV")
    p_synth.add_argument("--config", required=True)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="train, cross-validate, and evaluate models")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="override the config output dir")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="AUC vs number of trees, shared folds")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--trees", required=True, help="comma-separated tree counts")
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--threads", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CohortError, ValueError, OSError) as exc:
        print(f"graftml {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
