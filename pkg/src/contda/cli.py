"""Command-line entry point: validated JSON run configs, artifact emission,
strategy comparison tables, and dataset export.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 runtime
numeric failure.
"""

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from . import datagen, harness
from .errors import ContdaError, ContractViolationError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_PLAN_FIELDS = {
    "strategy": str,
    "lambda_source": float, "lambda_memory": float,
    "pretrain_epochs": int, "warm_epochs": int, "epochs_per_domain": int,
    "batch_size": int,
    "ratio_source": float, "ratio_memory": float, "ratio_target": float,
    "lr": float, "pretrain_lr": float,
    "hidden_dim": int, "proj_hidden_dim": int, "embed_dim": int,
    "temperature": float, "negatives": int,
    "bank_momentum": float, "memory_capacity": int,
}
_TOP_FIELDS = {"preset": str, "dataset": str, "output_dir": str,
               "seed": int, "seeds": list, "diagnostics": str}
_REQUIRED = ("strategy", "output_dir")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    known = dict(_PLAN_FIELDS)
    known.update(_TOP_FIELDS)
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for name in _REQUIRED:
        if name not in raw:
            raise ConfigError(f"missing required field: {name}")
    if ("preset" in raw) == ("dataset" in raw):
        raise ConfigError("missing required field: exactly one of preset or dataset")
    if ("seed" in raw) == ("seeds" in raw):
        raise ConfigError("missing required field: exactly one of seed or seeds")

    cfg = {}
    for key, value in raw.items():
        want = known[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if want is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"field {key} must be an integer")
        if not isinstance(value, want):
            raise ConfigError(f"field {key} must be of type {want.__name__}")
        cfg[key] = value
    if "seeds" in cfg:
        if not cfg["seeds"] or not all(
                isinstance(s, int) and not isinstance(s, bool) for s in cfg["seeds"]):
            raise ConfigError("field seeds must be a non-empty list of integers")
    if cfg.get("diagnostics", "full") not in ("full", "none"):
        raise ConfigError("field diagnostics must be 'full' or 'none'")
    if "preset" in cfg and cfg["preset"] not in datagen.PRESETS:
        raise ConfigError(f"unknown preset {cfg['preset']!r}")
    # settings that only the plan can judge (strategy names, ratio sums,
    # batch minima) are still configuration problems, not runtime ones
    try:
        harness.AdaptationPlan(seed=0, **{k: cfg[k] for k in _PLAN_FIELDS
                                          if k in cfg})
    except ContractViolationError as exc:
        raise ConfigError(f"invalid plan settings: {exc}") from exc
    return cfg


def derive_seeds(root: int):
    """Distinct data and training seeds from one root seed."""
    rng = np.random.default_rng(np.random.SeedSequence(root))
    data_seed, train_seed = rng.integers(2 ** 62, size=2)
    return int(data_seed), int(train_seed)


def build_plan(cfg: dict, seed: int) -> harness.AdaptationPlan:
    kwargs = {k: cfg[k] for k in _PLAN_FIELDS if k in cfg}
    _, train_seed = derive_seeds(seed)
    return harness.AdaptationPlan(seed=train_seed, **kwargs)


def load_domains(cfg: dict, seed: int):
    if "preset" in cfg:
        data_seed, _ = derive_seeds(seed)
        specs = datagen.preset_specs(cfg["preset"])
        return datagen.generate_sequence(specs, data_seed)
    return import_dataset(cfg["dataset"])


def _float_cell(v: float) -> str:
    return repr(float(v))


def write_matrix_csv(matrix: harness.AccuracyMatrix, path) -> None:
    n = matrix.values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["after_domain"] + [f"d{j}" for j in range(n)])
        for t in range(n):
            row = [str(t)]
            for j in range(n):
                v = matrix.values[t, j]
                row.append(_float_cell(v) if np.isfinite(v) else "")
            writer.writerow(row)


_DIAG_COLUMNS = ("domain", "epoch", "iteration", "lr", "loss_con", "loss_src",
                 "loss_mem", "slack_src", "slack_mem", "u_src", "u_mem",
                 "case", "eps")


def write_diagnostics_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_DIAG_COLUMNS)
        for row in rows:
            out = []
            for col in _DIAG_COLUMNS:
                v = row[col]
                out.append(_float_cell(v) if isinstance(v, float) else str(v))
            writer.writerow(out)


def _metric_value(v: float):
    return None if (isinstance(v, float) and math.isnan(v)) else v


def write_metrics_json(metrics: harness.Metrics, path) -> None:
    payload = {"acc": _metric_value(metrics.acc),
               "acc_mean": _metric_value(metrics.acc_mean),
               "bwt": _metric_value(metrics.bwt)}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def run_config(cfg: dict) -> list:
    """Execute the config's seed(s); returns the per-seed Metrics list."""
    out_dir = os.environ.get("CONTDA_OUTPUT_DIR", cfg["output_dir"])
    os.makedirs(out_dir, exist_ok=True)
    seeds = cfg["seeds"] if "seeds" in cfg else [cfg["seed"]]
    diagnostics = cfg.get("diagnostics", "full")

    manifest = {
        "config": {k: cfg[k] for k in sorted(cfg)},
        "seeds": list(seeds),
        "package_version": __version__,
        "numpy_version": np.__version__,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")

    collected = []
    for seed in seeds:
        domains = load_domains(cfg, seed)
        plan = build_plan(cfg, seed)
        result = harness.run_plan(domains, plan)
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        write_matrix_csv(result.matrix, os.path.join(seed_dir, "rmatrix.csv"))
        write_metrics_json(result.metrics, os.path.join(seed_dir, "metrics.json"))
        if diagnostics == "full":
            write_diagnostics_csv(result.diagnostics,
                                  os.path.join(seed_dir, "diagnostics.csv"))
        collected.append(result.metrics)

    aggregate = {
        "seeds": list(seeds),
        "acc": _mean_std([m.acc for m in collected]),
        "acc_mean": _mean_std([m.acc_mean for m in collected]),
        "bwt": _mean_std([m.bwt for m in collected]),
    }
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(aggregate, fh, indent=2)
        fh.write("\n")
    return collected


def _mean_std(values):
    arr = np.array(values, dtype=np.float64)
    if np.any(np.isnan(arr)):
        return {"mean": None, "std": None}
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run_config(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContdaError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        configs = [load_config(p) for p in args.configs]
        if len(configs) < 2:
            raise ConfigError("compare needs at least two configs")
        sources = {c.get("preset") or c.get("dataset") for c in configs}
        if len(sources) != 1:
            raise ConfigError("compare configs must share one preset or dataset")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    rows = []
    try:
        for cfg in configs:
            collected = run_config(cfg)
            accs = [m.acc for m in collected]
            bwts = [m.bwt for m in collected]
            acc = _mean_std(accs)
            bwt = _mean_std(bwts)
            rows.append([cfg["strategy"], str(len(collected)),
                         _float_cell(acc["mean"]), _float_cell(acc["std"]),
                         "" if bwt["mean"] is None else _float_cell(bwt["mean"]),
                         "" if bwt["std"] is None else _float_cell(bwt["std"])])
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContdaError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error: run failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC

    with open(args.output, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "n_seeds", "acc_mean", "acc_std",
                         "bwt_mean", "bwt_std"])
        writer.writerows(rows)
    return EXIT_OK


def export_dataset(preset: str, seed: int, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    specs = datagen.preset_specs(preset)
    domains = datagen.generate_sequence(specs, seed)
    meta = {"preset": preset, "seed": seed,
            "specs": [{"kind": s.kind, "n_classes": s.n_classes,
                       "per_class": s.per_class, "rotation_deg": s.rotation_deg,
                       "scale": s.scale, "translation": list(s.translation),
                       "radius": s.radius, "std": s.std} for s in specs]}
    with open(os.path.join(out_dir, "data_manifest.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    for d in domains:
        datagen.export_domain_csv(d, os.path.join(out_dir, f"domain_{d.index}.csv"))


def import_dataset(path):
    try:
        with open(os.path.join(path, "data_manifest.json")) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read dataset: {exc}") from exc
    domains = []
    for i, s in enumerate(meta["specs"]):
        spec = datagen.DomainSpec(kind=s["kind"], n_classes=s["n_classes"],
                                  per_class=s["per_class"],
                                  rotation_deg=s["rotation_deg"], scale=s["scale"],
                                  translation=tuple(s["translation"]),
                                  radius=s["radius"], std=s["std"])
        domains.append(datagen.import_domain_csv(
            os.path.join(path, f"domain_{i}.csv"), i, spec))
    return domains


def cmd_export_data(args) -> int:
    try:
        if args.preset not in datagen.PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}")
        export_dataset(args.preset, args.seed, args.output)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contda",
        description="Continual unsupervised domain adaptation runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one run config")
    p_run.add_argument("config", help="path to a JSON run config")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run several configs, tabulate metrics")
    p_cmp.add_argument("configs", nargs="+", help="run config paths")
    p_cmp.add_argument("--output", default="comparison.csv",
                       help="comparison table destination")
    p_cmp.set_defaults(func=cmd_compare)

    p_exp = sub.add_parser("export-data", help="write a preset dataset to CSV")
    p_exp.add_argument("--preset", required=True)
    p_exp.add_argument("--seed", type=int, required=True)
    p_exp.add_argument("--output", required=True)
    p_exp.set_defaults(func=cmd_export_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
