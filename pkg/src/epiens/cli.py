"""Command-line entry points: data preparation, synthetic panels,
clustering, training, forecasting, evaluation, and full experiment runs.

Exit codes: 0 success, 1 run completed with partial model failures,
2 usage or configuration errors. EPIENS_THREADS overrides the worker
count used for independent trainings.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import cluster as cluster_mod
from . import harness, synthetic
from .ensemble import StackingConfig
from .harness import ConfigError, ExperimentConfig, ForecastRecord, RunResult, stable_seed
from .nn.attention import MultiSourceNet
from .nn.recurrent import StackedRecurrentNet
from .panel import (
    CONFIRMED,
    MinMaxScaler,
    PanelError,
    build_panel,
    minmax_scale,
    read_long_csv,
    read_panel_csv,
    write_panel_csv,
)

log = logging.getLogger(__name__)


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--quiet", action="store_true", help="only warnings and errors")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epiens",
        description="Weekly case forecasting with recurrent-net ensembles and classical baselines",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="ingest daily long-form CSV into a weekly panel")
    p.add_argument("--input", required=True, help="long CSV: region,parent,date,feature,value")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--forward-fill", action="store_true",
                   help="forward-fill interior gaps in daily series (off by default)")
    _add_common(p)

    p = sub.add_parser("synth", help="generate a seeded synthetic panel")
    p.add_argument("--regions", type=int, default=20)
    p.add_argument("--weeks", type=int, default=25)
    p.add_argument("--archetypes", default=",".join(synthetic.DEFAULT_ARCHETYPES),
                   help="comma list, e.g. rising,peaked,flat(5),ar1(0.8,100)")
    p.add_argument("--testing", action="store_true", help="include testing counts (TR/TPR)")
    p.add_argument("--parents", type=int, default=4, help="number of synthetic parent codes")
    p.add_argument("--out", required=True, help="output panel CSV path")
    _add_common(p)

    p = sub.add_parser("cluster", help="cluster regions on scaled case curves")
    p.add_argument("--panel", required=True)
    p.add_argument("--method", required=True, choices=cluster_mod.METHODS)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--out", required=True, help="output assignment CSV")
    _add_common(p)

    p = sub.add_parser("train", help="train neural models for the latest origin")
    p.add_argument("--config", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--methods", default=None, help="comma list filter")
    _add_common(p)

    p = sub.add_parser("forecast", help="emit forecasts from saved checkpoints")
    p.add_argument("--models", required=True, help="checkpoint directory from `train`")
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="output forecasts CSV")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a forecast file against panel truth")
    p.add_argument("--config", required=True)
    p.add_argument("--forecasts", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)

    p = sub.add_parser("run-all", help="full pipeline: cluster, train, forecast, ensemble, evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--methods", default=None, help="comma list filter")
    _add_common(p)

    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "methods", None):
        wanted = [m.strip() for m in args.methods.split(",") if m.strip()]
        unknown = [m for m in wanted if m not in config.methods]
        if unknown:
            raise ConfigError(f"methods {unknown} not in the configured list {config.methods}")
        config.methods = wanted
    return config


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_prepare(args) -> int:
    records, parents = read_long_csv(args.input)
    panel = build_panel(records, parents=parents, forward_fill=args.forward_fill)
    os.makedirs(args.out, exist_ok=True)
    write_panel_csv(panel, os.path.join(args.out, "panel.csv"))
    print(f"{panel.n_regions} regions, {panel.n_weeks} weeks, {len(panel.features)} features")
    return 0


def cmd_synth(args) -> int:
    archetypes = [a.strip() for a in args.archetypes.split(",") if a.strip()]
    panel = synthetic.generate_panel(
        args.regions, args.weeks, seed=args.seed if args.seed is not None else 0,
        archetypes=archetypes, with_testing=args.testing, n_parents=args.parents,
    )
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    write_panel_csv(panel, args.out)
    print(f"wrote {panel.n_regions} regions x {panel.n_weeks} weeks to {args.out}")
    return 0


def cmd_cluster(args) -> int:
    panel = read_panel_csv(args.panel)
    curves = {r: minmax_scale(panel.series(r, CONFIRMED)) for r in panel.regions}
    assignment = cluster_mod.cluster_regions(
        args.method, curves, parents=panel.parents, k=args.k,
        seed=args.seed if args.seed is not None else 0,
    )
    cluster_mod.write_assignment_csv([assignment], args.out)
    print(f"{assignment.k} clusters over {panel.n_regions} regions -> {args.out}")
    return 0


def _scaler_state(scalers, members, features):
    return {r: {f: [scalers[(r, f)].lo, scalers[(r, f)].hi] for f in features}
            for r in members}


def cmd_train(args) -> int:
    config = _load_config(args)
    panel = read_panel_csv(args.panel)
    schedule = harness.rolling_origin(config, panel)
    entry = schedule[-1]
    tp = panel.through_week(entry.train_end)
    os.makedirs(args.out, exist_ok=True)

    curves = {r: minmax_scale(tp.series(r, CONFIRMED)) for r in tp.regions}
    assignments = {
        a: cluster_mod.cluster_regions(a, curves, parents=tp.parents, k=config.k_clusters,
                                       seed=stable_seed(config.seed, "cluster", a, entry.index))
        for a in config.clustering_methods()
    }
    scaled_single, scalers_single = harness._scaled_panel(tp, [CONFIRMED])
    scaled_multi, scalers_multi = (None, None)
    specs = [s for s in config.method_specs() if s.kind == "dnn"]
    if any(s.features in ("multi", "attention") for s in specs):
        scaled_multi, scalers_multi = harness._scaled_panel(tp, config.features)

    from .panel import cut_windows
    from .nn import attention as attention_mod
    from .nn import recurrent as recurrent_mod

    n_saved = 0
    for spec in specs:
        assignment = assignments[spec.clustering]
        for c in range(assignment.k):
            members = sorted(assignment.members(c))
            if not members:
                continue
            if spec.features == "single":
                samples = [s for s in cut_windows(scaled_single, [CONFIRMED], config.window, 1)
                           if s.region in members]
                net = StackedRecurrentNet(spec.cell, 1, config.hidden_sizes, config.dense_size,
                                          config.dropout,
                                          seed=stable_seed(config.seed, spec.name, entry.index, *members))
                recurrent_mod.train(net, samples, config.training,
                                    seed=stable_seed(config.seed, spec.name, entry.index,
                                                     "shuffle", *members))
                doc = {
                    "format": "epiens-checkpoint", "version": 1,
                    "method": spec.name, "origin_index": entry.index,
                    "origin_week": entry.origin_week.isoformat(),
                    "window": config.window, "horizons": list(config.horizons),
                    "mc_samples": config.mc_samples, "seed": config.seed,
                    "members": members,
                    "scalers": _scaler_state(scalers_single, members, [CONFIRMED]),
                    "nets": {"recursive": net.to_dict()},
                }
                path = os.path.join(args.out, f"{spec.name}.c{c}.json")
            else:
                nets = {}
                for h, idx, date in entry.forecast_weeks:
                    samples = [s for s in cut_windows(scaled_multi, scaled_multi.features,
                                                      config.window, h)
                               if s.region in members]
                    seed = stable_seed(config.seed, spec.name, entry.index, h, *members)
                    if spec.features == "attention":
                        net = MultiSourceNet(spec.cell, len(config.features),
                                             target_index=config.features.index(CONFIRMED),
                                             hidden_sizes=config.hidden_sizes,
                                             attention_size=config.dense_size,
                                             dropout=config.dropout, seed=seed, horizon=h)
                        attention_mod.train(net, samples, config.training, seed=seed + 1)
                    else:
                        net = StackedRecurrentNet(spec.cell, len(config.features),
                                                  config.hidden_sizes, config.dense_size,
                                                  config.dropout, seed=seed)
                        recurrent_mod.train(net, samples, config.training, seed=seed + 1)
                    nets[str(h)] = net.to_dict()
                doc = {
                    "format": "epiens-checkpoint", "version": 1,
                    "method": spec.name, "origin_index": entry.index,
                    "origin_week": entry.origin_week.isoformat(),
                    "window": config.window, "horizons": list(config.horizons),
                    "mc_samples": config.mc_samples, "seed": config.seed,
                    "members": members,
                    "scalers": _scaler_state(scalers_multi, members, config.features),
                    "nets": nets,
                }
                path = os.path.join(args.out, f"{spec.name}.c{c}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(doc, fh)
            n_saved += 1
    print(f"saved {n_saved} checkpoints to {args.out}")
    return 0


def cmd_forecast(args) -> int:
    import datetime as dt

    from .nn import attention as attention_mod
    from .nn import recurrent as recurrent_mod

    panel = read_panel_csv(args.panel)
    files = sorted(f for f in os.listdir(args.models) if f.endswith(".json"))
    if not files:
        raise ConfigError(f"no checkpoints in {args.models}")
    records = []
    for fname in files:
        with open(os.path.join(args.models, fname), encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != "epiens-checkpoint":
            raise ConfigError(f"{fname}: not a checkpoint file")
        origin_week = dt.date.fromisoformat(doc["origin_week"])
        origin_index = doc["origin_index"]
        train_end = panel.weeks.index(origin_week)
        horizons = doc["horizons"]
        window = doc["window"]
        method = doc["method"]
        root_seed = doc["seed"]
        scalers = {
            (r, f): MinMaxScaler(lo, hi)
            for r, feats in doc["scalers"].items()
            for f, (lo, hi) in feats.items()
        }
        if "recursive" in doc["nets"]:
            net = StackedRecurrentNet.from_dict(doc["nets"]["recursive"])
            for region in doc["members"]:
                scaler = scalers[(region, CONFIRMED)]
                series = scaler.transform(
                    panel.series(region, CONFIRMED)[: train_end + 1])[-window:]
                points, mc = recurrent_mod.recursive_mc_forecast(
                    net, series, tuple(horizons), n_samples=doc["mc_samples"],
                    seed=stable_seed(root_seed, method, origin_index, region, "mc"))
                for hi, h in enumerate(horizons):
                    date = origin_week + dt.timedelta(days=7 * h)
                    samples = np.maximum(scaler.inverse(mc[:, hi]), 0.0)
                    records.append(ForecastRecord(method, region, origin_week, h, date,
                                                  float(samples.mean()),
                                                  [float(s) for s in samples]))
        else:
            features = sorted(next(iter(doc["scalers"].values())))
            features = [f for f in panel.features if f in features]
            for h_str, net_doc in sorted(doc["nets"].items(), key=lambda kv: int(kv[0])):
                h = int(h_str)
                if net_doc["format"] == "epiens-attention-net":
                    net = MultiSourceNet.from_dict(net_doc)
                    predict = attention_mod.mc_dropout_predict
                else:
                    net = StackedRecurrentNet.from_dict(net_doc)
                    predict = recurrent_mod.mc_dropout_predict
                for region in doc["members"]:
                    cols = []
                    for f in features:
                        s = scalers[(region, f)]
                        cols.append(s.transform(panel.series(region, f)[: train_end + 1]))
                    X = np.column_stack(cols)[-window:, :]
                    _, mc = predict(net, X, n_samples=doc["mc_samples"],
                                    seed=stable_seed(root_seed, method, origin_index, h,
                                                     region, "mc"))
                    date = origin_week + dt.timedelta(days=7 * h)
                    scaler = scalers[(region, CONFIRMED)]
                    samples = np.maximum(scaler.inverse(mc), 0.0)
                    records.append(ForecastRecord(method, region, origin_week, h, date,
                                                  float(samples.mean()),
                                                  [float(s) for s in samples]))
    records.sort(key=lambda r: (r.method, r.region, r.origin_week, r.horizon))
    _write_forecast_csv(records, args.out)
    print(f"wrote {len(records)} forecasts to {args.out}")
    return 0


def _write_forecast_csv(records, path):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "region", "origin_week", "horizon", "target_week",
                    "point", "samples"])
        for r in records:
            w.writerow([r.method, r.region, r.origin_week.isoformat(), r.horizon,
                        r.target_week.isoformat(), repr(float(r.point)),
                        "|".join(repr(float(s)) for s in r.samples)])


def read_forecast_csv(path):
    import csv
    import datetime as dt

    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:5] != ["method", "region", "origin_week", "horizon", "target_week"]:
            raise ConfigError(f"{path}: not a forecast CSV")
        for row in reader:
            if not row:
                continue
            samples = [float(s) for s in row[6].split("|")] if row[6] else []
            records.append(ForecastRecord(row[0], row[1], dt.date.fromisoformat(row[2]),
                                          int(row[3]), dt.date.fromisoformat(row[4]),
                                          float(row[5]), samples))
    return records


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    panel = read_panel_csv(args.panel)
    records = read_forecast_csv(args.forecasts)
    present = sorted({r.method for r in records})
    config.methods = [m for m in config.methods if m in present]
    result = RunResult(config=config, schedule=[], forecasts=records, failures=[],
                       assignments={}, seir_traces=[])
    evaluation = harness.evaluate_run(result, panel)
    harness.write_outputs(result, evaluation, panel, args.out)
    print(f"evaluated {len(records)} forecasts over {len(config.methods)} methods -> {args.out}")
    return 0


def cmd_run_all(args) -> int:
    config = _load_config(args)
    panel = read_panel_csv(args.panel)
    result = harness.run_framework(config, panel)
    evaluation = harness.evaluate_run(result, panel)
    harness.write_outputs(result, evaluation, panel, args.out)
    n_fail = len(result.failures)
    print(f"{len(result.forecasts)} forecasts, {n_fail} failures -> {args.out}")
    return 1 if n_fail else 0


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "run-all": cmd_run_all,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PanelError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
