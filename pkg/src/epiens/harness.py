"""Experiment orchestration: the full cluster/train/forecast/ensemble loop
under the rolling-origin weekly protocol, plus report aggregation.

Per origin week, every configured clustering strategy partitions the
regions, each related model trains once per cluster pool from fresh
initialization, and forecasts are emitted for horizons 1-4. After all
origins, the stacking ensemble combines the neural methods' point
forecasts per region and horizon. All randomness fans out
deterministically from one root seed, so a fixed configuration
reproduces its output files byte for byte.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import baselines, cluster, ensemble, metrics
from .nn import attention, recurrent
from .nn.recurrent import StackedRecurrentNet, TrainConfig
from .nn.attention import MultiSourceNet
from .panel import (
    CONFIRMED,
    MinMaxScaler,
    PanelError,
    WeeklyPanel,
    WindowSample,
    cut_windows,
)

log = logging.getLogger(__name__)

RESOLUTIONS = ("global", "us-state", "us-county")
FEATURES_BY_RESOLUTION = {
    "global": ["CF", "DT", "CCGR", "DCGR"],
    "us-county": ["CF", "DT", "CCGR", "DCGR"],
    "us-state": ["CF", "DT", "CCGR", "DCGR", "TR", "TPR"],
}

CELLS = {"RNN": "rnn", "GRU": "gru", "LSTM": "lstm"}
BASELINE_METHODS = ("Naive", "AR", "GAR", "ARMA", "VAR", "SEIR")

CATEGORY_MAP = {
    "RNNs": ["RNN", "RNN-geo", "RNN-m", "RNN-att", "RNN-kmeans", "RNN-tskmeans", "RNN-kshape"],
    "GRUs": ["GRU", "GRU-m", "GRU-att"],
    "LSTMs": ["LSTM", "LSTM-m", "LSTM-att"],
    "ARs": ["AR", "ARMA", "VAR", "GAR"],
    "Vanillas": ["RNN"],
    "Clusters": ["RNN-geo", "RNN-kmeans", "RNN-tskmeans", "RNN-kshape"],
    "SglFtrs": ["RNN", "GRU", "LSTM"],
    "MulFtrs": ["RNN-m", "GRU-m", "LSTM-m", "RNN-att", "GRU-att", "LSTM-att"],
    "SEIRs": ["SEIR"],
    "Naive": ["Naive"],
    "ENS": ["ENS"],
}


class ConfigError(ValueError):
    pass


def stable_seed(*parts) -> int:
    """Deterministic cross-platform seed from structural coordinates."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % (2**63)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("EPIENS_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Method specs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str  # naive | ar | gar | arma | var | seir | dnn | ens
    cell: str | None = None
    features: str = "single"  # single | multi | attention
    clustering: str = "vanilla"


def parse_method(name: str) -> MethodSpec:
    """Parse a method name into its structural spec.

    Neural methods follow CELL[-suffix] where the suffix selects multi
    feature input (m), attention (att), or a clustering-based training
    pool (geo, kmeans, tskmeans, kshape).
    """
    if name == "Naive":
        return MethodSpec(name, "naive")
    if name == "AR":
        return MethodSpec(name, "ar")
    if name == "GAR":
        return MethodSpec(name, "gar")
    if name == "ARMA":
        return MethodSpec(name, "arma")
    if name == "VAR":
        return MethodSpec(name, "var")
    if name == "SEIR":
        return MethodSpec(name, "seir")
    if name == "ENS":
        return MethodSpec(name, "ens")
    parts = name.split("-")
    if parts[0] in CELLS and len(parts) <= 2:
        cell = CELLS[parts[0]]
        if len(parts) == 1:
            return MethodSpec(name, "dnn", cell, "single", "vanilla")
        suffix = parts[1]
        if suffix == "m":
            return MethodSpec(name, "dnn", cell, "multi", "vanilla")
        if suffix == "att":
            return MethodSpec(name, "dnn", cell, "attention", "vanilla")
        if suffix in ("geo", "kmeans", "tskmeans", "kshape"):
            return MethodSpec(name, "dnn", cell, "single", suffix)
    raise ConfigError(f"unknown method {name!r}")


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

DEFAULT_METHODS = [
    "RNN", "GRU", "LSTM",
    "RNN-m", "GRU-m", "LSTM-m",
    "RNN-att", "GRU-att", "LSTM-att",
    "RNN-geo", "RNN-kmeans", "RNN-tskmeans", "RNN-kshape",
    "Naive", "AR", "GAR", "ARMA", "SEIR", "ENS",
]


@dataclass
class ExperimentConfig:
    resolution: str = "us-county"
    methods: list = field(default_factory=lambda: list(DEFAULT_METHODS))
    features: list | None = None
    window: int = 3
    horizons: tuple = (1, 2, 3, 4)
    first_forecast_week: dt.date | None = None
    last_forecast_week: dt.date | None = None
    n_origins: int | None = None
    seed: int = 0
    k_clusters: int = 50
    mc_samples: int = 50
    hidden_sizes: tuple = (32, 32)
    dense_size: int = 16
    dropout: float = 0.2
    training: TrainConfig = field(default_factory=TrainConfig)
    ensemble: ensemble.StackingConfig = field(default_factory=ensemble.StackingConfig)
    seir: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution not in RESOLUTIONS:
            raise ConfigError(f"resolution must be one of {RESOLUTIONS}, got {self.resolution!r}")
        if self.features is None:
            self.features = list(FEATURES_BY_RESOLUTION[self.resolution])
        expected = FEATURES_BY_RESOLUTION[self.resolution]
        if list(self.features) != expected:
            raise ConfigError(
                f"feature set {self.features} does not match resolution "
                f"{self.resolution!r} (expected {expected})"
            )
        for m in self.methods:
            parse_method(m)
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ConfigError("horizons must be positive")

    def method_specs(self):
        return [parse_method(m) for m in self.methods]

    def clustering_methods(self):
        needed = {s.clustering for s in self.method_specs() if s.kind == "dnn"}
        return sorted(needed)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        origins = doc.pop("origins", {})
        kwargs = {}
        for key in ("resolution", "methods", "features", "window", "seed",
                    "k_clusters", "mc_samples", "dense_size", "dropout"):
            if key in doc:
                kwargs[key] = doc.pop(key)
        if "horizons" in doc:
            kwargs["horizons"] = tuple(doc.pop("horizons"))
        if "hidden_sizes" in doc:
            kwargs["hidden_sizes"] = tuple(doc.pop("hidden_sizes"))
        if "first_forecast_week" in origins:
            kwargs["first_forecast_week"] = _as_date(origins["first_forecast_week"])
        if "last_forecast_week" in origins:
            kwargs["last_forecast_week"] = _as_date(origins["last_forecast_week"])
        if "count" in origins:
            kwargs["n_origins"] = int(origins["count"])
        if "training" in doc:
            kwargs["training"] = TrainConfig(**doc.pop("training"))
        if "ensemble" in doc:
            kwargs["ensemble"] = ensemble.StackingConfig(**doc.pop("ensemble"))
        if "seir" in doc:
            kwargs["seir"] = doc.pop("seir")
        if doc:
            raise ConfigError(f"unknown config keys: {sorted(doc)}")
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a mapping")
        return cls.from_dict(doc)


def _as_date(value) -> dt.date:
    if isinstance(value, dt.date):
        return value
    return dt.date.fromisoformat(str(value))


# ---------------------------------------------------------------------------
# Rolling-origin schedule
# ---------------------------------------------------------------------------

@dataclass
class OriginEntry:
    index: int
    train_end: int  # week index of the last observed training week
    origin_week: dt.date
    forecast_weeks: list  # per horizon: (horizon, week index or None, week date)


def rolling_origin(config: ExperimentConfig, panel: WeeklyPanel):
    """Expand the origin settings into a concrete training/forecast schedule.

    The first origin trains on weeks[0..t0]; each later origin extends
    the training span by one week and forecasts every horizon, even when
    a late target week falls beyond the panel (it then has no truth).
    """
    weeks = panel.weeks
    max_h = max(config.horizons)
    if config.first_forecast_week is not None:
        if config.first_forecast_week not in weeks:
            raise ConfigError(f"first forecast week {config.first_forecast_week} not in panel")
        f0 = weeks.index(config.first_forecast_week)
    elif config.n_origins is not None:
        f0 = panel.n_weeks - config.n_origins - (max_h - 1)
    else:
        raise ConfigError("origins need a first_forecast_week or a count")

    if config.last_forecast_week is not None:
        if config.last_forecast_week not in weeks:
            raise ConfigError(f"last forecast week {config.last_forecast_week} not in panel")
        count = weeks.index(config.last_forecast_week) - f0 + 1
    elif config.n_origins is not None:
        count = config.n_origins
    else:
        count = panel.n_weeks - f0

    if count < 1:
        raise ConfigError("origin schedule is empty")
    if f0 < config.window + 1:
        raise ConfigError(
            f"first forecast week leaves only {f0} training weeks; "
            f"need at least {config.window + 1}"
        )
    entries = []
    for i in range(count):
        f = f0 + i
        if f >= panel.n_weeks:
            raise ConfigError("origin schedule runs past the panel")
        fws = []
        for h in config.horizons:
            idx = f + h - 1
            date = weeks[0] + dt.timedelta(days=7 * idx)
            fws.append((h, idx if idx < panel.n_weeks else None, date))
        entries.append(OriginEntry(index=i, train_end=f - 1,
                                   origin_week=weeks[f - 1], forecast_weeks=fws))
    return entries


# ---------------------------------------------------------------------------
# Run result containers
# ---------------------------------------------------------------------------

@dataclass
class ForecastRecord:
    method: str
    region: str
    origin_week: dt.date
    horizon: int
    target_week: dt.date
    point: float
    samples: list


@dataclass
class FailureRecord:
    method: str
    region: str
    origin_week: dt.date
    error: str


@dataclass
class RunResult:
    config: ExperimentConfig
    schedule: list
    forecasts: list
    failures: list
    assignments: dict  # clustering method -> ClusterAssignment (last origin)
    seir_traces: list  # rows: region, week, reff, sim_confirmed, obs_confirmed


# ---------------------------------------------------------------------------
# Per-origin training helpers
# ---------------------------------------------------------------------------

def _scaled_series(tp: WeeklyPanel, region: str, feature: str):
    scaler = MinMaxScaler.fit(tp.series(region, feature))
    return scaler.transform(tp.series(region, feature)), scaler


def _scaled_panel(tp: WeeklyPanel, features):
    """Per-(region, feature) min-max scaled copy of the training panel."""
    values = np.zeros((tp.n_regions, tp.n_weeks, len(features)))
    scalers = {}
    for r, region in enumerate(tp.regions):
        for f, feat in enumerate(features):
            scaled, scaler = _scaled_series(tp, region, feat)
            values[r, :, f] = scaled
            scalers[(region, feat)] = scaler
    scaled_tp = WeeklyPanel(tp.regions, tp.weeks, list(features), values,
                            parents=tp.parents, populations=tp.populations)
    return scaled_tp, scalers


def _finalize_samples(raw_samples, scaler: MinMaxScaler):
    """Inverse-transform MC samples to counts, clamp at 0, recompute point."""
    samples = np.maximum(scaler.inverse(np.asarray(raw_samples)), 0.0)
    return float(samples.mean()), [float(s) for s in samples]


def _train_single_feature(spec, members, scaled_tp, scalers, config, entry, mc_samples):
    """One pooled model per cluster; recursive MC forecasts per member."""
    samples = [s for s in cut_windows(scaled_tp, [CONFIRMED], config.window, 1)
               if s.region in members]
    net = StackedRecurrentNet(
        spec.cell, 1, config.hidden_sizes, config.dense_size, config.dropout,
        seed=stable_seed(config.seed, spec.name, entry.index, *sorted(members)),
    )
    recurrent.train(net, samples, config.training,
                    seed=stable_seed(config.seed, spec.name, entry.index, "shuffle", *sorted(members)))
    out = []
    for region in sorted(members):
        window = scaled_tp.series(region, CONFIRMED)[-config.window :]
        points, mc = recurrent.recursive_mc_forecast(
            net, window, config.horizons, n_samples=mc_samples,
            seed=stable_seed(config.seed, spec.name, entry.index, region, "mc"),
        )
        scaler = scalers[(region, CONFIRMED)]
        for hi, (h, idx, date) in enumerate(entry.forecast_weeks):
            point, samp = _finalize_samples(mc[:, hi], scaler)
            out.append(ForecastRecord(spec.name, region, entry.origin_week, h, date, point, samp))
    return out


def _train_multi_feature(spec, members, scaled_tp, scalers, config, entry, mc_samples):
    """Direct strategy: one model per horizon per cluster pool."""
    out = []
    n_feat = len(scaled_tp.features)
    for h, idx, date in entry.forecast_weeks:
        samples = [s for s in cut_windows(scaled_tp, scaled_tp.features, config.window, h)
                   if s.region in members]
        seed = stable_seed(config.seed, spec.name, entry.index, h, *sorted(members))
        if spec.features == "attention":
            net = MultiSourceNet(spec.cell, n_feat, target_index=scaled_tp.features.index(CONFIRMED),
                                 hidden_sizes=config.hidden_sizes,
                                 attention_size=config.dense_size,
                                 dropout=config.dropout, seed=seed, horizon=h)
            attention.train(net, samples, config.training, seed=seed + 1)
            predict = attention.mc_dropout_predict
        else:
            net = StackedRecurrentNet(spec.cell, n_feat, config.hidden_sizes,
                                      config.dense_size, config.dropout, seed=seed)
            recurrent.train(net, samples, config.training, seed=seed + 1)
            predict = recurrent.mc_dropout_predict
        for region in sorted(members):
            window = scaled_tp.values[scaled_tp.region_index(region), -config.window :, :]
            _, mc = predict(net, window, n_samples=mc_samples,
                            seed=stable_seed(config.seed, spec.name, entry.index, h, region, "mc"))
            point, samp = _finalize_samples(mc, scalers[(region, CONFIRMED)])
            out.append(ForecastRecord(spec.name, region, entry.origin_week, h, date, point, samp))
    return out


def _run_baseline(spec, tp: WeeklyPanel, config, entry):
    """Classical baselines produce point forecasts without MC samples."""
    out, failures = [], []
    horizons = config.horizons

    def emit(region, values):
        for (h, idx, date), v in zip(entry.forecast_weeks, values):
            out.append(ForecastRecord(spec.name, region, entry.origin_week, h, date,
                                      max(0.0, float(v)), []))

    if spec.kind == "naive":
        for region in tp.regions:
            emit(region, baselines.naive_forecast(tp.series(region, CONFIRMED), horizons))
    elif spec.kind in ("ar", "arma"):
        for region in tp.regions:
            try:
                series = tp.series(region, CONFIRMED)
                model = (baselines.ar_fit(series, p=3) if spec.kind == "ar"
                         else baselines.arma_fit(series, p=3, q=2))
                emit(region, baselines.ar_forecast(model, series, horizons))
            except baselines.FitError as exc:
                failures.append(FailureRecord(spec.name, region, entry.origin_week, str(exc)))
    elif spec.kind == "gar":
        try:
            all_series = [tp.series(r, CONFIRMED) for r in tp.regions]
            model = baselines.ar_fit(all_series, p=3, scope="global")
            for region in tp.regions:
                emit(region, baselines.ar_forecast(model, tp.series(region, CONFIRMED), horizons))
        except baselines.FitError as exc:
            failures.extend(FailureRecord(spec.name, r, entry.origin_week, str(exc))
                            for r in tp.regions)
    elif spec.kind == "var":
        matrix = np.column_stack([tp.series(r, CONFIRMED) for r in tp.regions])
        try:
            model = baselines.var_fit(matrix, tp.regions, p=3)
            preds = baselines.var_forecast(model, matrix, horizons)
            for ri, region in enumerate(tp.regions):
                emit(region, preds[:, ri])
        except baselines.FitError as exc:
            failures.extend(FailureRecord(spec.name, r, entry.origin_week, str(exc))
                            for r in tp.regions)
    elif spec.kind == "seir":
        for region in tp.regions:
            try:
                params = baselines.SeirParams(population=tp.population(region),
                                              **config.seir)
                obs = tp.series(region, CONFIRMED) * 100_000.0 / params.population
                cal = baselines.seir_calibrate(obs, params)
                emit(region, baselines.seir_forecast(cal, horizons))
            except (baselines.FitError, PanelError) as exc:
                failures.append(FailureRecord(spec.name, region, entry.origin_week, str(exc)))
    return out, failures


def _seir_trace(tp: WeeklyPanel, config) -> list:
    """Calibration trace rows for the export CSV (full training span)."""
    rows = []
    for region in tp.regions:
        try:
            params = baselines.SeirParams(population=tp.population(region), **config.seir)
        except (baselines.FitError, PanelError):
            continue
        obs_counts = tp.series(region, CONFIRMED)
        obs = obs_counts * 100_000.0 / params.population
        cal = baselines.seir_calibrate(obs, params)
        for w, week in enumerate(tp.weeks):
            rows.append([region, week.isoformat(), cal.reff[w],
                         cal.sim_confirmed[w], float(obs_counts[w])])
    return rows


# ---------------------------------------------------------------------------
# The framework loop
# ---------------------------------------------------------------------------

def run_framework(config: ExperimentConfig, panel: WeeklyPanel) -> RunResult:
    """Cluster, train, forecast, and ensemble over the rolling schedule.

    Model failures are logged per (method, region, origin) without
    aborting the run; every scheduled tuple lands either in the forecast
    list or the failure list.
    """
    schedule = rolling_origin(config, panel)
    specs = config.method_specs()
    forecasts: list[ForecastRecord] = []
    failures: list[FailureRecord] = []
    last_assignments = {}
    seir_traces: list = []

    for entry in schedule:
        tp = panel.through_week(entry.train_end)
        curves = {r: np.asarray(_scaled_series(tp, r, CONFIRMED)[0]) for r in tp.regions}
        assignments = {}
        for a in config.clustering_methods():
            try:
                assignments[a] = cluster.cluster_regions(
                    a, curves, parents=tp.parents, k=config.k_clusters,
                    seed=stable_seed(config.seed, "cluster", a, entry.index),
                )
            except cluster.ClusterError as exc:
                failures.extend(
                    FailureRecord(s.name, r, entry.origin_week, str(exc))
                    for s in specs if s.kind == "dnn" and s.clustering == a
                    for r in tp.regions
                )
        scaled_single, scalers_single = _scaled_panel(tp, [CONFIRMED])
        scaled_multi, scalers_multi = (None, None)
        if any(s.features in ("multi", "attention") for s in specs):
            scaled_multi, scalers_multi = _scaled_panel(tp, config.features)

        tasks = []
        for spec in specs:
            if spec.kind == "dnn":
                if spec.clustering not in assignments:
                    continue
                assignment = assignments[spec.clustering]
                for c in range(assignment.k):
                    members = set(assignment.members(c))
                    if not members:
                        continue
                    if spec.features == "single":
                        tasks.append((spec, members, scaled_single, scalers_single))
                    else:
                        tasks.append((spec, members, scaled_multi, scalers_multi))

        def run_task(task):
            spec, members, stp, scl = task
            try:
                fn = _train_single_feature if spec.features == "single" else _train_multi_feature
                return fn(spec, members, stp, scl, config, entry, config.mc_samples), []
            except Exception as exc:  # noqa: BLE001 - failure isolation is the contract
                log.warning("training %s failed for %s: %s", spec.name, sorted(members), exc)
                return [], [FailureRecord(spec.name, r, entry.origin_week, str(exc))
                            for r in sorted(members)]

        workers = thread_count()
        if workers > 1 and len(tasks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run_task, tasks))
        else:
            results = [run_task(t) for t in tasks]
        for recs, fails in results:
            forecasts.extend(recs)
            failures.extend(fails)

        for spec in specs:
            if spec.kind in ("naive", "ar", "gar", "arma", "var", "seir"):
                recs, fails = _run_baseline(spec, tp, config, entry)
                forecasts.extend(recs)
                failures.extend(fails)

        if entry is schedule[-1]:
            last_assignments = assignments
            if any(s.kind == "seir" for s in specs):
                seir_traces = _seir_trace(tp, config)

    if any(s.kind == "ens" for s in specs):
        recs, fails = _run_ensemble(config, panel, schedule, forecasts)
        forecasts.extend(recs)
        failures.extend(fails)

    forecasts.sort(key=lambda r: (r.method, r.region, r.origin_week, r.horizon))
    failures.sort(key=lambda r: (r.method, r.region, r.origin_week))
    return RunResult(config=config, schedule=schedule, forecasts=forecasts,
                     failures=failures, assignments=last_assignments,
                     seir_traces=seir_traces)


def _run_ensemble(config, panel, schedule, forecasts):
    """Stack the neural methods' points per (region, horizon) with LOO."""
    base_methods = [s.name for s in config.method_specs() if s.kind == "dnn"]
    if not base_methods:
        return [], [FailureRecord("ENS", r, schedule[0].origin_week,
                                  "no neural base methods configured")
                    for r in panel.regions]
    points = {}
    for rec in forecasts:
        if rec.method in base_methods:
            points[(rec.method, rec.region, rec.horizon, rec.target_week)] = rec.point

    out, fails = [], []
    week_dates = {w: i for i, w in enumerate(panel.weeks)}
    for region in panel.regions:
        cf = panel.series(region, CONFIRMED)
        for h in config.horizons:
            target_weeks = []
            for entry in schedule:
                for hh, idx, date in entry.forecast_weeks:
                    if hh == h:
                        target_weeks.append((entry, date, idx))
            truths = {date: float(cf[week_dates[date]])
                      for _, date, idx in target_weeks if idx is not None}
            predictions = {
                m: {date: points[(m, region, h, date)]
                    for _, date, _ in target_weeks if (m, region, h, date) in points}
                for m in base_methods
            }
            matrix = ensemble.collect_base_predictions(predictions, truths, region, h)
            covered = set(matrix.weeks)
            try:
                preds = ensemble.loo_train_predict(
                    matrix, config.ensemble,
                    seed=stable_seed(config.seed, "ENS", region, h),
                )
            except ensemble.EnsembleError as exc:
                fails.extend(FailureRecord("ENS", region, e.origin_week, str(exc))
                             for e, _, _ in target_weeks)
                continue
            by_week = dict(zip(matrix.weeks, preds))
            # Rows beyond the panel (no truth) get a model trained on all
            # truth-bearing rows instead of a LOO fold.
            full_model = None
            for entry, date, idx in target_weeks:
                if date in by_week:
                    out.append(ForecastRecord("ENS", region, entry.origin_week, h, date,
                                              max(0.0, float(by_week[date])), []))
                else:
                    row = [predictions[m].get(date) for m in matrix.methods]
                    if any(v is None for v in row):
                        fails.append(FailureRecord("ENS", region, entry.origin_week,
                                                   f"no base coverage for {date}"))
                        continue
                    if full_model is None:
                        full_model = ensemble.StackingModel(
                            len(matrix.methods),
                            seed=stable_seed(config.seed, "ENS", region, h, "full"))
                        full_model.fit(matrix.values, matrix.targets, config.ensemble,
                                       seed=stable_seed(config.seed, "ENS", region, h, "fullfit"))
                    out.append(ForecastRecord("ENS", region, entry.origin_week, h, date,
                                              float(full_model.predict(np.array(row))), []))
    return out, fails


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationResult:
    reports: list  # MetricReport
    frqbp: dict
    categories: list  # (category, horizon, metric, value)
    n_regions: int


def evaluate_run(result: RunResult, panel: WeeklyPanel) -> EvaluationResult:
    """Score every method at every horizon against panel truth.

    Metric values pool all (region, origin) pairs with equal weight;
    target weeks beyond the panel are skipped. FRQBP counts the best
    per-region RMSE per horizon, ties resolved by configured method
    order.
    """
    config = result.config
    week_idx = {w: i for i, w in enumerate(panel.weeks)}
    pairs: dict = {}
    region_pairs: dict = {}
    for rec in result.forecasts:
        if rec.target_week not in week_idx:
            continue
        truth = float(panel.series(rec.region, CONFIRMED)[week_idx[rec.target_week]])
        if not np.isfinite(rec.point):
            continue
        pairs.setdefault((rec.method, rec.horizon), []).append((truth, rec.point))
        region_pairs.setdefault((rec.region, rec.horizon), {}).setdefault(rec.method, []).append(
            (truth, rec.point)
        )

    reports = []
    for method in config.methods:
        for h in config.horizons:
            entries = pairs.get((method, h), [])
            if not entries:
                continue
            truth = np.array([t for t, _ in entries])
            pred = np.array([p for _, p in entries])
            try:
                corr = metrics.pcorr(truth, pred)
            except metrics.MetricError:
                corr = None
            reports.append(metrics.MetricReport(
                method=method, resolution=config.resolution, horizon=h,
                rmse=metrics.rmse(truth, pred), mape=metrics.mape(truth, pred),
                pcorr=corr, n=len(entries),
            ))

    region_rmse = {}
    for (region, h), by_method in region_pairs.items():
        scored = {}
        for method, entries in by_method.items():
            truth = np.array([t for t, _ in entries])
            pred = np.array([p for _, p in entries])
            scored[method] = metrics.rmse(truth, pred)
        region_rmse[(region, h)] = scored
    counts = metrics.frqbp(region_rmse, config.methods) if region_rmse else {}

    categories = aggregate_by_category(reports, run_category_map(config.methods))
    return EvaluationResult(reports=reports, frqbp=counts, categories=categories,
                            n_regions=panel.n_regions)


def run_category_map(methods) -> dict:
    """The canonical category map restricted to the methods actually run."""
    out = {}
    for cat, members in CATEGORY_MAP.items():
        present = [m for m in members if m in methods]
        if present:
            out[cat] = present
    return out


def aggregate_by_category(reports, category_map: dict):
    """Unweighted mean of member-method metric values per horizon."""
    by_method = {}
    for rep in reports:
        by_method.setdefault(rep.method, {})[rep.horizon] = rep
    rows = []
    for cat in sorted(category_map):
        members = category_map[cat]
        if not members:
            raise ConfigError(f"category {cat!r} has no member methods")
        horizons = sorted({h for m in members for h in by_method.get(m, {})})
        for h in horizons:
            reps = [by_method[m][h] for m in members if h in by_method.get(m, {})]
            if not reps:
                continue
            rows.append((cat, h, "rmse", float(np.mean([r.rmse for r in reps]))))
            rows.append((cat, h, "mape", float(np.mean([r.mape for r in reps]))))
            corrs = [r.pcorr for r in reps if r.pcorr is not None]
            if corrs:
                rows.append((cat, h, "pcorr", float(np.mean(corrs))))
    return rows


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_outputs(result: RunResult, evaluation: EvaluationResult, panel: WeeklyPanel,
                  out_dir) -> None:
    """Write forecasts.csv, metrics.csv, frqbp.csv, categories.csv,
    clusters.csv, seir_trace.csv, failures.csv, and per-region plot data."""
    os.makedirs(out_dir, exist_ok=True)
    config = result.config

    with open(os.path.join(out_dir, "forecasts.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "region", "origin_week", "horizon", "target_week",
                    "point", "samples"])
        for r in result.forecasts:
            w.writerow([r.method, r.region, r.origin_week.isoformat(), r.horizon,
                        r.target_week.isoformat(), _fmt(r.point),
                        "|".join(_fmt(s) for s in r.samples)])

    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["resolution", "method", "horizon", "metric", "value", "n"])
        for rep in evaluation.reports:
            w.writerow([rep.resolution, rep.method, rep.horizon, "rmse", _fmt(rep.rmse), rep.n])
            w.writerow([rep.resolution, rep.method, rep.horizon, "mape", _fmt(rep.mape), rep.n])
            w.writerow([rep.resolution, rep.method, rep.horizon, "pcorr",
                        _fmt(rep.pcorr) if rep.pcorr is not None else "undefined", rep.n])

    with open(os.path.join(out_dir, "frqbp.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "count"])
        for method in config.methods:
            w.writerow([method, evaluation.frqbp.get(method, 0)])

    with open(os.path.join(out_dir, "categories.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["resolution", "category", "horizon", "metric", "value"])
        for cat, h, metric, value in evaluation.categories:
            w.writerow([config.resolution, cat, h, metric, _fmt(value)])

    if result.assignments:
        cluster.write_assignment_csv(
            [result.assignments[a] for a in sorted(result.assignments)],
            os.path.join(out_dir, "clusters.csv"),
        )

    if result.seir_traces:
        with open(os.path.join(out_dir, "seir_trace.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "week", "reff", "sim_confirmed", "obs_confirmed"])
            for region, week, reff, sim, obs in result.seir_traces:
                w.writerow([region, week, _fmt(reff), _fmt(sim), _fmt(obs)])

    if result.failures:
        with open(os.path.join(out_dir, "failures.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "region", "origin_week", "error"])
            for f in result.failures:
                w.writerow([f.method, f.region, f.origin_week.isoformat(), f.error])

    plot_dir = os.path.join(out_dir, "plotdata")
    os.makedirs(plot_dir, exist_ok=True)
    week_idx = {w: i for i, w in enumerate(panel.weeks)}
    by_region: dict = {}
    for rec in result.forecasts:
        if rec.target_week in week_idx:
            by_region.setdefault(rec.region, []).append(rec)
    for region in panel.regions:
        with open(os.path.join(plot_dir, f"{region}.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["region", "week", "truth", "method", "point"])
            for rec in sorted(by_region.get(region, []),
                              key=lambda r: (r.method, r.target_week, r.horizon)):
                truth = float(panel.series(region, CONFIRMED)[week_idx[rec.target_week]])
                w.writerow([region, rec.target_week.isoformat(), _fmt(truth),
                            rec.method, _fmt(rec.point)])
