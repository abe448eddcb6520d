"""Weekly region panels: ingestion, feature derivation, scaling, windowing.

The panel is the universal data carrier of the toolkit: an immutable
region x week x feature tensor of weekly values. Raw daily surveillance
series are aggregated to week-ending sums, growth rates and testing
features are derived, and supervised windows are cut from the result.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field

import numpy as np

# Feature names used throughout the toolkit.
CONFIRMED = "CF"
DEATHS = "DT"
CONFIRMED_GROWTH = "CCGR"
DEATH_GROWTH = "DCGR"
TESTING_RATE = "TR"
TEST_POSITIVE_RATE = "TPR"

# Raw count features that must be non-negative everywhere.
COUNT_FEATURES = (CONFIRMED, DEATHS, "positive", "negative")

SATURDAY = 5  # datetime.weekday() convention (Monday == 0)


class PanelError(ValueError):
    """Raised for malformed panel data or schema violations."""


@dataclass(frozen=True)
class RegionId:
    """A region code with an optional administrative parent (county -> state)."""

    code: str
    parent: str | None = None

    def __post_init__(self):
        if not self.code:
            raise PanelError("region code must be non-empty")


@dataclass(frozen=True)
class WindowSample:
    """One supervised sample: a T x S input block and a scalar target h weeks out."""

    region: str
    origin: int  # index of the last input week within the panel
    input: np.ndarray  # (T, S)
    target: float
    horizon: int


class WeeklyPanel:
    """Immutable (region, week, feature) tensor of weekly values.

    Weeks are consecutive week-ending dates (7-day steps, Saturdays by
    default). Every cell must be present and finite; raw count features
    must be non-negative. ``parents`` and ``populations`` carry optional
    per-region metadata used by geo-clustering, testing features, and the
    compartmental baseline.
    """

    def __init__(self, regions, weeks, features, values, parents=None, populations=None):
        self.regions = list(regions)
        self.weeks = list(weeks)
        self.features = list(features)
        self.values = np.asarray(values, dtype=np.float64)
        self.parents = dict(parents) if parents else {}
        self.populations = dict(populations) if populations else {}
        self._region_idx = {r: i for i, r in enumerate(self.regions)}
        self._feature_idx = {f: i for i, f in enumerate(self.features)}
        self._validate()
        self.values.setflags(write=False)

    def _validate(self):
        if not self.regions or not self.weeks or not self.features:
            raise PanelError("panel must have at least one region, week, and feature")
        if len(self._region_idx) != len(self.regions):
            raise PanelError("duplicate region codes")
        if self.values.shape != (len(self.regions), len(self.weeks), len(self.features)):
            raise PanelError(
                f"values shape {self.values.shape} does not match "
                f"({len(self.regions)}, {len(self.weeks)}, {len(self.features)})"
            )
        for a, b in zip(self.weeks, self.weeks[1:]):
            if (b - a).days != 7:
                raise PanelError(f"weeks must advance in 7-day steps, got {a} -> {b}")
        if not np.all(np.isfinite(self.values)):
            raise PanelError("panel contains missing or non-finite cells")
        for f in COUNT_FEATURES:
            if f in self._feature_idx:
                col = self.values[:, :, self._feature_idx[f]]
                if np.any(col < 0):
                    raise PanelError(f"count feature {f!r} has negative values")

    @property
    def n_regions(self):
        return len(self.regions)

    @property
    def n_weeks(self):
        return len(self.weeks)

    def region_index(self, region: str) -> int:
        return self._region_idx[region]

    def feature_index(self, feature: str) -> int:
        if feature not in self._feature_idx:
            raise PanelError(f"unknown feature {feature!r}; panel has {self.features}")
        return self._feature_idx[feature]

    def series(self, region: str, feature: str) -> np.ndarray:
        """The weekly series of one feature for one region (read-only view)."""
        return self.values[self.region_index(region), :, self.feature_index(feature)]

    def population(self, region: str) -> float:
        if region not in self.populations:
            raise PanelError(f"no population recorded for region {region!r}")
        return self.populations[region]

    def through_week(self, week_index: int) -> "WeeklyPanel":
        """A sub-panel containing weeks[0..week_index] (inclusive)."""
        if not 0 <= week_index < self.n_weeks:
            raise PanelError(f"week index {week_index} out of range")
        return WeeklyPanel(
            self.regions,
            self.weeks[: week_index + 1],
            self.features,
            self.values[:, : week_index + 1, :],
            parents=self.parents,
            populations=self.populations,
        )


def aggregate_daily_to_weekly(daily, week_end: int = SATURDAY):
    """Sum contiguous daily counts into week-ending totals.

    Parameters
    ----------
    daily : mapping of datetime.date -> count
        Contiguous daily observations.
    week_end : int
        Weekday (datetime convention) each week ends on; Saturday by default.

    Returns
    -------
    (weeks, totals) : list of week-ending dates and matching numpy array.
    Partial leading and trailing weeks are dropped.
    """
    if not daily:
        raise PanelError("empty daily series")
    dates = sorted(daily)
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise PanelError(f"daily dates must be contiguous, gap at {a} -> {b}")
    values = np.array([float(daily[d]) for d in dates])
    if np.any(values < 0):
        raise PanelError("negative daily counts")

    first, last = dates[0], dates[-1]
    # First week-ending date whose full 7-day block lies inside the span.
    offset = (week_end - first.weekday()) % 7
    end = first + dt.timedelta(days=offset)
    while end - dt.timedelta(days=6) < first:
        end += dt.timedelta(days=7)
    weeks, totals = [], []
    while end <= last:
        start_i = (end - dt.timedelta(days=6) - first).days
        weeks.append(end)
        totals.append(values[start_i : start_i + 7].sum())
        end += dt.timedelta(days=7)
    return weeks, np.array(totals)


def derive_cgr(counts) -> np.ndarray:
    """Week-over-week log growth rate, ln(n[t+1]+1) - ln(n[t]+1).

    One element shorter than the input; the +1 smooths zero counts.
    Natural log; any fixed base would only rescale the feature.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size < 2:
        raise PanelError("growth rate needs at least two weeks")
    if np.any(counts < 0):
        raise PanelError("counts must be non-negative")
    return np.log(counts[1:] + 1.0) - np.log(counts[:-1] + 1.0)


def derive_testing_features(positive, negative, population: float):
    """Tests per 100k (TR) and positive fraction of tests (TPR).

    TPR is defined as 0 for weeks with no tests so that early weeks
    remain usable instead of erroring out.
    """
    if population <= 0:
        raise PanelError("population must be positive")
    positive = np.asarray(positive, dtype=np.float64)
    negative = np.asarray(negative, dtype=np.float64)
    if np.any(positive < 0) or np.any(negative < 0):
        raise PanelError("test counts must be non-negative")
    total = positive + negative
    tr = total / population * 100_000.0
    tpr = np.divide(positive, total, out=np.zeros_like(total), where=total > 0)
    return tr, tpr


def minmax_scale(series) -> np.ndarray:
    """Affine rescale to [0, 1]; a constant series maps to all zeros."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise PanelError("cannot scale an empty series")
    lo, hi = series.min(), series.max()
    if hi == lo:
        return np.zeros_like(series)
    return (series - lo) / (hi - lo)


@dataclass
class MinMaxScaler:
    """Invertible min-max scaler fit on a training series.

    Constant series scale to zeros and invert back to the constant.
    """

    lo: float = 0.0
    hi: float = 1.0

    @classmethod
    def fit(cls, series) -> "MinMaxScaler":
        series = np.asarray(series, dtype=np.float64)
        if series.size == 0:
            raise PanelError("cannot fit scaler on empty series")
        return cls(float(series.min()), float(series.max()))

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def transform(self, x):
        x = np.asarray(x, dtype=np.float64)
        if self.span == 0:
            return np.zeros_like(x)
        return (x - self.lo) / self.span

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        return y * self.span + self.lo


def cut_windows(panel: WeeklyPanel, features, T: int, h: int, target_feature: str = CONFIRMED):
    """Cut every supervised (T x S window, target at t+h) sample from a panel.

    One sample per (region, origin t) with the window fully inside the
    span and the target week present: count per region is
    max(0, weeks - T - h + 1). A panel shorter than T + h yields an
    empty list, not an error.
    """
    if T < 1 or h < 1:
        raise PanelError("window length and horizon must be >= 1")
    cols = [panel.feature_index(f) for f in features]
    tcol = panel.feature_index(target_feature)
    samples = []
    W = panel.n_weeks
    for r, region in enumerate(panel.regions):
        block = panel.values[r][:, cols]  # (W, S)
        for t in range(T - 1, W - h):
            samples.append(
                WindowSample(
                    region=region,
                    origin=t,
                    input=block[t - T + 1 : t + 1].copy(),
                    target=float(panel.values[r, t + h, tcol]),
                    horizon=h,
                )
            )
    return samples


# ---------------------------------------------------------------------------
# CSV ingestion and dumps
# ---------------------------------------------------------------------------

LONG_HEADER = ["region", "parent", "date", "feature", "value"]


def _parse_date(text: str, row: int) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError as exc:
        raise PanelError(f"row {row}: bad ISO date {text!r}") from exc


def read_long_csv(path):
    """Read a long-form observation CSV: region,parent,date,feature,value.

    Returns (records, parents) where records maps (region, feature) to a
    dict of date -> value. Schema violations report the 1-based row number.
    """
    records: dict[tuple[str, str], dict[dt.date, float]] = {}
    parents: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if [c.strip() for c in header] != LONG_HEADER:
            raise PanelError(f"{path}: expected header {','.join(LONG_HEADER)!r}, got {','.join(header)!r}")
        for i, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise PanelError(f"row {i}: expected 5 columns, got {len(row)}")
            region, parent, date_s, feature, value_s = (c.strip() for c in row)
            if not region:
                raise PanelError(f"row {i}: empty region code")
            date = _parse_date(date_s, i)
            try:
                value = float(value_s)
            except ValueError:
                raise PanelError(f"row {i}: bad value {value_s!r}") from None
            if not math.isfinite(value):
                raise PanelError(f"row {i}: non-finite value")
            if parent:
                parents[region] = parent
            records.setdefault((region, feature), {})[date] = value
    if not records:
        raise PanelError(f"{path}: no data rows")
    return records, parents


def build_panel(records, parents=None, week_end: int = SATURDAY, forward_fill: bool = False):
    """Assemble a WeeklyPanel from daily long-form records.

    Daily count features (CF, DT, positive, negative) are aggregated to
    week-ending sums; the static ``population`` feature is captured as
    region metadata. Growth rates are derived from weekly CF/DT and, when
    testing counts and population are present, TR/TPR are added. Missing
    cells are rejected unless ``forward_fill`` explicitly opts in.
    """
    populations: dict[str, float] = {}
    weekly: dict[tuple[str, str], dict[dt.date, float]] = {}
    for (region, feature), series in records.items():
        if feature == "population":
            populations[region] = float(next(iter(series.values())))
            continue
        if forward_fill:
            series = _forward_fill_daily(series)
        weeks, totals = aggregate_daily_to_weekly(series, week_end=week_end)
        weekly[(region, feature)] = dict(zip(weeks, totals))

    regions = sorted({r for r, _ in weekly})
    raw_features = sorted({f for _, f in weekly})
    all_weeks = sorted({w for series in weekly.values() for w in series})
    if not all_weeks:
        raise PanelError("no complete weeks in input")

    values = np.full((len(regions), len(all_weeks), len(raw_features)), np.nan)
    for (region, feature), series in weekly.items():
        r, f = regions.index(region), raw_features.index(feature)
        for w, v in series.items():
            values[r, all_weeks.index(w), f] = v
    if np.any(np.isnan(values)):
        r, w, f = np.argwhere(np.isnan(values))[0]
        raise PanelError(
            f"missing cell: region {regions[r]!r}, week {all_weeks[w]}, feature {raw_features[f]!r}"
        )

    panel = WeeklyPanel(regions, all_weeks, raw_features, values,
                        parents=parents, populations=populations)
    return add_derived_features(panel)


def _forward_fill_daily(series):
    dates = sorted(series)
    filled = {}
    last = None
    d = dates[0]
    while d <= dates[-1]:
        if d in series:
            last = series[d]
        filled[d] = last
        d += dt.timedelta(days=1)
    return filled


def add_derived_features(panel: WeeklyPanel) -> WeeklyPanel:
    """Add CCGR/DCGR (and TR/TPR when testing data exists) to a panel.

    Growth rates are defined from the second week on; the first week's
    growth cell is set to 0 so the panel stays rectangular.
    """
    features = list(panel.features)
    blocks = [panel.values]

    def add(name, grid):
        features.append(name)
        blocks.append(grid[:, :, None])

    if CONFIRMED in panel.features and CONFIRMED_GROWTH not in panel.features:
        add(CONFIRMED_GROWTH, _padded_growth(panel, CONFIRMED))
    if DEATHS in panel.features and DEATH_GROWTH not in panel.features:
        add(DEATH_GROWTH, _padded_growth(panel, DEATHS))
    if (
        "positive" in panel.features
        and "negative" in panel.features
        and panel.populations
        and TESTING_RATE not in panel.features
    ):
        tr = np.zeros((panel.n_regions, panel.n_weeks))
        tpr = np.zeros_like(tr)
        for r, region in enumerate(panel.regions):
            tr[r], tpr[r] = derive_testing_features(
                panel.series(region, "positive"),
                panel.series(region, "negative"),
                panel.population(region),
            )
        add(TESTING_RATE, tr)
        add(TEST_POSITIVE_RATE, tpr)

    if len(blocks) == 1:
        return panel
    return WeeklyPanel(
        panel.regions,
        panel.weeks,
        features,
        np.concatenate(blocks, axis=2),
        parents=panel.parents,
        populations=panel.populations,
    )


def _padded_growth(panel, feature):
    grid = np.zeros((panel.n_regions, panel.n_weeks))
    for r, region in enumerate(panel.regions):
        grid[r, 1:] = derive_cgr(panel.series(region, feature))
    return grid


def write_panel_csv(panel: WeeklyPanel, path, regions_path=None):
    """Dump a panel to wide CSV (region,week_ending,<features>).

    Region metadata (parent, population) goes to a sidecar regions CSV
    next to the panel unless a path is given.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "week_ending"] + panel.features)
        for r, region in enumerate(panel.regions):
            for w, week in enumerate(panel.weeks):
                writer.writerow([region, week.isoformat()]
                                + [repr(float(v)) for v in panel.values[r, w]])
    if regions_path is None:
        regions_path = _sidecar_path(path)
    with open(regions_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "parent", "population"])
        for region in panel.regions:
            writer.writerow([
                region,
                panel.parents.get(region, ""),
                repr(float(panel.populations[region])) if region in panel.populations else "",
            ])


def _sidecar_path(panel_path):
    import os

    base, _ = os.path.splitext(str(panel_path))
    return base + ".regions.csv"


def read_panel_csv(path, regions_path=None):
    """Read a wide panel CSV written by write_panel_csv."""
    import os

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelError(f"{path}: empty file") from None
        if header[:2] != ["region", "week_ending"]:
            raise PanelError(f"{path}: expected wide panel header, got {header[:2]}")
        features = header[2:]
        cells: dict[str, dict[dt.date, list[float]]] = {}
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise PanelError(f"row {i}: expected {len(header)} columns, got {len(row)}")
            region = row[0]
            week = _parse_date(row[1], i)
            try:
                vals = [float(v) for v in row[2:]]
            except ValueError:
                raise PanelError(f"row {i}: bad numeric value") from None
            cells.setdefault(region, {})[week] = vals

    regions = sorted(cells)
    weeks = sorted({w for series in cells.values() for w in series})
    values = np.full((len(regions), len(weeks), len(features)), np.nan)
    for r, region in enumerate(regions):
        for w, week in enumerate(weeks):
            if week in cells[region]:
                values[r, w] = cells[region][week]

    parents, populations = {}, {}
    if regions_path is None:
        candidate = _sidecar_path(path)
        regions_path = candidate if os.path.exists(candidate) else None
    if regions_path is not None:
        with open(regions_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                if not row:
                    continue
                region, parent, pop = row[0], row[1], row[2]
                if parent:
                    parents[region] = parent
                if pop:
                    populations[region] = float(pop)
    return WeeklyPanel(regions, weeks, features, values,
                       parents=parents, populations=populations)
