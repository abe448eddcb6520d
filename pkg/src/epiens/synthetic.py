"""Seeded synthetic weekly panels for desk-scale experiments.

Trend archetypes mirror the pattern families seen in real weekly case
curves: rising, peaked, fluctuating, and near-zero, plus exactly
reproducible ``flat(c)`` and ``ar1(phi,c)`` families for tests.
"""

from __future__ import annotations

import datetime as dt
import re

import numpy as np

from .panel import CONFIRMED, DEATHS, WeeklyPanel, add_derived_features

DEFAULT_START_WEEK = dt.date(2020, 3, 7)  # a Saturday
DEFAULT_ARCHETYPES = ("rising", "peaked", "fluctuating", "nearzero")

_PARAM_RE = re.compile(r"^([a-z0-9]+)(?:\(([^)]*)\))?$")


def parse_archetype(spec: str):
    """Split 'name' or 'name(a,b)' into (name, [float params])."""
    m = _PARAM_RE.match(spec.strip())
    if not m:
        raise ValueError(f"bad archetype spec {spec!r}")
    name, args = m.group(1), m.group(2)
    params = [float(a) for a in args.split(",")] if args else []
    return name, params


def _curve(name, params, weeks, rng):
    t = np.arange(weeks, dtype=np.float64)
    if name == "rising":
        scale = params[0] if params else 400.0
        mid = weeks * 0.7
        base = scale / (1.0 + np.exp(-(t - mid) / (weeks / 8.0)))
        noise = rng.normal(0.0, scale * 0.02, size=weeks)
    elif name == "peaked":
        scale = params[0] if params else 300.0
        center = weeks * 0.45
        base = scale * np.exp(-((t - center) ** 2) / (2 * (weeks / 6.0) ** 2))
        noise = rng.normal(0.0, scale * 0.02, size=weeks)
    elif name == "fluctuating":
        scale = params[0] if params else 200.0
        base = scale * (0.6 + 0.4 * np.sin(t * 2 * np.pi / 6.5 + rng.uniform(0, 2 * np.pi)))
        noise = rng.normal(0.0, scale * 0.08, size=weeks)
    elif name == "nearzero":
        base = np.zeros(weeks)
        noise = rng.poisson(0.4, size=weeks).astype(np.float64)
    elif name == "flat":
        c = params[0] if params else 10.0
        return np.full(weeks, c)
    elif name == "ar1":
        # Noiseless x[t+1] = phi * x[t] + c: exactly AR(1)-predictable.
        phi = params[0] if params else 0.8
        c = params[1] if len(params) > 1 else 100.0
        x0 = params[2] if len(params) > 2 else 10.0
        out = np.empty(weeks)
        out[0] = x0
        for i in range(1, weeks):
            out[i] = phi * out[i - 1] + c
        return out
    else:
        raise ValueError(f"unknown archetype {name!r}")
    return np.clip(base + noise, 0.0, None)


def generate_panel(
    n_regions: int,
    n_weeks: int,
    seed: int,
    archetypes=DEFAULT_ARCHETYPES,
    start_week: dt.date = DEFAULT_START_WEEK,
    with_testing: bool = False,
    n_parents: int = 4,
) -> WeeklyPanel:
    """Generate a deterministic panel with CF/DT (and optionally testing data).

    Regions are assigned archetypes round-robin, so region ``i`` belongs
    to family ``archetypes[i % len(archetypes)]``. Parent codes cycle over
    ``n_parents`` synthetic states for geo-clustering.
    """
    if n_regions < 1 or n_weeks < 1:
        raise ValueError("need at least one region and one week")
    specs = [parse_archetype(a) for a in archetypes]
    rng = np.random.default_rng(seed)
    weeks = [start_week + dt.timedelta(days=7 * i) for i in range(n_weeks)]

    features = [CONFIRMED, DEATHS] + (["positive", "negative"] if with_testing else [])
    values = np.zeros((n_regions, n_weeks, len(features)))
    parents, populations = {}, {}
    for r in range(n_regions):
        name, params = specs[r % len(specs)]
        region = f"R{r:03d}"
        parents[region] = f"S{r % n_parents:02d}"
        populations[region] = float(rng.integers(200_000, 2_000_000))
        cf = _curve(name, params, n_weeks, rng)
        values[r, :, 0] = cf
        # Deaths trail confirmations at a ~2% rate with a one-week lag.
        dt_series = 0.02 * np.concatenate([[cf[0]], cf[:-1]])
        values[r, :, 1] = np.round(dt_series, 6)
        if with_testing:
            positives = cf / 0.12  # implies a near-constant positive rate
            values[r, :, 2] = np.round(positives, 6)
            values[r, :, 3] = np.round(positives * rng.uniform(5.0, 9.0), 6)

    regions = [f"R{r:03d}" for r in range(n_regions)]
    panel = WeeklyPanel(regions, weeks, features, values,
                        parents=parents, populations=populations)
    return add_derived_features(panel)


def archetype_of(region: str, archetypes=DEFAULT_ARCHETYPES) -> str:
    """The archetype family generate_panel assigned to a region code."""
    idx = int(region.lstrip("R"))
    return archetypes[idx % len(archetypes)]
