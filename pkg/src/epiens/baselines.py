"""Classical forecasting baselines: persistence, autoregression, SEIR.

The autoregressive family is fit by ordinary least squares on centered
series (minimum-norm when the design is degenerate, which keeps constant
series well-defined); ARMA uses two-stage Hannan-Rissanen estimation.
The SEIR baseline calibrates a weekly effective reproductive number by
golden-section search against observed confirmations per 100k, then
forecasts by holding the last value fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FitError(ValueError):
    pass


class IllPosedError(FitError):
    """Raised when a model has more parameters than usable observations."""


# ---------------------------------------------------------------------------
# Naive persistence
# ---------------------------------------------------------------------------

def naive_forecast(series, horizons=(1, 2, 3, 4)):
    """The most recent observation, repeated for every horizon."""
    series = np.asarray(series, dtype=np.float64)
    if series.size == 0:
        raise FitError("cannot forecast from an empty series")
    return [float(series[-1])] * len(horizons)


# ---------------------------------------------------------------------------
# Autoregressive family
# ---------------------------------------------------------------------------

@dataclass
class ArModel:
    p: int
    q: int
    intercept: float
    phi: np.ndarray  # AR coefficients, lag 1 first
    theta: np.ndarray  # MA coefficients, lag 1 first
    scope: str = "per-region"
    resid_tail: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _ar_design(series_list, p, mean):
    rows, targets = [], []
    for x in series_list:
        for t in range(p, len(x)):
            rows.append(x[t - p : t][::-1] - mean)
            targets.append(x[t] - mean)
    return np.array(rows), np.array(targets)


def ar_fit(series, p: int = 3, scope: str = "per-region") -> ArModel:
    """OLS autoregression of order p; pass a list of series for a pooled fit.

    The series are centered on their pooled mean and solved by
    minimum-norm least squares, so a constant series yields zero lag
    coefficients with the constant as intercept, and scaling the data by
    c scales the intercept by c while leaving the coefficients alone.
    """
    if isinstance(series, (list, tuple)) and len(series) and np.ndim(series[0]) >= 1:
        series_list = [np.asarray(s, dtype=np.float64) for s in series]
    else:
        series_list = [np.asarray(series, dtype=np.float64)]
    usable = sum(max(0, len(x) - p) for x in series_list)
    if usable < p + 1:
        raise FitError(f"need more than {p + 1} usable rows for AR({p}), have {usable}")
    if any(not np.all(np.isfinite(x)) for x in series_list):
        raise FitError("non-finite values in series")
    mean = float(np.mean(np.concatenate(series_list)))
    A, y = _ar_design(series_list, p, mean)
    phi, *_ = np.linalg.lstsq(A, y, rcond=None)
    if not np.all(np.isfinite(phi)):
        raise FitError(f"singular AR design (cond={np.linalg.cond(A):.3g})")
    return ArModel(p=p, q=0, intercept=mean * (1.0 - phi.sum()), phi=phi,
                   theta=np.zeros(0), scope=scope)


def arma_fit(series, p: int = 3, q: int = 2) -> ArModel:
    """Two-stage Hannan-Rissanen ARMA(p, q) estimation.

    Stage one fits a long autoregression to proxy the innovations; stage
    two regresses on p value lags and q residual lags. q=0 reduces
    exactly to ar_fit.
    """
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 20:
        raise FitError("ARMA estimation needs at least 20 observations")
    if q == 0:
        return ar_fit(x, p=p)
    long_p = min(max(p, q) + 5, (len(x) - 1) // 4)
    long_model = ar_fit(x, p=long_p)
    resid = np.full(len(x), np.nan)
    for t in range(long_p, len(x)):
        pred = long_model.intercept + long_model.phi @ x[t - long_p : t][::-1]
        resid[t] = x[t] - pred

    mean = float(x.mean())
    start = max(p, long_p + q)
    rows, targets = [], []
    for t in range(start, len(x)):
        rows.append(np.concatenate([x[t - p : t][::-1] - mean, resid[t - q : t][::-1]]))
        targets.append(x[t] - mean)
    A, y = np.array(rows), np.array(targets)
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    if not np.all(np.isfinite(sol)):
        raise FitError(f"singular ARMA stage-two design (cond={np.linalg.cond(A):.3g})")
    phi, theta = sol[:p], sol[p:]
    # Residual tail under the fitted model, for the first forecast steps.
    fitted_resid = np.zeros(len(x))
    for t in range(start, len(x)):
        pred = mean * (1.0 - phi.sum()) + phi @ x[t - p : t][::-1] + theta @ fitted_resid[t - q : t][::-1]
        fitted_resid[t] = x[t] - pred
    return ArModel(p=p, q=q, intercept=mean * (1.0 - phi.sum()), phi=phi, theta=theta,
                   resid_tail=fitted_resid[-q:][::-1].copy())


def ar_forecast(model: ArModel, history, horizons=(1, 2, 3, 4)):
    """Recursive plug-in forecasts; MA innovations are zero beyond the data.

    The recursion feeds raw predictions back; the returned values are
    clamped at zero since they forecast counts.
    """
    x = list(np.asarray(history, dtype=np.float64))
    if len(x) < model.p:
        raise FitError(f"history shorter than AR order {model.p}")
    resid = list(model.resid_tail)  # most recent first
    out = {}
    for h in range(1, max(horizons) + 1):
        pred = model.intercept + model.phi @ np.array(x[-model.p :][::-1])
        for j in range(model.q):
            if j < len(resid):
                pred += model.theta[j] * resid[j]
        x.append(float(pred))
        resid = [0.0] + resid[:-1] if resid else []
        out[h] = float(pred)
    return [max(0.0, out[h]) for h in horizons]


@dataclass
class VarModel:
    p: int
    regions: list
    intercept: np.ndarray  # (N,)
    coef: np.ndarray  # (N, N * p): region equations x stacked lag blocks


def var_fit(matrix, regions, p: int = 3) -> VarModel:
    """Vector autoregression: each region on p lags of every region.

    ``matrix`` is (weeks, regions). Raises IllPosedError when there are
    more parameters per equation than usable observations, which is the
    expected outcome for thousands of regions on a short panel.
    """
    X = np.asarray(matrix, dtype=np.float64)
    W, N = X.shape
    n_params = N * p + 1
    n_rows = W - p
    if n_rows < n_params:
        raise IllPosedError(
            f"VAR({p}) over {N} regions needs {n_params} observations per equation "
            f"but only {n_rows} are available"
        )
    rows = np.empty((n_rows, n_params))
    for i, t in enumerate(range(p, W)):
        rows[i] = np.concatenate([X[t - lag] for lag in range(1, p + 1)] + [[1.0]])
    coef = np.empty((N, N * p))
    intercept = np.empty(N)
    for r in range(N):
        sol, *_ = np.linalg.lstsq(rows, X[p:, r], rcond=None)
        coef[r] = sol[:-1]
        intercept[r] = sol[-1]
    return VarModel(p=p, regions=list(regions), intercept=intercept, coef=coef)


def var_forecast(model: VarModel, matrix, horizons=(1, 2, 3, 4)):
    """Recursive joint forecasts; returns (len(horizons), regions) clamped at 0."""
    X = [row.copy() for row in np.asarray(matrix, dtype=np.float64)]
    if len(X) < model.p:
        raise FitError(f"history shorter than VAR order {model.p}")
    preds = {}
    for h in range(1, max(horizons) + 1):
        lagvec = np.concatenate([X[-lag] for lag in range(1, model.p + 1)])
        nxt = model.intercept + model.coef @ lagvec
        X.append(nxt)
        preds[h] = np.maximum(nxt, 0.0)
    return np.array([preds[h] for h in horizons])


# ---------------------------------------------------------------------------
# SEIR compartmental baseline
# ---------------------------------------------------------------------------

@dataclass
class SeirParams:
    population: float
    incubation_days: float = 5.5
    infectious_days: float = 5.0
    confirmation_delay_days: int = 7
    ascertainment: float = 0.15

    @property
    def sigma(self) -> float:
        return 1.0 / self.incubation_days

    @property
    def gamma(self) -> float:
        return 1.0 / self.infectious_days

    def __post_init__(self):
        if self.population <= 0:
            raise FitError("population must be positive")
        if not 0 < self.ascertainment <= 1:
            raise FitError("ascertainment must be in (0, 1]")
        if self.incubation_days <= 0 or self.infectious_days <= 0:
            raise FitError("disease periods must be positive")


@dataclass
class SeirState:
    s: float
    e: float
    i: float
    r: float

    @property
    def total(self) -> float:
        return self.s + self.e + self.i + self.r


def seir_step(state: SeirState, r_eff: float, params: SeirParams):
    """One daily Euler step; returns (next state, new infections that day).

    Transmission is beta = r_eff * gamma. Flows are clipped to the mass
    available in their source compartment, and R is set to N - S - E - I
    so the population total is conserved exactly despite float rounding.
    """
    N = params.population
    beta = r_eff * params.gamma
    new_inf = min(beta * state.s * state.i / N, state.s)
    e_out = params.sigma * state.e
    i_out = params.gamma * state.i
    s = state.s - new_inf
    e = state.e + new_inf - e_out
    i = state.i + e_out - i_out
    r = N - s - e - i
    return SeirState(s, e, i, r), new_inf


def simulate_week(state: SeirState, r_eff: float, params: SeirParams):
    """Seven daily steps; returns (state, total new infections of the week)."""
    total = 0.0
    for _ in range(7):
        state, inf = seir_step(state, r_eff, params)
        total += inf
    return state, total


def weekly_confirmations(daily_infections, params: SeirParams):
    """Observation model: confirmations are ascertainment-scaled infections
    delayed by the confirmation lag, summed per 7-day week."""
    inf = np.asarray(daily_infections, dtype=np.float64)
    conf = np.zeros(len(inf) + params.confirmation_delay_days)
    conf[params.confirmation_delay_days :] = params.ascertainment * inf
    n_weeks = len(conf) // 7
    return np.array([conf[7 * w : 7 * w + 7].sum() for w in range(n_weeks)])


def initial_state_from_observations(observed_counts, params: SeirParams) -> SeirState:
    """Seed the state from the first nonzero weekly confirmed count.

    The implied weekly infections (count / ascertainment) are spread over
    the infectious period; the exposed pool is scaled by the ratio of
    incubation to infectious period; everyone else is susceptible.
    """
    observed = np.asarray(observed_counts, dtype=np.float64)
    nonzero = np.nonzero(observed)[0]
    first = float(observed[nonzero[0]]) if nonzero.size else 0.0
    i0 = first / params.ascertainment * (params.infectious_days / 7.0)
    e0 = i0 * (params.incubation_days / params.infectious_days)
    s0 = params.population - i0 - e0
    return SeirState(s0, e0, i0, params.population - s0 - e0 - i0)


def _golden_section(fn, lo, hi, tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


@dataclass
class SeirCalibration:
    reff: list
    states: list  # state at the end of each calibrated week
    sim_confirmed: list  # simulated weekly confirmed counts
    params: SeirParams


def seir_calibrate(observed_per_100k, params: SeirParams, initial_state: SeirState | None = None,
                   r_max: float = 10.0, tol: float = 1e-3) -> SeirCalibration:
    """Fit one effective reproductive number per observed week.

    Weeks are matched sequentially: the simulation block whose delayed
    infections surface in week w is searched over R in [0, r_max] by
    golden-section to minimize the squared per-100k error, then the state
    advances under the chosen value. Leading all-zero weeks pin R to 0.
    The confirmation delay must be a whole number of weeks so simulation
    blocks align with observation weeks.
    """
    obs = np.asarray(observed_per_100k, dtype=np.float64)
    if obs.size < 1:
        raise FitError("need at least one observed week")
    if params.confirmation_delay_days % 7 != 0:
        raise FitError("confirmation delay must be a whole number of weeks")
    N = params.population
    obs_counts = obs * N / 100_000.0
    if initial_state is None:
        initial_state = initial_state_from_observations(obs_counts, params)

    per100k = 100_000.0 / N
    reff, states, sim_confirmed = [], [], []
    state = initial_state
    started = False
    for w in range(len(obs)):
        if not started and obs[w] == 0.0:
            reff.append(0.0)
            states.append(state)
            sim_confirmed.append(0.0)
            continue
        started = True

        def week_error(r, state=state, target=obs[w]):
            _, infections = simulate_week(state, r, params)
            sim = params.ascertainment * infections * per100k
            return (sim - target) ** 2

        best = _golden_section(week_error, 0.0, r_max, tol)
        state, infections = simulate_week(state, best, params)
        reff.append(best)
        states.append(state)
        sim_confirmed.append(params.ascertainment * infections)
    return SeirCalibration(reff=reff, states=states, sim_confirmed=sim_confirmed, params=params)


def seir_forecast(calibration: SeirCalibration, horizons=(1, 2, 3, 4)):
    """Hold the last calibrated R fixed and simulate the horizon weeks out.

    Returns weekly new confirmed counts (not per-100k).
    """
    if not calibration.states:
        raise FitError("calibration has no fitted weeks")
    state = calibration.states[-1]
    r = calibration.reff[-1]
    params = calibration.params
    out = {}
    for h in range(1, max(horizons) + 1):
        state, infections = simulate_week(state, r, params)
        out[h] = params.ascertainment * infections
    return [out[h] for h in horizons]
