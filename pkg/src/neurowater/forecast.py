"""NVAR forecaster (time-delay embedding + polynomial features + ridge readout),
differencing, a seasonal-naive baseline and MAPE scoring.

All functions accept either a :class:`~neurowater.series.TimeSeries` without
MISSING samples or a plain 1-D array. Arrays may hold negative values, which
is what differenced series and synthetic AR test processes need.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    InsufficientDataError,
    RankDeficiencyError,
    UndefinedMetricError,
)
from .series import TimeSeries

NEAR_ZERO_EPSILON = 1e-6


def as_array(s, what: str = "operation") -> np.ndarray:
    if isinstance(s, TimeSeries):
        s.require_complete(what)
        return np.asarray(s.values, dtype=np.float64)
    a = np.asarray(s, dtype=np.float64)
    if a.ndim != 1:
        raise ConfigurationError(f"{what} expects a one-dimensional series")
    return a


@dataclass(frozen=True)
class NvarSpec:
    delays: int = 24
    degree: int = 1
    ridge_lambda: float = 1e-6
    include_bias: bool = True

    def __post_init__(self):
        if int(self.delays) != self.delays or self.delays < 1:
            raise ConfigurationError("delays must be an integer >= 1")
        if self.degree not in (1, 2):
            raise ConfigurationError("degree must be 1 or 2")
        if self.ridge_lambda < 0:
            raise ConfigurationError("ridge_lambda must be >= 0")

    @property
    def n_features(self) -> int:
        k = self.delays
        quad = k * (k + 1) // 2 if self.degree == 2 else 0
        return int(self.include_bias) + k + quad


@dataclass(frozen=True, eq=False)
class NvarModel:
    spec: NvarSpec
    weights: np.ndarray
    train_residual_std: float = 0.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (self.spec.n_features,):
            raise ConfigurationError(
                f"expected {self.spec.n_features} weights for {self.spec}, got {w.shape}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, NvarModel):
            return NotImplemented
        return (self.spec == other.spec
                and np.array_equal(self.weights, other.weights)
                and self.train_residual_std == other.train_residual_std)

    __hash__ = None

    @property
    def linear_weights(self) -> np.ndarray:
        """Weights on x_{t-1} ... x_{t-k}."""
        b = int(self.spec.include_bias)
        return self.weights[b:b + self.spec.delays]


@dataclass(frozen=True)
class EvalReport:
    mape_percent: float
    n_scored: int
    n_skipped_near_zero: int

    def to_dict(self):
        return {"mape_percent": self.mape_percent, "n_scored": self.n_scored,
                "n_skipped_near_zero": self.n_skipped_near_zero}


# ---------------------------------------------------------------------------
# Features and readout
# ---------------------------------------------------------------------------


def _feature_rows(lags: np.ndarray, spec: NvarSpec) -> np.ndarray:
    """Feature matrix from a (rows, delays) matrix of lags ordered x_{t-1} first."""
    cols = []
    if spec.include_bias:
        cols.append(np.ones((lags.shape[0], 1)))
    cols.append(lags)
    if spec.degree == 2:
        pairs = list(combinations_with_replacement(range(spec.delays), 2))
        i, j = np.array(pairs).T
        cols.append(lags[:, i] * lags[:, j])
    return np.hstack(cols)


def embed(s, spec: NvarSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rows ``[1] + [x_{t-1}..x_{t-k}] + quadratic monomials`` with target ``x_t``."""
    x = as_array(s, "embed")
    k = spec.delays
    if len(x) <= k:
        raise InsufficientDataError(f"need more than {k} samples, got {len(x)}")
    n_rows = len(x) - k
    # column d holds x_{t-1-d} for t = k .. n-1
    lags = np.column_stack([x[k - 1 - d: k - 1 - d + n_rows] for d in range(k)])
    return _feature_rows(lags, spec), x[k:].copy()


def fit_ridge(features, targets, lam: float, unpenalized=()) -> np.ndarray:
    """Minimize ``||Xw - y||^2 + lam * ||w_p||^2``.

    Columns listed in ``unpenalized`` (typically the bias) carry no penalty.
    Solved as least squares on the system augmented with ``sqrt(lam)`` rows,
    which has the regularized normal equations as its optimality condition
    without squaring the condition number.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64)
    if X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ConfigurationError(
            f"features have {X.shape[0]} rows but targets have {y.shape[0]}"
        )
    if lam < 0:
        raise ConfigurationError("lambda must be >= 0")
    d = X.shape[1]
    penalty = np.ones(d)
    penalty[list(unpenalized)] = 0.0
    if lam > 0:
        A = np.vstack([X, np.diag(np.sqrt(lam * penalty))[penalty > 0]])
        b = np.concatenate([y, np.zeros(int(np.count_nonzero(penalty)))])
    else:
        A, b = X, y
    w, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < d:
        free = "all columns" if lam == 0 else f"{int(d - np.count_nonzero(penalty))} unpenalized columns"
        raise RankDeficiencyError(
            f"normal matrix has rank {rank} < {d} ({free} unregularized); "
            "add ridge penalty or remove collinear features"
        )
    return w


def train_nvar(s, spec: NvarSpec) -> NvarModel:
    X, y = embed(s, spec)
    if spec.include_bias:
        # An unpenalized intercept is the same optimum as a ridge fit on
        # centred data; centring keeps constant inputs exact (w = 0, bias = mean).
        Z = X[:, 1:]
        z_mean = Z.mean(axis=0)
        y_mean = float(y.mean())
        w_rest = fit_ridge(Z - z_mean, y - y_mean, spec.ridge_lambda)
        w = np.concatenate([[y_mean - float(z_mean @ w_rest)], w_rest])
    else:
        w = fit_ridge(X, y, spec.ridge_lambda)
    resid = y - X @ w
    return NvarModel(spec, w, float(np.sqrt(np.mean(resid ** 2))))


def forecast(model: NvarModel, history, horizon: int, nonnegative: bool = True) -> np.ndarray:
    """Iterated one-step forecast; each prediction is fed back as a lag.

    Predictions are clamped at zero unless ``nonnegative`` is off (for
    signed series such as differences).
    """
    if horizon < 1:
        raise ConfigurationError("horizon must be >= 1")
    x = as_array(history, "forecast")
    k = model.spec.delays
    if len(x) < k:
        raise InsufficientDataError(f"need at least {k} history samples, got {len(x)}")
    lags = x[::-1][:k].copy()  # x_{t-1} first
    out = np.empty(horizon)
    for h in range(horizon):
        phi = _feature_rows(lags[None, :], model.spec)[0]
        pred = float(phi @ model.weights)
        if nonnegative:
            pred = max(0.0, pred)
        out[h] = pred
        lags = np.roll(lags, 1)
        lags[0] = pred
    return out


def one_step_predictions(model: NvarModel, s, start: int, nonnegative: bool = True) -> np.ndarray:
    """Predictions of ``x[start:]`` each made from the true preceding lags."""
    x = as_array(s, "one_step_predictions")
    k = model.spec.delays
    if start < k:
        raise InsufficientDataError(f"start must be >= delays ({k})")
    X, _ = embed(x, model.spec)
    pred = X[start - k:] @ model.weights
    return np.maximum(0.0, pred) if nonnegative else pred


# ---------------------------------------------------------------------------
# Differencing
# ---------------------------------------------------------------------------


def difference(s, order: int) -> tuple[np.ndarray, tuple]:
    """Forward differences of the given order plus the values needed to undo them.

    ``initials[j]`` is the first element of the j-th order difference.
    """
    if order not in (0, 1, 2):
        raise ConfigurationError(f"unsupported differencing order {order} (0, 1 or 2)")
    x = as_array(s, "difference")
    if len(x) <= order:
        raise InsufficientDataError(f"need more than {order} samples")
    initials = []
    for _ in range(order):
        initials.append(float(x[0]))
        x = np.diff(x)
    return x, tuple(initials)


def undifference(deltas, initials) -> np.ndarray:
    x = np.asarray(deltas, dtype=np.float64)
    for x0 in reversed(initials):
        x = np.concatenate([[x0], x0 + np.cumsum(x)])
    return x


# ---------------------------------------------------------------------------
# Baseline and scoring
# ---------------------------------------------------------------------------


def seasonal_naive(history, period: int, horizon: int) -> np.ndarray:
    x = as_array(history, "seasonal_naive")
    if period < 1 or horizon < 1:
        raise ConfigurationError("period and horizon must be >= 1")
    if len(x) < period:
        raise InsufficientDataError(f"history of {len(x)} is shorter than period {period}")
    h = np.arange(horizon)
    return x[len(x) - period + (h % period)].copy()


def mape(actual, predicted, near_zero_epsilon: float = NEAR_ZERO_EPSILON) -> EvalReport:
    a = np.asarray(actual, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if a.shape != p.shape or a.ndim != 1 or len(a) < 1:
        raise ConfigurationError("actual and predicted must be equal-length 1-D vectors")
    keep = np.abs(a) >= near_zero_epsilon
    n = int(np.count_nonzero(keep))
    if n == 0:
        raise UndefinedMetricError("every actual value is near zero; MAPE undefined")
    value = float(np.mean(100.0 * np.abs(a[keep] - p[keep]) / np.abs(a[keep])))
    return EvalReport(value, n, int(len(a) - n))


Predictor = Callable[[np.ndarray, int], np.ndarray]


def backtest(s, train_len: int, horizon: int, predictor: Predictor) -> np.ndarray:
    """Rolling-origin forecasts covering ``x[train_len:]``.

    Origins step by ``horizon``; each forecast sees the true history up to its
    origin. The final block is truncated at the series end.
    """
    x = as_array(s, "backtest")
    if not 0 < train_len < len(x):
        raise InsufficientDataError("backtest needs a nonempty train and test split")
    out = []
    for origin in range(train_len, len(x), horizon):
        h = min(horizon, len(x) - origin)
        out.append(np.asarray(predictor(x[:origin], h))[:h])
    return np.concatenate(out)


def nvar_predictor(model: NvarModel) -> Predictor:
    return lambda hist, h: forecast(model, hist, h)


def naive_predictor(period: int) -> Predictor:
    return lambda hist, h: seasonal_naive(hist, period, h)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_FORMAT_TAG = "nvar-model-v1"


def dumps_model(model: NvarModel) -> str:
    s = model.spec
    lines = [
        f"format: {_FORMAT_TAG}",
        f"delays: {s.delays}",
        f"degree: {s.degree}",
        f"ridge_lambda: {s.ridge_lambda:.16e}",
        f"include_bias: {str(s.include_bias).lower()}",
        f"train_residual_std: {model.train_residual_std:.16e}",
        f"weights: {len(model.weights)}",
    ]
    lines += [f"{w:.16e}" for w in model.weights]
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> NvarModel:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    header = {}
    i = 0
    while i < len(lines) and ":" in lines[i]:
        key, _, val = lines[i].partition(":")
        header[key.strip()] = val.strip()
        i += 1
        if key.strip() == "weights":
            break
    try:
        if header.get("format") != _FORMAT_TAG:
            raise ConfigurationError(f"not an NVAR model file (format {header.get('format')!r})")
        spec = NvarSpec(
            delays=int(header["delays"]),
            degree=int(header["degree"]),
            ridge_lambda=float(header["ridge_lambda"]),
            include_bias=header["include_bias"] == "true",
        )
        n = int(header["weights"])
        weights = [float(v) for v in lines[i:i + n]]
        if len(weights) != n:
            raise ConfigurationError(f"expected {n} weight lines, found {len(weights)}")
        return NvarModel(spec, np.array(weights), float(header["train_residual_std"]))
    except KeyError as exc:
        raise ConfigurationError(f"model file lacks field {exc.args[0]!r}") from None


def save_model(model: NvarModel, path):
    Path(path).write_text(dumps_model(model))


def load_model(path) -> NvarModel:
    return loads_model(Path(path).read_text())


def hourly_daily_mape(history, test, spec: NvarSpec, period: int = 24) -> dict:
    """Table-2-style scores for NVAR and the seasonal-naive baseline.

    Both models make one-step predictions over ``test`` from true lags. The
    daily rows compare block sums of ``period`` predictions with block sums of
    the actual values.
    """
    h = as_array(history, "hourly_daily_mape")
    t = as_array(test, "hourly_daily_mape")
    full = np.concatenate([h, t])
    model = train_nvar(h, spec)
    nvar = one_step_predictions(model, full, len(h))
    naive = full[len(h) - period: len(full) - period]
    n_days = len(t) // period

    def daily(v):
        return v[: n_days * period].reshape(n_days, period).sum(axis=1)

    out = {}
    for name, pred in (("nvar", nvar), ("seasonal_naive", naive)):
        out[name] = {"hourly": mape(t, pred)}
        if n_days:
            out[name]["daily"] = mape(daily(t), daily(pred))
    return out
