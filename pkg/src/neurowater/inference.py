"""Precision-weighted prediction errors, adaptive thresholds and free energy.

States are immutable; every update returns a new state. A layer combines
them as::

    eps = prediction_error(x, pred)
    prec = update_precision(prec, eps)
    tau = update_threshold(tau, weighted_error(prec, eps))
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConfigurationError,
    DivergenceUndefinedError,
    ImpossibleObservationError,
    NumericInputError,
)

LOG_2PI_E = math.log(2 * math.pi * math.e)
FREE_ENERGY_FORMS = ("paper_literal", "standard")


@dataclass(frozen=True)
class PrecisionState:
    """Running error statistics and the precision derived from them."""

    error_mean: float = 0.0
    error_var: float = 0.0
    beta: float = 1e-3
    alpha_var: float = 0.95

    def __post_init__(self):
        if self.beta <= 0:
            raise ConfigurationError("beta must be > 0")
        if not 0 < self.alpha_var < 1:
            raise ConfigurationError("alpha_var must lie in (0, 1)")
        if self.error_var < 0:
            raise ConfigurationError("error_var must be >= 0")

    @property
    def precision(self) -> float:
        return 1.0 / (self.error_var + self.beta)


@dataclass(frozen=True)
class ThresholdState:
    tau: float = 0.0
    alpha: float = 0.9
    warmup_remaining: int = 50

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.tau < 0:
            raise ConfigurationError("tau must be >= 0")
        if self.warmup_remaining < 0:
            raise ConfigurationError("warmup_remaining must be >= 0")

    @property
    def gating(self) -> bool:
        """False while warm-up suppresses transmissions."""
        return self.warmup_remaining == 0


def _finite(*xs):
    for x in xs:
        if not math.isfinite(x):
            raise NumericInputError(f"non-finite input {x!r}")


def prediction_error(input_value: float, prediction: float) -> float:
    _finite(input_value, prediction)
    return input_value - prediction


def weighted_error(state: PrecisionState, eps: float) -> float:
    return state.precision * eps


def update_threshold(state: ThresholdState, weighted_eps: float) -> ThresholdState:
    """EWMA of the weighted error magnitude."""
    tau = state.alpha * state.tau + (1.0 - state.alpha) * abs(weighted_eps)
    return replace(state, tau=tau, warmup_remaining=max(0, state.warmup_remaining - 1))


def update_precision(state: PrecisionState, eps: float) -> PrecisionState:
    """EWMA mean and variance of the error stream.

    The variance follows the incremental exponentially weighted form
    ``var <- a * (var + (1 - a) * d**2)`` with ``d`` the deviation from the
    previous running mean.
    """
    a = state.alpha_var
    d = eps - state.error_mean
    mean = state.error_mean + (1.0 - a) * d
    var = a * (state.error_var + (1.0 - a) * d * d)
    return replace(state, error_mean=mean, error_var=var)


def propagate_threshold(tau_own: float, ewma_abs_err_below: float,
                        ewma_abs_err_above: float, gamma: float = 0.25) -> float:
    """Blend a layer's own threshold with its neighbours' error levels."""
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")
    return (1.0 - gamma) * tau_own + gamma * 0.5 * (ewma_abs_err_below + ewma_abs_err_above)


def gaussian_entropy(precision: float) -> float:
    """Differential entropy of a normal variable with variance ``1/precision``."""
    return 0.5 * (LOG_2PI_E - math.log(precision))


def layer_free_energy(state: PrecisionState, eps: float, form: str = "paper_literal") -> float:
    """Quadratic error term plus the entropy of the precision.

    ``paper_literal`` squares the weighted error, ``(precision * eps)**2 / 2``;
    ``standard`` uses the usual ``precision * eps**2 / 2``.
    """
    pi = state.precision
    if form == "paper_literal":
        quad = 0.5 * (pi * eps) ** 2
    elif form == "standard":
        quad = 0.5 * pi * eps * eps
    else:
        raise ConfigurationError(f"unknown free-energy form {form!r}")
    return quad + gaussian_entropy(pi)


# ---------------------------------------------------------------------------
# Discrete variational free energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteBelief:
    probabilities: np.ndarray

    def __post_init__(self):
        q = np.array(self.probabilities, dtype=np.float64)
        if q.ndim != 1 or np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
            raise ConfigurationError("belief must be a nonnegative vector summing to 1")
        q.setflags(write=False)
        object.__setattr__(self, "probabilities", q)


@dataclass(frozen=True, eq=False)
class DiscreteGenerativeModel:
    """Joint ``p(s, o)``; rows index hidden states, columns observations."""

    joint: np.ndarray

    def __post_init__(self):
        p = np.array(self.joint, dtype=np.float64)
        if p.ndim != 2 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ConfigurationError("joint must be a nonnegative matrix summing to 1")
        p.setflags(write=False)
        object.__setattr__(self, "joint", p)

    def evidence(self, obs: int) -> float:
        return float(self.joint[:, obs].sum())

    def posterior(self, obs: int) -> np.ndarray:
        po = self.evidence(obs)
        if po <= 0:
            raise ImpossibleObservationError(f"observation {obs} has zero probability")
        return self.joint[:, obs] / po


def discrete_free_energy(q: DiscreteBelief, model: DiscreteGenerativeModel,
                         obs_index: int) -> tuple[float, float, float]:
    """Return ``(free_energy, kl, surprise)`` where free energy is ``KL(q || p(s|o)) - ln p(o)``."""
    post = model.posterior(obs_index)
    qp = q.probabilities
    if qp.shape != post.shape:
        raise ConfigurationError("belief and model disagree on the number of states")
    support = qp > 0
    if np.any(post[support] == 0):
        raise DivergenceUndefinedError("belief has mass on states the posterior excludes")
    kl = float(np.sum(qp[support] * np.log(qp[support] / post[support])))
    kl = max(kl, 0.0)
    surprise = -math.log(model.evidence(obs_index))
    return kl + surprise, kl, surprise
