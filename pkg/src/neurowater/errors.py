"""Exception hierarchy shared by all subpackages."""


class NeurowaterError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(NeurowaterError, ValueError):
    """A parameter or configuration value is outside its valid domain."""


class InsufficientDataError(NeurowaterError, ValueError):
    """A series is too short (or too empty) for the requested operation."""


class UnrecoverableDataError(InsufficientDataError):
    """No present samples remain to reconstruct a series from."""


class PreconditionError(NeurowaterError, ValueError):
    """Input violates an operation's precondition (e.g. MISSING samples)."""


class RankDeficiencyError(NeurowaterError, ArithmeticError):
    """The regularized normal matrix is singular."""


class UndefinedMetricError(NeurowaterError, ArithmeticError):
    """A metric has no scorable points."""


class NumericInputError(NeurowaterError, ValueError):
    """A numeric input is NaN or infinite."""


class ImpossibleObservationError(NeurowaterError, ValueError):
    """The observation has zero marginal probability under the model."""


class DivergenceUndefinedError(NeurowaterError, ValueError):
    """KL divergence is infinite: the belief puts mass where the posterior has none."""


class TopologyError(ConfigurationError):
    """The edge/fog/cloud hierarchy violates a structural invariant."""


class LifecycleError(NeurowaterError, RuntimeError):
    """An object was used before it was ready (e.g. stepping an unbuilt network)."""


class InvariantError(NeurowaterError, AssertionError):
    """A runtime invariant was breached. Always indicates a bug."""
