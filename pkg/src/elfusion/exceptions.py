"""Exception hierarchy for elfusion."""


class FusionError(Exception):
    """Base class for all errors raised by elfusion."""


class DataError(FusionError, ValueError):
    """Input data violates a documented invariant."""


class DimMismatch(FusionError, ValueError):
    """Array or block dimensions are inconsistent."""


class NonFiniteEvaluation(FusionError, ArithmeticError):
    """A function probe returned NaN or inf."""


class SingularNuisanceBlock(FusionError, ArithmeticError):
    """The nuisance Hessian block is (numerically) singular."""


class SingularDesign(FusionError, ArithmeticError):
    """Regression design matrix is not positive definite."""


class SingularA(FusionError, ArithmeticError):
    """The one-step system matrix is (numerically) singular."""


class SingularJ(FusionError, ArithmeticError):
    """Jacobian of an estimating function is singular."""


class Separation(FusionError, ArithmeticError):
    """Logistic MLE diverges because the classes are separable."""


class NoConvergence(FusionError, ArithmeticError):
    """An iterative solver hit its iteration limit."""


class NoEvents(DataError):
    """Survival data contain no observed events."""


class Collinear(FusionError, ArithmeticError):
    """Covariates are collinear on the risk sets."""


class EmptySubgroup(DataError):
    """A constraint subgroup has no internal members."""


class NoRoot(FusionError, ArithmeticError):
    """Root finding for the initial constraint parameters failed."""


class HullViolation(FusionError, ArithmeticError):
    """Zero lies outside the convex hull of the constraint rows."""


class TooManyFailures(FusionError, RuntimeError):
    """More than the allowed share of Monte Carlo replicates failed."""


class ConfigError(FusionError, ValueError):
    """A configuration file is malformed or has unknown keys."""
