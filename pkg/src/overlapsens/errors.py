"""Typed errors raised across the package.

Each error belongs to one family; the family fixes the CLI exit code.
"""


class OverlapSensError(Exception):
    """Base class for every error raised by overlapsens."""

    exit_code = 1


# -- families ---------------------------------------------------------------

class InputError(OverlapSensError):
    """File system or parse problems."""

    exit_code = 3


class ValidationError(OverlapSensError):
    """Inputs that violate a documented precondition."""

    exit_code = 4


class ConvergenceError(OverlapSensError):
    """Iterative fits that fail to settle."""

    exit_code = 5


class DegenerateError(OverlapSensError):
    """Mathematically degenerate quantities (constant vectors, empty cells)."""

    exit_code = 6


# -- data -------------------------------------------------------------------

class MissingColumn(ValidationError):
    def __init__(self, column, where="dataset"):
        self.column = column
        super().__init__(f"column {column!r} not found in {where}")


class NonBinaryTreatment(ValidationError):
    def __init__(self, row, value):
        self.row = row
        self.value = value
        super().__init__(f"treatment must be 0/1; got {value!r} in row {row}")


class NonFiniteValue(ValidationError):
    def __init__(self, column, row):
        self.column = column
        self.row = row
        super().__init__(f"missing or non-finite value in column {column!r}, row {row}")


class EmptyArm(ValidationError):
    def __init__(self, arm, count, minimum=2):
        self.arm = arm
        self.count = count
        super().__init__(f"treatment arm T={arm} has {count} rows; need at least {minimum}")


class SchemaMismatch(ValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"target population lacks weighting covariate {column!r}")


class ConfigError(ValidationError):
    pass


# -- weights / moments --------------------------------------------------------

class ZeroWeightSum(ValidationError):
    pass


class ZeroWeightSumInArm(ZeroWeightSum):
    def __init__(self, arm):
        self.arm = arm
        super().__init__(f"weights sum to zero in arm T={arm}")


class CorrOfConstant(DegenerateError):
    pass


class NonConvergence(ConvergenceError):
    def __init__(self, iterations):
        self.iterations = iterations
        super().__init__(f"IRLS did not converge after {iterations} iterations")


class SeparationDetected(ConvergenceError):
    """Covariates perfectly predict membership: an observed overlap violation."""


class BootstrapFailure(ConvergenceError):
    def __init__(self, failed, total):
        self.failed = failed
        self.total = total
        super().__init__(f"{failed} of {total} bootstrap draws failed (limit is 10%)")


# -- sensitivity --------------------------------------------------------------

class ParamOutOfRange(ValidationError):
    pass


class BoundViolation(ValidationError):
    pass


class NonPositiveVariance(ValidationError):
    pass


# -- benchmarking -------------------------------------------------------------

class DegenerateSubgroup(DegenerateError):
    def __init__(self, name, share):
        self.name = name
        self.share = share
        super().__init__(
            f"subgroup {name!r} has experimental share {share:g}; cannot benchmark"
        )


class EmptyArmWithinSubgroup(DegenerateError):
    pass


class AllSubgroupsDegenerate(DegenerateError):
    pass


class ExtremePropensity(UserWarning):
    """A fitted selection probability is below the near-violation threshold."""
