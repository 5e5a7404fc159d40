"""Exception hierarchy shared by all didiv modules.

Every error carries a stable machine-readable ``code`` so the CLI can emit
structured JSON diagnostics without string matching.
"""


class DidivError(Exception):
    """Base class for all didiv errors."""

    code = "ERROR"

    def payload(self) -> dict:
        """Extra key/value context for structured error output."""
        return {}


class SchemaError(DidivError):
    """A required column is missing or has the wrong type."""

    code = "SCHEMA_ERROR"


class DuplicateCell(DidivError):
    """The same (unit, time) pair appears more than once."""

    code = "DUPLICATE_CELL"

    def __init__(self, unit, time):
        self.unit = unit
        self.time = time
        super().__init__(f"duplicate observation for unit {unit!r} at time {time!r}")

    def payload(self):
        return {"unit": str(self.unit), "time": self.time}


class InvalidInstrument(DidivError):
    """Instrument values outside {0, 1}."""

    code = "INVALID_INSTRUMENT"


class NotStaggered(DidivError):
    """A unit's instrument switches off after switching on."""

    code = "NOT_STAGGERED"

    def __init__(self, unit, period):
        self.unit = unit
        self.period = period
        super().__init__(
            f"instrument for unit {unit!r} turns off at period {period!r}; "
            "staggered adoption requires Z to be monotone within units"
        )

    def payload(self):
        return {"unit": str(self.unit), "period": self.period}


class NoVariation(DidivError):
    """No usable instrument variation (all never-exposed, single cohort, ...)."""

    code = "NO_VARIATION"


class EmptyCell(DidivError):
    """A cohort-by-window cell contains no observations."""

    code = "EMPTY_CELL"


class NotBalanced(DidivError):
    """Operation requires a balanced panel."""

    code = "NOT_BALANCED"


class ConvergenceFailure(DidivError):
    """Alternating projections did not converge within the sweep cap."""

    code = "CONVERGENCE_FAILURE"

    def __init__(self, final_change, sweeps):
        self.final_change = final_change
        self.sweeps = sweeps
        super().__init__(
            f"two-way residualization did not converge after {sweeps} sweeps "
            f"(final max change {final_change:.3e})"
        )

    def payload(self):
        return {"final_change": self.final_change, "sweeps": self.sweeps}


class WeakDenominator(DidivError):
    """A first-stage covariance or DID is numerically indistinguishable from 0."""

    code = "WEAK_DENOMINATOR"

    def __init__(self, value, threshold, context=""):
        self.value = value
        self.threshold = threshold
        self.context = context
        msg = f"denominator {value:.3e} below threshold {threshold:.3e}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)

    def payload(self):
        return {"value": self.value, "threshold": self.threshold, "context": self.context}


class DegenerateWeights(DidivError):
    """All analytic weights are zero."""

    code = "DEGENERATE_WEIGHTS"


class CollinearCovariates(DidivError):
    """The double-demeaned covariate moment matrix is numerically singular."""

    code = "COLLINEAR_COVARIATES"


class OracleSingular(DidivError):
    """The brute-force dummy design matrix is rank deficient."""

    code = "ORACLE_SINGULAR"


class MissingControl(DidivError):
    """The requested control cohort does not exist in the data."""

    code = "MISSING_CONTROL"


class IncompatibleSpecs(DidivError):
    """Two decompositions have irreconcilable cohort structures."""

    code = "INCOMPATIBLE_SPECS"


class IncompleteSchedule(DidivError):
    """A DGP effect schedule is missing a reachable (cohort, relative period)."""

    code = "INCOMPLETE_SCHEDULE"

    def __init__(self, which, cohort, rel_period):
        self.which = which
        self.cohort = cohort
        self.rel_period = rel_period
        super().__init__(
            f"{which} schedule missing entry for cohort {cohort}, relative period {rel_period}"
        )

    def payload(self):
        return {"schedule": self.which, "cohort": self.cohort, "rel_period": self.rel_period}


class OracleDegenerate(DidivError):
    """The population denominator of the estimand is not positive."""

    code = "ORACLE_DEGENERATE"
