"""Exception types.

Every error carries a short ``code`` string; the CLI prints it verbatim in
``n/a: <code>`` cells when a bound cannot be evaluated for a row.
"""


class CovflowError(ValueError):
    code = "error"


class InvalidDimension(CovflowError):
    code = "invalid-dimension"


class IllConditionedPassiveBlock(CovflowError):
    code = "ill-conditioned-passive-block"


class DegenerateSchurComplement(CovflowError):
    code = "degenerate-schur-complement"


class NonPositiveDiagonal(CovflowError):
    code = "non-positive-diagonal"


class InvalidCovariance(CovflowError):
    code = "invalid-covariance"


class InvalidOracle(CovflowError):
    code = "invalid-oracle"


class InvalidOrder(CovflowError):
    code = "invalid-order"


class DegenerateEigenvalues(CovflowError):
    code = "degenerate-eigenvalues"


class PrecisionExhausted(CovflowError):
    code = "precision-exhausted"


class UndefinedAtIdentity(CovflowError):
    code = "undefined-at-identity"


class PositivityViolation(CovflowError):
    code = "positivity-violation"


class InvalidCount(CovflowError):
    code = "invalid-count"


class InvalidSpectrum(CovflowError):
    code = "invalid-spectrum"
