"""Exception hierarchy shared by every module."""


class HybridCertError(Exception):
    """Base class for all errors raised by hybridcert."""


class ParameterError(HybridCertError, ValueError):
    """An argument is outside its allowed range or inconsistent with others."""


class DomainError(ParameterError):
    """A function was evaluated outside its mathematical domain."""


class UnboundedQuantileError(DomainError):
    """The requested quantile is infinite (p is exactly 0 or 1)."""


class SizeError(ParameterError):
    """A brute-force computation would exceed its enumeration limit."""


class NumericError(HybridCertError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy value."""


class BracketError(NumericError):
    """A root-finding bracket does not straddle the target."""


class EvaluationError(NumericError):
    """An objective returned a non-finite value."""


class DegenerateCertificateError(HybridCertError):
    """The clean score does not exceed the mass at likelihood ratio zero.

    In that regime the worst-case adversarial value is exactly 0 and no
    threshold exists, so callers should treat the input as uncertifiable.
    """

    def __init__(self, p_a, zero_ratio_mass):
        self.p_a = p_a
        self.zero_ratio_mass = zero_ratio_mass
        super().__init__(
            f"p_a={p_a!r} does not exceed the ratio-0 clean mass {zero_ratio_mass!r}"
        )


class DataError(ParameterError):
    """Problem with a tabular input file. Carries the location when known."""

    def __init__(self, message, path=None, row=None, column=None):
        self.path = path
        self.row = row
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ": ".join([", ".join(where)]) + ": " if where else ""
        super().__init__(prefix + message)


class MissingColumnError(DataError):
    pass


class NonNumericCellError(DataError):
    pass


class EmptyFileError(DataError):
    pass
