"""Exception hierarchy.

Every failure raised by the package derives from :class:`SmaError`. Two
branches matter to the command-line front end: :class:`InputError` (bad or
unreadable input, exit status 2) and :class:`ValidationError` (well-formed
input that violates an invariant or precondition, exit status 3).
"""


class SmaError(Exception):
    """Base class for all package errors."""


class InputError(SmaError):
    """Input could not be read or parsed."""


class ValidationError(SmaError, ValueError):
    """Input parsed but violates an invariant or precondition."""


# -- ingest ---------------------------------------------------------------


class MalformedTable(InputError):
    pass


class BadValue(InputError):
    def __init__(self, row, col, text=""):
        self.row = row
        self.col = col
        self.text = text
        super().__init__(f"bad value {text!r} at row {row}, column {col}")


class DuplicateGene(ValidationError):
    def __init__(self, gene):
        self.gene = gene
        super().__init__(f"duplicate gene id {gene!r}")


class DuplicateSample(ValidationError):
    def __init__(self, sample):
        self.sample = sample
        super().__init__(f"duplicate sample id {sample!r}")


class BadGeneId(ValidationError):
    pass


class SampleMismatch(ValidationError):
    pass


class ConflictingRegulation(ValidationError):
    def __init__(self, gene, sample):
        self.gene = gene
        self.sample = sample
        super().__init__(
            f"gene {gene!r} has both up and down values in sample {sample!r}"
        )


class MalformedGmtLine(InputError):
    def __init__(self, line, reason="fewer than 3 fields"):
        self.line = line
        super().__init__(f"malformed GMT line {line}: {reason}")


class WeightOutOfRange(ValidationError):
    pass


class SelfLoop(ValidationError):
    pass


class DuplicateEdge(ValidationError):
    pass


# -- preprocess -----------------------------------------------------------


class BadCutoff(ValidationError):
    pass


class UndefinedCorrelation(ValidationError):
    pass


class InsufficientData(ValidationError):
    def __init__(self, gene, detail=""):
        self.gene = gene
        msg = f"gene {gene!r} has fewer than 2 comparable values"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class EmptyUniverse(ValidationError):
    pass


# -- fgn ------------------------------------------------------------------


class DegenerateInput(ValidationError):
    pass


class MissingEvidence(ValidationError):
    def __init__(self, gene):
        self.gene = gene
        super().__init__(f"no evidence vector for gene {gene!r}")


class TooLarge(ValidationError):
    pass


class VariableMismatch(ValidationError):
    pass


# -- bayes / hmc ----------------------------------------------------------


class DomainError(ValidationError):
    pass


class NonFinite(SmaError, ArithmeticError):
    """A log density evaluated to a non-finite value."""


class Divergent(SmaError, ArithmeticError):
    """Leapfrog integration produced a non-finite state."""


class BadInit(ValidationError):
    pass


class InsufficientDraws(ValidationError):
    pass


class EmptyChains(ValidationError):
    pass


# -- report ---------------------------------------------------------------


class WriteError(SmaError, OSError):
    pass


class EmptyTrace(ValidationError):
    pass


class ConvergenceFailure(SmaError):
    """Sampler diagnostics did not pass their thresholds."""
