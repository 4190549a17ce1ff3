"""Exception hierarchy.

``InputError`` subclasses signal bad user input (CLI exit code 2);
``TrainingError`` subclasses signal a failed fit (exit code 3).
"""


class SL1MaxError(Exception):
    pass


class InputError(SL1MaxError):
    pass


class TrainingError(SL1MaxError):
    pass


class MalformedLine(InputError):
    def __init__(self, line_no, msg="malformed line"):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class ValueOutOfRange(InputError):
    def __init__(self, line_no, msg="feature value outside [0, 1]"):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class EmptyFile(InputError):
    pass


class EmptyDataset(InputError):
    pass


class SingleLabelViolation(InputError):
    pass


class LengthMismatch(InputError):
    pass


class BadK(InputError):
    pass


class BadSpec(InputError):
    pass


class NoPositives(InputError):
    pass


class VersionMismatch(InputError):
    pass


class ChecksumMismatch(InputError):
    pass


class Unsupported(SL1MaxError):
    pass


class DomainError(SL1MaxError, ValueError):
    pass


class EmptyClass(TrainingError):
    pass


class NonFiniteState(TrainingError):
    pass


class StaleProposal(TrainingError):
    pass


class Converged(Exception):
    """Raised by coordinate selection when no candidate improves the loss."""

    def __init__(self, best_decrease=0.0):
        super().__init__(f"best predicted decrease {best_decrease:.3g}")
        self.best_decrease = best_decrease
