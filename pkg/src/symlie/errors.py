"""Exception hierarchy shared by all modules.

Each class maps onto one CLI exit code (see ``symlie.cli``).
"""


class SymlieError(Exception):
    exit_code = 1


class ValidationError(SymlieError, ValueError):
    """Malformed input or violated precondition."""

    exit_code = 1


class BudgetExceeded(SymlieError):
    """A dimension, size or step budget would be exceeded."""

    exit_code = 2

    def __init__(self, message, *, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class VerificationError(SymlieError):
    """A compiled object failed its numerical or exact check."""

    exit_code = 3

    def __init__(self, message, *, measured=None):
        super().__init__(message)
        self.measured = measured


class Unsynthesizable(SymlieError):
    """Target Hamiltonian lies outside the available Lie algebra."""

    exit_code = 1

    def __init__(self, message, *, residual=None):
        super().__init__(message)
        self.residual = residual
