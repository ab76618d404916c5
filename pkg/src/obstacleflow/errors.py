"""Exception types shared across the package.

Two failure families matter to callers: bad configuration (caught before any
numerics run, CLI exit code 1) and numerical failure (a solver that did not
reach its tolerance, CLI exit code 2).
"""


class ConfigurationError(ValueError):
    """Invalid grid/scenario/parameter combination detected before solving."""


class ScenarioValidationError(ConfigurationError):
    """Scenario file rejected; collects every problem found, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DomainError(ConfigurationError):
    """An operation's mathematical precondition does not hold for these inputs."""


class NumericalError(RuntimeError):
    """An iterative solver failed to converge. Carries the residual it reached."""

    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class StepNonConvergence(NumericalError):
    """The per-step variational-inequality solve hit max_iter above tolerance."""
