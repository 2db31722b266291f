"""Exception hierarchy shared by all evplan modules.

Exit-code mapping used by the CLI:
  validation/parsing problems -> 2, infeasibility -> 3, non-convergence -> 4.
"""


class EvPlanError(Exception):
    """Base class for all evplan errors."""


class ValidationError(EvPlanError):
    """Input data fails a structural or cross-reference check."""


class ParseError(ValidationError):
    """A case file could not be parsed; message carries file and line."""


class IoError(EvPlanError):
    """Report emission failed."""


class InfeasibleError(EvPlanError):
    """Base class for 'the model has no feasible answer' conditions."""


class NotRadial(ValidationError):
    """Grid graph has a cycle or a bus not connected to the slack."""


class NotConverged(EvPlanError):
    """Iterative solve exceeded its iteration cap.

    For power flow this signals infeasible or overloaded loading.
    """

    def __init__(self, message: str, iterations: int = 0):
        super().__init__(message)
        self.iterations = iterations


class BaseCaseInfeasible(InfeasibleError):
    """Operational limits are violated before any EV load is added."""


class Disconnected(ValidationError):
    """Transport graph has an unreachable node pair."""


class ZeroHours(ValidationError):
    """Time-cost rate requested with zero annual working hours."""


class Infeasible(InfeasibleError):
    """No feasible decision exists for the given instance."""


class Uncovered(InfeasibleError):
    """A demand node lies outside every open station's service reach."""

    def __init__(self, node: int):
        super().__init__(f"demand node {node} is not covered by any open station")
        self.node = node


class Unstable(InfeasibleError):
    """Queue utilisation >= 1; more chargers are required."""


class NoFeasibleCount(InfeasibleError):
    """No charger count within the cap meets the waiting-time limit."""


class BudgetExceeded(InfeasibleError):
    """Mobile-station operating cost exceeds its hourly budget."""


class CapacityBoundViolated(InfeasibleError):
    """Charging-point capacity falls outside its configured bounds."""


class GridViolation(InfeasibleError):
    """No capacity in the sizing box satisfies voltage/current limits."""


class MaxIterExceeded(NotConverged):
    """Coordination loop hit its iteration cap before the residual targets."""


class InfeasibleHour(InfeasibleError):
    """An EMS hour cannot be balanced with all resources exhausted."""
