"""Exception hierarchy shared by all modules."""


class TeamLagrangeError(Exception):
    """Base class for every error raised by the package."""


class InvalidInput(TeamLagrangeError, ValueError):
    pass


# scenario_space
class NonPositiveProbability(InvalidInput):
    pass


class ProbabilitySumMismatch(InvalidInput):
    pass


class OverlappingBlocks(InvalidInput):
    pass


class UncoveredAtom(InvalidInput):
    pass


class EmptyBlock(InvalidInput):
    pass


class SpaceMismatch(InvalidInput):
    pass


# team_model
class CycleDetected(InvalidInput):
    pass


class StageOrderViolation(InvalidInput):
    pass


class EmptyStage(InvalidInput):
    pass


class UnknownDM(InvalidInput, KeyError):
    pass


class DimensionMismatch(InvalidInput):
    pass


class SafeActionNotAdmissible(InvalidInput):
    pass


class SafeActionNotAdapted(InvalidInput):
    pass


class SolverNotConverged(TeamLagrangeError):
    pass


# programs / lagrangian
class NoConstraintForDM(TeamLagrangeError, KeyError):
    pass


class NegativeMaterialMultiplier(InvalidInput):
    pass


class MaterialMultiplierNotAdapted(InvalidInput):
    pass


class NotIntegralObjective(TeamLagrangeError):
    pass


class InnerNotConverged(TeamLagrangeError):
    pass


# saddle_solver
class PreconditionFailed(TeamLagrangeError):
    pass


class OracleTooLarge(TeamLagrangeError):
    def __init__(self, grid_points: int, limit: int):
        super().__init__(f"oracle grid has {grid_points} points (limit {limit})")
        self.grid_points = grid_points
        self.limit = limit


class BallNotSupportedByOracle(TeamLagrangeError):
    pass


class EmptyFeasibleSet(TeamLagrangeError):
    pass


class EmptyHistory(TeamLagrangeError):
    pass
