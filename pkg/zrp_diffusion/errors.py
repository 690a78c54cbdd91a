class ZrpDiffusionError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(ZrpDiffusionError):
    """Inputs that violate a documented precondition."""


class NumericalError(ZrpDiffusionError):
    """A computation that broke down on otherwise valid inputs."""


class ContractViolation(ZrpDiffusionError):
    """A verify routine found a value outside its contract."""


# chain-core
class NotIrreducible(ValidationError):
    pass


class NonzeroDiagonal(ValidationError):
    pass


class NegativeRate(ValidationError):
    pass


class BadB(ValidationError):
    pass


# trace
class SingularSystem(NumericalError):
    pass


# zrp-sim
class EmptyConfig(ValidationError):
    pass


class HorizonOverflow(NumericalError):
    pass


# diffusion-sim
class NonFiniteDrift(NumericalError):
    pass


class StepUnderflow(NumericalError):
    pass


class BadQ(ValidationError):
    pass


# superharmonic
class DegenerateFace(ValidationError):
    pass


class EmptyRegion(ValidationError):
    pass


# harness
class MismatchedCheckpoints(ValidationError):
    pass


class TooFewReplicas(ValidationError):
    pass
