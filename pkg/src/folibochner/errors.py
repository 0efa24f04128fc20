"""Exception hierarchy shared by all modules."""


class FoliBochnerError(Exception):
    """Base class for every error raised by the package."""


# jets / expressions
class DomainError(FoliBochnerError, ValueError):
    """Elementary function evaluated outside its domain at the base point."""


class ArityError(FoliBochnerError, ValueError):
    """Expression references a chart variable beyond the chart dimension."""


class OrderError(FoliBochnerError, ValueError):
    """Requested derivative exceeds the available jet order."""


class BadExpression(FoliBochnerError, ValueError):
    """Expression text could not be parsed."""


# geometry
class ModelError(FoliBochnerError):
    """Model specification is malformed or cannot be resolved."""


class MetricNotSPD(FoliBochnerError):
    pass


class DegenerateVerticalSpan(FoliBochnerError):
    pass


class RankDeficientHorizontal(FoliBochnerError):
    pass


# models
class BadStructureConstants(ModelError):
    """Structure constants violate antisymmetry, Jacobi or the grading."""


# tensors
class EmptySampleSet(FoliBochnerError, ValueError):
    pass


class InfiniteLambdaWithNonzeroIota(FoliBochnerError, ValueError):
    pass


# heat
class StructureMismatch(FoliBochnerError, ValueError):
    pass


class SchemeUnsupported(FoliBochnerError):
    pass


class NonpositiveTime(FoliBochnerError, ValueError):
    pass


class NotStepTwo(FoliBochnerError):
    pass


class NotCompactModel(FoliBochnerError):
    pass


# comparison
class RadiusBeyondConjugate(FoliBochnerError, ValueError):
    pass


class NonpositiveK(FoliBochnerError, ValueError):
    pass


class SampleAtOrigin(FoliBochnerError, ValueError):
    pass


# cli
class ConfigError(FoliBochnerError):
    pass
