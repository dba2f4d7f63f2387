"""Exception hierarchy shared by all modules."""


class IsoradialError(Exception):
    """Base class. ``exit_code`` is what the CLI returns when it surfaces."""

    exit_code = 2


class GeometryError(IsoradialError):
    pass


class CollinearFace(GeometryError):
    pass


class NonCocyclic(GeometryError):
    pass


class BoundaryEdge(GeometryError):
    pass


class BoundaryFace(GeometryError):
    pass


class DegenerateFace(GeometryError):
    pass


class DuplicatePoints(GeometryError):
    pass


class AllCollinear(GeometryError):
    pass


class InvalidAngles(GeometryError):
    pass


class NotIsoradial(GeometryError):
    pass


class Disconnected(IsoradialError):
    pass


class WindowTooSmall(IsoradialError):
    pass


class PoleHit(IsoradialError):
    exit_code = 3


class SingularSymbol(IsoradialError):
    exit_code = 3


class NonPositiveDefinite(IsoradialError):
    exit_code = 3


class ZeroField(IsoradialError):
    pass


class InjectivityViolated(IsoradialError):
    pass


class DegenerateQuartic(IsoradialError):
    exit_code = 3


class EpsilonBeyondMax(IsoradialError):
    pass


class EpsilonOutOfRange(IsoradialError):
    pass


class SupportsOverlap(IsoradialError):
    pass


class ConfigError(IsoradialError):
    pass
