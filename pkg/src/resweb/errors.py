"""Exception types shared across the package.

Every numerical failure derives from ``NumericalFailure`` so the CLI can map
it to a single exit code.  Configuration problems derive from ``ConfigError``.
"""


class ReswebError(Exception):
    pass


class ConfigError(ReswebError, ValueError):
    pass


class NumericalFailure(ReswebError):
    pass


# lattice
class ZeroVector(ReswebError, ValueError):
    pass


class NotIrreducible(ReswebError, ValueError):
    pass


class BadShape(ReswebError, ValueError):
    pass


# model
class NotConvex(NumericalFailure):
    pass


class DegreeOverflow(ReswebError, ValueError):
    pass


# resonance
class NoIntersection(NumericalFailure):
    pass


class StallDetected(NumericalFailure):
    pass


class CoverFails(NumericalFailure):
    def __init__(self, report, message=None):
        self.report = report
        n = len(report.uncovered_samples)
        super().__init__(message or f"{n} circle samples not covered by any disc")


class DegenerateSingleResonance(NumericalFailure):
    pass


class NoResonanceWithinDelta(NumericalFailure):
    pass


# normalform
class ResonantDivision(NumericalFailure):
    pass


class NewtonDiverged(NumericalFailure):
    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)


class DomainEmpty(NumericalFailure):
    pass


# averaged
class MinimizationStuck(NumericalFailure):
    pass


class DegenerateMinimizer(NumericalFailure):
    pass


class NonConvexSamples(NumericalFailure):
    def __init__(self, message, triple=None):
        self.triple = triple
        super().__init__(message)


# estimates
class MinimalSetUnavailable(NumericalFailure):
    pass


# weakkam
class NonUniqueShortSegment(NumericalFailure):
    pass


class NotConverged(NumericalFailure):
    def __init__(self, message, partial=None):
        self.partial = partial
        super().__init__(message)


class CopiesNotSeparated(NumericalFailure):
    pass
