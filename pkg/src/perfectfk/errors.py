"""Exception hierarchy shared by all modules."""


class PerfectFKError(Exception):
    """Base class for every error raised by this package."""


class DomainError(PerfectFKError, ValueError):
    """An argument lies outside the domain of an offspring law or sampler.

    Raised in particular when a potential value exceeds its certified
    bound, which means the model's bounds are wrong.
    """


class CalibrationError(PerfectFKError, ValueError):
    pass


class StructuralError(PerfectFKError, ValueError):
    """A forest is internally inconsistent (bad blocks, spine, counts)."""


class ConditioningError(PerfectFKError, ValueError):
    """The conditioning path has zero target density."""


class MajorizationError(PerfectFKError, ValueError):
    """A majorizing potential H was found below G at an evaluated state."""


class PopulationCapError(PerfectFKError, RuntimeError):
    def __init__(self, generation, population, cap):
        self.generation = generation
        self.population = population
        self.cap = cap
        super().__init__(
            f"population {population} at generation {generation} exceeds cap {cap}"
        )


class DepthCapError(PerfectFKError, RuntimeError):
    def __init__(self, depth_cap, max_ratio):
        self.depth_cap = depth_cap
        self.max_ratio = max_ratio
        super().__init__(
            f"no coalescence within {depth_cap} backward steps "
            f"(running max of proposal/bound ratio: {max_ratio:.4g})"
        )


class ContractionError(PerfectFKError, ValueError):
    def __init__(self, message, witness=None):
        self.witness = witness
        super().__init__(message)


class ExplorationError(PerfectFKError, RuntimeError):
    """Bound exploration could not be completed (config or cell cap)."""


class DegeneracyError(PerfectFKError, RuntimeError):
    """All particle weights vanished in the SMC pre-run."""


class ConfigError(PerfectFKError, ValueError):
    def __init__(self, message, path=()):
        self.path = tuple(path)
        super().__init__(message)
