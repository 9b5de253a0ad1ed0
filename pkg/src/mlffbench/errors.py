class SingularityError(ArithmeticError):
    """Two atoms (numerically) coincide where a direction or angle is needed."""


class StaleTapeError(RuntimeError):
    """A backward tape was used after the positions it recorded changed."""


class UnsupportedSpeciesError(KeyError):
    pass


class ConfigurationError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, what: str = "energy/forces"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step
