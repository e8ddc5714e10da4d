"""Exception hierarchy shared by every module."""


class GammaDecError(Exception):
    """Base class for all package errors."""


class InputError(GammaDecError, ValueError):
    """Malformed or out-of-range input."""


class CapacityError(GammaDecError):
    """A request exceeds a configured size cap (enumeration, materialization)."""


class ConfigurationError(GammaDecError):
    """Incompatible combination of otherwise valid components."""


class SchemaError(InputError):
    """An input document failed validation; ``problems`` lists every issue found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
