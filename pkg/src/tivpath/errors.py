"""Exception hierarchy shared across the package."""


class TivPathError(Exception):
    """Base class for all package errors."""


class InputError(TivPathError, ValueError):
    """An operation received arguments that violate its preconditions."""


class EmptyDomainError(InputError):
    """An aggregate was requested over an empty population."""


class InvalidSpecError(InputError):
    """A world or campaign specification is internally inconsistent."""


class ValidationError(InputError):
    """One or more input records failed validation.

    Collects every bad row so a caller sees all problems at once instead of
    fixing them one by one. ``problems`` holds (line_number, reason) tuples;
    line numbers are 1-based and include the header line of CSV files.
    """

    def __init__(self, source: str, problems: list[tuple[int, str]]):
        self.source = source
        self.problems = list(problems)
        lines = "; ".join(f"line {n}: {why}" for n, why in self.problems[:20])
        more = "" if len(self.problems) <= 20 else f" (+{len(self.problems) - 20} more)"
        super().__init__(f"{source}: {len(self.problems)} invalid record(s): {lines}{more}")


class BackendError(TivPathError, RuntimeError):
    """A measurement backend failed at runtime (timeout, missing data source)."""
