"""Exception and warning types raised across the package."""


class SkillScaleError(Exception):
    """Base class for all package errors."""

    code = "error"

    def to_record(self):
        return {"error": self.code, "type": type(self).__name__, "message": str(self)}


class DataError(SkillScaleError, ValueError):
    """Malformed or invalid input table."""

    code = "data"

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.row = row
        self.column = column

    def to_record(self):
        rec = super().to_record()
        rec.update(row=self.row, column=self.column)
        return rec


class ConfigError(SkillScaleError, ValueError):
    code = "config"


class DimensionError(SkillScaleError, ValueError):
    """Shapes or counts incompatible with the requested model."""

    code = "dimension"


class DomainError(SkillScaleError, ValueError):
    code = "domain"


class NumericalError(SkillScaleError, ArithmeticError):
    code = "numerical"


class InfeasibleBudgetError(SkillScaleError, ValueError):
    code = "infeasible"


class RankDeficientWarning(UserWarning):
    pass


class ConvergenceWarning(UserWarning):
    pass
