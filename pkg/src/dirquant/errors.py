"""Exception hierarchy shared by the library and the CLI.

Every class carries a stable ``code`` string that the CLI writes into its
machine-readable error report.
"""


class DirquantError(Exception):
    code = "error"

    def report(self):
        return {"error": self.code, "message": str(self)}


class InvalidArgument(DirquantError, ValueError):
    code = "invalid-argument"


class InvalidState(DirquantError, RuntimeError):
    code = "invalid-state"


class IngestionError(InvalidArgument):
    code = "ingestion-error"

    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column

    def report(self):
        out = super().report()
        out.update(row=self.row, column=self.column)
        return out


class NumericalFailure(DirquantError, ArithmeticError):
    code = "numerical-failure"


class DivergedChain(NumericalFailure):
    code = "diverged-chain"

    def __init__(self, message, iteration):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration

    def report(self):
        out = super().report()
        out["iteration"] = self.iteration
        return out


class AdjustmentFailure(DirquantError):
    code = "adjustment-failure"

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst

    def report(self):
        out = super().report()
        out["worst"] = self.worst
        return out
