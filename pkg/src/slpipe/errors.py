"""Exception hierarchy shared by the library and the CLI."""


class SlpipeError(Exception):
    """Base class; ``kind`` is the machine-readable tag used by the CLI."""

    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class SchemaError(SlpipeError, ValueError):
    """Input document is malformed or violates an invariant.

    ``path`` points at the offending field, e.g. ``model[3].fwd_s``.
    """

    kind = "schema"

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path

    def to_dict(self):
        d = super().to_dict()
        d["path"] = self.path
        return d


class InvalidPlanError(SlpipeError, ValueError):
    kind = "invalid_plan"


class InfeasibleMemoryError(SlpipeError):
    """A partition needs more memory than its chosen option provides."""

    kind = "infeasible_memory"

    def __init__(self, partition, required_mb, available_mb):
        super().__init__(
            f"partition {partition} needs {required_mb:.3f} MB "
            f"but has {available_mb:.3f} MB"
        )
        self.partition = partition
        self.required_mb = required_mb
        self.available_mb = available_mb


class InfeasibleError(SlpipeError):
    """No plan satisfies the memory constraints."""

    kind = "infeasible"


class BudgetExceededError(SlpipeError):
    kind = "budget"

    def __init__(self, bound, limit):
        super().__init__(f"search budget exceeded: {bound} > {limit}")
        self.bound = bound
        self.limit = limit

    def to_dict(self):
        d = super().to_dict()
        d["bound"] = self.bound
        d["limit"] = self.limit
        return d


class CycleError(SlpipeError):
    kind = "cycle"
