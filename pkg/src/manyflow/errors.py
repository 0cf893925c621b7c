"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ManyflowError(Exception):
    pass


class ConfigError(ManyflowError):
    pass


# -- dataflow -----------------------------------------------------------------

class CycleError(ManyflowError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("dependency cycle: " + " -> ".join(self.cycle))


class UnboundInputError(ManyflowError):
    def __init__(self, futures):
        self.futures = sorted(futures)
        super().__init__("unbound input(s): " + ", ".join(self.futures))


class DoubleAssignError(ManyflowError):
    def __init__(self, future, detail=""):
        self.future = future
        msg = f"future {future!r} assigned more than once"
        super().__init__(msg + (f" ({detail})" if detail else ""))


class UnknownTask(ManyflowError, KeyError):
    def __str__(self):
        return f"unknown task {self.args[0]!r}"


class DeterminismError(ManyflowError):
    """A re-executed task produced different bytes than its first run."""


# -- datastore ----------------------------------------------------------------

class CapacityError(ManyflowError):
    pass


class MissingArtifact(ManyflowError):
    def __init__(self, name, detail="no live location"):
        self.name = name
        super().__init__(f"{name}: {detail}")


class EmptyRing(ManyflowError):
    pass


class BadHint(ManyflowError):
    pass


class StoreIoError(ManyflowError, OSError):
    pass


# -- execution ----------------------------------------------------------------

class SpawnError(ManyflowError):
    pass


class MissingOutput(ManyflowError):
    def __init__(self, task, path):
        self.task = task
        self.path = path
        super().__init__(f"task {task} exited 0 but did not produce {path}")


class TaskExitError(ManyflowError):
    def __init__(self, task, returncode):
        self.task = task
        self.returncode = returncode
        super().__init__(f"task {task} exited with status {returncode}")


class UnknownNode(ManyflowError):
    pass
