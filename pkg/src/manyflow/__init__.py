"""Many-task dataflow engine."""

__version__ = "0.1.0"
