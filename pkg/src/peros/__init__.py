"""Declarative natural-language interface over a whitelisted operation
registry, with sandboxed reversible execution and a trace-driven
adaptive-storage lab."""

__version__ = "0.1.0"
