"""Shared exception base for data and usage errors raised by the pipeline.

Every module-specific error subclasses ``RadsumError`` so the CLI can map the
whole family to a single "data error" exit code.
"""


class RadsumError(Exception):
    pass
