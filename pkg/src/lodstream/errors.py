"""Exception types shared across the package.

Fatal resource exhaustion (arena, spill, backlog) is not recoverable by the
caller: the affected structures may be partially updated.  File format errors
are raised before any tree state is touched.
"""
from __future__ import annotations


class OutOfArena(MemoryError):
    """Arena capacity exhausted.  The arena never frees, so this is fatal."""


class SpillOverflow(RuntimeError):
    """Spill buffer exceeded its configured capacity during a split."""


class BacklogOverflow(RuntimeError):
    """Voxel backlog exceeded its configured capacity during sampling."""


class BadMagic(ValueError):
    """Input file does not start with the expected signature."""


class UnsupportedFormat(ValueError):
    """File signature is valid but the variant is one we do not read."""


class Truncated(ValueError):
    """File ends mid-record or before the length its header promises."""


class EmptyFile(ValueError):
    """File contains no point records."""


class MalformedMessage(ValueError):
    """Stream message failed to decode (bad tag or short payload)."""
