"""Subprocess adapter serving the interpreter's pickle readers over
line-delimited JSON, for differential comparison against reimplemented
readers running in another process."""

__version__ = "0.1.0"

from .server import (
    TARGETS,
    UNRENDERABLE,
    PersistentId,
    StubFunction,
    build_buffers,
    canonicalize,
    fnv1a64,
    main,
    resolve_import,
    scrub_addresses,
    serve,
    splitmix64_stream,
)

__all__ = [
    "__version__",
    "TARGETS",
    "UNRENDERABLE",
    "PersistentId",
    "StubFunction",
    "build_buffers",
    "canonicalize",
    "fnv1a64",
    "main",
    "resolve_import",
    "scrub_addresses",
    "serve",
    "splitmix64_stream",
]
