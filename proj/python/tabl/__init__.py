"""Temporal-attention bilinear networks with low-rank auxiliary adapters."""

from ._core import *  # noqa: F401,F403
from ._core import (
    ConfigError,
    DomainError,
    Error,
    IntegrityError,
    IoError,
    ParseError,
    ShapeError,
    StateError,
)
