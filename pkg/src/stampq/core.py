"""Dense matrix primitives shared by the rest of the package.

Activations are stored as ``(sequence, feature)`` float64 arrays. Sequence
transforms multiply from the left and feature transforms from the right.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

__all__ = [
    "StampError",
    "DimensionError",
    "DataError",
    "ConfigurationError",
    "NumericalError",
    "AllocationError",
    "IngestionError",
    "ActivationMatrix",
    "as_matrix",
    "as_vector",
    "matmul",
    "frobenius_norm_sq",
]


class StampError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(StampError, ValueError):
    pass


class DataError(StampError, ValueError):
    pass


class ConfigurationError(StampError, ValueError):
    pass


class NumericalError(StampError, ArithmeticError):
    pass


class AllocationError(StampError, ValueError):
    pass


class IngestionError(StampError, ValueError):
    pass


@dataclass(frozen=True)
class ActivationMatrix:
    """A sequence x feature activation with an optional 2D token-grid tag.

    ``grid`` is ``None`` for plain sequences, or ``(height, width)`` when
    the rows flatten a row-major token grid.
    """

    data: np.ndarray
    grid: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        arr = np.array(as_matrix(self.data), copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.grid is not None:
            h, w = (int(v) for v in self.grid)
            if h < 1 or w < 1 or h * w != arr.shape[0]:
                raise DimensionError(
                    f"grid {h}x{w} does not flatten to {arr.shape[0]} rows"
                )
            object.__setattr__(self, "grid", (h, w))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


def as_matrix(x, name: str = "x") -> np.ndarray:
    """Coerce to a finite 2D float64 array, raising on anything else."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def as_vector(v, name: str = "v") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def frobenius_norm_sq(x) -> float:
    """Sum of squared entries."""
    arr = np.asarray(x, dtype=np.float64)
    return float(np.sum(arr * arr))
