"""Synthetic activations and tensor file IO.

Random numbers come from NumPy's Philox-4x64 counter-based generator. Sample
``k`` of a run with seed ``seed`` uses the 128-bit Philox key
``seed + (k << 64)``, and its standard normals are drawn in row-major
``(sequence, feature)`` order, so every element has a fixed stream position
independent of how many samples are generated or in what order.

Tensor files are little-endian::

    offset  size  field
    0       4     magic b"STMP"
    4       4     uint32 version (1)
    8       4     uint32 ndim (2 or 3)
    12      8*n   uint64 dims (sample, sequence, feature for ndim 3)
    ...           float32 payload, row-major
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .core import ActivationMatrix, ConfigurationError, DataError, IngestionError

__all__ = [
    "SYNTH_KINDS",
    "SynthSpec",
    "rng_for",
    "ar1_filter",
    "generate",
    "pad_sequence",
    "pad_grid",
    "MAGIC",
    "VERSION",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "format_value",
    "write_csv",
]

SYNTH_KINDS = ("ar1", "grid2d", "outlier")
MAGIC = b"STMP"
VERSION = 1


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic activation source.

    ``ar1``: each feature is an independent stationary AR(1) process along
    the sequence with coefficient ``rho``. ``grid2d``: the same recursion
    applied separably over a ``height x width`` token grid (``rho_h`` down
    columns, ``rho_w`` along rows), flattened row-major. ``outlier``:
    independent tokens, Gaussian with ``base_sigma`` except for the first
    ``outlier_count`` channels, which use ``outlier_sigma``.
    """

    kind: str = "ar1"
    s: int = 256
    d: int = 64
    seed: int = 0
    rho: float = 0.95
    rho_h: float = 0.95
    rho_w: float = 0.95
    height: int = 0
    width: int = 0
    base_sigma: float = 1.0
    outlier_sigma: float = 20.0
    outlier_count: int = 4

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ConfigurationError(f"unknown synthetic kind {self.kind!r}")
        if self.s < 1 or self.d < 1:
            raise ConfigurationError("s and d must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.kind == "ar1" and not 0 <= self.rho < 1:
            raise ConfigurationError(f"rho must lie in [0, 1), got {self.rho}")
        if self.kind == "grid2d":
            if self.height * self.width != self.s:
                raise ConfigurationError(
                    f"grid {self.height}x{self.width} does not multiply to s={self.s}"
                )
            for r in (self.rho_h, self.rho_w):
                if not 0 <= r < 1:
                    raise ConfigurationError(f"grid rho must lie in [0, 1), got {r}")
        if self.kind == "outlier":
            if not 0 <= self.outlier_count <= self.d:
                raise ConfigurationError("outlier_count must lie in [0, d]")
            if self.base_sigma < 0 or self.outlier_sigma < 0:
                raise ConfigurationError("sigmas must be non-negative")

    @property
    def grid(self) -> Optional[Tuple[int, int]]:
        return (self.height, self.width) if self.kind == "grid2d" else None


def rng_for(seed: int, index: int = 0) -> np.random.Generator:
    """Philox generator for sample ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(key=int(seed) + (int(index) << 64)))


def ar1_filter(innovations, rho: float, axis: int = 0) -> np.ndarray:
    """Stationary unit-variance AR(1) recursion along ``axis``.

    ``x[0] = e[0]`` and ``x[i] = rho x[i-1] + sqrt(1 - rho**2) e[i]``.
    """
    e = np.moveaxis(np.asarray(innovations, dtype=np.float64), axis, 0)
    x = np.empty_like(e)
    gain = math.sqrt(1.0 - rho * rho)
    x[0] = e[0]
    for i in range(1, e.shape[0]):
        x[i] = rho * x[i - 1] + gain * e[i]
    return np.moveaxis(x, 0, axis)


def _one(spec: SynthSpec, index: int) -> ActivationMatrix:
    z = rng_for(spec.seed, index).standard_normal((spec.s, spec.d))
    if spec.kind == "ar1":
        return ActivationMatrix(ar1_filter(z, spec.rho))
    if spec.kind == "grid2d":
        g = z.reshape(spec.height, spec.width, spec.d)
        g = ar1_filter(g, spec.rho_h, axis=0)
        g = ar1_filter(g, spec.rho_w, axis=1)
        return ActivationMatrix(g.reshape(spec.s, spec.d), grid=spec.grid)
    sigma = np.full(spec.d, float(spec.base_sigma))
    sigma[: spec.outlier_count] = spec.outlier_sigma
    return ActivationMatrix(z * sigma)


def generate(spec: SynthSpec, n_samples: Optional[int] = None):
    """One ``ActivationMatrix``, or a list of ``n_samples`` of them."""
    if n_samples is None:
        return _one(spec, 0)
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    return [_one(spec, k) for k in range(n_samples)]


def pad_sequence(x, length: int) -> np.ndarray:
    """Append zero tokens up to ``length`` rows."""
    x = np.asarray(x, dtype=np.float64)
    if length < x.shape[0]:
        raise ConfigurationError(f"cannot pad {x.shape[0]} rows down to {length}")
    return np.pad(x, ((0, length - x.shape[0]), (0, 0)))


def pad_grid(x, grid: Tuple[int, int], target: Tuple[int, int]) -> np.ndarray:
    """Zero-pad a flattened ``grid`` of tokens to a larger ``target`` grid."""
    x = np.asarray(x, dtype=np.float64)
    h, w = grid
    th, tw = target
    if th < h or tw < w:
        raise ConfigurationError(f"cannot pad grid {h}x{w} to {th}x{tw}")
    g = x.reshape(h, w, x.shape[1])
    g = np.pad(g, ((0, th - h), (0, tw - w), (0, 0)))
    return g.reshape(th * tw, x.shape[1])


def _as_array(batch) -> np.ndarray:
    if isinstance(batch, ActivationMatrix):
        return batch.data
    if isinstance(batch, (list, tuple)):
        return np.stack([np.asarray(b, dtype=np.float64) for b in batch])
    return np.asarray(batch, dtype=np.float64)


def encode_tensor(batch) -> bytes:
    arr = _as_array(batch)
    if arr.ndim not in (2, 3):
        raise DataError(f"tensor files hold 2D or 3D data, got {arr.ndim}D")
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(arr, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("values are non-finite (or overflow float32)")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + payload.tobytes()


def decode_tensor(raw: bytes) -> np.ndarray:
    """Parse tensor file bytes; float32 values are widened to float64."""
    if len(raw) < 12:
        raise IngestionError(f"truncated header: expected 12 bytes, found {len(raw)}")
    if raw[:4] != MAGIC:
        raise IngestionError(f"bad magic {raw[:4]!r} at byte offset 0")
    version, ndim = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise IngestionError(f"unsupported version {version} at byte offset 4")
    if ndim not in (2, 3):
        raise IngestionError(f"unsupported ndim {ndim} at byte offset 8")
    header_len = 12 + 8 * ndim
    if len(raw) < header_len:
        raise IngestionError(
            f"truncated header: expected {header_len} bytes, found {len(raw)}"
        )
    dims = struct.unpack_from(f"<{ndim}Q", raw, 12)
    expected = 4 * math.prod(dims)
    found = len(raw) - header_len
    if found != expected:
        raise IngestionError(
            f"payload at byte offset {header_len}: expected {expected} bytes, found {found}"
        )
    values = np.frombuffer(raw, dtype="<f4", offset=header_len)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise IngestionError(
            f"non-finite value at byte offset {header_len + 4 * int(bad[0])}"
        )
    return values.astype(np.float64).reshape(dims)


def write_tensor(path: Union[str, os.PathLike], batch) -> None:
    data = encode_tensor(batch)
    with open(path, "wb") as f:
        f.write(data)


def read_tensor(path: Union[str, os.PathLike]) -> np.ndarray:
    """Read a tensor file: a 2D ``(s, d)`` array or a 3D ``(n, s, d)`` batch."""
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            raise DataError("refusing to write NaN to CSV")
        return format(v, ".17g")
    return str(v)


def write_csv(path: Union[str, os.PathLike], header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with a header row, ``\\n`` line endings and 17-digit floats."""
    rows = [[format_value(v) for v in row] for row in rows]
    with open(path, "w", newline="", encoding="ascii") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
