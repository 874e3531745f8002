"""Simulated asymmetric min-max integer quantization.

Each quantization group (a whole token, or a contiguous block of its
features) gets a step size ``range / (2**b - 1)`` and an integer offset
``rint(-min / step)``. Codes are ``clip(rint(x / step) + offset, 0, 2**b - 1)``
and dequantization is ``(code - offset) * step``. All rounding is
round-half-to-even (``numpy.rint``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, DimensionError, NumericalError, as_matrix

__all__ = [
    "MAX_BITS",
    "QuantGranularity",
    "PER_TOKEN",
    "per_block",
    "QuantSpec",
    "QuantizedTensor",
    "fit_spec",
    "quantize",
    "dequantize",
    "fake_quant",
    "quant_error",
    "token_errors",
    "sqnr_db",
]

MAX_BITS = 16
# Largest |value| / step for which codes stay exact in float64.
MAX_STEP_RATIO = 2.0**52


@dataclass(frozen=True)
class QuantGranularity:
    """``block_size=None`` means one group per token."""

    block_size: Optional[int] = None

    def __post_init__(self):
        if self.block_size is not None and int(self.block_size) < 1:
            raise ConfigurationError("block_size must be >= 1")

    @property
    def per_token(self) -> bool:
        return self.block_size is None

    def n_groups(self, d: int) -> int:
        if self.block_size is None:
            return 1
        return -(-d // self.block_size)

    def group_width(self, d: int) -> int:
        return d if self.block_size is None else min(self.block_size, d)

    @classmethod
    def parse(cls, text: str) -> "QuantGranularity":
        """Parse ``per-token`` or ``per-block:<n>``."""
        text = text.strip()
        if text == "per-token":
            return cls()
        if text.startswith("per-block:"):
            try:
                n = int(text.split(":", 1)[1])
            except ValueError:
                raise ConfigurationError(f"bad block size in {text!r}") from None
            return cls(n)
        raise ConfigurationError(f"unknown granularity {text!r}")

    def __str__(self):
        return "per-token" if self.block_size is None else f"per-block:{self.block_size}"


PER_TOKEN = QuantGranularity()


def per_block(block_size: int) -> QuantGranularity:
    return QuantGranularity(int(block_size))


@dataclass(frozen=True)
class QuantSpec:
    """Quantization parameters for an ``(s, d)`` activation.

    ``step``, ``offset``, ``constant`` and ``level`` all have shape
    ``(s, n_groups)``. Constant groups (zero range) use ``step=1``,
    ``offset=0`` and dequantize to their stored ``level``.
    """

    granularity: QuantGranularity
    bits: np.ndarray
    step: np.ndarray
    offset: np.ndarray
    constant: np.ndarray
    level: np.ndarray
    n_features: int

    @property
    def shape(self):
        return (self.bits.shape[0], self.n_features)

    @property
    def qmax(self) -> np.ndarray:
        return (2 ** self.bits.astype(np.int64)) - 1

    def expand(self, arr: np.ndarray) -> np.ndarray:
        """Broadcast a per-group array to per-element shape ``(s, d)``."""
        return _expand(arr, self.granularity, self.n_features)


@dataclass(frozen=True)
class QuantizedTensor:
    codes: np.ndarray
    spec: QuantSpec


def _expand(arr, granularity, d):
    if granularity.per_token:
        return np.broadcast_to(arr[:, :1], (arr.shape[0], d))
    return np.repeat(arr, granularity.block_size, axis=1)[:, :d]


def _check_bits(bits, s):
    b = np.asarray(bits)
    if b.ndim == 0:
        b = np.full(s, b)
    if b.shape != (s,):
        raise DimensionError(f"need {s} bit widths, got shape {b.shape}")
    if not np.all(np.isfinite(b.astype(np.float64))) or np.any(b != np.round(b)):
        raise ConfigurationError("bit widths must be integers")
    b = b.astype(np.int64)
    if np.any(b < 1) or np.any(b > MAX_BITS):
        raise ConfigurationError(f"bit widths must lie in 1..{MAX_BITS}")
    return b


def _group_view(x, granularity):
    """Per-group min and max, shape ``(s, n_groups)``."""
    s, d = x.shape
    if granularity.per_token:
        return x.min(axis=1, keepdims=True), x.max(axis=1, keepdims=True)
    g = granularity.n_groups(d)
    pad = g * granularity.block_size - d
    lo = np.pad(x, ((0, 0), (0, pad)), mode="edge") if pad else x
    lo = lo.reshape(s, g, granularity.block_size)
    return lo.min(axis=2), lo.max(axis=2)


def fit_spec(x, bits, granularity: QuantGranularity = PER_TOKEN) -> QuantSpec:
    """Fit min-max step sizes and offsets for each quantization group."""
    x = as_matrix(x)
    s, d = x.shape
    b = _check_bits(bits, s)
    gmin, gmax = _group_view(x, granularity)
    rng = gmax - gmin
    qmax = ((2 ** b) - 1).astype(np.float64)[:, None]
    constant = rng == 0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        step = np.where(constant, 1.0, rng / qmax)
        ratio = np.maximum(np.abs(gmin), np.abs(gmax)) / step
    bad = ~constant & ~(ratio <= MAX_STEP_RATIO)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise NumericalError(
            f"group ({i}, {j}): range {rng[i, j]:.3g} is too small for values "
            f"of magnitude {max(abs(gmin[i, j]), abs(gmax[i, j])):.3g}"
        )
    offset = np.where(constant, 0.0, np.rint(-gmin / step)).astype(np.int64)
    return QuantSpec(
        granularity=granularity,
        bits=b,
        step=step,
        offset=offset,
        constant=constant,
        level=np.where(constant, gmin, 0.0),
        n_features=d,
    )


def _check_shape(x, spec):
    if x.shape != spec.shape:
        raise DimensionError(f"spec fitted for {spec.shape}, got {x.shape}")


def quantize(x, spec: QuantSpec) -> QuantizedTensor:
    x = as_matrix(x)
    _check_shape(x, spec)
    step = spec.expand(spec.step)
    offset = spec.expand(spec.offset)
    qmax = spec.qmax[:, None]
    codes = np.clip(np.rint(x / step) + offset, 0, qmax).astype(np.int64)
    return QuantizedTensor(codes=codes, spec=spec)


def dequantize(q: QuantizedTensor) -> np.ndarray:
    spec = q.spec
    values = (q.codes - spec.expand(spec.offset)) * spec.expand(spec.step)
    return np.where(spec.expand(spec.constant), spec.expand(spec.level), values)


def fake_quant(x, bits, granularity: QuantGranularity = PER_TOKEN) -> np.ndarray:
    """Quantize then dequantize with freshly fitted min-max parameters.

    Tokens whose bit width is ``inf`` are passed through unchanged; this is
    the no-quantization sentinel used by full-precision allocations.
    """
    x = as_matrix(x)
    b = np.asarray(bits, dtype=np.float64)
    if b.ndim == 0:
        b = np.full(x.shape[0], float(b))
    if b.shape != (x.shape[0],):
        raise DimensionError(f"need {x.shape[0]} bit widths, got shape {b.shape}")
    exact = np.isinf(b) & (b > 0)
    if exact.all():
        return x.copy()
    if not exact.any():
        return dequantize(quantize(x, fit_spec(x, b, granularity)))
    out = x.copy()
    rows = ~exact
    sub = x[rows]
    out[rows] = dequantize(quantize(sub, fit_spec(sub, b[rows], granularity)))
    return out


def token_errors(x, bits, granularity: QuantGranularity = PER_TOKEN) -> np.ndarray:
    """Squared quantization error of each token, shape ``(s,)``."""
    x = as_matrix(x)
    diff = fake_quant(x, bits, granularity) - x
    return np.sum(diff * diff, axis=1)


def quant_error(x, bits, granularity: QuantGranularity = PER_TOKEN) -> float:
    return float(np.sum(token_errors(x, bits, granularity)))


def sqnr_db(reference, test) -> float:
    """``10 log10(|ref|^2 / |ref - test|^2)``; ``inf`` when they are identical."""
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if ref.shape != tst.shape:
        raise DimensionError(f"shape mismatch {ref.shape} vs {tst.shape}")
    noise = float(np.sum((ref - tst) ** 2))
    if noise == 0.0:
        return math.inf
    signal = float(np.sum(ref * ref))
    if signal == 0.0:
        return -math.inf
    return 10.0 * math.log10(signal / noise)
