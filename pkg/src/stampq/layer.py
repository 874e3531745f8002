"""A linear layer whose input activations are sequence-transformed and
quantized with per-token bit widths.

The forward pass is::

    X <- L X R           (R is folded into the weight as R^T W)
    X <- Q(X; b_i)       per token
    Y <- X (R^T W)
    Y <- L^-1 Y + 1 beta^T

With ``bias_mode="transformed"`` the bias is added as ``(L 1) beta^T`` before
the inverse transform instead, which is equal without quantization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ConfigurationError, DimensionError, as_matrix, as_vector
from .energy import BitAllocation
from .quantizer import PER_TOKEN, QuantGranularity, fake_quant
from .transforms import (
    FeatureTransform,
    SequenceTransform,
    apply_feat,
    apply_seq,
    invert_seq,
)

__all__ = [
    "BIAS_MODES",
    "LinearLayer",
    "StampConfig",
    "StampLinear",
    "stamp_linear",
    "reference_linear",
    "transformed_bias",
]

BIAS_MODES = ("invert-then-bias", "transformed")


@dataclass(frozen=True)
class LinearLayer:
    """``y = x @ weight + bias`` with ``weight`` of shape ``(d_in, d_out)``."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        w = as_matrix(self.weight, "weight")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = as_vector(self.bias, "bias")
            if b.shape[0] != w.shape[1]:
                raise DimensionError(
                    f"bias of length {b.shape[0]} for {w.shape[1]} outputs"
                )
            object.__setattr__(self, "bias", b)

    @property
    def d_in(self) -> int:
        return self.weight.shape[0]

    @property
    def d_out(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class StampConfig:
    seq_transform: SequenceTransform
    feat_transform: FeatureTransform
    allocation: BitAllocation
    granularity: QuantGranularity = PER_TOKEN
    bias_mode: str = "invert-then-bias"

    def __post_init__(self):
        if self.bias_mode not in BIAS_MODES:
            raise ConfigurationError(f"unknown bias mode {self.bias_mode!r}")
        if self.allocation.length != self.seq_transform.length:
            raise ConfigurationError(
                f"allocation has {self.allocation.length} tokens, "
                f"transform length is {self.seq_transform.length}"
            )


def reference_linear(x, layer: LinearLayer) -> np.ndarray:
    y = as_matrix(x) @ layer.weight
    if layer.bias is not None:
        y = y + layer.bias
    return y


def transformed_bias(t: SequenceTransform, beta) -> np.ndarray:
    """Rank-one matrix ``(L 1) beta^T``."""
    beta = as_vector(beta, "beta")
    ell = apply_seq(t, np.ones((t.length, 1)))
    return ell * beta[None, :]


class StampLinear:
    """A linear layer prepared for STaMP evaluation.

    The feature transform is folded into the weight once, at construction.
    """

    def __init__(self, layer: LinearLayer, cfg: StampConfig):
        if cfg.feat_transform.width != layer.d_in:
            raise ConfigurationError(
                f"feature transform width {cfg.feat_transform.width} != d_in {layer.d_in}"
            )
        self.layer = layer
        self.cfg = cfg
        self.weight = cfg.feat_transform.fuse_into_weight(layer.weight)
        self._bias_rows = None
        if layer.bias is not None and cfg.bias_mode == "transformed":
            self._bias_rows = transformed_bias(cfg.seq_transform, layer.bias)

    def quantized_input(self, x) -> np.ndarray:
        """The activation the matrix product sees: ``Q(L x R)``."""
        cfg = self.cfg
        x = as_matrix(x)
        if x.shape[0] != cfg.seq_transform.length:
            raise DimensionError(
                f"input has {x.shape[0]} tokens, transform length {cfg.seq_transform.length}"
            )
        xt = apply_feat(cfg.feat_transform, apply_seq(cfg.seq_transform, x))
        if not cfg.allocation.quantized:
            return xt
        return fake_quant(xt, cfg.allocation.bits, cfg.granularity)

    def __call__(self, x) -> np.ndarray:
        y = self.quantized_input(x) @ self.weight
        bias = self.layer.bias
        if self._bias_rows is not None:
            return invert_seq(self.cfg.seq_transform, y + self._bias_rows)
        y = invert_seq(self.cfg.seq_transform, y)
        if bias is not None:
            y = y + bias
        return y


def stamp_linear(x, layer: LinearLayer, cfg: StampConfig) -> np.ndarray:
    return StampLinear(layer, cfg)(x)
