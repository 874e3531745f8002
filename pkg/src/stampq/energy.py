"""Token energies, the min-max error bound, and per-token bit allocation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import AllocationError, ConfigurationError, DimensionError, as_matrix, as_vector
from .transforms import SequenceTransform, apply_seq

__all__ = [
    "EnergyProfile",
    "BitAllocation",
    "estimate_autocorr",
    "transformed_energies",
    "theorem1_bound",
    "bound_terms",
    "optimal_bits_continuous",
    "round_bits",
    "uniform_allocation",
    "two_level_allocation",
    "no_quantization",
    "BoundComparison",
    "compare_uniform_vs_concentrated",
]


@dataclass(frozen=True)
class EnergyProfile:
    """Sequence autocorrelation ``S = mean(X X^T)`` over a set of samples."""

    autocorr: np.ndarray
    sample_count: int
    energies: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.autocorr.shape[0]

    @property
    def total_energy(self) -> float:
        return float(np.trace(self.autocorr))


def estimate_autocorr(samples: Sequence) -> EnergyProfile:
    """Average ``X X^T`` over the samples, accumulated in sample order."""
    samples = list(samples)
    if not samples:
        raise DimensionError("need at least one sample")
    first = as_matrix(samples[0], "sample")
    acc = np.zeros((first.shape[0], first.shape[0]))
    for k, x in enumerate(samples):
        x = as_matrix(x, f"sample {k}")
        if x.shape != first.shape:
            raise DimensionError(f"sample {k} has shape {x.shape}, expected {first.shape}")
        acc += x @ x.T
    acc /= len(samples)
    acc = 0.5 * (acc + acc.T)
    return EnergyProfile(autocorr=acc, sample_count=len(samples))


def transformed_energies(profile: EnergyProfile, t: SequenceTransform) -> np.ndarray:
    """Per-token energies ``diag(L S L^T)`` after the sequence transform."""
    s = profile.length
    if t.length != s:
        raise ConfigurationError(f"transform length {t.length} != sequence length {s}")
    ls = apply_seq(t, profile.autocorr)
    # L (L S)^T = L S L^T because S is symmetric.
    e = np.diag(apply_seq(t, ls.T)).copy()
    return np.maximum(e, 0.0)


def bound_terms(energies, bits, d: int) -> np.ndarray:
    """Per-token terms ``(d/2) e_i / (2**b_i - 1)**2`` of the error bound.

    Tokens with ``b_i < 1`` give ``inf``; tokens with ``b_i = inf`` (not
    quantized) give 0.
    """
    e = np.asarray(energies, dtype=np.float64)
    b = np.asarray(bits, dtype=np.float64)
    if e.shape != b.shape:
        raise DimensionError(f"energies {e.shape} and bits {b.shape} differ")
    with np.errstate(divide="ignore", over="ignore"):
        denom = (np.exp2(b) - 1.0) ** 2
        terms = 0.5 * d * e / denom
    terms = np.where(b < 1, np.inf, terms)
    return np.where(np.isinf(b) & (b > 0), 0.0, terms)


def theorem1_bound(energies, bits, d: int) -> float:
    """Upper bound on the min-max quantization error of transformed tokens."""
    return float(np.sum(bound_terms(energies, bits, d)))


@dataclass(frozen=True)
class BitAllocation:
    """Per-token bit widths.

    ``scheme`` is one of ``uniform``, ``optimal``, ``rounded``,
    ``two-level`` or ``none``; ``none`` allocations carry ``inf`` bit widths
    and mean "leave every token in full precision".
    """

    scheme: str
    bits: np.ndarray
    budget: float
    params: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.bits.shape[0]

    @property
    def quantized(self) -> bool:
        return self.scheme != "none"

    @property
    def total_bits(self) -> float:
        return float(np.sum(self.bits))

    @property
    def average_bits(self) -> float:
        return self.total_bits / self.length


def no_quantization(s: int) -> BitAllocation:
    return BitAllocation("none", np.full(int(s), np.inf), math.inf)


def uniform_allocation(s: int, b: int) -> BitAllocation:
    s, b = int(s), int(b)
    if s < 1 or b < 1:
        raise ConfigurationError("uniform allocation needs s >= 1 and b >= 1")
    return BitAllocation("uniform", np.full(s, float(b)), float(s * b), {"b": b})


def optimal_bits_continuous(energies, budget: float) -> BitAllocation:
    """Real-valued allocation equalizing ``e_i / 4**b_i`` across tokens.

    ``b_i = log2(sqrt(e_i)) + (B - sum_j log2(sqrt(e_j))) / s``, which sums
    to ``B``. Energies at or below ``1e-12 * max(e)`` are pinned to one bit
    and the remaining budget is shared by the other tokens.
    """
    e = as_vector(energies, "energies")
    if e.size == 0:
        raise AllocationError("empty energy vector")
    if not budget > 0:
        raise AllocationError("budget must be positive")
    emax = float(np.max(e))
    if emax <= 0:
        raise AllocationError("all energies are zero")
    floored = e <= 1e-12 * emax
    bits = np.ones_like(e)
    live = ~floored
    remaining = float(budget) - float(np.count_nonzero(floored))
    half_logs = 0.5 * np.log2(e[live])
    bits[live] = half_logs + (remaining - np.sum(half_logs)) / np.count_nonzero(live)
    return BitAllocation("optimal", bits, float(budget))


def round_bits(alloc: BitAllocation) -> BitAllocation:
    """Round each bit width half-to-even; the budget is not rebalanced."""
    bits = np.rint(alloc.bits)
    return BitAllocation("rounded", bits, alloc.budget, {"source": alloc.scheme})


def two_level_allocation(s: int, n_hp: int, b_hp: int, b_lp: int) -> BitAllocation:
    """First ``n_hp`` tokens at ``b_hp`` bits, the rest at ``b_lp``."""
    s, n_hp, b_hp, b_lp = int(s), int(n_hp), int(b_hp), int(b_lp)
    if not 0 <= n_hp <= s:
        raise ConfigurationError(f"n_hp={n_hp} must lie in [0, {s}]")
    if b_lp < 1 or b_hp < b_lp:
        raise ConfigurationError("need 1 <= b_lp <= b_hp")
    bits = np.full(s, float(b_lp))
    bits[:n_hp] = b_hp
    budget = float(n_hp * b_hp + (s - n_hp) * b_lp)
    return BitAllocation(
        "two-level", bits, budget, {"n_hp": n_hp, "b_hp": b_hp, "b_lp": b_lp}
    )


class BoundComparison(NamedTuple):
    uniform_bound: float
    concentrated_bound: float


def compare_uniform_vs_concentrated(energies, budget_per_token: float, d: int) -> BoundComparison:
    """Compare the bound for flat energies against fully concentrated ones.

    ``energies`` is the spectrum of token energies under maximal
    concentration (the eigenvalues of ``S``). The flat case spreads the same
    total evenly; both use the optimal allocation and the ``4**b``
    approximation of ``(2**b - 1)**2``:

    * uniform: ``(d s / 2) 2**(log2 mean(e) - 2 B/s)``
    * concentrated: ``(d s / 2) 2**(mean(log2 e) - 2 B/s)``
    """
    e = as_vector(energies, "energies")
    if e.size == 0 or np.any(e <= 0):
        raise AllocationError("spectrum must be non-empty and strictly positive")
    s = e.size
    scale = 0.5 * d * s
    uniform = scale * 2.0 ** (math.log2(float(np.mean(e))) - 2.0 * budget_per_token)
    concentrated = scale * 2.0 ** (float(np.mean(np.log2(e))) - 2.0 * budget_per_token)
    return BoundComparison(uniform, concentrated)
