"""Orthonormal transforms along the sequence and feature axes.

Sequence transforms act on the rows of an ``(s, d)`` activation (``L @ X``),
feature transforms on its columns (``X @ R``). Every transform here is
orthonormal, so the inverse is the transpose and energy is preserved.

Haar DWT layout: after each level the low-pass coefficients occupy the
leading positions and the detail coefficients follow. For the 2D variant the
leading block holds the LL band in row-major grid order, followed by the
(low-row, high-col), (high-row, low-col) and (high-row, high-col) bands.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numba
import numpy as np

from .core import ConfigurationError, DimensionError, NumericalError, as_matrix

__all__ = [
    "SEQUENCE_KINDS",
    "SequenceTransform",
    "FeatureTransform",
    "EigenDecomposition",
    "identity",
    "klt",
    "dct",
    "wht",
    "dwt1d",
    "dwt2d",
    "default_dwt_levels",
    "apply_seq",
    "invert_seq",
    "apply_feat",
    "invert_feat",
    "materialize",
    "dct_matrix",
    "fwht",
    "jacobi_eigh",
    "klt_from_autocorr",
]

SEQUENCE_KINDS = ("identity", "klt", "dct", "wht", "dwt1d", "dwt2d")
MATERIALIZE_LIMIT = 4096

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
# Forward/inverse Haar scale factors. Only the selfcheck fault hook changes them.
_haar_scale = (_INV_SQRT2, _INV_SQRT2)


@contextlib.contextmanager
def _unnormalized_haar():
    """Test hook: Haar steps become plain sums/differences (not orthogonal)."""
    global _haar_scale
    saved = _haar_scale
    _haar_scale = (1.0, 0.5)
    try:
        yield
    finally:
        _haar_scale = saved


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _twos(n: int) -> int:
    """Number of factors of two in ``n``."""
    k = 0
    while n % 2 == 0 and n > 0:
        n //= 2
        k += 1
    return k


def default_dwt_levels(s: int) -> int:
    """``floor(log2 s)`` capped at 6, reduced to what ``s`` divides by."""
    return min(6, _twos(int(s)))


@dataclass(frozen=True)
class SequenceTransform:
    """An orthonormal ``s x s`` map applied along the sequence axis.

    Build instances with :func:`identity`, :func:`klt`, :func:`dct`,
    :func:`wht`, :func:`dwt1d` or :func:`dwt2d`, which validate the
    structural constraints of each kind.
    """

    kind: str
    length: int
    levels: int = 0
    grid: Optional[Tuple[int, int]] = None
    basis: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in SEQUENCE_KINDS:
            raise ConfigurationError(f"unknown sequence transform {self.kind!r}")
        s = int(self.length)
        if s < 1:
            raise ConfigurationError("sequence length must be >= 1")
        if self.kind == "wht" and not _is_pow2(s):
            raise ConfigurationError(f"WHT needs a power-of-two length, got {s}")
        if self.kind == "dwt1d":
            if self.levels < 1 or s % (2 ** self.levels):
                raise ConfigurationError(
                    f"DWT with {self.levels} levels needs length divisible by "
                    f"{2 ** self.levels}, got {s}"
                )
        if self.kind == "dwt2d":
            if self.grid is None:
                raise ConfigurationError("DWT2D needs a grid")
            h, w = self.grid
            if h * w != s:
                raise ConfigurationError(f"grid {h}x{w} does not match length {s}")
            if self.levels < 1 or h % (2 ** self.levels) or w % (2 ** self.levels):
                raise ConfigurationError(
                    f"grid {h}x{w} is not divisible by 2**{self.levels}"
                )
        if self.kind == "klt":
            if self.basis is None or self.basis.shape != (s, s):
                raise ConfigurationError("KLT needs an s x s basis")

    @property
    def name(self) -> str:
        return "dwt" if self.kind.startswith("dwt") else self.kind

    def apply(self, x) -> np.ndarray:
        return apply_seq(self, x)

    def invert(self, y) -> np.ndarray:
        return invert_seq(self, y)


def identity(s: int) -> SequenceTransform:
    return SequenceTransform("identity", int(s))


def klt(basis) -> SequenceTransform:
    """KLT with an explicit orthogonal basis whose rows are the directions."""
    basis = np.array(basis, dtype=np.float64)
    if basis.ndim != 2 or basis.shape[0] != basis.shape[1]:
        raise ConfigurationError("KLT basis must be square")
    err = np.max(np.abs(basis @ basis.T - np.eye(basis.shape[0])))
    if err > 1e-8:
        raise ConfigurationError(f"KLT basis is not orthogonal (error {err:.3g})")
    basis.setflags(write=False)
    return SequenceTransform("klt", basis.shape[0], basis=basis)


def dct(s: int) -> SequenceTransform:
    return SequenceTransform("dct", int(s))


def wht(s: int) -> SequenceTransform:
    return SequenceTransform("wht", int(s))


def dwt1d(s: int, levels: Optional[int] = None) -> SequenceTransform:
    s = int(s)
    levels = default_dwt_levels(s) if levels is None else int(levels)
    return SequenceTransform("dwt1d", s, levels=levels)


def dwt2d(height: int, width: int, levels: int = 3) -> SequenceTransform:
    h, w = int(height), int(width)
    return SequenceTransform("dwt2d", h * w, levels=int(levels), grid=(h, w))


@lru_cache(maxsize=32)
def _dct_matrix_cached(s: int) -> np.ndarray:
    n = np.arange(s)
    k = n[:, None]
    mat = np.cos(np.pi * (2 * n[None, :] + 1) * k / (2 * s))
    mat *= math.sqrt(2.0 / s)
    mat[0] = math.sqrt(1.0 / s)
    mat.setflags(write=False)
    return mat


def dct_matrix(s: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, rows are frequencies."""
    return _dct_matrix_cached(int(s))


def fwht(x, axis: int = 0) -> np.ndarray:
    """Orthonormal fast Walsh-Hadamard transform (Sylvester order) along ``axis``.

    The butterflies run on unscaled sums and differences; the ``1/sqrt(n)``
    normalization is applied once at the end so entries of the materialized
    matrix are exactly ``+-1/sqrt(n)``.
    """
    a = np.moveaxis(np.array(x, dtype=np.float64), axis, 0)
    n = a.shape[0]
    if not _is_pow2(n):
        raise ConfigurationError(f"Hadamard needs a power-of-two length, got {n}")
    rest = a.shape[1:]
    h = 1
    while h < n:
        a = a.reshape((n // (2 * h), 2, h) + rest)
        top = a[:, 0] + a[:, 1]
        bot = a[:, 0] - a[:, 1]
        a = np.stack((top, bot), axis=1).reshape((n,) + rest)
        h *= 2
    a *= 1.0 / math.sqrt(n)
    return np.moveaxis(a, 0, axis)


def _haar_forward(x, n):
    """One Haar analysis step on the leading ``n`` rows, in place."""
    c = _haar_scale[0]
    head = x[:n]
    even, odd = head[0::2].copy(), head[1::2].copy()
    x[: n // 2] = (even + odd) * c
    x[n // 2 : n] = (even - odd) * c


def _haar_inverse(x, n):
    c = _haar_scale[1]
    low, high = x[: n // 2].copy(), x[n // 2 : n].copy()
    x[0:n:2] = (low + high) * c
    x[1:n:2] = (low - high) * c


def _haar_step_axis(block, axis, scale):
    even = np.take(block, np.arange(0, block.shape[axis], 2), axis=axis)
    odd = np.take(block, np.arange(1, block.shape[axis], 2), axis=axis)
    return np.concatenate(((even + odd) * scale, (even - odd) * scale), axis=axis)


def _haar_unstep_axis(block, axis, scale):
    half = block.shape[axis] // 2
    low = np.take(block, np.arange(half), axis=axis)
    high = np.take(block, np.arange(half, 2 * half), axis=axis)
    out = np.empty_like(block)
    idx = [slice(None)] * block.ndim
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = (low + high) * scale
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = (low - high) * scale
    return out


def _dwt2d_forward(x, grid, levels):
    y = x.copy()
    h, w = grid
    d = y.shape[1]
    c = _haar_scale[0]
    for _ in range(levels):
        n = h * w
        block = y[:n].reshape(h, w, d)
        block = _haar_step_axis(block, 0, c)
        block = _haar_step_axis(block, 1, c)
        h2, w2 = h // 2, w // 2
        bands = (
            block[:h2, :w2],
            block[:h2, w2:],
            block[h2:, :w2],
            block[h2:, w2:],
        )
        y[:n] = np.concatenate([b.reshape(h2 * w2, d) for b in bands], axis=0)
        h, w = h2, w2
    return y


def _dwt2d_inverse(y, grid, levels):
    x = y.copy()
    d = x.shape[1]
    c = _haar_scale[1]
    h0, w0 = grid
    for level in reversed(range(levels)):
        h, w = h0 >> level, w0 >> level
        h2, w2 = h // 2, w // 2
        q = h2 * w2
        n = h * w
        bands = [x[i * q : (i + 1) * q].reshape(h2, w2, d) for i in range(4)]
        block = np.empty((h, w, d))
        block[:h2, :w2], block[:h2, w2:] = bands[0], bands[1]
        block[h2:, :w2], block[h2:, w2:] = bands[2], bands[3]
        block = _haar_unstep_axis(block, 1, c)
        block = _haar_unstep_axis(block, 0, c)
        x[:n] = block.reshape(n, d)
    return x


def _check_rows(t, x):
    if x.shape[0] != t.length:
        raise ConfigurationError(
            f"{t.kind} transform of length {t.length} applied to {x.shape[0]} rows"
        )


def apply_seq(t: SequenceTransform, x) -> np.ndarray:
    """Return ``L @ x`` for the transform ``t``."""
    x = as_matrix(x)
    _check_rows(t, x)
    if t.kind == "identity":
        return x.copy()
    if t.kind == "klt":
        return t.basis @ x
    if t.kind == "dct":
        return dct_matrix(t.length) @ x
    if t.kind == "wht":
        return fwht(x, axis=0)
    if t.kind == "dwt1d":
        y = x.copy()
        n = t.length
        for _ in range(t.levels):
            _haar_forward(y, n)
            n //= 2
        return y
    return _dwt2d_forward(x, t.grid, t.levels)


def invert_seq(t: SequenceTransform, y) -> np.ndarray:
    """Return ``L^-1 @ y`` (the transpose, since every ``L`` is orthonormal)."""
    y = as_matrix(y, "y")
    _check_rows(t, y)
    if t.kind == "identity":
        return y.copy()
    if t.kind == "klt":
        return t.basis.T @ y
    if t.kind == "dct":
        return dct_matrix(t.length).T @ y
    if t.kind == "wht":
        return fwht(y, axis=0)
    if t.kind == "dwt1d":
        x = y.copy()
        n = t.length >> (t.levels - 1)
        for _ in range(t.levels):
            _haar_inverse(x, n)
            n *= 2
        return x
    return _dwt2d_inverse(y, t.grid, t.levels)


def materialize(t: SequenceTransform) -> np.ndarray:
    """Dense ``L`` obtained by transforming the identity."""
    if t.length > MATERIALIZE_LIMIT:
        raise ConfigurationError(
            f"refusing to materialize a {t.length}x{t.length} transform"
        )
    return apply_seq(t, np.eye(t.length))


@dataclass(frozen=True)
class FeatureTransform:
    kind: str
    width: int

    def __post_init__(self):
        if self.kind not in ("identity", "hadamard"):
            raise ConfigurationError(f"unknown feature transform {self.kind!r}")
        if self.kind == "hadamard" and not _is_pow2(int(self.width)):
            raise ConfigurationError(
                f"Hadamard needs a power-of-two width, got {self.width}"
            )

    def apply(self, x) -> np.ndarray:
        return apply_feat(self, x)

    def fuse_into_weight(self, weight) -> np.ndarray:
        """``R^T @ W`` so that ``(X R)(R^T W) == X W``."""
        w = as_matrix(weight, "weight")
        if w.shape[0] != self.width:
            raise DimensionError(
                f"weight has {w.shape[0]} input rows, transform width {self.width}"
            )
        if self.kind == "identity":
            return w.copy()
        return fwht(w, axis=0)


def _check_cols(t, x):
    if x.shape[1] != t.width:
        raise ConfigurationError(
            f"feature transform of width {t.width} applied to {x.shape[1]} columns"
        )


def apply_feat(t: FeatureTransform, x) -> np.ndarray:
    x = as_matrix(x)
    _check_cols(t, x)
    if t.kind == "identity":
        return x.copy()
    # The normalized Sylvester Hadamard is symmetric, so X @ R is a row-wise FWHT.
    return fwht(x, axis=1)


def invert_feat(t: FeatureTransform, y) -> np.ndarray:
    return apply_feat(t, y)


@dataclass(frozen=True)
class EigenDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


@numba.njit(cache=True)
def _jacobi_sweep(a, v, threshold):
    """One cyclic sweep over all ``p < q``, rotating ``a`` and ``v`` in place."""
    n = a.shape[0]
    for p in range(n - 1):
        for q in range(p + 1, n):
            apq = a[p, q]
            if abs(apq) <= threshold:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            sign = 1.0 if theta >= 0.0 else -1.0
            t = sign / (abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            for k in range(n):
                akp = a[k, p]
                akq = a[k, q]
                a[k, p] = c * akp - s * akq
                a[k, q] = s * akp + c * akq
            for k in range(n):
                apk = a[p, k]
                aqk = a[q, k]
                a[p, k] = c * apk - s * aqk
                a[q, k] = s * apk + c * aqk
            a[p, q] = 0.0
            a[q, p] = 0.0
            for k in range(n):
                vkp = v[k, p]
                vkq = v[k, q]
                v[k, p] = c * vkp - s * vkq
                v[k, q] = s * vkp + c * vkq


def jacobi_eigh(s_matrix, tol: float = 1e-12, max_sweeps: int = 100) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps visit every off-diagonal pair in row order until the largest
    off-diagonal magnitude is at most ``tol * max|S|``. Eigenvalues are
    returned in descending order and eigenvectors as columns, each with its
    largest-magnitude component made positive.
    """
    a = np.array(s_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix contains non-finite entries")
    n = a.shape[0]
    if n > MATERIALIZE_LIMIT:
        raise ConfigurationError(f"matrix of size {n} exceeds {MATERIALIZE_LIMIT}")
    scale = float(np.max(np.abs(a))) if n else 0.0
    asym = float(np.max(np.abs(a - a.T))) if n else 0.0
    if asym > 1e-9 * max(scale, 1.0):
        raise NumericalError(f"matrix is not symmetric (asymmetry {asym:.3g})")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    threshold = tol * scale
    off = ~np.eye(n, dtype=bool)

    sweeps = 0
    while n > 1 and np.max(np.abs(a[off])) > threshold:
        if sweeps >= max_sweeps:
            raise NumericalError(
                f"Jacobi iteration did not converge after {sweeps} sweeps"
            )
        _jacobi_sweep(a, v, threshold)
        sweeps += 1

    evals = np.diag(a).copy()
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    v = v[:, order]
    if n:
        big = np.argmax(np.abs(v), axis=0)
        signs = np.where(v[big, np.arange(n)] < 0, -1.0, 1.0)
        v = v * signs
    return EigenDecomposition(eigenvalues=evals, eigenvectors=v, sweeps=sweeps)


def klt_from_autocorr(s_matrix) -> SequenceTransform:
    """KLT whose rows are the eigenvectors of ``S`` by descending eigenvalue."""
    eig = jacobi_eigh(s_matrix)
    scale = float(np.max(np.abs(s_matrix))) if eig.eigenvalues.size else 0.0
    if eig.eigenvalues.size and eig.eigenvalues[-1] < -1e-8 * scale:
        raise NumericalError(
            f"autocorrelation is not PSD (eigenvalue {eig.eigenvalues[-1]:.3g})"
        )
    return klt(eig.eigenvectors.T)
