"""Embedded property suite run by ``stampq selfcheck``."""

from __future__ import annotations

import contextlib
from typing import List, NamedTuple

import numpy as np

from . import transforms as T
from .data import SynthSpec, generate, rng_for
from .energy import (
    compare_uniform_vs_concentrated,
    estimate_autocorr,
    optimal_bits_continuous,
    theorem1_bound,
    transformed_energies,
    two_level_allocation,
    uniform_allocation,
    no_quantization,
)
from .layer import BIAS_MODES, LinearLayer, StampConfig, reference_linear, stamp_linear
from .quantizer import quant_error

__all__ = ["CheckResult", "CHECKS", "run_checks", "FAULTS"]


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str


def _all_transforms(s, rng):
    a = rng.standard_normal((s, s))
    out = [T.identity(s), T.klt(np.linalg.qr(a)[0].T), T.dct(s), T.wht(s), T.dwt1d(s)]
    h = 1 << (s.bit_length() - 1) // 2
    w = s // h
    levels = min(3, T.default_dwt_levels(h), T.default_dwt_levels(w))
    out.append(T.dwt2d(h, w, levels))
    return out


def check_orthogonality():
    rng = rng_for(11)
    worst = 0.0
    for s in (4, 8, 64, 256):
        for t in _all_transforms(s, rng):
            L = T.materialize(t)
            worst = max(worst, float(np.max(np.abs(L @ L.T - np.eye(s)))))
    return worst < 1e-10, f"max |L L^T - I| = {worst:.2e}"


def check_roundtrip():
    rng = rng_for(12)
    worst = 0.0
    for s in (4, 8, 64, 256):
        for t in _all_transforms(s, rng):
            for _ in range(20):
                x = rng.standard_normal((s, 8))
                worst = max(worst, float(np.max(np.abs(T.invert_seq(t, T.apply_seq(t, x)) - x))))
    return worst < 1e-10, f"max round-trip error = {worst:.2e}"


def check_energy_preservation():
    rng = rng_for(13)
    worst = 0.0
    for t in _all_transforms(64, rng):
        x = rng.standard_normal((64, 16))
        e0 = np.sum(x * x)
        worst = max(worst, abs(np.sum(T.apply_seq(t, x) ** 2) - e0) / e0)
    return worst < 1e-10, f"max relative energy change = {worst:.2e}"


def check_bound_validity():
    rng = rng_for(14)
    s, d = 64, 32
    ts = _all_transforms(s, rng)
    allocs = [uniform_allocation(s, 4), two_level_allocation(s, 8, 8, 4)]
    violations = 0
    for _ in range(100):
        x = rng.standard_normal((s, d))
        prof = estimate_autocorr([x])
        for t in ts:
            xt = T.apply_seq(t, x)
            e = transformed_energies(prof, t)
            for a in allocs:
                if quant_error(xt, a.bits) > theorem1_bound(e, a.bits, d):
                    violations += 1
    return violations == 0, f"{violations} bound violations"


def check_equal_ratio():
    rng = rng_for(15)
    worst = 0.0
    for _ in range(50):
        e = np.exp(rng.uniform(-2, 4, size=16))
        b = optimal_bits_continuous(e, 64.0).bits
        r = e / 4.0 ** b
        worst = max(worst, float(np.ptp(r) / np.mean(r)))
    return worst < 1e-9, f"max ratio spread = {worst:.2e}"


def check_allocation_optimality():
    rng = rng_for(16)
    losses = 0
    for _ in range(50):
        e = np.exp(rng.uniform(-2, 4, size=16))
        b = optimal_bits_continuous(e, 64.0).bits
        best = np.sum(e / 4.0 ** b)
        delta = rng.uniform(-1, 1, size=(1000, 16))
        delta -= delta.mean(axis=1, keepdims=True)
        delta /= np.maximum(1.0, np.max(np.abs(delta), axis=1, keepdims=True))
        other = np.sum(e / 4.0 ** (b + delta), axis=1)
        losses += int(np.sum(other < best))
    return losses == 0, f"{losses} perturbations beat the optimum"


def check_jensen():
    rng = rng_for(17)
    bad = 0
    for _ in range(1000):
        lam = np.exp(rng.uniform(-3, 3, size=int(rng.integers(2, 64))))
        u, c = compare_uniform_vs_concentrated(lam, 4.0, 16)
        bad += int(c > u)
    return bad == 0, f"{bad} spectra with concentrated > uniform"


def check_jensen_equality():
    worst = 0.0
    for v in (0.5, 1.0, 2.0, 7.0, 100.0):
        u, c = compare_uniform_vs_concentrated(np.full(32, v), 4.0, 16)
        worst = max(worst, abs(u - c) / u)
    return worst < 1e-12, f"max relative gap on constant spectra = {worst:.2e}"


def check_stamp_exactness():
    s, d_in, d_out = 64, 16, 8
    worst = 0.0
    for seed in range(20):
        rng = rng_for(18, seed)
        for t in _all_transforms(s, rng):
            for feat in ("identity", "hadamard"):
                for mode in BIAS_MODES:
                    layer = LinearLayer(
                        rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out)
                    )
                    cfg = StampConfig(
                        t, T.FeatureTransform(feat, d_in), no_quantization(s), bias_mode=mode
                    )
                    x = rng.standard_normal((s, d_in))
                    ref = reference_linear(x, layer)
                    out = stamp_linear(x, layer, cfg)
                    worst = max(worst, float(np.linalg.norm(out - ref) / np.linalg.norm(ref)))
    return worst < 1e-10, f"max relative deviation = {worst:.2e}"


def check_two_level_constants():
    a = two_level_allocation(4096, 64, 8, 4).average_bits
    b = two_level_allocation(2048, 64, 8, 4).average_bits
    return a == 4.0625 and b == 4.125, f"averages {a}, {b}"


def check_klt_majorization():
    xs = generate(SynthSpec("ar1", s=64, d=16, seed=19, rho=0.95), 200)
    prof = estimate_autocorr([x.data for x in xs])
    ek = np.cumsum(transformed_energies(prof, T.klt_from_autocorr(prof.autocorr)))
    tol = 1e-9 * ek[-1]
    ok = True
    for t in (T.dct(64), T.wht(64), T.dwt1d(64)):
        ok &= bool(np.all(ek >= np.cumsum(np.sort(transformed_energies(prof, t))[::-1]) - tol))
    return ok, "KLT prefix sums dominate DCT/WHT/DWT"


CHECKS: List[tuple] = [
    ("transform_orthogonality", check_orthogonality),
    ("transform_roundtrip", check_roundtrip),
    ("energy_preservation", check_energy_preservation),
    ("minmax_bound_validity", check_bound_validity),
    ("allocation_equal_ratio", check_equal_ratio),
    ("allocation_optimality", check_allocation_optimality),
    ("jensen_concentrated_le_uniform", check_jensen),
    ("jensen_equality_constant_spectrum", check_jensen_equality),
    ("stamp_layer_exactness", check_stamp_exactness),
    ("two_level_average_bits", check_two_level_constants),
    ("klt_majorization", check_klt_majorization),
]

FAULTS = {"haar-norm": T._unnormalized_haar}


def run_checks(fault: str = None) -> List[CheckResult]:
    ctx = FAULTS[fault]() if fault else contextlib.nullcontext()
    results = []
    with ctx:
        for name, fn in CHECKS:
            try:
                passed, detail = fn()
            except Exception as exc:  # a crashing check is a failed check
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, bool(passed), detail))
    return results
