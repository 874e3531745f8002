"""Command-line experiments: ``stampq <command> [flags]``.

Every flag can also be given in an INI-style ``--config`` file; section names
are ignored and keys are flag names with or without the leading dashes
(``seq-len = 128`` and ``seq_len = 128`` are equivalent). Command-line flags
override the config file, which overrides the defaults.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import math
import os
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import transforms as T
from .core import StampError
from .data import (
    SynthSpec,
    format_value,
    generate,
    pad_grid,
    pad_sequence,
    read_tensor,
    rng_for,
    write_csv,
    write_tensor,
)
from .energy import (
    BitAllocation,
    estimate_autocorr,
    bound_terms,
    no_quantization,
    optimal_bits_continuous,
    round_bits,
    transformed_energies,
    two_level_allocation,
    uniform_allocation,
)
from .layer import BIAS_MODES, LinearLayer, StampConfig, StampLinear, reference_linear
from .quantizer import MAX_BITS, QuantGranularity, fake_quant

__all__ = ["main", "build_parser", "ExperimentConfig", "load_config"]

DEFAULTS = {
    "seed": 0,
    "out": None,
    "samples": 256,
    "seq_len": 256,
    "feat_dim": 64,
    "transform": "dwt",
    "levels": None,
    "grid": None,
    "feature_transform": "identity",
    "alloc": "two-level:64,8,4",
    "granularity": "per-token",
    "input": None,
    "synth": None,
    "rho": 0.95,
    "rho_h": 0.95,
    "rho_w": 0.95,
    "base_sigma": 1.0,
    "outlier_sigma": 20.0,
    "outlier_count": 4,
    "n_hp": "0,1,2,4,8,16,32,64,128,256",
    "hp_bits": 8,
    "lp_bits": 4,
    "baseline_bits": None,
    "weights": None,
    "bias": None,
    "bias_mode": "invert-then-bias",
}

HELP = {
    "seed": "base seed, unsigned 64-bit (default 0)",
    "out": "output path; CSV goes to stdout when omitted",
    "samples": "number of synthetic samples (default 256)",
    "seq_len": "sequence length s (default 256)",
    "feat_dim": "feature size d (default 64)",
    "transform": "sequence transform {identity,klt,dct,wht,dwt} (default dwt)",
    "levels": "DWT levels (default: 3 on a grid, else floor(log2 s) capped at 6)",
    "grid": "token grid HxW; makes dwt two-dimensional",
    "feature_transform": "feature transform {identity,hadamard} (default identity)",
    "alloc": "uniform:B | optimal[:B] | rounded[:B] | two-level:N,HP,LP | none; "
    "optimal/rounded spend B bits per token (default 4), rounded to integers "
    "(default two-level:64,8,4)",
    "granularity": "per-token | per-block:N (default per-token)",
    "input": "read activations from a tensor file instead of generating them",
    "synth": "synthetic source {ar1,grid2d,outlier} (default ar1, grid2d with --grid)",
    "rho": "AR(1) coefficient (default 0.95)",
    "rho_h": "grid AR(1) coefficient down columns (default 0.95)",
    "rho_w": "grid AR(1) coefficient along rows (default 0.95)",
    "base_sigma": "outlier source: regular channel sigma (default 1)",
    "outlier_sigma": "outlier source: outlier channel sigma (default 20)",
    "outlier_count": "outlier source: number of outlier channels (default 4)",
    "n_hp": "pareto: comma-separated high-precision token counts "
    "(default 0,1,2,4,...,256, clipped to s)",
    "hp_bits": "pareto: high-precision bit width (default 8)",
    "lp_bits": "pareto: low-precision bit width (default 4)",
    "baseline_bits": "bound/stamp-layer: uniform bits of the untransformed baseline "
    "(default: rounded average for bound, low bit width for stamp-layer)",
    "weights": "stamp-layer: weight tensor file, shape d x d_out (default random)",
    "bias": "stamp-layer: bias tensor file, shape 1 x d_out (default none)",
    "bias_mode": "stamp-layer: {invert-then-bias,transformed}",
}

INT_KEYS = {"seed", "samples", "seq_len", "feat_dim", "levels", "outlier_count",
            "hp_bits", "lp_bits", "baseline_bits"}
FLOAT_KEYS = {"rho", "rho_h", "rho_w", "base_sigma", "outlier_sigma"}
SEQ_CHOICES = ("identity", "klt", "dct", "wht", "dwt")


class UsageError(StampError, ValueError):
    pass


def load_config(path: str) -> dict:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as f:
            body = f.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not body.lstrip().startswith("["):
        body = "[run]\n" + body
    parser.read_string(body)
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key.lstrip("-").replace("-", "_")
            if name not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r} in {path}")
            out[name] = value
    return out


def _coerce(name, value):
    if value is None:
        return None
    try:
        if name in INT_KEYS:
            return int(value)
        if name in FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"--{name.replace('_', '-')}: bad value {value!r}") from None
    return value


@dataclass
class ExperimentConfig:
    """Resolved settings; construction by :func:`resolve` validates them."""

    command: str
    seed: int
    out: Optional[str]
    samples: int
    seq_len: int
    feat_dim: int
    transform: str
    levels: Optional[int]
    grid: Optional[Tuple[int, int]]
    feature_transform: str
    alloc: str
    granularity: QuantGranularity
    input: Optional[str]
    synth: Optional[SynthSpec]
    n_hp: List[int]
    hp_bits: int
    lp_bits: int
    baseline_bits: Optional[int]
    weights: Optional[str]
    bias: Optional[str]
    bias_mode: str


def _parse_grid(text):
    if text is None:
        return None
    try:
        h, w = text.lower().split("x")
        h, w = int(h), int(w)
    except ValueError:
        raise UsageError(f"--grid must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise UsageError("grid dimensions must be positive")
    return h, w


def resolve(command: str, ns: argparse.Namespace) -> ExperimentConfig:
    values = dict(DEFAULTS)
    if getattr(ns, "config", None):
        values.update(load_config(ns.config))
    for key in DEFAULTS:
        v = getattr(ns, key, None)
        if v is not None:
            values[key] = v
    values = {k: _coerce(k, v) for k, v in values.items()}

    grid = _parse_grid(values["grid"])
    if values["transform"] not in SEQ_CHOICES:
        raise UsageError(f"--transform must be one of {SEQ_CHOICES}")
    if values["feature_transform"] not in ("identity", "hadamard"):
        raise UsageError("--feature-transform must be identity or hadamard")
    if values["bias_mode"] not in BIAS_MODES:
        raise UsageError(f"--bias-mode must be one of {BIAS_MODES}")
    if values["samples"] < 1:
        raise UsageError("--samples must be >= 1")
    granularity = QuantGranularity.parse(values["granularity"])
    validate_alloc_text(values["alloc"])
    if values["levels"] is not None and not 1 <= values["levels"] <= 16:
        raise UsageError("--levels must lie in 1..16")
    for key in ("hp_bits", "lp_bits", "baseline_bits"):
        v = values[key]
        if v is not None and not 1 <= v <= MAX_BITS:
            raise UsageError(f"--{key.replace('_', '-')} must lie in 1..{MAX_BITS}")
    if values["lp_bits"] > values["hp_bits"]:
        raise UsageError("--lp-bits must not exceed --hp-bits")
    d = values["feat_dim"]
    if values["feature_transform"] == "hadamard" and values["input"] is None:
        if d & (d - 1):
            raise UsageError(f"--feature-transform hadamard needs a power-of-two --feat-dim, got {d}")

    if command == "stamp-layer" and values["input"] is None and d & (d - 1):
        raise UsageError(f"stamp-layer needs a power-of-two --feat-dim for its Hadamard variants, got {d}")

    synth = None
    if values["input"] is not None:
        if values["synth"] is not None:
            raise UsageError("give either --input or --synth, not both")
        if not os.path.isfile(values["input"]):
            raise UsageError(f"input file {values['input']} does not exist")
    elif command not in ("selfcheck", "ingest"):
        kind = values["synth"] or ("grid2d" if grid else "ar1")
        s = values["seq_len"]
        h, w = grid if grid and kind == "grid2d" else (0, 0)
        if kind == "grid2d" and grid is None:
            raise UsageError("--synth grid2d needs --grid")
        if grid is not None:
            s = grid[0] * grid[1]
        synth = SynthSpec(
            kind=kind, s=s, d=values["feat_dim"], seed=values["seed"],
            rho=values["rho"], rho_h=values["rho_h"], rho_w=values["rho_w"],
            height=h, width=w, base_sigma=values["base_sigma"],
            outlier_sigma=values["outlier_sigma"], outlier_count=values["outlier_count"],
        )
    for key in ("weights", "bias"):
        if values[key] is not None and not os.path.isfile(values[key]):
            raise UsageError(f"--{key} file {values[key]} does not exist")
    out = values["out"]
    if out is not None:
        parent = os.path.dirname(os.path.abspath(out))
        if not os.path.isdir(parent):
            raise UsageError(f"output directory {parent} does not exist")

    try:
        n_hp = sorted({int(v) for v in str(values["n_hp"]).split(",") if v.strip()})
    except ValueError:
        raise UsageError("--n-hp must be comma-separated integers") from None
    if any(n < 0 for n in n_hp):
        raise UsageError("--n-hp values must be non-negative")

    return ExperimentConfig(
        command=command, seed=values["seed"], out=out, samples=values["samples"],
        seq_len=values["seq_len"], feat_dim=values["feat_dim"],
        transform=values["transform"], levels=values["levels"], grid=grid,
        feature_transform=values["feature_transform"], alloc=values["alloc"],
        granularity=granularity, input=values["input"], synth=synth, n_hp=n_hp,
        hp_bits=values["hp_bits"], lp_bits=values["lp_bits"],
        baseline_bits=values["baseline_bits"], weights=values["weights"],
        bias=values["bias"], bias_mode=values["bias_mode"],
    )


# -- data preparation -------------------------------------------------------

def load_samples(cfg: ExperimentConfig) -> Tuple[List[np.ndarray], Optional[Tuple[int, int]]]:
    if cfg.input is not None:
        arr = read_tensor(cfg.input)
        samples = [arr] if arr.ndim == 2 else list(arr)
        grid = cfg.grid
        if grid is not None and grid[0] * grid[1] != samples[0].shape[0]:
            raise UsageError(
                f"--grid {grid[0]}x{grid[1]} does not match {samples[0].shape[0]} tokens"
            )
        return samples, grid
    return [x.data for x in generate(cfg.synth, cfg.samples)], cfg.grid


def _ceil_to(n, m):
    return -(-n // m) * m


def _next_pow2(n):
    return 1 << max(0, (n - 1).bit_length())


def pad_for(samples, grid, kinds, levels):
    """Zero-pad tokens so every transform kind in ``kinds`` fits.

    Returns ``(samples, grid, levels, original_length)``; ``levels`` is the
    DWT level count actually used.
    """
    s = samples[0].shape[0]
    if grid is not None:
        lv = 3 if levels is None else levels
        h, w = grid
        th, tw = _ceil_to(h, 2**lv), _ceil_to(w, 2**lv)
        if "wht" in kinds:
            th, tw = _next_pow2(th), _next_pow2(tw)
        if (th, tw) != (h, w):
            samples = [pad_grid(x, grid, (th, tw)) for x in samples]
        return samples, (th, tw), lv, s
    lv = levels
    if lv is None:
        lv = min(6, max(1, s.bit_length() - 1))
    target = s
    if "dwt" in kinds:
        target = _ceil_to(target, 2**lv)
    if "wht" in kinds:
        target = _next_pow2(target)
    if target != s:
        samples = [pad_sequence(x, target) for x in samples]
    return samples, None, lv, s


def make_transform(kind, samples, grid, levels) -> T.SequenceTransform:
    s = samples[0].shape[0]
    if kind == "identity":
        return T.identity(s)
    if kind == "dct":
        return T.dct(s)
    if kind == "wht":
        return T.wht(s)
    if kind == "klt":
        return T.klt_from_autocorr(estimate_autocorr(samples).autocorr)
    if grid is not None:
        return T.dwt2d(grid[0], grid[1], levels)
    return T.dwt1d(s, levels)


def alloc_for(text: str, s: int, energies, mean_bits: float = 4.0) -> BitAllocation:
    """Allocation named by ``--alloc`` for ``s`` tokens.

    ``optimal`` and ``rounded`` use the token ``energies`` and a budget of
    ``mean_bits`` per token unless one is given (``optimal:4.5``). Every
    command here runs an integer quantizer, so both round the continuous
    widths half-to-even and clip them to 1..16.
    """
    head, _, arg = text.strip().partition(":")
    if head == "none":
        return no_quantization(s)
    if head == "uniform":
        return uniform_allocation(s, int(arg))
    if head == "two-level":
        n, hp, lp = (int(v) for v in arg.split(","))
        return two_level_allocation(s, min(n, s), hp, lp)
    alloc = optimal_bits_continuous(energies, (float(arg) if arg else mean_bits) * s)
    r = round_bits(alloc)
    return BitAllocation(head, np.clip(r.bits, 1, MAX_BITS), r.budget, r.params)


def _sqnr(signal, noise):
    if noise == 0:
        return math.inf
    return 10.0 * math.log10(signal / noise)


def validate_alloc_text(text: str) -> None:
    """Reject malformed or out-of-range ``--alloc`` values."""
    head, _, arg = text.strip().partition(":")
    try:
        if head == "none" and not arg:
            return
        if head == "uniform":
            b = int(arg)
            if not 1 <= b <= MAX_BITS:
                raise UsageError(f"uniform bit width must lie in 1..{MAX_BITS}")
            return
        if head in ("optimal", "rounded"):
            if arg and not float(arg) > 0:
                raise UsageError("optimal budget per token must be positive")
            return
        if head == "two-level":
            n, hp, lp = (int(v) for v in arg.split(","))
            if n < 0 or not 1 <= lp <= hp <= MAX_BITS:
                raise UsageError(f"two-level needs N >= 0 and 1 <= LP <= HP <= {MAX_BITS}")
            return
    except UsageError:
        raise
    except ValueError:
        raise UsageError(f"bad allocation {text!r}") from None
    raise UsageError(
        f"unknown allocation {text!r}; use uniform:B, optimal[:B], rounded[:B], "
        "two-level:N,HP,LP or none"
    )


# -- commands ---------------------------------------------------------------

def _emit(cfg, header, rows):
    """Write the table; returns True when it went to a file (so a summary may follow)."""
    if cfg.out is None:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows([[format_value(v) for v in r] for r in rows])
        return False
    write_csv(cfg.out, header, rows)
    return True


def cmd_energy(cfg: ExperimentConfig) -> int:
    samples, grid = load_samples(cfg)
    kinds = ("identity", "klt", "dct", "wht", "dwt")
    samples, grid, levels, s0 = pad_for(samples, grid, kinds, cfg.levels)
    prof = estimate_autocorr(samples)
    eig = T.jacobi_eigh(prof.autocorr)
    cols = {}
    for kind in kinds:
        t = (T.klt(eig.eigenvectors.T) if kind == "klt"
             else make_transform(kind, samples, grid, levels))
        cols[kind] = transformed_energies(prof, t)
    s = prof.length
    header = ["token_index", *kinds, "eigenvalue"]
    rows = [[i, *(cols[k][i] for k in kinds), eig.eigenvalues[i]] for i in range(s)]
    if _emit(cfg, header, rows):
        total = prof.total_energy
        print(f"energy: {len(samples)} samples, s={s} (from {s0}), total energy {total:.6g}")
        for k in kinds:
            top = np.sort(cols[k])[::-1]
            n = max(1, s // 16)
            print(f"  {k:8s} top-{n} share {np.sum(top[:n]) / total:.4f}")
    return 0


def _per_token_errors(samples, t, feat, bits, granularity):
    err = np.zeros(samples[0].shape[0])
    for x in samples:
        xt = T.apply_feat(feat, T.apply_seq(t, x))
        diff = fake_quant(xt, bits, granularity) - xt
        err += np.sum(diff * diff, axis=1)
    return err / len(samples)


def cmd_bound(cfg: ExperimentConfig) -> int:
    samples, grid = load_samples(cfg)
    samples, grid, levels, s0 = pad_for(samples, grid, (cfg.transform,), cfg.levels)
    s, d = samples[0].shape
    prof = estimate_autocorr(samples)
    t = make_transform(cfg.transform, samples, grid, levels)
    feat = T.FeatureTransform(cfg.feature_transform, d)
    e_stamp = transformed_energies(prof, t)
    stamp = alloc_for(cfg.alloc, s, e_stamp)
    if stamp.quantized:
        base_b = cfg.baseline_bits or int(round(stamp.average_bits))
        base = uniform_allocation(s, base_b)
    else:
        base = no_quantization(s)
    e_base = np.diag(prof.autocorr).copy()
    ident = T.identity(s)
    m_base = _per_token_errors(samples, ident, feat, base.bits, cfg.granularity)
    m_stamp = _per_token_errors(samples, t, feat, stamp.bits, cfg.granularity)
    b_base = bound_terms(e_base, base.bits, d)
    b_stamp = bound_terms(e_stamp, stamp.bits, d)
    header = ["token_index", "energy_uniform", "bits_uniform", "bound_uniform",
              "measured_uniform", "energy_stamp", "bits_stamp", "bound_stamp",
              "measured_stamp"]
    rows = [[i, e_base[i], base.bits[i], b_base[i], m_base[i], e_stamp[i],
             stamp.bits[i], b_stamp[i], m_stamp[i]] for i in range(s)]
    if _emit(cfg, header, rows):
        print(f"bound: s={s} d={d} samples={len(samples)} transform={t.name}")
        print(f"  uniform {base.average_bits:g} bits: measured {m_base.sum():.6g}"
              f" <= bound {b_base.sum():.6g}")
        print(f"  stamp   {stamp.average_bits:g} bits: measured {m_stamp.sum():.6g}"
              f" <= bound {b_stamp.sum():.6g}")
    return 0


def _activation_sqnr(samples, t, feat, alloc, granularity):
    layer = LinearLayer(np.eye(samples[0].shape[1]))
    model = StampLinear(layer, StampConfig(t, feat, alloc, granularity))
    sig = noise = 0.0
    for x in samples:
        y = model(x)
        sig += float(np.sum(x * x))
        noise += float(np.sum((y - x) ** 2))
    return _sqnr(sig, noise)


def cmd_pareto(cfg: ExperimentConfig) -> int:
    samples, grid = load_samples(cfg)
    samples, grid, levels, s0 = pad_for(samples, grid, (cfg.transform,), cfg.levels)
    s, d = samples[0].shape
    t = make_transform(cfg.transform, samples, grid, levels)
    feat = T.FeatureTransform(cfg.feature_transform, d)
    rows = []
    for n in (n for n in cfg.n_hp if n <= s):
        alloc = two_level_allocation(s, n, cfg.hp_bits, cfg.lp_bits)
        rows.append([n, alloc.average_bits,
                     _activation_sqnr(samples, t, feat, alloc, cfg.granularity)])
    if _emit(cfg, ["n_hp", "average_bits", "sqnr_db"], rows):
        print(f"pareto: transform={t.name} s={s} {cfg.hp_bits}/{cfg.lp_bits} bits")
        for n, avg, q in rows:
            print(f"  n_hp={n:5d} avg={avg:.4f} sqnr={q:.3f} dB")
    return 0


def _load_layer(cfg, d):
    if cfg.weights is not None:
        w = read_tensor(cfg.weights)
        if w.ndim != 2 or w.shape[0] != d:
            raise UsageError(f"weights must be 2D with {d} rows, got {w.shape}")
    else:
        w = rng_for(cfg.seed, 2**64 - 1).standard_normal((d, d)) / math.sqrt(d)
    bias = None
    if cfg.bias is not None:
        b = read_tensor(cfg.bias)
        bias = b.reshape(-1)
    return LinearLayer(w, bias)


def cmd_stamp_layer(cfg: ExperimentConfig) -> int:
    samples, grid = load_samples(cfg)
    samples, grid, levels, s0 = pad_for(samples, grid, (cfg.transform,), cfg.levels)
    s, d = samples[0].shape
    layer = _load_layer(cfg, d)
    t = make_transform(cfg.transform, samples, grid, levels)
    prof_e = transformed_energies(estimate_autocorr(samples), t)
    stamp_alloc = alloc_for(cfg.alloc, s, prof_e)
    if not stamp_alloc.quantized:
        base_alloc = no_quantization(s)
    else:
        default_b = stamp_alloc.params.get("b_lp", stamp_alloc.params.get("b"))
        if default_b is None:
            default_b = int(round(stamp_alloc.average_bits))
        base_alloc = uniform_allocation(s, cfg.baseline_bits or default_b)
    ident, had = T.identity(s), T.FeatureTransform("hadamard", d)
    none = T.FeatureTransform("identity", d)
    variants = [
        ("identity", ident, none, base_alloc),
        ("feat-hadamard", ident, had, base_alloc),
        (f"stamp-{t.name}", t, none, stamp_alloc),
        ("feat+stamp", t, had, stamp_alloc),
    ]
    rows = []
    for name, lt, ft, alloc in variants:
        model = StampLinear(layer, StampConfig(lt, ft, alloc, cfg.granularity, cfg.bias_mode))
        sig = noise = qerr = 0.0
        for x in samples:
            ref = reference_linear(x, layer)
            xt = T.apply_feat(ft, T.apply_seq(lt, x))
            xq = model.quantized_input(x)
            y = model(x)
            sig += float(np.sum(ref * ref))
            noise += float(np.sum((ref - y) ** 2))
            qerr += float(np.sum((xq - xt) ** 2))
        if alloc.quantized:
            rows.append([name, _sqnr(sig, noise), qerr / len(samples), alloc.average_bits])
        else:
            # Only float round-off remains; report the full-precision sentinel.
            rows.append([name, math.inf, 0.0, math.inf])
    if _emit(cfg, ["variant", "sqnr_db", "quant_error", "avg_bits"], rows):
        print(f"stamp-layer: s={s} d={d} samples={len(samples)}")
        for name, q, e, avg in rows:
            print(f"  {name:14s} sqnr={q:.3f} dB  quant_error={e:.6g}  avg_bits={avg:g}")
    return 0


def cmd_generate(cfg: ExperimentConfig) -> int:
    if cfg.out is None:
        raise UsageError("generate needs --out")
    if cfg.input is not None:
        raise UsageError("generate takes no --input")
    batch = generate(cfg.synth, cfg.samples)
    write_tensor(cfg.out, [x.data for x in batch])
    print(f"generate: wrote {len(batch)} x {cfg.synth.s} x {cfg.synth.d} "
          f"{cfg.synth.kind} samples to {cfg.out}")
    return 0


def cmd_ingest(cfg: ExperimentConfig) -> int:
    if cfg.input is None:
        raise UsageError("ingest needs --input")
    arr = read_tensor(cfg.input)
    samples = [arr] if arr.ndim == 2 else list(arr)
    prof = estimate_autocorr(samples)
    e = np.diag(prof.autocorr)
    header = ["token_index", "energy"]
    rows = [[i, e[i]] for i in range(prof.length)]
    if _emit(cfg, header, rows):
        print(f"ingest: {cfg.input}: {len(samples)} samples of shape "
              f"{samples[0].shape[0]} x {samples[0].shape[1]}, total energy "
              f"{prof.total_energy:.6g}")
    return 0


def cmd_selfcheck(cfg, fault=None) -> int:
    from .selfcheck import run_checks

    results = run_checks(fault)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} properties passed")
    return 1 if failed else 0


COMMANDS = {
    "energy": cmd_energy,
    "bound": cmd_bound,
    "pareto": cmd_pareto,
    "stamp-layer": cmd_stamp_layer,
    "generate": cmd_generate,
    "ingest": cmd_ingest,
}


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="INI-style config file")
    for key in DEFAULTS:
        flag = "--" + key.replace("_", "-")
        kwargs = {"dest": key, "default": None, "help": HELP[key]}
        if key in INT_KEYS:
            kwargs["type"] = int
        elif key in FLOAT_KEYS:
            kwargs["type"] = float
        shared.add_argument(flag, **kwargs)

    p = argparse.ArgumentParser(prog="stampq", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("energy", "per-token energy under each sequence transform"),
        ("bound", "error bound vs measured error, uniform vs STaMP"),
        ("pareto", "SQNR as a function of the number of high-precision tokens"),
        ("stamp-layer", "linear-layer SQNR with and without feature/sequence transforms"),
        ("generate", "write synthetic activations to a tensor file"),
        ("ingest", "validate a tensor file and report per-token energies"),
        ("selfcheck", "run the embedded property suite"),
    ]:
        sp = sub.add_parser(name, parents=[shared], help=text, description=text)
        if name == "selfcheck":
            sp.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "selfcheck":
            from .selfcheck import FAULTS

            if ns.inject_fault is not None and ns.inject_fault not in FAULTS:
                raise UsageError(f"unknown fault {ns.inject_fault!r}")
            return cmd_selfcheck(None, ns.inject_fault)
        cfg = resolve(ns.command, ns)
        return COMMANDS[ns.command](cfg)
    except (StampError, OSError) as exc:
        print(f"stampq {ns.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
