"""Sequence-transformed mixed-precision quantization of activations."""

from .core import (
    ActivationMatrix,
    AllocationError,
    ConfigurationError,
    DataError,
    DimensionError,
    IngestionError,
    NumericalError,
    StampError,
    matmul,
)
from .quantizer import (
    PER_TOKEN,
    QuantGranularity,
    QuantSpec,
    QuantizedTensor,
    dequantize,
    fake_quant,
    fit_spec,
    quant_error,
    quantize,
    sqnr_db,
    token_errors,
)
from .transforms import (
    FeatureTransform,
    SequenceTransform,
    apply_feat,
    apply_seq,
    dct,
    dwt1d,
    dwt2d,
    identity,
    invert_feat,
    invert_seq,
    jacobi_eigh,
    klt,
    klt_from_autocorr,
    materialize,
    wht,
)
from .energy import (
    BitAllocation,
    EnergyProfile,
    compare_uniform_vs_concentrated,
    estimate_autocorr,
    no_quantization,
    optimal_bits_continuous,
    round_bits,
    theorem1_bound,
    transformed_energies,
    two_level_allocation,
    uniform_allocation,
)
from .layer import LinearLayer, StampConfig, StampLinear, reference_linear, stamp_linear
from .data import SynthSpec, generate, read_tensor, write_csv, write_tensor

__version__ = "0.1.0"
