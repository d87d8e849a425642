"""Block-wise mixed-format 4-bit quantization.

Sixteen FP4 variants ("dialects") on a 0.5 grid share most of their small
magnitudes and pair up by maximum magnitude; every block of a tensor gets
the dialect that best matches its distribution, selected online in two
stages.  Because all representable values are scaled integers, matrix
multiplication runs on an exact integer accumulate path.  MXFP4 and NVFP4
baselines, a streaming KV cache, bit-exact file formats, and a CLI round
out the package.
"""

from ._kernels import active_backend
from .errors import DialectFP4Error, FormatbookError, InputError, VerificationError
from .fixedpoint import (
    PreprocessedBlock,
    SharedExponent,
    preprocess_block,
    round_to_half,
    shared_exponent,
)
from .formatbook import (
    BeneficialRange,
    DialectValueSet,
    Formatbook,
    beneficial_ranges,
    build_default_formatbook,
    dump_formatbook,
    load_formatbook,
    pair_index_for_max,
    validate_formatbook,
)
from .gemm import (
    AccumulatorMode,
    BlockPartial,
    QuantizedMatrix,
    block_partial_value,
    dequantize_matrix,
    dequantized_product,
    effective_bitwidth,
    fp16_round,
    gemm,
    gemm_reference,
    mac_block,
    quantize_matrix,
    relative_frobenius_error,
)
from .kvcache import StreamingKeyCache, StreamingValueCache, append_token, materialize
from .quantize import (
    Code,
    MxBlock,
    NvBlock,
    QuantizedBlock,
    block_mse,
    dequantize_block,
    dequantize_block_mx,
    dequantize_block_nv,
    quantize_block,
    quantize_block_mx,
    quantize_block_nv,
    quantize_block_with_dialect,
    quantize_element,
)
from .selection import (
    select_dialect_mse,
    select_dialect_two_stage,
    select_pair,
    selection_report,
)

__version__ = "0.1.0"

__all__ = [
    "AccumulatorMode",
    "BeneficialRange",
    "BlockPartial",
    "Code",
    "DialectFP4Error",
    "DialectValueSet",
    "Formatbook",
    "FormatbookError",
    "InputError",
    "MxBlock",
    "NvBlock",
    "PreprocessedBlock",
    "QuantizedBlock",
    "QuantizedMatrix",
    "SharedExponent",
    "StreamingKeyCache",
    "StreamingValueCache",
    "VerificationError",
    "active_backend",
    "append_token",
    "beneficial_ranges",
    "block_mse",
    "block_partial_value",
    "build_default_formatbook",
    "dequantize_block",
    "dequantize_block_mx",
    "dequantize_block_nv",
    "dequantize_matrix",
    "dequantized_product",
    "dump_formatbook",
    "effective_bitwidth",
    "fp16_round",
    "gemm",
    "gemm_reference",
    "load_formatbook",
    "mac_block",
    "materialize",
    "pair_index_for_max",
    "preprocess_block",
    "quantize_block",
    "quantize_block_mx",
    "quantize_block_nv",
    "quantize_block_with_dialect",
    "quantize_element",
    "quantize_matrix",
    "relative_frobenius_error",
    "round_to_half",
    "select_dialect_mse",
    "select_dialect_two_stage",
    "select_pair",
    "selection_report",
    "shared_exponent",
    "validate_formatbook",
]
