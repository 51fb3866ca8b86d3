"""binq: integer-only BNN inference with selective quantization and fault simulation."""

__version__ = "0.1.0"

from .errors import (
    BadMagic,
    BinqError,
    CountMismatch,
    DegenerateScale,
    DegenerateSigma,
    EmptyInput,
    GraphShapeError,
    NonFiniteInput,
    PayloadLengthMismatch,
    ShapeError,
    TruncatedFile,
    UnknownLayer,
    UnsupportedVersion,
)
from .tensors import (
    FloatTensor,
    PackedBitTensor,
    QuantTensor,
    binary_conv2d,
    binary_dot,
    conv2d_float,
    matmul_rows,
    maxpool2d,
    pack_signs,
    round_half_away,
    unpack_signs,
)
from .quantize import (
    QuantConfig,
    compute_delta,
    dequantize_array,
    dequantize_value,
    quantize_array,
    quantize_tensor,
    quantize_value,
)
from .layers import (
    LayerKind,
    LayerSpec,
    MODE_CONVENTIONAL,
    MODE_FLOAT,
    MODE_ZOBNN,
    argmax_output,
    batchnorm_forward,
    first_conv_forward,
    last_linear_forward,
    rprelu_forward,
    sign_forward,
)
from .graph import NetworkGraph, make_float_graph, quantized_input_domains, validate_structure
from .transform import (
    TransformLog,
    TransformStep,
    build_conventional,
    eliminate_qd_pairs,
    transform_network,
    wrap_conventional,
)
from .faults import (
    FaultConfig,
    MemoryImage,
    corrupt_network,
    encode_network,
    expected_flip_check,
    flip_bits,
    flip_count,
)
from .modelio import (
    DatasetBatch,
    load_idx_dataset,
    load_model,
    load_model_file,
    save_model,
    save_model_file,
    write_idx_images,
    write_idx_labels,
    write_report_csv,
    write_report_json,
)
from .harness import (
    FootprintReport,
    SweepSpec,
    TrialReport,
    bench_overhead,
    distribution_stats,
    evaluate_accuracy,
    footprint,
    run_sweep,
)
from .toynet import build_toy_net, toy_feature_count, toy_layer_geometry
