"""Curve-dictionary quantization toolkit: reference-dictionary generation,
per-tensor encoding, index-domain matrix arithmetic, a packed memory format,
and a tile simulator."""

from .engine import (CounterFile, DotResult, EngineConstants, accumulate_pair,
                     centroid_mac_oracle, dot, finalize, gemm, requantize)
from .fixedpoint import (FixedScalar, QFormat, SaturationFlag, compute_frac,
                         fx_add, fx_mul, to_fixed, to_float)
from .golden import (ExpFit, GoldenDictionary, agglomerative_cluster,
                     eval_magnitude, fit_exponential,
                     generate_golden_dictionary)
from .packing import PackedTensor, measure, pack, unpack
from .quantize import (Code, QuantizedTensor, TensorDictionary,
                       build_tensor_dictionary, decode_code, decode_tensor,
                       encode_tensor, profile_activations)
from .sim import SimStats, TileConfig, schedule_outliers, simulate_dot_stream
from .tensorstore import (Tensor, TensorStats, compute_stats, load_tensor,
                          save_tensor)

__version__ = "0.1.0"
