"""
Shared constants for hqdm
"""

# TensorFile container
TENSOR_MAGIC = b"HQDM"
TENSOR_VERSION_F32 = 1
# Same layout with a 64-bit payload; used for run-state blobs that must resume bitwise
TENSOR_VERSION_F64 = 2
TENSOR_SUFFIX = ".hqt"

# Hadamard orders
MAX_HADAMARD_ORDER = 12
DEFAULT_HADAMARD_K = 5

# Quantization
MIN_BITS = 2
MAX_BITS = 8
SCALE_FLOOR = 1e-8

# Integer accumulators are int64; anything reaching this is an overflow
ACCUMULATOR_LIMIT = 2 ** 63 - 1

# Random streams derived from the root seed
RNG_STREAMS = ("teacher", "data", "distill", "sample", "calib", "analysis", "bench", "eval")

# CSV schemas
METRICS_COLUMNS = ("epoch", "timestep", "loss", "scheme", "bits")
SUMMARY_COLUMNS = ("scheme", "bits", "k", "ptq_loss", "final_loss")
ABLATION_COLUMNS = ("k", "scheme", "bits", "ptq_loss", "final_loss")
OUTLIER_COLUMNS = (
    "layer", "timestep", "channel", "max_pre", "max_post", "rms_pre", "rms_post",
    "signed_min_pre", "signed_max_pre", "signed_min_post", "signed_max_post",
    "ratio_pre", "ratio_post", "kurtosis_pre", "kurtosis_post",
)
SCHEME_COLUMNS = (
    "layer", "timestep", "bits",
    "mse_plain", "mse_single", "mse_double",
    "wmax_plain", "wmax_single", "wmax_double",
)
BENCH_COLUMNS = ("dim", "bits", "scheme", "reps", "mean_ms", "std_ms")

THREADS_ENV = "HQDM_THREADS"
# DDIM batches run in chunks of this many samples; a fixed size keeps results
# independent of the worker count
SAMPLE_CHUNK = 8

MANIFEST_NAME = "manifest.json"
