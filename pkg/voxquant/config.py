# PARAMETERS TO CONTROL THE BEHAVIOR OF THE QUANTIZATION TOOLCHAIN
# CLI FLAGS DEFAULT TO THESE VALUES
# ENGINE FILE FORMAT
ENGINE_MAGIC = b'VQE1'
ENGINE_VERSION = 1
# QUANTIZATION. REAL KERNELS ARE 8-BIT ONLY, FAKE QUANTIZATION ACCEPTS 2..8
DEFAULT_BITS = 8
MIN_BITS = 2
MAX_BITS = 8
ENGINE_BITS = 8
# RANGES NARROWER THAN DEGENERATE_RANGE_EPS ARE WIDENED TO DEGENERATE_RANGE_WIDTH
DEGENERATE_RANGE_EPS = 1e-12
DEGENERATE_RANGE_WIDTH = 1e-6
# PERCENTILE CALIBRATION
HISTOGRAM_BINS = 2048
DEFAULT_PERCENTILE = 99.99
CALIB_METHODS = ('minmax', 'percentile')
# I32 ACCUMULATORS HOLD K * 255^2 ONLY WHILE K <= MAX_FAN_IN
MAX_FAN_IN = 33025
# FLOAT32 GEMM PARTIAL SUMS STAY EXACT BELOW 2^24
EXACT_F32_LIMIT = 1 << 24
# OUTPUT COLUMNS PER GEMM TILE. FIXED SO RESULTS DO NOT DEPEND ON THREAD COUNT
TILE_COLUMNS = 16384
# BENCHMARK PROTOCOL. LATENCY IS REPORTED IN MICROSECONDS INTERNALLY
BENCH_WARMUP_RUNS = 5
BENCH_TIMED_RUNS = 30
BENCH_STATISTIC = 'median'
BENCH_STATISTICS = ('median', 'mean', 'p95')
DEFAULT_THREADS = 1
DEFAULT_SEED = 0
# SYNTHETIC DATA
DEFAULT_SHAPE = (64, 64, 64)
DEFAULT_CLASSES = 4
DEFAULT_COUNT = 8
DEFAULT_SIGMA = 0.01
MIN_SPATIAL = 16
OUTER_MARGIN = 3
# MODEL ZOO. TOY U-NET BASE WIDTH PER SCALE, ROUGHLY 0.1M / 1M / 10M PARAMETERS
MODEL_FAMILIES = ('centroid-net', 'toy-unet')
UNET_WIDTHS = {'S': 8, 'M': 25, 'L': 80}
# LOGGING
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
