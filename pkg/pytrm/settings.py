# Settings for the PyTRM testbed

# TwoRoom geometry (length-units)
WORLD_WIDTH = 224.0
WORLD_HEIGHT = 224.0
WALL_X = 112.0
DOOR_LO = 96.0
DOOR_HI = 128.0

# Agent dynamics and outcome classification
A_MAX = 8.0
R_SUCC = 12.0
WALL_STANDOFF = 0.5
STUCK_BAND = 8.0

# Start-goal manifests
MANIFEST_VERSION = 1
MANIFEST_KINDS = ('balanced40', 'matched40', 'hard100')
MANIFEST_MARGIN = 16.0
MATCHED_BIN_WIDTH = 20.0
HARD_MIN_EUCLID = 120.0
DOORWAY_REQUIRED_GAP = 10.0
# Cross-wall hard specs allowed without a doorway detour of at least DOORWAY_REQUIRED_GAP (<= 5 required)
HARD_DIRECT_CROSSINGS = 3
MAX_REJECTION_DRAWS = 10 ** 6

# Logged exploration data
DATASET_VERSION = 1
EPISODE_LENGTH = 224
N_EPISODES = 2000
EXPLORE_MOMENTUM = 0.8
EXPLORE_NOISE = 4.0
MIN_DOOR_CROSSING_FRACTION = 0.30

# Encoder (latent trap construction)
LATENT_DIM = 32
NUISANCE_DIM = 30
NUISANCE_RADIUS = 20.0
NUISANCE_FREQ_SCALE = 0.7
GAMMA_XY = 1.0
GAMMA_N = 1.0

# Pair head
LABEL_SCALE = 224.0
SAMPLER_REGIMES = ('random_full', 'balanced_full', 'balanced_capped')
SAMPLER_BINS = 10
HEAD_PAIRS = 100000
VALIDATION_PAIRS = 10000

# Networks and optimizer
HIDDEN_WIDTH = 256
LEARNING_RATE = 1e-3
WEIGHT_DECAY = 1e-4
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 1024
EPOCHS = 20
DYNAMICS_EPOCHS = 20
CHECKPOINT_VERSION = 1

# Probe
PROBE_ROWS = 20000
PROBE_HOLDOUT_ROWS = 5000
PROBE_RIDGE = 1e-6

# Terminal costs
HYBRID_EPS = 1e-8
HYBRID_LAMBDA = 1.0
COST_KINDS = (
    'raw_mse',
    'perdim_std_mse',
    'trm',
    'hybrid',
    'decoded_euclid',
    'decoded_geodesic',
    'rowspace_mse',
    'residual_mse',
    'oracle_euclid',
    'oracle_geodesic',
    'oracle_aux_geodesic',
)
ORACLE_COST_KINDS = ('oracle_euclid', 'oracle_geodesic', 'oracle_aux_geodesic')

# CEM planner
CEM_SAMPLES = 256
CEM_ITERS = 10
CEM_TOP_K = 32
CEM_HORIZON = 20
CEM_INIT_STD = 4.0
CEM_MIN_STD = 0.5
CEM_REPLAN_BLOCK = 1
STRESS_SAMPLES = 1000
STRESS_ITERS = 20
STRESS_TOP_K = 100
BUDGETS = (50, 150)

# Exit codes used by the command line
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_HASH_MISMATCH = 3
EXIT_COVERAGE = 4
EXIT_DIVERGENCE = 5
EXIT_MISSING_ARTIFACT = 6

# Callback invoked with each finished episode row. Either None or a function.
PROGRESS_HOOK = None
