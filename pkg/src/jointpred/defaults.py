"""Default settings shared by the library and the command line.

Values marked (demo) follow the published height/weight walk-through; the
rest are conventional choices.  README.md carries the same table.
"""

SEED = 271  # (demo) split seed and master seed
N_TEST = 100  # (demo) held-out rows

# Marginal random forests.
N_TREES = 500
MIN_NODE_SIZE = 5
MTRY = None  # max(1, p // 3)

# Generator network.
ARCHITECTURE = "1x100"  # (demo) one hidden layer of 100 units
EPOCHS = 1000  # (demo)
BATCH_SIZE = None  # (demo) full batch
DROPOUT = 0.1  # (demo)
BATCH_NORM = True  # (demo)
LEARNING_RATE = 1e-3
BANDWIDTHS = (0.001, 0.01, 0.15, 0.25, 0.50, 0.75)  # (demo)
POST_POBS = True  # (demo) pseudo-observations of generated samples

# Prediction and evaluation.
N_GEN = 1000
N_GEN_EACH = 5  # (demo)
N_REP = 25

# Copula-learning benchmark (desk scale).
BENCH_ARCHITECTURES = ("1x100", "1x300", "1x600", "2x600", "3x300")
BENCH_N_TRN = 5000
BENCH_EPOCHS = 300
BENCH_BATCH_SIZE = 500
BENCH_REPS = 25
BENCH_TAU = 0.5
