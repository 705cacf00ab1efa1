APPLICATION_PREFIX = "invfilter"

# group membership / algebra pattern tolerances
MEMBERSHIP_TOL = 1e-9

ALGEBRA_PATTERN_TOL = 1e-9

REORTHONORMALIZE_TOL = 1e-12

SMALL_ANGLE = 1e-4

LOG_BRANCH_MARGIN = 1e-6

# filters
GAIN_IDENTITY_TOL = 1e-12

DEGENERATE_CROSS_TOL = 1e-12

SINGULAR_S_TOL = 1e-12

S_REGULARIZATION = 1e-10

PSD_TOL = 1e-12

COVARIANCE_EIG_TOL = 1e-10

FD_EPSILON = 1e-6

FD_TOLERANCE = 1e-4

QW_SUBSTEPS = 100

# experiment defaults
DEFAULT_DT = 0.02

DEFAULT_BURN_IN = 500

DEFAULT_RETAINED = 500

DEFAULT_CHAINS = 1000

DEFAULT_PARTICLES = 10_000

DEFAULT_TRAJECTORIES = 1000

CONVERGENCE_WINDOW = 10

DEFAULT_GAIN_TOL = 1e-6

MEKF_BURN_IN = 3000

MEKF_INFLATION_GRID = (1.0, 10.0, 100.0, 300.0, 1000.0, 3000.0, 10_000.0)

HISTOGRAM_BINS = 50

# output files
ERRORS_CSV = "errors.csv"

ENVELOPE_CSV = "envelope.csv"

GAINS_CSV = "gains.csv"

COVARIANCE_CSV = "covariance.csv"

COMPARISON_CSV = "comparison.csv"

SURFACE_CSV = "surface.csv"

OPTIMUM_TXT = "optimum.txt"

OPTIMUM_JSON = "optimum.json"

STATIONARY_CSV = "stationary.csv"

TRUTH_CSV = "truth.csv"

OBSERVATIONS_CSV = "observations.csv"

SCHEDULE_CSV = "schedule.csv"

SUMMARY_JSON = "summary.json"

# cli exit codes
EXIT_OK = 0

EXIT_CONFIG_ERROR = 2

EXIT_NUMERICAL_ERROR = 3
