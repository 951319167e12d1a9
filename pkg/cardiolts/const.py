"""Constants definition"""

from enum import IntEnum

try:
    from enum import StrEnum
except ImportError:
    from strenum import StrEnum


DEFAULT_MAX_LEVEL = 6
DEFAULT_ORDER = 1
MAX_ORDER = 3

# penalty per polynomial order
DEFAULT_GAMMA = {1: 4.0, 2: 8.0, 3: 12.0}

DEFAULT_BARRIER_DT = 0.15
DEFAULT_SUBSTEP_DT = 0.01
DEFAULT_UNIFORM_DT = 0.01
DEFAULT_TAU_REFINE = 0.75
DEFAULT_TAU_COARSEN = DEFAULT_TAU_REFINE / 3.0
DEFAULT_TAU_CELL = 0.05
# face neighbour layers that inherit a cell-driven substep count
DEFAULT_CELL_HALO = 2

LAT_THRESHOLD_MV = -30.0
PHI_REST_MV = -85.0

PARTITION_RTOL = 1e-12
NEVER_ACTIVATED = float("nan")

STATS_CSV = "steps.csv"
MANIFEST_FILE = "manifest.txt"
SUMMARY_FILE = "summary.jsonl"
SNAPSHOT_PATTERN = "snapshot_{index:04d}.vtk"

TRACE_CACHE_SIZE = 512


class FaceKind(StrEnum):
    """Interior face kind"""

    CONFORMING = "conforming"
    HANGING = "hanging"


class SolverKind(StrEnum):
    """Time marching scheme"""

    SLTS = "slts"
    UNIFORM = "uniform"


class ModelName(StrEnum):
    """Available cell models"""

    MITCHELL_SCHAEFFER = "mitchell_schaeffer"
    FITZHUGH_NAGUMO = "fitzhugh_nagumo"


class StimulusShape(StrEnum):
    """Stimulus support"""

    BOX = "box"
    BALL = "ball"


class InitialCondition(StrEnum):
    """Initial field protocol"""

    REST = "rest"
    SPIRAL = "spiral"


class VtkCellType(IntEnum):
    """VTK legacy cell type ids"""

    LINE = 3
    QUAD = 9
