"""Dictionary-learning weight clustering for accelerating convolutional layers."""

__version__ = "0.1.0"

from .conv import InputVolume, MulCounter, OutputVolume, conv_direct, conv_dl, conv_vq
from .core import (
    ErrorReport,
    KernelSet,
    LayerShape,
    SubspaceMatrix,
    SubspacePartition,
    aggregate_errors,
    partition_kernels,
    quantization_error,
    reconstruct_kernels,
)
from .dl import (
    DlCodebook,
    SolveTrace,
    assignment_update,
    dictionary_update,
    dl_approximate,
    init_solution,
    solve,
    sparse_code_cluster,
)
from .estimators import DLQuantizer, KernelQuantizer, VQQuantizer
from .exceptions import (
    CorruptFile,
    InfeasibleSparsity,
    InvalidK,
    KernQuantError,
    NonDivisibleChannels,
    NonOverlappingCurves,
    ShapeMismatch,
)
from .options import SolverOptions
from .planner import AccelPlan, CostReport, cost_dl, cost_original, cost_vq, gain_at_equal_error, plan
from .vq import AssignmentMatrix, VqCodebook, kmeans_cluster, vq_approximate

__all__ = [
    "__version__",
    "InputVolume",
    "MulCounter",
    "OutputVolume",
    "conv_direct",
    "conv_dl",
    "conv_vq",
    "ErrorReport",
    "KernelSet",
    "LayerShape",
    "SubspaceMatrix",
    "SubspacePartition",
    "aggregate_errors",
    "partition_kernels",
    "quantization_error",
    "reconstruct_kernels",
    "DlCodebook",
    "SolveTrace",
    "assignment_update",
    "dictionary_update",
    "dl_approximate",
    "init_solution",
    "solve",
    "sparse_code_cluster",
    "DLQuantizer",
    "KernelQuantizer",
    "VQQuantizer",
    "CorruptFile",
    "InfeasibleSparsity",
    "InvalidK",
    "KernQuantError",
    "NonDivisibleChannels",
    "NonOverlappingCurves",
    "ShapeMismatch",
    "SolverOptions",
    "AccelPlan",
    "CostReport",
    "cost_dl",
    "cost_original",
    "cost_vq",
    "gain_at_equal_error",
    "plan",
    "AssignmentMatrix",
    "VqCodebook",
    "kmeans_cluster",
    "vq_approximate",
]
