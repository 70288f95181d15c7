"""voxplan: a plan-compiling 3D ConvNet inference engine.

A declarative network description is compiled into an execution plan
(fusing additions and activations into convolutions, folding batch norm
and scale layers into kernels, and replacing explicit padding with strided
views of zero-halo buffers), then executed over a SIMD-blocked tensor
layout.  A naive reference oracle ships alongside for verification.
"""

from .backend import Backend, available_backends, compiled_available, get_backend
from .bench import BenchProtocol, BenchReport, bench_plan, bench_runner
from .blocked import (
    DEFAULT_SIMD_WIDTH,
    SUPPORTED_SIMD_WIDTHS,
    BlockedKernel,
    BlockedTensor,
    LayoutDescriptor,
    blocked_index,
    explicit_zero_pad,
    from_blocked,
    kernel_to_blocked,
    padded_view_descriptor,
    to_blocked,
)
from .errors import (
    CycleError,
    DanglingReferenceError,
    DuplicateTopError,
    ExecutionError,
    FormatError,
    LayoutError,
    ModelError,
    ParseError,
    PlanError,
    ShapeError,
    TileError,
    UnknownLayerError,
    VoxplanError,
)
from .executor import PlanRunner, execute
from .formats import (
    WeightStore,
    read_volume,
    read_weights,
    write_volume,
    write_weights,
)
from .ir import PassReport, build_ir, optimize
from .netspec import LayerKind, LayerSpec, NetworkSpec
from .oracle import ref_run
from .plan import ExecutionPlan, compile_network, read_plan, write_plan
from .prototxt import parse_network, print_network
from .shapes import validate_shapes
from .tiling import TileGrid, grid_for, plan_tiles, run_tiled
from .zoo import ZooConfig, generate_zoo, minimum_cubic_input

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BenchProtocol",
    "BenchReport",
    "BlockedKernel",
    "BlockedTensor",
    "CycleError",
    "DanglingReferenceError",
    "DEFAULT_SIMD_WIDTH",
    "DuplicateTopError",
    "ExecutionError",
    "ExecutionPlan",
    "FormatError",
    "LayerKind",
    "LayerSpec",
    "LayoutDescriptor",
    "LayoutError",
    "ModelError",
    "NetworkSpec",
    "ParseError",
    "PassReport",
    "PlanError",
    "PlanRunner",
    "ShapeError",
    "SUPPORTED_SIMD_WIDTHS",
    "TileError",
    "TileGrid",
    "UnknownLayerError",
    "VoxplanError",
    "WeightStore",
    "ZooConfig",
    "available_backends",
    "bench_plan",
    "bench_runner",
    "blocked_index",
    "build_ir",
    "compile_network",
    "compiled_available",
    "execute",
    "explicit_zero_pad",
    "from_blocked",
    "generate_zoo",
    "get_backend",
    "grid_for",
    "kernel_to_blocked",
    "minimum_cubic_input",
    "optimize",
    "padded_view_descriptor",
    "parse_network",
    "plan_tiles",
    "print_network",
    "read_plan",
    "read_volume",
    "read_weights",
    "ref_run",
    "run_tiled",
    "to_blocked",
    "validate_shapes",
    "write_plan",
    "write_volume",
    "write_weights",
    "__version__",
]
