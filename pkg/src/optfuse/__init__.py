"""optfuse: an eager-mode training engine that compares three optimizer
schedules (three-stage baseline, forward-fusion, backward-fusion) on
synthetic models, with a memory-locality simulator, critical-path analyzer,
analytical speedup model, and benchmarking CLI."""

from .errors import (ConfigError, GlobalInfoRequired, NumericError,
                     SchedulingContractError, ShapeError, StateError)
from .graph import Graph, Parameter, build_model
from .locality import (CacheConfig, CacheReport, LRUCache, critical_path_depth,
                       predict_speedup, simulate_cache, transaction_count)
from .optim import OptimizerPolicy, clip_by_global_norm, newton_step
from .schedule import (StepReport, check_inplace_safety, flush_pending_updates,
                       run_backward_fusion, run_baseline, run_forward_fusion)
from .tensor import Tensor, axpy_inplace, from_list, full, matmul, uniform, zeros
from .trace import ScheduleTrace, validate_trace

__version__ = "0.1.0"
