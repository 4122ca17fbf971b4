"""Asymmetric low-rank adapters on a frozen host network.

Four adapter schemes over the same frozen base: a single shared LoRA pair, a
per-task bank of pairs, an asymmetric variant (shared A, task-specific B),
and its gated mixture-of-experts extension. Training uses hand-derived exact
gradients (finite-difference verified), synthetic multi-task regression data
with commonality/conflict dials, and a config-driven CLI.

Hot numeric kernels run in a compiled extension when available; a pure-Python
fallback with bit-identical semantics is selected automatically otherwise
(see ``asymlora.backend``).
"""

__version__ = "0.1.0"

from .backend import BACKEND_NAME
from .linalg import Matrix, Rng, derive_seed
from .adapters import (
    AdapterScheme,
    AsymAdapter,
    GateNetwork,
    LoraAdapter,
    MoeAsymAdapter,
    MoeLoraAdapter,
    asym_forward,
    gate_weights,
    lora_forward,
    merge_adapter,
    moe_asym_forward,
    param_count,
)
from .host import HostModel, attach_adapters, forward, freeze_fingerprint, make_host
from .autograd import backward, finite_diff_check, gradcheck_sweep
from .data import TaskBatch, TaskSpec, generate_tasks, sample_batch
from .training import RunReport, compare_schemes, evaluate, make_optimizer, train

__all__ = [
    "BACKEND_NAME",
    "Matrix",
    "Rng",
    "derive_seed",
    "AdapterScheme",
    "LoraAdapter",
    "MoeLoraAdapter",
    "AsymAdapter",
    "MoeAsymAdapter",
    "GateNetwork",
    "lora_forward",
    "asym_forward",
    "moe_asym_forward",
    "gate_weights",
    "merge_adapter",
    "param_count",
    "HostModel",
    "make_host",
    "attach_adapters",
    "forward",
    "freeze_fingerprint",
    "backward",
    "finite_diff_check",
    "gradcheck_sweep",
    "TaskSpec",
    "TaskBatch",
    "generate_tasks",
    "sample_batch",
    "RunReport",
    "train",
    "evaluate",
    "compare_schemes",
    "make_optimizer",
    "__version__",
]
