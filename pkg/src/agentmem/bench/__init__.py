from .workload import Pattern, TraceOp, WorkloadSpec, generate_workload
from .oracle import StreamingOracle
from .runner import STRATEGIES, RunReport, run
from .compare import compare_report

__all__ = [
    "Pattern",
    "RunReport",
    "STRATEGIES",
    "StreamingOracle",
    "TraceOp",
    "WorkloadSpec",
    "compare_report",
    "generate_workload",
    "run",
]
