"""Distributed run of the chessboard experiment with locality enforced by topology."""

from .audit import AuditVerdict, audit_run
from .local import HarnessRun, collector_summary, run_processes, run_threads
from .protocol import Endpoint, ProtocolError, RunConfig, config_from_dict, config_to_dict
from .roles import (
    Collector,
    CollectorResult,
    ResultJoiner,
    run_collector,
    run_source,
    run_station,
)

__all__ = [
    "AuditVerdict", "audit_run", "HarnessRun", "collector_summary", "run_processes", "run_threads",
    "Endpoint", "ProtocolError", "RunConfig", "config_from_dict", "config_to_dict",
    "Collector", "CollectorResult", "ResultJoiner", "run_collector", "run_source", "run_station",
]
