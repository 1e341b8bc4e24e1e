from .harness import (
    ProtocolConfig,
    ProtocolResult,
    TaskResult,
    aggregate,
    expected_models,
    expected_outputs,
    fit_teacher,
    run_cs_ocda,
    run_ocda,
    write_results,
)
from .synth import DomainSpec, client_specs, generate_domain, grid_band_energy

__all__ = [
    "DomainSpec",
    "ProtocolConfig",
    "ProtocolResult",
    "TaskResult",
    "aggregate",
    "client_specs",
    "expected_models",
    "expected_outputs",
    "fit_teacher",
    "generate_domain",
    "grid_band_energy",
    "run_cs_ocda",
    "run_ocda",
    "write_results",
]
