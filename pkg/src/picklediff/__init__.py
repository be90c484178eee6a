"""Differential fuzzing toolkit for the pickle serialization format.

The package splits along the three phases of a campaign:

* generation: ``generator`` builds random well-formed payloads over
  the shared ``opcode_model`` catalog;
* execution: ``harness`` runs each payload on the in-process targets
  (``pvm``, ``disassembler``) and, through a subprocess bridge, on the
  real interpreter's implementations;
* evaluation: ``evaluator`` detects error and storage discrepancies,
  minimizes triggering payloads, and deduplicates findings, while
  ``campaign_cli`` orchestrates the loop and persists the corpus.
"""

__version__ = "0.1.0"

from .opcode_model import (
    FramingError,
    Instruction,
    OpcodeSpec,
    TruncatedArgumentError,
    UnknownOpcodeError,
    catalog,
    iter_instructions,
    lookup,
    read_instruction,
)
from .pvm import (
    LoadResult,
    Machine,
    MachineState,
    canonical,
    canonical_state,
    fnv1a64,
    load,
    resolve_import,
    scrub_addresses,
)
from .disassembler import DisasmResult, disassemble, render_listing
from .generator import (
    ENCODINGS,
    GenLimits,
    Payload,
    build_buffers,
    generate,
    relaxed_limits,
    splitmix64_stream,
)
from .evaluator import (
    Discrepancy,
    Signature,
    dedup,
    detect,
    make_discrepancy,
    minimize,
    opcode_profile,
)
from .harness import (
    TARGETS,
    BridgeSession,
    BridgeUnavailable,
    Budgets,
    ExecutionRecord,
    Harness,
    execute,
)
from .campaign_cli import (
    BridgeSpawnError,
    CampaignConfig,
    CampaignStats,
    ConfigError,
    replay,
    run_campaign,
)

__all__ = [
    "__version__",
    # opcode_model
    "FramingError",
    "Instruction",
    "OpcodeSpec",
    "TruncatedArgumentError",
    "UnknownOpcodeError",
    "catalog",
    "iter_instructions",
    "lookup",
    "read_instruction",
    # pvm
    "LoadResult",
    "Machine",
    "MachineState",
    "canonical",
    "canonical_state",
    "fnv1a64",
    "load",
    "resolve_import",
    "scrub_addresses",
    # disassembler
    "DisasmResult",
    "disassemble",
    "render_listing",
    # generator
    "ENCODINGS",
    "GenLimits",
    "Payload",
    "build_buffers",
    "generate",
    "relaxed_limits",
    "splitmix64_stream",
    # evaluator
    "Discrepancy",
    "Signature",
    "dedup",
    "detect",
    "make_discrepancy",
    "minimize",
    "opcode_profile",
    # harness
    "TARGETS",
    "BridgeSession",
    "BridgeUnavailable",
    "Budgets",
    "ExecutionRecord",
    "Harness",
    "execute",
    # campaign
    "BridgeSpawnError",
    "CampaignConfig",
    "CampaignStats",
    "ConfigError",
    "replay",
    "run_campaign",
]
