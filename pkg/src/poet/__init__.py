"""poet: passive PROFINET traffic analysis.

Reconstructs the operation lifecycle of a PROFINET system from captured
frames: asset inventory, per-device / per-connection / system state machines,
and anomaly alerts for protocol events that violate valid operation
transitions.
"""

from .capture import CaptureError, CaptureStats, RawFrame, frame_stream_stats, open_capture
from .dissect import (
    IoDataSpec,
    MalformedFrame,
    ParsedFrame,
    dissect,
    extract_io_specs,
    extract_process_data,
)
from .fsm import FsmDefinition, FsmInstance, TransitionRecord, validate_definition
from .inventory import AssetInventory, AssetRecord
from .models import (
    ProtocolEvent,
    connection_fsm_table,
    derive_events,
    device_fsm_table,
    system_fsm_table,
)
from .synth import ScenarioSpec, builtin_scenario, fuzz_corpus, synthesize
from .tracker import AnomalyAlert, Tracker, TrackerConfig, TrackerReport, process_capture

__version__ = "0.1.0"

__all__ = [
    "AnomalyAlert",
    "AssetInventory",
    "AssetRecord",
    "CaptureError",
    "CaptureStats",
    "FsmDefinition",
    "FsmInstance",
    "IoDataSpec",
    "MalformedFrame",
    "ParsedFrame",
    "ProtocolEvent",
    "RawFrame",
    "ScenarioSpec",
    "Tracker",
    "TrackerConfig",
    "TrackerReport",
    "TransitionRecord",
    "builtin_scenario",
    "connection_fsm_table",
    "derive_events",
    "device_fsm_table",
    "dissect",
    "extract_io_specs",
    "extract_process_data",
    "frame_stream_stats",
    "fuzz_corpus",
    "open_capture",
    "process_capture",
    "synthesize",
    "system_fsm_table",
    "validate_definition",
]
