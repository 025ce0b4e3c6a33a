"""Tracking pipeline: frames in, transition logs, inventory and alerts out.

The tracker consumes one capture stream sequentially, updates the asset
inventory, manages FSM instance lifecycles (one System per run, Devices
lazily per MAC, Connections per Connect request), routes derived events and
turns every rejected transition into an anomaly alert. Malformed frames,
orphan frames and inventory conflicts surface as diagnostic-severity alerts
instead of being dropped: in an intrusion-detection setting they are signal.
"""

from __future__ import annotations

import json
import uuid
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

from .capture import CaptureError, RawFrame, StreamItem
from .dissect import LldpFrame, MalformedFrame, IoDataSpec, ParsedFrame, dissect, mac_to_str
from .fsm import FrameRef, FsmInstance, TransitionRecord
from .inventory import AssetInventory
from .models import (
    ALL_CONNECTIONS_ESTABLISHED,
    CONNECTION_ESTABLISHED_STATES,
    ConnectionRegistration,
    DeferredEvent,
    ProtocolEvent,
    TrackContext,
    connection_fsm_table,
    derive_events,
    device_fsm_table,
    system_fsm_table,
)

Timestamp = tuple[int, int]

SEVERITY_ANOMALY = "anomaly"
SEVERITY_DIAGNOSTIC = "diagnostic"


@dataclass(frozen=True)
class AnomalyAlert:
    timestamp: Timestamp
    instance_kind: str  # "device" | "connection" | "system"
    instance_key: str
    state_at_event: str
    offending_event: str
    cause: FrameRef
    explanation: str
    severity: str  # "anomaly" | "diagnostic"

    def to_json(self) -> dict:
        return {
            "timestamp": list(self.timestamp),
            "instance_kind": self.instance_kind,
            "instance_key": self.instance_key,
            "state_at_event": self.state_at_event,
            "offending_event": self.offending_event,
            "cause": self.cause.to_json(),
            "explanation": self.explanation,
            "severity": self.severity,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "AnomalyAlert":
        cause = doc["cause"]
        return cls(
            timestamp=(doc["timestamp"][0], doc["timestamp"][1]),
            instance_kind=doc["instance_kind"],
            instance_key=doc["instance_key"],
            state_at_event=doc["state_at_event"],
            offending_event=doc["offending_event"],
            cause=FrameRef(cause["capture_index"], cause["protocol"], cause["summary"]),
            explanation=doc["explanation"],
            severity=doc["severity"],
        )


@dataclass
class TrackerConfig:
    system_name: str = "poet-system"
    deferred_window: int = 10000  # frames an identify-by-name may stay unresolved
    alert_sink: TextIO | None = None


@dataclass
class ConnectionInfo:
    key: str
    initiator_mac: bytes
    responder_mac: bytes
    instance: FsmInstance

    @property
    def is_established(self) -> bool:
        return self.instance.current_state in CONNECTION_ESTABLISHED_STATES


class FsmFleet:
    """All live FSM instances of one run plus the composite-event evaluation.

    Shared between the live tracker and scenario manifest replay so that both
    sides agree on transition semantics by construction.
    """

    def __init__(self, system_name: str, on_alert: Callable[[AnomalyAlert], None]):
        self.system_name = system_name
        self.on_alert = on_alert
        self.system = FsmInstance(system_fsm_table(), system_name)
        self.devices: dict[str, FsmInstance] = {}
        self.connections: dict[str, FsmInstance] = {}
        self._device_table = device_fsm_table()
        self._connection_table = connection_fsm_table()
        self._all_established_fired = False

    def ensure_device(self, mac: bytes) -> FsmInstance:
        key = mac_to_str(mac)
        instance = self.devices.get(key)
        if instance is None:
            instance = FsmInstance(self._device_table, key)
            self.devices[key] = instance
        return instance

    def ensure_connection(self, key: str) -> FsmInstance:
        instance = self.connections.get(key)
        if instance is None:
            instance = FsmInstance(self._connection_table, key)
            self.connections[key] = instance
        return instance

    def _instance_for(self, event: ProtocolEvent) -> tuple[FsmInstance, str, str]:
        if event.scope == "system":
            return self.system, "system", self.system_name
        if event.scope == "device":
            assert event.subject_mac is not None
            instance = self.ensure_device(event.subject_mac)
            return instance, "device", instance.instance_key
        assert event.connection_key is not None
        instance = self.ensure_connection(event.connection_key)
        return instance, "connection", event.connection_key

    def _reject_alert(
        self, kind: str, key: str, record: TransitionRecord
    ) -> AnomalyAlert:
        table = {
            "system": self.system.definition,
            "device": self._device_table,
            "connection": self._connection_table,
        }[kind]
        operation = table.operation_for(record.from_state) or record.from_state
        return AnomalyAlert(
            timestamp=record.timestamp,
            instance_kind=kind,
            instance_key=key,
            state_at_event=record.from_state,
            offending_event=record.event,
            cause=record.cause,
            explanation=f"{record.event} not permitted during {operation} operation",
            severity=SEVERITY_ANOMALY,
        )

    def fire(self, event: ProtocolEvent, ts: Timestamp) -> TransitionRecord:
        instance, kind, key = self._instance_for(event)
        record = instance.fire(event.event_name, event.cause, ts)
        if record.verdict == "rejected":
            self.on_alert(self._reject_alert(kind, key, record))
        if kind == "connection" and record.verdict == "accepted":
            self._evaluate_all_established(event.cause, ts)
        return record

    def _evaluate_all_established(self, cause: FrameRef, ts: Timestamp) -> None:
        # Fires at most once per run, when every live connection has reached
        # ConnectionEstablished or a data-exchange state.
        if self._all_established_fired or not self.connections:
            return
        for instance in self.connections.values():
            if instance.current_state not in CONNECTION_ESTABLISHED_STATES:
                return
        self._all_established_fired = True
        record = self.system.fire(ALL_CONNECTIONS_ESTABLISHED, cause, ts)
        if record.verdict == "rejected":
            self.on_alert(self._reject_alert("system", self.system_name, record))

    def transition_count(self) -> int:
        count = len(self.system.log)
        count += sum(len(i.log) for i in self.devices.values())
        count += sum(len(i.log) for i in self.connections.values())
        return count


@dataclass
class TrackerReport:
    summary: dict
    final_states: dict
    inventory: dict
    alerts: list[AnomalyAlert]
    logs: dict

    def to_json(self) -> dict:
        return {
            "summary": self.summary,
            "final_states": self.final_states,
            "inventory": self.inventory,
            "alerts": [a.to_json() for a in self.alerts],
            "logs": self.logs,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n"

    @property
    def anomalies(self) -> list[AnomalyAlert]:
        return [a for a in self.alerts if a.severity == SEVERITY_ANOMALY]

    @property
    def diagnostics(self) -> list[AnomalyAlert]:
        return [a for a in self.alerts if a.severity == SEVERITY_DIAGNOSTIC]


class Tracker(TrackContext):
    """Single-pipeline tracker; owns all mutable state for one capture run."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.alerts: list[AnomalyAlert] = []
        self.fleet = FsmFleet(self.config.system_name, self._on_alert)
        self.inventory = AssetInventory()
        self._ar_registry: dict[uuid.UUID, ConnectionInfo] = {}
        self._frame_id_registry: dict[int, tuple[ConnectionInfo, str, tuple[IoDataSpec, ...]]] = {}
        self.deferred: list[DeferredEvent] = []
        self._frames = 0
        self._bytes = 0
        self._first_ts: Timestamp | None = None
        self._last_ts: Timestamp | None = None

    # TrackContext -----------------------------------------------------------

    def lookup_name(self, name: str) -> bytes | None:
        return self.inventory.find_mac_by_name(name)

    def connection_for_ar(self, ar_uuid: uuid.UUID) -> ConnectionInfo | None:
        return self._ar_registry.get(ar_uuid)

    def connection_for_frame_id(self, frame_id: int):
        return self._frame_id_registry.get(frame_id)

    def deferred_for_name(self, name: str) -> list[DeferredEvent]:
        return [d for d in self.deferred if d.name == name]

    @property
    def system_state(self) -> str:
        return self.fleet.system.current_state

    # Pipeline ----------------------------------------------------------------

    def _on_alert(self, alert: AnomalyAlert) -> None:
        self.alerts.append(alert)
        sink = self.config.alert_sink
        if sink is not None:
            sink.write(json.dumps(alert.to_json(), sort_keys=True) + "\n")
            sink.flush()

    def _diagnostic(
        self,
        ts: Timestamp,
        kind: str,
        key: str,
        offending_event: str,
        cause: FrameRef,
        explanation: str,
    ) -> None:
        state = {
            "system": self.fleet.system.current_state,
            "device": self.fleet.devices[key].current_state if key in self.fleet.devices else "Active",
            "connection": self.fleet.connections[key].current_state
            if key in self.fleet.connections
            else "ConnectionCreation",
        }[kind]
        self._on_alert(
            AnomalyAlert(
                timestamp=ts,
                instance_kind=kind,
                instance_key=key,
                state_at_event=state,
                offending_event=offending_event,
                cause=cause,
                explanation=explanation,
                severity=SEVERITY_DIAGNOSTIC,
            )
        )

    def _register_connection(self, reg: ConnectionRegistration, ts: Timestamp, cause: FrameRef) -> None:
        created = reg.key not in self.fleet.connections
        instance = self.fleet.ensure_connection(reg.key)
        info = ConnectionInfo(reg.key, reg.initiator_mac, reg.responder_mac, instance)
        self._ar_registry[reg.ar_uuid] = info
        for frame_id, direction, specs in reg.frame_id_bindings:
            self._frame_id_registry[frame_id] = (info, direction, specs)
        if created and self.fleet.system.current_state == "DataExchange":
            self._diagnostic(
                ts,
                "connection",
                reg.key,
                "connection_created_after_startup",
                cause,
                "new connection initiated after system startup completed",
            )

    def process_frame(self, raw: RawFrame) -> None:
        ts = (raw.ts_sec, raw.ts_nsec)
        self._frames += 1
        self._bytes += len(raw.frame_bytes)
        if self._first_ts is None:
            self._first_ts = ts
        self._last_ts = ts

        try:
            parsed = dissect(raw)
        except MalformedFrame as exc:
            self._diagnostic(
                ts,
                "system",
                self.config.system_name,
                "malformed_frame",
                FrameRef(raw.capture_index, exc.protocol, exc.reason),
                f"malformed {exc.protocol} frame at byte {exc.offset}: {exc.reason}",
            )
            self._expire_deferred(raw.capture_index, ts)
            return

        for change in self.inventory.update_from_frame(parsed, ts):
            if change.conflict:
                self._diagnostic(
                    ts,
                    "device",
                    change.mac,
                    "inventory_conflict",
                    change.cause,
                    f"{change.fieldname} changed from {change.old!r} to {change.new!r}",
                )
        for violation in getattr(parsed.body, "violations", ()):
            self._diagnostic(
                ts,
                "system",
                self.config.system_name,
                "protocol_rule_violation",
                FrameRef(raw.capture_index, parsed.protocol, violation),
                f"{parsed.protocol} rule violation: {violation}",
            )

        self._ensure_source_instance(parsed)
        derived = derive_events(parsed, self)

        if derived.registration is not None:
            cause = FrameRef(raw.capture_index, parsed.protocol, "connect request")
            self._register_connection(derived.registration, ts, cause)
        for diag in derived.diagnostics:
            key = mac_to_str(diag.subject_mac) if diag.subject_mac else self.config.system_name
            kind = "device" if diag.subject_mac else "system"
            self._diagnostic(ts, kind, key, diag.kind.replace("-", "_"), diag.cause, diag.detail)
        if derived.consumed_deferrals:
            consumed = set(id(d) for d in derived.consumed_deferrals)
            self.deferred = [d for d in self.deferred if id(d) not in consumed]
        if derived.new_deferral is not None:
            self.deferred.append(derived.new_deferral)

        for event in derived.events:
            self.fleet.fire(event, ts)

        self._expire_deferred(raw.capture_index, ts)

    def _ensure_source_instance(self, parsed: ParsedFrame) -> None:
        # A device machine exists for every MAC speaking a PROFINET-family
        # protocol, even if no event ever targets it (e.g. a quiet attacker).
        if parsed.protocol in ("pn-dcp", "pn-cm", "pnio"):
            self.fleet.ensure_device(parsed.envelope.src_mac)
        elif parsed.protocol == "lldp":
            body = parsed.body
            assert isinstance(body, LldpFrame)
            self.fleet.ensure_device(body.chassis_mac or parsed.envelope.src_mac)

    def _expire_deferred(self, current_index: int, ts: Timestamp) -> None:
        window = self.config.deferred_window
        still_pending: list[DeferredEvent] = []
        for deferred in self.deferred:
            if current_index - deferred.created_at_index > window:
                self._diagnostic(
                    ts,
                    "system",
                    self.config.system_name,
                    "deferred_identify_expired",
                    deferred.cause,
                    f"identify request for {deferred.name!r} never answered",
                )
            else:
                still_pending.append(deferred)
        self.deferred = still_pending

    def finish(self) -> None:
        """Flush unresolved deferrals as diagnostics at end of capture."""
        ts = self._last_ts or (0, 0)
        for deferred in self.deferred:
            self._diagnostic(
                ts,
                "system",
                self.config.system_name,
                "deferred_identify_expired",
                deferred.cause,
                f"identify request for {deferred.name!r} never answered",
            )
        self.deferred = []

    def process(self, stream: Iterable[StreamItem]) -> TrackerReport:
        for item in stream:
            if isinstance(item, CaptureError):
                self._diagnostic(
                    (0, 0),
                    "system",
                    self.config.system_name,
                    "capture_error",
                    FrameRef(item.capture_index, "capture", item.reason),
                    f"capture error at byte {item.byte_offset}: {item.reason}",
                )
                continue
            self.process_frame(item)
        self.finish()
        return self.report()

    # Outputs ------------------------------------------------------------------

    def snapshot_states(self) -> dict:
        """Every instance's current state with its operation label."""
        fleet = self.fleet
        system_def = fleet.system.definition
        device_def = fleet._device_table
        conn_def = fleet._connection_table
        return {
            "system": {
                "key": fleet.system_name,
                "state": fleet.system.current_state,
                "operation": system_def.operation_for(fleet.system.current_state),
            },
            "devices": [
                {
                    "mac": mac,
                    "state": fleet.devices[mac].current_state,
                    "operation": device_def.operation_for(fleet.devices[mac].current_state),
                }
                for mac in sorted(fleet.devices)
            ],
            "connections": [
                {
                    "key": key,
                    "state": fleet.connections[key].current_state,
                    "operation": conn_def.operation_for(fleet.connections[key].current_state),
                }
                for key in sorted(fleet.connections)
            ],
        }

    def report(self) -> TrackerReport:
        if self._first_ts is None or self._last_ts is None or self._frames <= 1:
            span = 0.0
        else:
            span = (self._last_ts[0] - self._first_ts[0]) + (
                self._last_ts[1] - self._first_ts[1]
            ) / 1_000_000_000
        summary = {
            "system_name": self.config.system_name,
            "frames": self._frames,
            "bytes": self._bytes,
            "span_seconds": span,
            "transitions": self.fleet.transition_count(),
            "anomalies": sum(1 for a in self.alerts if a.severity == SEVERITY_ANOMALY),
            "diagnostics": sum(1 for a in self.alerts if a.severity == SEVERITY_DIAGNOSTIC),
        }
        logs = {
            "system": self.fleet.system.export_log(),
            "devices": {mac: inst.export_log() for mac, inst in sorted(self.fleet.devices.items())},
            "connections": {
                key: inst.export_log() for key, inst in sorted(self.fleet.connections.items())
            },
        }
        return TrackerReport(
            summary=summary,
            final_states=self.snapshot_states(),
            inventory=self.inventory.export(),
            alerts=list(self.alerts),
            logs=logs,
        )


def process_capture(stream: Iterable[StreamItem], config: TrackerConfig | None = None) -> TrackerReport:
    """Run the whole pipeline over one frame stream."""
    return Tracker(config).process(stream)
