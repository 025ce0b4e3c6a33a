"""Automated asset inventory built incrementally from dissected traffic.

Records are keyed by interface MAC: station names are attacker-controlled at
runtime (a DCP Set can rename a device mid-operation), MACs are the stable
observable. Every populated field carries provenance, and a field changing
value is flagged as a conflict instead of being silently rewritten.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .dissect import (
    ArpPacket,
    CmFrame,
    DcpFrame,
    LldpFrame,
    ParsedFrame,
    PnioCyclicFrame,
    mac_to_str,
)
from .fsm import FrameRef

Timestamp = tuple[int, int]


@dataclass
class Provenance:
    protocol: str
    capture_index: int
    conflict: bool = False

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "capture_index": self.capture_index,
            "conflict": self.conflict,
        }


@dataclass
class AssetRecord:
    interface_mac: str
    name_of_station: str | None = None
    port_macs: set[str] = field(default_factory=set)
    ip_address: str | None = None
    subnet: str | None = None
    gateway: str | None = None
    vendor_id: int | None = None
    device_id: int | None = None
    role: str = "unknown"  # controller | device | supervisor | unknown
    first_seen: Timestamp = (0, 0)
    last_seen: Timestamp = (0, 0)
    provenance: dict[str, Provenance] = field(default_factory=dict)

    @property
    def port_count(self) -> int:
        return len(self.port_macs)

    def to_json(self) -> dict:
        return {
            "interface_mac": self.interface_mac,
            "name_of_station": self.name_of_station,
            "port_macs": sorted(self.port_macs),
            "port_count": self.port_count,
            "ip_address": self.ip_address,
            "subnet": self.subnet,
            "gateway": self.gateway,
            "vendor_id": self.vendor_id,
            "device_id": self.device_id,
            "role": self.role,
            "first_seen": list(self.first_seen),
            "last_seen": list(self.last_seen),
            "provenance": {name: p.to_json() for name, p in sorted(self.provenance.items())},
        }


@dataclass(frozen=True)
class InventoryChange:
    mac: str
    fieldname: str
    old: object
    new: object
    conflict: bool
    cause: FrameRef


class AssetInventory:
    """Single-writer store of AssetRecords; updates are deterministic."""

    def __init__(self) -> None:
        self.records: dict[str, AssetRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def get(self, mac: bytes | str) -> AssetRecord | None:
        key = mac if isinstance(mac, str) else mac_to_str(mac)
        return self.records.get(key)

    def find_mac_by_name(self, name: str) -> bytes | None:
        for key in sorted(self.records):
            if self.records[key].name_of_station == name:
                return bytes.fromhex(key.replace(":", ""))
        return None

    def _record(self, mac: str, ts: Timestamp) -> AssetRecord:
        record = self.records.get(mac)
        if record is None:
            record = AssetRecord(interface_mac=mac, first_seen=ts, last_seen=ts)
            self.records[mac] = record
        return record

    def _set(
        self,
        record: AssetRecord,
        fieldname: str,
        value: object,
        cause: FrameRef,
        changes: list[InventoryChange],
    ) -> None:
        old = getattr(record, fieldname)
        if value is None or value == old:
            return
        conflict = old not in (None, "unknown")
        setattr(record, fieldname, value)
        prior = record.provenance.get(fieldname)
        flagged = conflict or (prior.conflict if prior else False)
        record.provenance[fieldname] = Provenance(cause.protocol, cause.capture_index, flagged)
        changes.append(InventoryChange(record.interface_mac, fieldname, old, value, conflict, cause))

    def update_from_frame(self, parsed: ParsedFrame, ts: Timestamp) -> list[InventoryChange]:
        """Fold one frame into the inventory; returns the (possibly empty) delta."""
        changes: list[InventoryChange] = []
        body = parsed.body
        src = mac_to_str(parsed.envelope.src_mac)
        dst = mac_to_str(parsed.envelope.dst_mac)
        cause = FrameRef(parsed.raw_ref, parsed.protocol, "inventory update")

        if isinstance(body, LldpFrame):
            mac = mac_to_str(body.chassis_mac) if body.chassis_mac else src
            record = self._record(mac, ts)
            self._set(record, "name_of_station", body.station_name, cause, changes)
            self._set(record, "ip_address", body.management_address, cause, changes)
            port_mac = body.port_mac
            if port_mac is not None:
                port = mac_to_str(port_mac)
                if port not in record.port_macs:
                    record.port_macs.add(port)
                    record.provenance.setdefault(
                        "port_macs", Provenance(cause.protocol, cause.capture_index)
                    )
                    changes.append(InventoryChange(mac, "port_macs", None, port, False, cause))
            record.last_seen = ts
        elif isinstance(body, ArpPacket):
            record = self._record(mac_to_str(body.sender_mac), ts)
            if body.sender_ip != "0.0.0.0":
                self._set(record, "ip_address", body.sender_ip, cause, changes)
            record.last_seen = ts
        elif isinstance(body, DcpFrame):
            record = self._record(src, ts)
            record.last_seen = ts
            if body.service_type == "ResponseSuccess" and body.service_id == "Identify":
                self._apply_dcp_blocks(record, body, cause, changes)
            elif body.service_type == "Request" and body.service_id == "Set":
                target = self._record(dst, ts)
                target.last_seen = ts
                self._apply_dcp_blocks(target, body, cause, changes)
                self._set(record, "role", "controller", cause, changes)
                self._set(target, "role", "device", cause, changes)
        elif isinstance(body, CmFrame):
            record = self._record(src, ts)
            record.last_seen = ts
            if body.operation == "Connect" and body.direction == "request":
                target = self._record(dst, ts)
                target.last_seen = ts
                self._set(record, "role", "controller", cause, changes)
                self._set(target, "role", "device", cause, changes)
        elif isinstance(body, PnioCyclicFrame):
            record = self._record(src, ts)
            record.last_seen = ts
        else:
            # Other traffic refreshes liveness only for known assets.
            record = self.records.get(src)
            if record is not None:
                record.last_seen = ts
        return changes

    def _apply_dcp_blocks(
        self,
        record: AssetRecord,
        body: DcpFrame,
        cause: FrameRef,
        changes: list[InventoryChange],
    ) -> None:
        for block in body.blocks:
            if block.is_name_of_station:
                self._set(record, "name_of_station", block.name_of_station, cause, changes)
            elif block.is_ip_parameter and block.ip_parameter:
                ip, subnet, gateway = block.ip_parameter
                if ip != "0.0.0.0":
                    self._set(record, "ip_address", ip, cause, changes)
                    self._set(record, "subnet", subnet, cause, changes)
                    self._set(record, "gateway", gateway, cause, changes)
            elif block.option == 2 and block.suboption == 3 and len(block.payload) >= 4:
                vendor, device = (
                    int.from_bytes(block.payload[0:2], "big"),
                    int.from_bytes(block.payload[2:4], "big"),
                )
                self._set(record, "vendor_id", vendor, cause, changes)
                self._set(record, "device_id", device, cause, changes)

    def export(self) -> dict:
        """Deterministic JSON document, records sorted by interface MAC."""
        return {"assets": [self.records[mac].to_json() for mac in sorted(self.records)]}

    def export_json(self) -> str:
        return json.dumps(self.export(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def load(cls, document: dict) -> "AssetInventory":
        inv = cls()
        for asset in document.get("assets", []):
            record = AssetRecord(
                interface_mac=asset["interface_mac"],
                name_of_station=asset.get("name_of_station"),
                port_macs=set(asset.get("port_macs", [])),
                ip_address=asset.get("ip_address"),
                subnet=asset.get("subnet"),
                gateway=asset.get("gateway"),
                vendor_id=asset.get("vendor_id"),
                device_id=asset.get("device_id"),
                role=asset.get("role", "unknown"),
                first_seen=tuple(asset.get("first_seen", (0, 0))),  # type: ignore[arg-type]
                last_seen=tuple(asset.get("last_seen", (0, 0))),  # type: ignore[arg-type]
            )
            for name, prov in asset.get("provenance", {}).items():
                record.provenance[name] = Provenance(
                    prov["protocol"], prov["capture_index"], prov.get("conflict", False)
                )
            inv.records[record.interface_mac] = record
        return inv
