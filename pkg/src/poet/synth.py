"""Byte-accurate scenario synthesis for desk-scale testing.

Builds capture files for a normal multi-device startup choreography
(neighbourhood detection, per-device address resolution, interleaved
connection establishment, cyclic data exchange), with optional attack
injections: runtime rename, rogue connect, malformed frames. Every frame
carries its intended semantic events; the ground-truth manifest is computed
by replaying those events through the same FSM tables the tracker uses, so
transition semantics agree by construction while byte-level correctness is
anchored independently by the dissector round-trip tests.
"""

from __future__ import annotations

import json
import random
import struct
import uuid
from dataclasses import dataclass, field, replace

from .dissect import (
    BLOCK_AR_REQ,
    BLOCK_AR_RES,
    BLOCK_CCONTROL_REQ,
    BLOCK_CCONTROL_RES,
    BLOCK_DCONTROL_REQ,
    BLOCK_DCONTROL_RES,
    BLOCK_EXPECTED_SUBMODULES,
    BLOCK_IOCR_REQ,
    BLOCK_IOCR_RES,
    BLOCK_READ_REQ,
    BLOCK_READ_RES,
    BLOCK_WRITE_REQ,
    BLOCK_WRITE_RES,
    DCP_FRAME_ID_GETSET,
    DCP_FRAME_ID_IDENTIFY_REQ,
    DCP_FRAME_ID_IDENTIFY_RES,
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    ETHERTYPE_LLDP,
    ETHERTYPE_PROFINET,
    PNIO_CM_UDP_PORT,
    RPC_OPNUM_CONNECT,
    RPC_OPNUM_CONTROL,
    RPC_OPNUM_READ,
    RPC_OPNUM_WRITE,
    RPC_PTYPE_REQUEST,
    RPC_PTYPE_RESPONSE,
    UUID_IO_CONTROLLER,
    UUID_IO_DEVICE,
    str_to_ip,
    str_to_mac,
)
from .fsm import FrameRef
from .models import (
    ACYCLIC_DONE,
    ACYCLIC_READ,
    ACYCLIC_WRITE,
    APPLICATION_READY,
    CONNECT_REQUESTED,
    CONNECTION_CONFIRMED,
    CYCLIC_DATA_GOOD,
    DETECT_NEIGHBOURS,
    DUPLICATION_CHECK,
    END_OF_PARAMETRIZATION,
    INPUT_PROCESS_DATA_SENT,
    IP_ASSIGNED,
    IP_ASSIGNMENT_REQUESTED,
    NAME_RESOLUTION_REQUESTED,
    NAME_RESOLVED,
    NAME_SET_REQUESTED,
    OUTPUT_PROCESS_DATA_SENT,
    PARAMETRIZATION_WRITE,
    PN_TRAFFIC_DETECTED,
    ProtocolEvent,
    connection_key,
)

LLDP_MULTICAST = str_to_mac("01:80:c2:00:00:0e")
DCP_MULTICAST = str_to_mac("01:0e:cf:00:00:00")
BROADCAST = b"\xff" * 6
ATTACKER_MAC = "02:66:6e:00:00:99"
DEFAULT_SYSTEM_NAME = "poet-system"
MIN_FRAME = 60  # Ethernet minimum without FCS
PNIO_MIN_CSDU = 40

GOOD = 0x80
DATA_STATUS_RUN = 0x35


class ScenarioError(ValueError):
    """Scenario specification is invalid (duplicate identities, bad refs)."""


# --- Scenario specification ---------------------------------------------------


@dataclass(frozen=True)
class SubmoduleSpec:
    slot: int
    subslot: int
    direction: str  # "input" | "output"
    length: int


@dataclass(frozen=True)
class NodeSpec:
    mac: str
    name: str
    ip: str
    submodules: tuple[SubmoduleSpec, ...] = ()


@dataclass(frozen=True)
class Injection:
    after_index: int
    attack: str  # "rename" | "rogue_connect" | "malformed"
    target: str | None = None  # station name of the target device
    new_name: str | None = None
    protocol: str | None = None  # for malformed


@dataclass(frozen=True)
class ScenarioSpec:
    controller: NodeSpec
    devices: tuple[NodeSpec, ...]
    gap_seconds: float = 0.03
    injections: tuple[Injection, ...] = ()
    initial_lldp: bool = True
    lldp_refresh_every: int = 0  # cyclic rounds between refresh bursts, 0 = off
    cyclic_rounds: int = 8
    writes_per_device: int = 2
    acyclic_exchange: bool = False
    ports_per_device: int = 2
    seed: int = 1
    start_time: int = 1_700_000_000
    system_name: str = DEFAULT_SYSTEM_NAME

    def validate(self) -> None:
        nodes = [self.controller, *self.devices]
        macs = [n.mac for n in nodes]
        names = [n.name for n in nodes]
        ips = [n.ip for n in nodes]
        if len(set(macs)) != len(macs):
            raise ScenarioError("duplicate MAC in scenario")
        if len(set(names)) != len(names):
            raise ScenarioError("duplicate station name in scenario")
        if len(set(ips)) != len(ips):
            raise ScenarioError("duplicate IP in scenario")
        for injection in self.injections:
            if injection.attack not in ("rename", "rogue_connect", "malformed"):
                raise ScenarioError(f"unknown attack {injection.attack!r}")
            if injection.attack in ("rename", "rogue_connect"):
                if injection.target not in [d.name for d in self.devices]:
                    raise ScenarioError(f"injection target {injection.target!r} not a device")

    @classmethod
    def from_json(cls, doc: dict) -> "ScenarioSpec":
        def node(entry: dict) -> NodeSpec:
            subs = tuple(
                SubmoduleSpec(s[0], s[1], s[2], s[3]) if isinstance(s, list) else SubmoduleSpec(**s)
                for s in entry.get("submodules", [])
            )
            return NodeSpec(entry["mac"], entry["name"], entry["ip"], subs)

        injections = tuple(
            Injection(
                after_index=i["after_index"],
                attack=i["attack"],
                target=i.get("target"),
                new_name=i.get("new_name"),
                protocol=i.get("protocol"),
            )
            for i in doc.get("injections", [])
        )
        kwargs = {}
        for key in (
            "gap_seconds",
            "initial_lldp",
            "lldp_refresh_every",
            "cyclic_rounds",
            "writes_per_device",
            "acyclic_exchange",
            "ports_per_device",
            "seed",
            "start_time",
            "system_name",
        ):
            if key in doc:
                kwargs[key] = doc[key]
        return cls(
            controller=node(doc["controller"]),
            devices=tuple(node(d) for d in doc.get("devices", [])),
            injections=injections,
            **kwargs,
        )


# --- Frame plans ---------------------------------------------------------------


@dataclass(frozen=True)
class PlannedEvent:
    event_name: str
    scope: str
    subject_mac: bytes | None = None
    connection_key: str | None = None
    gated: bool = False  # emit only while the system is Inactive/PoweredOn


@dataclass
class FramePlan:
    data: bytes
    label: str
    events: list[PlannedEvent] = field(default_factory=list)
    new_connections: list[str] = field(default_factory=list)
    index: int = -1
    ts: tuple[int, int] = (0, 0)


@dataclass
class SynthResult:
    spec: ScenarioSpec
    frames: list[FramePlan]
    manifest: dict
    pcap_bytes: bytes

    def write(self, prefix: str) -> tuple[str, str]:
        pcap_path = prefix + ".pcap"
        manifest_path = prefix + ".manifest.json"
        with open(pcap_path, "wb") as f:
            f.write(self.pcap_bytes)
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(self.manifest, f, sort_keys=True, indent=2)
            f.write("\n")
        return pcap_path, manifest_path


# --- Low-level encoders --------------------------------------------------------


def ethernet(dst: bytes, src: bytes, ethertype: int, payload: bytes, pad_to: int = MIN_FRAME) -> bytes:
    frame = dst + src + struct.pack(">H", ethertype) + payload
    if len(frame) < pad_to:
        frame += b"\x00" * (pad_to - len(frame))
    return frame


def _lldp_tlv(tlv_type: int, value: bytes) -> bytes:
    return struct.pack(">H", (tlv_type << 9) | len(value)) + value


def encode_lldp(
    chassis_mac: bytes,
    port_mac: bytes,
    ttl: int,
    station_name: str | None,
    port_descriptions: tuple[str, ...] = (),
    management_ip: str | None = None,
) -> bytes:
    tlvs = [
        _lldp_tlv(1, bytes([4]) + chassis_mac),  # chassis id, MAC subtype
        _lldp_tlv(2, bytes([3]) + port_mac),  # port id, MAC subtype
        _lldp_tlv(3, struct.pack(">H", ttl)),
    ]
    for description in port_descriptions:
        tlvs.append(_lldp_tlv(4, description.encode()))
    if station_name is not None:
        tlvs.append(_lldp_tlv(5, station_name.encode()))
    if management_ip is not None:
        value = bytes([5, 1]) + str_to_ip(management_ip) + bytes([2]) + struct.pack(">I", 1) + b"\x00"
        tlvs.append(_lldp_tlv(8, value))
    tlvs.append(_lldp_tlv(127, b"\x00\x0e\xcf\x02\x00\x00"))  # PNO port status
    tlvs.append(_lldp_tlv(0, b""))
    return ethernet(LLDP_MULTICAST, port_mac, ETHERTYPE_LLDP, b"".join(tlvs))


def encode_arp(
    src_mac: bytes,
    dst_mac: bytes,
    operation: int,
    sender_mac: bytes,
    sender_ip: str,
    target_mac: bytes,
    target_ip: str,
) -> bytes:
    payload = struct.pack(">HHBBH", 1, ETHERTYPE_IPV4, 6, 4, operation)
    payload += sender_mac + str_to_ip(sender_ip) + target_mac + str_to_ip(target_ip)
    return ethernet(dst_mac, src_mac, ETHERTYPE_ARP, payload)


def _dcp_block(option: int, suboption: int, qualifier: int | None, payload: bytes) -> bytes:
    body = (struct.pack(">H", qualifier) if qualifier is not None else b"") + payload
    block = bytes([option, suboption]) + struct.pack(">H", len(body)) + body
    if len(body) % 2:
        block += b"\x00"
    return block


def encode_dcp(
    src: bytes,
    dst: bytes,
    frame_id: int,
    service_id: int,
    service_type: int,
    xid: int,
    blocks: bytes,
) -> bytes:
    payload = struct.pack(">HBBIHH", frame_id, service_id, service_type, xid, 0, len(blocks))
    return ethernet(dst, src, ETHERTYPE_PROFINET, payload + blocks)


def dcp_identify_request(src: bytes, xid: int, name: str) -> bytes:
    blocks = _dcp_block(2, 2, None, name.encode())
    return encode_dcp(src, DCP_MULTICAST, DCP_FRAME_ID_IDENTIFY_REQ, 5, 0, xid, blocks)


def dcp_identify_response(
    src: bytes,
    dst: bytes,
    xid: int,
    name: str,
    ip: str | None = None,
    vendor_id: int = 0x002A,
    device_id: int = 0x0301,
) -> bytes:
    blocks = _dcp_block(2, 2, 0, name.encode())
    blocks += _dcp_block(2, 3, 0, struct.pack(">HH", vendor_id, device_id))
    if ip is not None:
        blocks += _dcp_block(1, 2, 1, str_to_ip(ip) + str_to_ip("255.255.255.0") + str_to_ip("0.0.0.0"))
    return encode_dcp(src, dst, DCP_FRAME_ID_IDENTIFY_RES, 5, 1, xid, blocks)


def dcp_set_ip_request(src: bytes, dst: bytes, xid: int, ip: str, subnet: str, gateway: str) -> bytes:
    blocks = _dcp_block(1, 2, 1, str_to_ip(ip) + str_to_ip(subnet) + str_to_ip(gateway))
    return encode_dcp(src, dst, DCP_FRAME_ID_GETSET, 4, 0, xid, blocks)


def dcp_set_name_request(src: bytes, dst: bytes, xid: int, name: str) -> bytes:
    blocks = _dcp_block(2, 2, 1, name.encode())
    return encode_dcp(src, dst, DCP_FRAME_ID_GETSET, 4, 0, xid, blocks)


def dcp_set_response(src: bytes, dst: bytes, xid: int, option: int, suboption: int) -> bytes:
    blocks = _dcp_block(5, 4, None, bytes([option, suboption, 0]))
    return encode_dcp(src, dst, DCP_FRAME_ID_GETSET, 4, 1, xid, blocks)


def _ipv4_checksum(header: bytes) -> int:
    total = sum(struct.unpack(">10H", header[:20]))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return (~total) & 0xFFFF


def _cm_block(block_type: int, content: bytes) -> bytes:
    return struct.pack(">HH", block_type, len(content) + 2) + b"\x01\x00" + content


def encode_cm(
    src_mac: bytes,
    dst_mac: bytes,
    src_ip: str,
    dst_ip: str,
    ptype: int,
    opnum: int,
    activity: uuid.UUID,
    seq: int,
    blocks: bytes,
    interface: uuid.UUID | None = None,
) -> bytes:
    if interface is None:
        interface = UUID_IO_DEVICE
    args = struct.pack("<IIIII", 16384, len(blocks), len(blocks), 0, len(blocks)) + blocks
    rpc = struct.pack(
        "<BBBB3sB",
        4,  # RPC version (connectionless)
        ptype,
        0x00,  # flags1: single fragment
        0x00,  # flags2
        b"\x10\x00\x00",  # drep: little-endian integers
        0,  # serial high
    )
    object_uuid = uuid.UUID("dea00000-6c97-11d1-8271-000000000001")
    rpc += object_uuid.bytes_le + interface.bytes_le + activity.bytes_le
    # boot(4) if_vers(4) seq(4) opnum(2) ihint(2) ahint(2) frag_len(2) frag_num(2) auth(1) serial(1)
    rpc += struct.pack("<IIIHHHHHBB", 0, 1, seq, opnum, 0xFFFF, 0xFFFF, len(args), 0, 0, 0)
    udp = struct.pack(">HHHH", PNIO_CM_UDP_PORT, PNIO_CM_UDP_PORT, 8 + len(rpc) + len(args), 0)
    total_len = 20 + 8 + len(rpc) + len(args)
    ip_header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        0,
        total_len,
        seq & 0xFFFF,
        0,
        64,
        17,
        0,
        str_to_ip(src_ip),
        str_to_ip(dst_ip),
    )
    checksum = _ipv4_checksum(ip_header)
    ip_header = ip_header[:10] + struct.pack(">H", checksum) + ip_header[12:]
    return ethernet(dst_mac, src_mac, ETHERTYPE_IPV4, ip_header + udp + rpc + args)


def ar_block_request(ar_uuid: uuid.UUID, initiator_mac: bytes, station_name: str) -> bytes:
    content = struct.pack(">H", 1) + ar_uuid.bytes + struct.pack(">H", 1) + initiator_mac
    content += uuid.UUID(int=0).bytes  # initiator object uuid
    content += struct.pack(">IHH", 0x11, 100, PNIO_CM_UDP_PORT)
    name = station_name.encode()
    content += struct.pack(">H", len(name)) + name
    return _cm_block(BLOCK_AR_REQ, content)


def ar_block_response(ar_uuid: uuid.UUID, responder_mac: bytes) -> bytes:
    content = struct.pack(">H", 1) + ar_uuid.bytes + struct.pack(">H", 1) + responder_mac
    content += struct.pack(">H", PNIO_CM_UDP_PORT)
    return _cm_block(BLOCK_AR_RES, content)


def iocr_block_request(cr_type: int, reference: int, data_length: int, frame_id: int) -> bytes:
    content = struct.pack(
        ">HHHHHHHHH", cr_type, reference, ETHERTYPE_PROFINET, data_length, frame_id, 32, 32, 3, 3
    )
    return _cm_block(BLOCK_IOCR_REQ, content)


def iocr_block_response(cr_type: int, reference: int, frame_id: int) -> bytes:
    content = struct.pack(">HHH", cr_type, reference, frame_id)
    return _cm_block(BLOCK_IOCR_RES, content)


def _group_by_slot(submodules: tuple[SubmoduleSpec, ...]) -> dict[int, list[SubmoduleSpec]]:
    slots: dict[int, list[SubmoduleSpec]] = {}
    for sub in submodules:
        slots.setdefault(sub.slot, []).append(sub)
    return slots


def layout_order(submodules: tuple[SubmoduleSpec, ...]) -> tuple[SubmoduleSpec, ...]:
    """Submodule order as encoded on the wire: slots in first-seen order,
    declaration order within a slot. Cyclic C-SDU layout follows this order."""
    out: list[SubmoduleSpec] = []
    for subs in _group_by_slot(submodules).values():
        out.extend(subs)
    return tuple(out)


def expected_submodules_block(submodules: tuple[SubmoduleSpec, ...]) -> bytes:
    slots = _group_by_slot(submodules)
    content = struct.pack(">H", len(slots))
    for slot, subs in slots.items():
        content += struct.pack(">HIH", slot, 0x100 + slot, len(subs))
        for sub in subs:
            direction = 1 if sub.direction == "input" else 2
            content += struct.pack(
                ">HIBHBB", sub.subslot, 0x1000 + sub.subslot, direction, sub.length, 1, 1
            )
    return _cm_block(BLOCK_EXPECTED_SUBMODULES, content)


def record_block(block_type: int, ar_uuid: uuid.UUID, seq: int, slot: int, subslot: int,
                 index: int, data: bytes) -> bytes:
    content = struct.pack(">H", seq) + ar_uuid.bytes + struct.pack(">IHHH", 0, slot, subslot, index)
    content += struct.pack(">I", len(data)) + data
    return _cm_block(block_type, content)


def control_block(block_type: int, ar_uuid: uuid.UUID, command: int) -> bytes:
    content = struct.pack(">H", 0) + ar_uuid.bytes + struct.pack(">HHH", 1, 0, command)
    return _cm_block(block_type, content)


def encode_pnio(
    src: bytes,
    dst: bytes,
    frame_id: int,
    c_sdu: bytes,
    cycle_counter: int,
    data_status: int = DATA_STATUS_RUN,
    transfer_status: int = 0,
) -> bytes:
    if len(c_sdu) < PNIO_MIN_CSDU:
        c_sdu = c_sdu + b"\x00" * (PNIO_MIN_CSDU - len(c_sdu))
    payload = struct.pack(">H", frame_id) + c_sdu + struct.pack(
        ">HBB", cycle_counter, data_status, transfer_status
    )
    return ethernet(dst, src, ETHERTYPE_PROFINET, payload, pad_to=0)


def process_byte(conn_index: int, round_index: int, direction: str, sub_ordinal: int, byte_index: int) -> int:
    """Deterministic process value injected into cyclic frames."""
    directional = 101 if direction == "output" else 0
    return (13 * conn_index + 7 * round_index + directional + 31 * sub_ordinal + byte_index) % 256


def cyclic_c_sdu(
    conn_index: int,
    round_index: int,
    direction: str,
    submodules: tuple[SubmoduleSpec, ...],
) -> bytes:
    """C-SDU layout: own-direction data+IOPS per submodule, opposite IOCS tail."""
    buf = bytearray()
    ordered = layout_order(submodules)
    own = [s for s in ordered if s.direction == direction]
    for ordinal, sub in enumerate(own):
        buf.extend(
            process_byte(conn_index, round_index, direction, ordinal, i) for i in range(sub.length)
        )
        buf.append(GOOD)
    opposite = [s for s in ordered if s.direction != direction]
    buf.extend(GOOD for _ in opposite)
    return bytes(buf)


def cr_data_length(direction: str, submodules: tuple[SubmoduleSpec, ...]) -> int:
    own = sum(s.length + 1 for s in submodules if s.direction == direction)
    opposite = sum(1 for s in submodules if s.direction != direction)
    return own + opposite


# --- Scenario choreography ------------------------------------------------------


def _port_macs(node_index: int, node: NodeSpec, count: int) -> list[bytes]:
    interface = str_to_mac(node.mac)
    return [
        bytes([0x02, 0x70, node_index & 0xFF, port, interface[4], interface[5]])
        for port in range(1, count + 1)
    ]


def _ar_uuid(seed: int, ordinal: int) -> uuid.UUID:
    return uuid.uuid5(uuid.NAMESPACE_OID, f"poet-ar-{seed}-{ordinal}")


def _activity_uuid(seed: int, ordinal: int) -> uuid.UUID:
    return uuid.uuid5(uuid.NAMESPACE_OID, f"poet-activity-{seed}-{ordinal}")


class _Builder:
    def __init__(self, spec: ScenarioSpec):
        spec.validate()
        self.spec = spec
        self.frames: list[FramePlan] = []
        self.xid = 0x1000
        self.rpc_seq = 0
        controller = spec.controller
        self.ctrl_mac = str_to_mac(controller.mac)
        self.device_macs = {d.name: str_to_mac(d.mac) for d in spec.devices}
        self.ar_uuids = {d.name: _ar_uuid(spec.seed, i) for i, d in enumerate(spec.devices)}
        self.conn_keys = {
            d.name: connection_key(self.ctrl_mac, self.device_macs[d.name]) for d in spec.devices
        }
        self.frame_ids = {
            d.name: (0x8001 + 2 * i, 0x8002 + 2 * i) for i, d in enumerate(spec.devices)
        }

    def add(self, data: bytes, label: str, events: list[PlannedEvent] | None = None,
            new_connections: list[str] | None = None) -> FramePlan:
        plan = FramePlan(data, label, events or [], new_connections or [])
        self.frames.append(plan)
        return plan

    def next_xid(self) -> int:
        self.xid += 1
        return self.xid

    def next_seq(self) -> int:
        self.rpc_seq += 1
        return self.rpc_seq

    # Phases ---------------------------------------------------------------

    def lldp_burst(self, with_ips: bool) -> None:
        spec = self.spec
        nodes = [spec.controller, *spec.devices]
        for node_index, node in enumerate(nodes):
            interface = str_to_mac(node.mac)
            ports = _port_macs(node_index, node, spec.ports_per_device)
            is_controller = node_index == 0
            ip = node.ip if (is_controller or with_ips) else None
            for port_index, port in enumerate(ports, start=1):
                frame = encode_lldp(
                    chassis_mac=interface,
                    port_mac=port,
                    ttl=20,
                    station_name=node.name,
                    port_descriptions=(f"port-{port_index:03d}",),
                    management_ip=ip,
                )
                self.add(
                    frame,
                    f"lldp {node.name} port {port_index}",
                    [
                        PlannedEvent(DETECT_NEIGHBOURS, "device", subject_mac=interface),
                        PlannedEvent(PN_TRAFFIC_DETECTED, "system", gated=True),
                    ],
                )

    def address_resolution(self, device: NodeSpec) -> None:
        spec = self.spec
        ctrl = self.ctrl_mac
        dev = self.device_macs[device.name]
        xid = self.next_xid()
        identify_events = [PlannedEvent(PN_TRAFFIC_DETECTED, "system", gated=True)]
        response_events = [PlannedEvent(NAME_RESOLVED, "device", subject_mac=dev)]
        if spec.initial_lldp:
            identify_events.insert(
                0, PlannedEvent(NAME_RESOLUTION_REQUESTED, "device", subject_mac=dev)
            )
        else:
            # Name unbound until the response: the identify event is deferred
            # and replays just before name_resolved.
            response_events.insert(
                0, PlannedEvent(NAME_RESOLUTION_REQUESTED, "device", subject_mac=dev)
            )
        self.add(
            dcp_identify_request(ctrl, xid, device.name),
            f"dcp identify request {device.name}",
            identify_events,
        )
        self.add(
            dcp_identify_response(dev, ctrl, xid, device.name),
            f"dcp identify response {device.name}",
            response_events,
        )
        self.add(
            encode_arp(ctrl, BROADCAST, 1, ctrl, spec.controller.ip, b"\x00" * 6, device.ip),
            f"arp probe {device.ip}",
            [],
        )
        xid = self.next_xid()
        self.add(
            dcp_set_ip_request(ctrl, dev, xid, device.ip, "255.255.255.0", "0.0.0.0"),
            f"dcp set ip {device.name}",
            [PlannedEvent(IP_ASSIGNMENT_REQUESTED, "device", subject_mac=dev)],
        )
        self.add(
            dcp_set_response(dev, ctrl, xid, 1, 2),
            f"dcp set ip response {device.name}",
            [PlannedEvent(IP_ASSIGNED, "device", subject_mac=dev)],
        )
        self.add(
            encode_arp(dev, BROADCAST, 1, dev, device.ip, b"\x00" * 6, device.ip),
            f"gratuitous arp {device.name}",
            [PlannedEvent(DUPLICATION_CHECK, "device", subject_mac=dev)],
        )

    def connect(self, device: NodeSpec) -> None:
        spec = self.spec
        dev = self.device_macs[device.name]
        key = self.conn_keys[device.name]
        ar = self.ar_uuids[device.name]
        input_fid, output_fid = self.frame_ids[device.name]
        blocks = ar_block_request(ar, self.ctrl_mac, spec.controller.name)
        if device.submodules:
            blocks += iocr_block_request(
                1, 1, cr_data_length("input", device.submodules), input_fid
            )
            blocks += iocr_block_request(
                2, 2, cr_data_length("output", device.submodules), output_fid
            )
            blocks += expected_submodules_block(device.submodules)
        frame = encode_cm(
            self.ctrl_mac,
            dev,
            spec.controller.ip,
            device.ip,
            RPC_PTYPE_REQUEST,
            RPC_OPNUM_CONNECT,
            _activity_uuid(spec.seed, self.next_seq()),
            self.rpc_seq,
            blocks,
        )
        self.add(
            frame,
            f"pn-cm connect request {device.name}",
            [
                PlannedEvent(CONNECT_REQUESTED, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(CONNECT_REQUESTED, "system", connection_key=key),
            ],
            new_connections=[key],
        )
        response = ar_block_response(ar, dev)
        if device.submodules:
            response += iocr_block_response(1, 1, input_fid)
            response += iocr_block_response(2, 2, output_fid)
        self.add(
            encode_cm(
                dev,
                self.ctrl_mac,
                device.ip,
                spec.controller.ip,
                RPC_PTYPE_RESPONSE,
                RPC_OPNUM_CONNECT,
                _activity_uuid(spec.seed, self.next_seq()),
                self.rpc_seq,
                response,
            ),
            f"pn-cm connect response {device.name}",
            [],
        )

    def _cm_pair(
        self,
        device: NodeSpec,
        opnum: int,
        req_block: bytes,
        res_block: bytes,
        label: str,
        req_events: list[PlannedEvent],
        res_events: list[PlannedEvent],
        request_from_device: bool = False,
    ) -> None:
        spec = self.spec
        dev = self.device_macs[device.name]
        req_src, req_dst = (dev, self.ctrl_mac) if request_from_device else (self.ctrl_mac, dev)
        req_src_ip, req_dst_ip = (
            (device.ip, spec.controller.ip) if request_from_device else (spec.controller.ip, device.ip)
        )
        interface = UUID_IO_CONTROLLER if request_from_device else UUID_IO_DEVICE
        self.add(
            encode_cm(
                req_src,
                req_dst,
                req_src_ip,
                req_dst_ip,
                RPC_PTYPE_REQUEST,
                opnum,
                _activity_uuid(spec.seed, self.next_seq()),
                self.rpc_seq,
                req_block,
                interface=interface,
            ),
            f"pn-cm {label} request {device.name}",
            req_events,
        )
        self.add(
            encode_cm(
                req_dst,
                req_src,
                req_dst_ip,
                req_src_ip,
                RPC_PTYPE_RESPONSE,
                opnum,
                _activity_uuid(spec.seed, self.next_seq()),
                self.rpc_seq,
                res_block,
                interface=interface,
            ),
            f"pn-cm {label} response {device.name}",
            res_events,
        )

    def parametrization_write(self, device: NodeSpec, ordinal: int) -> None:
        dev = self.device_macs[device.name]
        key = self.conn_keys[device.name]
        ar = self.ar_uuids[device.name]
        sub = device.submodules[0] if device.submodules else SubmoduleSpec(1, 1, "input", 0)
        data = bytes([ordinal]) * 4
        self._cm_pair(
            device,
            RPC_OPNUM_WRITE,
            record_block(BLOCK_WRITE_REQ, ar, ordinal, sub.slot, sub.subslot, 0x8000 + ordinal, data),
            record_block(BLOCK_WRITE_RES, ar, ordinal, sub.slot, sub.subslot, 0x8000 + ordinal, b""),
            "write",
            [
                PlannedEvent(PARAMETRIZATION_WRITE, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(PARAMETRIZATION_WRITE, "connection", subject_mac=dev, connection_key=key),
            ],
            [],
        )

    def dcontrol(self, device: NodeSpec) -> None:
        dev = self.device_macs[device.name]
        key = self.conn_keys[device.name]
        ar = self.ar_uuids[device.name]
        self._cm_pair(
            device,
            RPC_OPNUM_CONTROL,
            control_block(BLOCK_DCONTROL_REQ, ar, 0x0001),
            control_block(BLOCK_DCONTROL_RES, ar, 0x0008),
            "dcontrol",
            [
                PlannedEvent(END_OF_PARAMETRIZATION, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(END_OF_PARAMETRIZATION, "connection", subject_mac=dev, connection_key=key),
            ],
            [],
        )

    def ccontrol(self, device: NodeSpec) -> None:
        dev = self.device_macs[device.name]
        key = self.conn_keys[device.name]
        ar = self.ar_uuids[device.name]
        self._cm_pair(
            device,
            RPC_OPNUM_CONTROL,
            control_block(BLOCK_CCONTROL_REQ, ar, 0x0002),
            control_block(BLOCK_CCONTROL_RES, ar, 0x0008),
            "ccontrol",
            [
                PlannedEvent(APPLICATION_READY, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(APPLICATION_READY, "connection", subject_mac=dev, connection_key=key),
            ],
            [PlannedEvent(CONNECTION_CONFIRMED, "device", subject_mac=dev, connection_key=key)],
            request_from_device=True,
        )

    def cyclic_round(self, round_index: int) -> None:
        spec = self.spec
        for conn_index, device in enumerate(spec.devices):
            if not device.submodules:
                continue
            dev = self.device_macs[device.name]
            key = self.conn_keys[device.name]
            input_fid, output_fid = self.frame_ids[device.name]
            cycle = (round_index * 32) & 0xFFFF
            out_sdu = cyclic_c_sdu(conn_index, round_index, "output", device.submodules)
            self.add(
                encode_pnio(self.ctrl_mac, dev, output_fid, out_sdu, cycle),
                f"pnio output {device.name} round {round_index}",
                [
                    PlannedEvent(CYCLIC_DATA_GOOD, "device", subject_mac=dev, connection_key=key),
                    PlannedEvent(
                        OUTPUT_PROCESS_DATA_SENT, "connection", subject_mac=dev, connection_key=key
                    ),
                ],
            )
            in_sdu = cyclic_c_sdu(conn_index, round_index, "input", device.submodules)
            self.add(
                encode_pnio(dev, self.ctrl_mac, input_fid, in_sdu, cycle),
                f"pnio input {device.name} round {round_index}",
                [
                    PlannedEvent(CYCLIC_DATA_GOOD, "device", subject_mac=dev, connection_key=key),
                    PlannedEvent(
                        INPUT_PROCESS_DATA_SENT, "connection", subject_mac=dev, connection_key=key
                    ),
                ],
            )

    def acyclic_exchange(self, device: NodeSpec) -> None:
        dev = self.device_macs[device.name]
        key = self.conn_keys[device.name]
        ar = self.ar_uuids[device.name]
        sub = device.submodules[0] if device.submodules else SubmoduleSpec(1, 1, "input", 0)
        self._cm_pair(
            device,
            RPC_OPNUM_READ,
            record_block(BLOCK_READ_REQ, ar, 0x40, sub.slot, sub.subslot, 0xAFF0, b""),
            record_block(BLOCK_READ_RES, ar, 0x40, sub.slot, sub.subslot, 0xAFF0, b"\x11\x22"),
            "read",
            [
                PlannedEvent(ACYCLIC_READ, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(ACYCLIC_READ, "connection", subject_mac=dev, connection_key=key),
            ],
            [
                PlannedEvent(ACYCLIC_DONE, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(ACYCLIC_DONE, "connection", subject_mac=dev, connection_key=key),
            ],
        )
        self._cm_pair(
            device,
            RPC_OPNUM_WRITE,
            record_block(BLOCK_WRITE_REQ, ar, 0x41, sub.slot, sub.subslot, 0xB000, b"\x7f"),
            record_block(BLOCK_WRITE_RES, ar, 0x41, sub.slot, sub.subslot, 0xB000, b""),
            "acyclic write",
            [
                PlannedEvent(ACYCLIC_WRITE, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(ACYCLIC_WRITE, "connection", subject_mac=dev, connection_key=key),
            ],
            [
                PlannedEvent(ACYCLIC_DONE, "device", subject_mac=dev, connection_key=key),
                PlannedEvent(ACYCLIC_DONE, "connection", subject_mac=dev, connection_key=key),
            ],
        )

    def build_benign(self) -> list[FramePlan]:
        spec = self.spec
        if spec.initial_lldp:
            self.lldp_burst(with_ips=False)
        for device in spec.devices:
            self.address_resolution(device)
        if spec.initial_lldp and spec.lldp_refresh_every:
            self.lldp_burst(with_ips=True)
        for device in spec.devices:
            self.connect(device)
        for ordinal in range(1, spec.writes_per_device + 1):
            for device in spec.devices:
                self.parametrization_write(device, ordinal)
        for device in spec.devices:
            self.dcontrol(device)
        for device in spec.devices:
            self.ccontrol(device)
        for round_index in range(spec.cyclic_rounds):
            if (
                spec.lldp_refresh_every
                and round_index
                and round_index % spec.lldp_refresh_every == 0
            ):
                self.lldp_burst(with_ips=True)
            self.cyclic_round(round_index)
            if spec.acyclic_exchange and round_index == 1 and spec.devices:
                self.acyclic_exchange(spec.devices[0])
        return self.frames

    # Injections ------------------------------------------------------------

    def attack_frames(self, injection: Injection) -> list[FramePlan]:
        spec = self.spec
        attacker = str_to_mac(ATTACKER_MAC)
        plans: list[FramePlan] = []
        if injection.attack == "rename":
            # The attack is the runtime DCP Set of the station name; the
            # attacker already knows the target MAC from sniffing.
            device = next(d for d in spec.devices if d.name == injection.target)
            dev = self.device_macs[device.name]
            new_name = injection.new_name or "ufo"
            xid = 0xA001
            plans.append(
                FramePlan(
                    dcp_set_name_request(attacker, dev, xid, new_name),
                    f"attack rename set {new_name!r}",
                    [PlannedEvent(NAME_SET_REQUESTED, "device", subject_mac=dev)],
                )
            )
            plans.append(
                FramePlan(
                    dcp_set_response(dev, attacker, xid, 2, 2),
                    "attack rename set response",
                    [],
                )
            )
        elif injection.attack == "rogue_connect":
            device = next(d for d in spec.devices if d.name == injection.target)
            dev = self.device_macs[device.name]
            key = connection_key(attacker, dev)
            ar = _ar_uuid(spec.seed, 0x7FFF)
            blocks = ar_block_request(ar, attacker, "intruder")
            blocks += iocr_block_request(1, 1, cr_data_length("input", (SubmoduleSpec(1, 1, "input", 1),)), 0x9001)
            blocks += iocr_block_request(2, 2, cr_data_length("output", (SubmoduleSpec(1, 1, "input", 1),)), 0x9002)
            blocks += expected_submodules_block((SubmoduleSpec(1, 1, "input", 1),))
            plans.append(
                FramePlan(
                    encode_cm(
                        attacker,
                        dev,
                        "192.168.0.250",
                        device.ip,
                        RPC_PTYPE_REQUEST,
                        RPC_OPNUM_CONNECT,
                        _activity_uuid(spec.seed, 0x7FFF),
                        0x7FFF,
                        blocks,
                    ),
                    f"attack rogue connect {device.name}",
                    [
                        PlannedEvent(CONNECT_REQUESTED, "device", subject_mac=dev, connection_key=key),
                        PlannedEvent(CONNECT_REQUESTED, "system", connection_key=key),
                    ],
                    new_connections=[key],
                )
            )
        elif injection.attack == "malformed":
            plans.append(FramePlan(malformed_frame(injection.protocol or "pn-dcp"), "attack malformed", []))
        return plans


def malformed_frame(protocol: str) -> bytes:
    """A deliberately broken frame of the given protocol family."""
    src = str_to_mac(ATTACKER_MAC)
    if protocol == "lldp":
        # TTL TLV before Port ID: mandatory order violated
        bad = _lldp_tlv(1, bytes([4]) + src) + _lldp_tlv(3, b"\x00\x14") + _lldp_tlv(0, b"")
        return ethernet(LLDP_MULTICAST, src, ETHERTYPE_LLDP, bad)
    if protocol == "arp":
        return (BROADCAST + src + struct.pack(">H", ETHERTYPE_ARP) + b"\x00\x01\x08\x00")[:24]
    if protocol == "pnio":
        return ethernet(BROADCAST, src, ETHERTYPE_PROFINET, struct.pack(">H", 0x8001) + b"\x00\x00")[:20]
    if protocol == "pn-cm":
        ip_header = struct.pack(
            ">BBHHHBBH4s4s", 0x45, 0, 20 + 8 + 4, 1, 0, 64, 17, 0,
            str_to_ip("192.168.0.250"), str_to_ip("192.168.0.11"),
        )
        udp = struct.pack(">HHHH", PNIO_CM_UDP_PORT, PNIO_CM_UDP_PORT, 12, 0)
        return ethernet(BROADCAST, src, ETHERTYPE_IPV4, ip_header + udp + b"\x04\x00\x00\x00")
    # default: DCP whose declared data length exceeds the frame
    payload = struct.pack(">HBBIHH", DCP_FRAME_ID_GETSET, 4, 0, 0xDEAD, 0, 500) + b"\x00\x04"
    return ethernet(BROADCAST, src, ETHERTYPE_PROFINET, payload)


# --- Manifest replay ------------------------------------------------------------


def _replay_manifest(spec: ScenarioSpec, frames: list[FramePlan]) -> dict:
    # Imported here: tracker depends on models, not on synth.
    from .tracker import FsmFleet

    anomalies: list[dict] = []

    def collect(alert) -> None:
        if alert.severity == "anomaly":
            anomalies.append(
                {
                    "frame_index": alert.cause.capture_index,
                    "instance_kind": alert.instance_kind,
                    "instance_key": alert.instance_key,
                    "offending_event": alert.offending_event,
                    "state_at_event": alert.state_at_event,
                }
            )

    fleet = FsmFleet(spec.system_name, collect)
    for plan in frames:
        ts = plan.ts
        for key in plan.new_connections:
            fleet.ensure_connection(key)
        for planned in plan.events:
            if planned.gated and fleet.system.current_state not in ("Inactive", "PoweredOn"):
                continue
            cause = FrameRef(plan.index, "synth", plan.label)
            fleet.fire(
                ProtocolEvent(
                    planned.event_name,
                    planned.scope,
                    cause,
                    subject_mac=planned.subject_mac,
                    connection_key=planned.connection_key,
                ),
                ts,
            )

    final_states = {
        "system": fleet.system.current_state,
        "devices": {mac: inst.current_state for mac, inst in sorted(fleet.devices.items())},
        "connections": {key: inst.current_state for key, inst in sorted(fleet.connections.items())},
    }

    def subject_of(plan: FramePlan) -> str | None:
        for planned in plan.events:
            if planned.scope == "device" and planned.subject_mac is not None:
                return ":".join(f"{b:02x}" for b in planned.subject_mac)
            if planned.scope == "connection" and planned.connection_key:
                return planned.connection_key
            if planned.scope == "system":
                return spec.system_name
        return None

    return {
        "system_name": spec.system_name,
        "frames": [
            {
                "index": plan.index,
                "event": plan.events[0].event_name if plan.events else None,
                "subject": subject_of(plan),
            }
            for plan in frames
        ],
        "expected": {"anomalies": anomalies, "final_states": final_states},
    }


# --- Entry points ----------------------------------------------------------------


def synthesize(spec: ScenarioSpec) -> SynthResult:
    """Generate the capture and its ground-truth manifest for one scenario."""
    builder = _Builder(spec)
    frames = builder.build_benign()
    for injection in sorted(spec.injections, key=lambda i: i.after_index, reverse=True):
        if injection.after_index >= len(frames):
            frames.extend(builder.attack_frames(injection))
        else:
            at = injection.after_index + 1
            frames[at:at] = builder.attack_frames(injection)

    gap_us = round(spec.gap_seconds * 1_000_000)
    for index, plan in enumerate(frames):
        plan.index = index
        total_us = spec.start_time * 1_000_000 + index * gap_us
        plan.ts = (total_us // 1_000_000, (total_us % 1_000_000) * 1000)

    manifest = _replay_manifest(spec, frames)
    pcap = write_pcap_bytes([(plan.ts, plan.data) for plan in frames])
    return SynthResult(spec=spec, frames=frames, manifest=manifest, pcap_bytes=pcap)


def write_pcap_bytes(frames: list[tuple[tuple[int, int], bytes]]) -> bytes:
    """Microsecond little-endian pcap container."""
    out = bytearray(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
    for (sec, nsec), data in frames:
        out += struct.pack("<IIII", sec, nsec // 1000, len(data), len(data))
        out += data
    return bytes(out)


def write_pcapng_bytes(frames: list[tuple[tuple[int, int], bytes]]) -> bytes:
    """Minimal pcapng container (SHB + IDB + EPBs); test aid for the reader."""
    def block(block_type: int, content: bytes) -> bytes:
        total = 12 + len(content)
        return struct.pack("<II", block_type, total) + content + struct.pack("<I", total)

    out = bytearray(block(0x0A0D0D0A, struct.pack("<IHHq", 0x1A2B3C4D, 1, 0, -1)))
    out += block(0x00000001, struct.pack("<HHI", 1, 0, 65535))  # Ethernet, default us resolution
    for (sec, nsec), data in frames:
        ticks = sec * 1_000_000 + nsec // 1000
        pad = (-len(data)) % 4
        content = struct.pack(
            "<IIIII", 0, (ticks >> 32) & 0xFFFFFFFF, ticks & 0xFFFFFFFF, len(data), len(data)
        )
        out += block(0x00000006, content + data + b"\x00" * pad)
    return bytes(out)


def fuzz_corpus(seed: int, count: int) -> list[bytes]:
    """Deterministic dissector fuzz corpus: random, truncated and bit-flipped frames."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = random.Random(seed)
    pool = [plan.data for plan in synthesize(_fuzz_base_spec()).frames]
    corpus: list[bytes] = []
    for _ in range(count):
        kind = rng.randrange(3)
        if kind == 0:
            corpus.append(rng.randbytes(rng.randint(14, 120)))
        elif kind == 1:
            frame = rng.choice(pool)
            corpus.append(frame[: rng.randint(14, len(frame))])
        else:
            frame = bytearray(rng.choice(pool))
            for _ in range(rng.randint(1, 8)):
                bit = rng.randrange(len(frame) * 8)
                frame[bit // 8] ^= 1 << (bit % 8)
            corpus.append(bytes(frame))
    return corpus


def _fuzz_base_spec() -> ScenarioSpec:
    return ScenarioSpec(
        controller=NodeSpec("02:00:00:00:01:00", "plc-1", "192.168.0.1"),
        devices=(
            NodeSpec(
                "02:00:00:00:02:00",
                "lift-motor",
                "192.168.0.11",
                (SubmoduleSpec(1, 1, "input", 2), SubmoduleSpec(2, 1, "output", 3)),
            ),
        ),
        cyclic_rounds=2,
    )


# --- Builtin scenarios ------------------------------------------------------------


def _base_devices(count: int) -> tuple[NodeSpec, ...]:
    names = ["lift-motor", "turntable-motor", "conveyor", "drill-unit", "sorter"]
    devices = []
    for i in range(count):
        name = names[i] if i < len(names) else f"device-{i + 1}"
        devices.append(
            NodeSpec(
                f"02:00:00:00:{i + 2:02x}:00",
                name,
                f"192.168.0.{11 + i}",
                (SubmoduleSpec(1, 1, "input", 2), SubmoduleSpec(2, 1, "output", 3)),
            )
        )
    return tuple(devices)


def normal_startup_spec(device_count: int = 2, lldp_refresh_every: int = 0, **kwargs) -> ScenarioSpec:
    return ScenarioSpec(
        controller=NodeSpec("02:00:00:00:01:00", "plc-1", "192.168.0.1"),
        devices=_base_devices(device_count),
        lldp_refresh_every=lldp_refresh_every,
        **kwargs,
    )


def _position_after_cyclic_round(spec: ScenarioSpec, rounds: int) -> int:
    probe = _Builder(spec)
    frames = probe.build_benign()
    seen = 0
    for index, plan in enumerate(frames):
        if plan.label.startswith("pnio input"):
            seen += 1
            if seen == rounds * len([d for d in spec.devices if d.submodules]):
                return index
    return len(frames) - 1


def rename_attack_spec(target: str = "turntable-motor", new_name: str = "ufo") -> ScenarioSpec:
    spec = normal_startup_spec(2)
    position = _position_after_cyclic_round(spec, 3)
    return replace(
        spec, injections=(Injection(position, "rename", target=target, new_name=new_name),)
    )


def rogue_connect_spec(target: str = "lift-motor") -> ScenarioSpec:
    spec = normal_startup_spec(2)
    position = _position_after_cyclic_round(spec, 3)
    return replace(spec, injections=(Injection(position, "rogue_connect", target=target),))


def malformed_spec(protocol: str = "pn-dcp") -> ScenarioSpec:
    spec = normal_startup_spec(1)
    position = _position_after_cyclic_round(spec, 2)
    return replace(spec, injections=(Injection(position, "malformed", protocol=protocol),))


BUILTIN_SCENARIOS = {
    "normal-startup": lambda: normal_startup_spec(2),
    "normal-startup-1": lambda: normal_startup_spec(1),
    "normal-startup-5": lambda: normal_startup_spec(5),
    "normal-startup-lldp": lambda: normal_startup_spec(2, lldp_refresh_every=2),
    "rename-attack": rename_attack_spec,
    "rogue-connect": rogue_connect_spec,
    "malformed-dcp": lambda: malformed_spec("pn-dcp"),
}


def builtin_scenario(name: str) -> ScenarioSpec:
    try:
        factory = BUILTIN_SCENARIOS[name]
    except KeyError:
        raise ScenarioError(
            f"unknown builtin scenario {name!r}; available: {', '.join(sorted(BUILTIN_SCENARIOS))}"
        ) from None
    return factory()
