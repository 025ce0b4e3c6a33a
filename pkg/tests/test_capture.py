"""Capture ingestion: pcap/pcapng round trips, truncation, stats."""

from __future__ import annotations

import struct

import pytest

from poet.capture import (
    CaptureError,
    CaptureFormatError,
    RawFrame,
    frame_stream_stats,
    open_capture,
)
from poet.synth import write_pcap_bytes, write_pcapng_bytes

FRAME = bytes(range(64))  # arbitrary 64-byte frame


def _frames(n: int, gap: float = 0.5) -> list[tuple[tuple[int, int], bytes]]:
    out = []
    for i in range(n):
        usec = int(i * gap * 1_000_000)
        out.append(((1_700_000_000 + usec // 1_000_000, (usec % 1_000_000) * 1000), FRAME + bytes([i])))
    return out


def test_empty_pcap_yields_empty_stream(tmp_path):
    path = tmp_path / "empty.pcap"
    path.write_bytes(write_pcap_bytes([]))
    assert list(open_capture(path)) == []


def test_pcap_round_trip_ten_frames(tmp_path):
    frames = _frames(10)
    path = tmp_path / "ten.pcap"
    path.write_bytes(write_pcap_bytes(frames))
    items = list(open_capture(path))
    assert len(items) == 10
    for i, item in enumerate(items):
        assert isinstance(item, RawFrame)
        assert item.frame_bytes == frames[i][1]
        assert (item.ts_sec, item.ts_nsec) == frames[i][0]
        assert item.capture_index == i


def test_pcapng_round_trip(tmp_path):
    frames = _frames(5)
    path = tmp_path / "five.pcapng"
    path.write_bytes(write_pcapng_bytes(frames))
    items = list(open_capture(path))
    assert [i.frame_bytes for i in items] == [f[1] for f in frames]
    assert [(i.ts_sec, i.ts_nsec) for i in items] == [f[0] for f in frames]


def test_truncated_record_yields_error_then_stops(tmp_path):
    frames = _frames(3)
    data = write_pcap_bytes(frames)
    path = tmp_path / "cut.pcap"
    path.write_bytes(data[:-1])  # one byte short of the last record body
    items = list(open_capture(path))
    assert len(items) == 3
    assert [type(i) for i in items] == [RawFrame, RawFrame, CaptureError]
    error = items[-1]
    assert error.reason == "truncated record body"
    assert error.byte_offset == 24 + 2 * (16 + 65)


def test_truncated_record_header(tmp_path):
    data = write_pcap_bytes(_frames(1))
    path = tmp_path / "cuthdr.pcap"
    path.write_bytes(data + b"\x00" * 7)  # partial next record header
    items = list(open_capture(path))
    assert isinstance(items[0], RawFrame)
    assert isinstance(items[1], CaptureError)
    assert "header" in items[1].reason


def test_unknown_magic_raises(tmp_path):
    path = tmp_path / "bad.pcap"
    path.write_bytes(b"\xde\xad\xbe\xef" + b"\x00" * 40)
    with pytest.raises(CaptureFormatError):
        open_capture(path)


def test_missing_file_raises_oserror(tmp_path):
    with pytest.raises(OSError):
        open_capture(tmp_path / "nope.pcap")


def test_big_endian_and_nanosecond_pcap(tmp_path):
    # Hand-built big-endian microsecond file with one record.
    header = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    record = struct.pack(">IIII", 10, 250_000, len(FRAME), len(FRAME)) + FRAME
    path = tmp_path / "be.pcap"
    path.write_bytes(header + record)
    (item,) = list(open_capture(path))
    assert (item.ts_sec, item.ts_nsec) == (10, 250_000_000)

    # Little-endian nanosecond file.
    header = struct.pack("<IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 1)
    record = struct.pack("<IIII", 10, 123, len(FRAME), len(FRAME)) + FRAME
    path2 = tmp_path / "ns.pcap"
    path2.write_bytes(header + record)
    (item,) = list(open_capture(path2))
    assert (item.ts_sec, item.ts_nsec) == (10, 123)


def test_runt_frame_rejected_stream_continues(tmp_path):
    header = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    runt = struct.pack("<IIII", 1, 0, 4, 4) + b"\x01\x02\x03\x04"
    good = struct.pack("<IIII", 2, 0, len(FRAME), len(FRAME)) + FRAME
    path = tmp_path / "runt.pcap"
    path.write_bytes(header + runt + good)
    items = list(open_capture(path))
    assert isinstance(items[0], CaptureError)
    assert "runt" in items[0].reason
    assert isinstance(items[1], RawFrame)
    assert items[1].capture_index == 1


def test_pcapng_skips_unknown_blocks(tmp_path):
    frames = _frames(2)
    data = bytearray(write_pcapng_bytes(frames))
    # Splice a name-resolution block (type 4) between IDB and first EPB.
    nrb = struct.pack("<II", 0x00000004, 16) + b"\x00" * 4 + struct.pack("<I", 16)
    insert_at = 28 + 20  # after SHB(28) + IDB(20)
    data[insert_at:insert_at] = nrb
    path = tmp_path / "mixed.pcapng"
    path.write_bytes(bytes(data))
    items = list(open_capture(path))
    assert [i.frame_bytes for i in items] == [f[1] for f in frames]


def test_pcapng_big_endian_nanosecond_section(tmp_path):
    def block(block_type: int, content: bytes) -> bytes:
        total = 12 + len(content)
        return struct.pack(">II", block_type, total) + content + struct.pack(">I", total)

    data = block(0x0A0D0D0A, struct.pack(">IHHq", 0x1A2B3C4D, 1, 0, -1))
    # IDB with if_tsresol option = 9 (nanoseconds)
    idb_opts = struct.pack(">HH", 9, 1) + b"\x09\x00\x00\x00" + struct.pack(">HH", 0, 0)
    data += block(0x00000001, struct.pack(">HHI", 1, 0, 65535) + idb_opts)
    ticks = 7 * 1_000_000_000 + 123_456_789
    pad = (-len(FRAME)) % 4
    epb = struct.pack(">IIIII", 0, ticks >> 32, ticks & 0xFFFFFFFF, len(FRAME), len(FRAME))
    data += block(0x00000006, epb + FRAME + b"\x00" * pad)
    path = tmp_path / "bens.pcapng"
    path.write_bytes(data)
    (item,) = list(open_capture(path))
    assert (item.ts_sec, item.ts_nsec) == (7, 123_456_789)
    assert item.frame_bytes == FRAME


def test_order_preserved_for_non_monotonic_timestamps(tmp_path):
    frames = [((100, 0), FRAME), ((50, 0), FRAME + b"\x01"), ((75, 0), FRAME + b"\x02")]
    path = tmp_path / "shuffle.pcap"
    path.write_bytes(write_pcap_bytes(frames))
    items = list(open_capture(path))
    assert [i.ts_sec for i in items] == [100, 50, 75]
    assert [i.capture_index for i in items] == [0, 1, 2]


def test_stats_empty_stream():
    stats = frame_stream_stats([])
    assert (stats.frames, stats.bytes, stats.span_seconds) == (0, 0, 0.0)


def test_stats_single_frame():
    frame = RawFrame(5, 0, b"\x00" * 60, 0, "x")
    stats = frame_stream_stats([frame])
    assert (stats.frames, stats.bytes, stats.span_seconds) == (1, 60, 0.0)


def test_stats_span_three_frames(tmp_path):
    # t = 0.0, 0.5, 2.0 relative: span exactly 2.0 seconds
    frames = [((100, 0), FRAME), ((100, 500_000_000), FRAME), ((102, 0), FRAME)]
    path = tmp_path / "span.pcap"
    path.write_bytes(write_pcap_bytes(frames))
    stats = frame_stream_stats(open_capture(path))
    assert stats.frames == 3
    assert stats.bytes == 3 * len(FRAME)
    assert stats.span_seconds == 2.0


def test_stats_skips_diagnostics(tmp_path):
    data = write_pcap_bytes(_frames(2))
    path = tmp_path / "cut2.pcap"
    path.write_bytes(data[:-1])
    stats = frame_stream_stats(open_capture(path))
    assert stats.frames == 1
