"""Frame codec for the agent/server/client wire protocol.

A frame is an 8-byte header followed by the payload::

    4E 53 | version 01 | msg_type | payload_len (u32, big-endian) | payload

Payload contents are little-endian; see :mod:`gravfarm.rpc.payloads`.
"""

from __future__ import annotations

import socket
import struct
from enum import IntEnum

from ..errors import (BadMagic, PayloadTooLarge, ProtocolError, TruncatedFrame, UnknownType,
                      UnsupportedVersion)

MAGIC = b"\x4e\x53"
VERSION = 1
MAX_PAYLOAD = 256 * 1024 * 1024
HEADER = struct.Struct(">2sBBI")
HEADER_SIZE = HEADER.size


class MsgType(IntEnum):
    REGISTER = 0x01
    REGISTER_ACK = 0x02
    HEARTBEAT = 0x03
    TASK_SUBMIT = 0x04
    TASK_ASSIGN = 0x05
    TASK_RESULT = 0x06
    TASK_ERROR = 0x07
    SESSION_OPEN = 0x08
    SESSION_CLOSE = 0x09
    SERVER_LIST = 0x0A


_KNOWN = frozenset(int(t) for t in MsgType)


def encode_message(msg_type, payload=b"") -> bytes:
    t = int(msg_type)
    if t not in _KNOWN:
        raise UnknownType(f"message type 0x{t:02x}")
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{len(payload)} bytes exceeds the {MAX_PAYLOAD} byte cap")
    return HEADER.pack(MAGIC, VERSION, t, len(payload)) + bytes(payload)


def parse_header(header) -> tuple[MsgType, int]:
    """Validate an 8-byte header; returns ``(msg_type, payload_len)``."""
    if len(header) < HEADER_SIZE:
        raise TruncatedFrame(f"header needs {HEADER_SIZE} bytes, got {len(header)}")
    magic, version, t, n = HEADER.unpack_from(header)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic.hex()}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if t not in _KNOWN:
        raise UnknownType(f"message type 0x{t:02x}")
    if n > MAX_PAYLOAD:
        raise PayloadTooLarge(f"declared payload of {n} bytes")
    return MsgType(t), n


def decode_message(data) -> tuple[MsgType, bytes]:
    """Inverse of :func:`encode_message` for exactly one frame."""
    t, n = parse_header(data)
    if len(data) < HEADER_SIZE + n:
        raise TruncatedFrame(f"payload needs {n} bytes, got {len(data) - HEADER_SIZE}")
    if len(data) > HEADER_SIZE + n:
        raise ProtocolError(f"{len(data) - HEADER_SIZE - n} bytes after the frame")
    return t, bytes(data[HEADER_SIZE:])


def split_frame(buf) -> tuple[MsgType, bytes, int] | None:
    """First complete frame in ``buf`` as ``(type, payload, consumed)``, or None."""
    if len(buf) < HEADER_SIZE:
        return None
    t, n = parse_header(buf)
    end = HEADER_SIZE + n
    if len(buf) < end:
        return None
    return t, bytes(buf[HEADER_SIZE:end]), end


# blocking sockets

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        k = sock.recv_into(view[got:])
        if k == 0:
            if got == 0:
                raise EOFError("connection closed")
            raise TruncatedFrame(f"connection closed after {got} of {n} bytes")
        got += k
    return buf


def send_message(sock: socket.socket, msg_type, payload=b"") -> None:
    sock.sendall(encode_message(msg_type, payload))


def send_parts(sock: socket.socket, msg_type, parts) -> None:
    """Send one frame whose payload is the concatenation of ``parts``, without joining them."""
    views = [memoryview(p).cast("B") for p in parts]
    total = sum(v.nbytes for v in views)
    if total > MAX_PAYLOAD:
        raise PayloadTooLarge(f"{total} bytes exceeds the {MAX_PAYLOAD} byte cap")
    views.insert(0, memoryview(HEADER.pack(MAGIC, VERSION, int(msg_type), total)))
    views = [v for v in views if v.nbytes]
    while views:
        sent = sock.sendmsg(views[:512])
        while sent and views:
            if sent >= views[0].nbytes:
                sent -= views[0].nbytes
                views.pop(0)
            else:
                views[0] = views[0][sent:]
                sent = 0


def recv_message(sock: socket.socket) -> tuple[MsgType, bytes]:
    """Next frame from a blocking socket; EOFError on a clean close.

    The payload comes back as a bytes-like object (possibly a bytearray).
    """
    t, n = parse_header(_recv_exact(sock, HEADER_SIZE))
    return t, (_recv_exact(sock, n) if n else b"")


# asyncio streams

async def read_message(reader) -> tuple[MsgType, bytes]:
    import asyncio
    try:
        header = await reader.readexactly(HEADER_SIZE)
    except asyncio.IncompleteReadError as e:
        if not e.partial:
            raise EOFError("connection closed") from None
        raise TruncatedFrame("connection closed inside a header") from None
    t, n = parse_header(header)
    try:
        payload = await reader.readexactly(n) if n else b""
    except asyncio.IncompleteReadError:
        raise TruncatedFrame("connection closed inside a payload") from None
    return t, payload


def write_message(writer, msg_type, payload=b"") -> None:
    writer.write(encode_message(msg_type, payload))


def parse_address(addr: str) -> tuple[str, int]:
    """``"host:port"`` to ``(host, port)``."""
    host, sep, port = str(addr).rpartition(":")
    if not sep or not host or not port.isdigit():
        raise ValueError(f"address must look like HOST:PORT, got {addr!r}")
    return host, int(port)
