"""Length-prefixed message framing plus a minimal WebSocket server transport.

Every message on the wire is a u32 little-endian byte count followed by that
many payload bytes. The same framing is used on the denoiser plug-in pipes,
on raw TCP connections to the session service, and inside WebSocket binary
frames (one framed message per WebSocket frame, so browser clients strip the
4-byte prefix after reassembly).
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from typing import BinaryIO, Optional

_LEN = struct.Struct("<I")
MAX_FRAME = 64 * 1024 * 1024

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ProtocolError(RuntimeError):
    pass


def write_frame(stream: BinaryIO, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise ProtocolError("frame too large")
    stream.write(_LEN.pack(len(payload)) + payload)


def _read_exact(stream: BinaryIO, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def read_frame(stream: BinaryIO) -> Optional[bytes]:
    """One framed payload, or None on clean EOF."""
    head = _read_exact(stream, _LEN.size)
    if head is None:
        return None
    (n,) = _LEN.unpack(head)
    if n > MAX_FRAME:
        raise ProtocolError("frame too large")
    payload = _read_exact(stream, n)
    if payload is None:
        raise ProtocolError("stream ended mid-frame")
    return payload


def encode_json(message: dict) -> bytes:
    return json.dumps(message, sort_keys=True, separators=(",", ":")).encode()


def decode_json(payload: bytes) -> dict:
    msg = json.loads(payload.decode())
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    return msg


# -- WebSocket (RFC 6455) server side -------------------------------------------


def websocket_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def websocket_handshake(rfile: BinaryIO, wfile: BinaryIO) -> None:
    """Read the HTTP upgrade request from rfile and answer 101 on wfile."""
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = rfile.read(1)
        if not chunk:
            raise ProtocolError("connection closed during handshake")
        data += chunk
    headers = {}
    for line in data.split(b"\r\n")[1:]:
        if b":" in line:
            k, v = line.split(b":", 1)
            headers[k.strip().lower().decode()] = v.strip().decode()
    key = headers.get("sec-websocket-key")
    if key is None or "websocket" not in headers.get("upgrade", "").lower():
        raise ProtocolError("not a websocket upgrade request")
    response = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {websocket_accept_key(key)}\r\n\r\n"
    )
    wfile.write(response.encode())


def websocket_send(stream: BinaryIO, payload: bytes, opcode: int = 0x2) -> None:
    """One unmasked server frame (binary by default)."""
    header = bytes([0x80 | opcode])
    n = len(payload)
    if n < 126:
        header += bytes([n])
    elif n < 1 << 16:
        header += bytes([126]) + struct.pack(">H", n)
    else:
        header += bytes([127]) + struct.pack(">Q", n)
    stream.write(header + payload)


def websocket_recv(stream: BinaryIO) -> Optional[bytes]:
    """Next complete data message, replying to pings; None once the peer closes."""
    message = b""
    while True:
        head = _read_exact(stream, 2)
        if head is None:
            return None
        fin = bool(head[0] & 0x80)
        opcode = head[0] & 0x0F
        masked = bool(head[1] & 0x80)
        n = head[1] & 0x7F
        if n == 126:
            ext = _read_exact(stream, 2)
            if ext is None:
                return None
            (n,) = struct.unpack(">H", ext)
        elif n == 127:
            ext = _read_exact(stream, 8)
            if ext is None:
                return None
            (n,) = struct.unpack(">Q", ext)
        if n > MAX_FRAME:
            raise ProtocolError("websocket frame too large")
        mask = _read_exact(stream, 4) if masked else b"\x00" * 4
        if mask is None:
            return None
        payload = _read_exact(stream, n) if n else b""
        if payload is None:
            return None
        if masked:
            payload = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
        if opcode == 0x8:  # close
            try:
                websocket_send(stream, payload[:2], opcode=0x8)
            except OSError:
                pass
            return None
        if opcode == 0x9:  # ping
            websocket_send(stream, payload, opcode=0xA)
            continue
        if opcode == 0xA:  # pong
            continue
        message += payload
        if fin:
            return message
