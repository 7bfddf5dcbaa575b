"""Minimal WebSocket framing over plain sockets (server and client side).

Implements just what the streaming service needs: the HTTP upgrade
handshake, unfragmented binary frames, and close/ping handling.  Server
frames go out unmasked; client frames are masked as the protocol requires.

Handshake reads can pull frame bytes that follow the HTTP head in the same
segment, so both ends run their frame reads through ``WsConn``, which holds
any residual bytes from the handshake.
"""
from __future__ import annotations

import base64
import hashlib
import os
import socket
import struct

GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"

OP_TEXT = 0x1
OP_BINARY = 0x2
OP_CLOSE = 0x8
OP_PING = 0x9
OP_PONG = 0xA


def accept_key(key: str) -> str:
    digest = hashlib.sha1((key + GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def _read_http_head(conn: socket.socket) -> tuple[bytes, bytes]:
    """(head incl. blank line, residual bytes read past it)."""
    data = b""
    while b"\r\n\r\n" not in data:
        piece = conn.recv(4096)
        if not piece:
            return data, b""
        data += piece
        if len(data) > 65536:
            raise ConnectionError("oversized HTTP head")
    head, residual = data.split(b"\r\n\r\n", 1)
    return head + b"\r\n\r\n", residual


def parse_headers(head: bytes) -> tuple[str, dict[str, str]]:
    """(request line, lowercase header map) from a raw HTTP head."""
    text = head.split(b"\r\n\r\n", 1)[0].decode("latin-1")
    lines = text.split("\r\n")
    headers = {}
    for line in lines[1:]:
        if ":" in line:
            k, v = line.split(":", 1)
            headers[k.strip().lower()] = v.strip()
    return lines[0], headers


class WsConn:
    """A socket speaking WebSocket frames, plus handshake leftovers."""

    def __init__(self, sock: socket.socket, residual: bytes = b"") -> None:
        self.sock = sock
        self._buf = residual

    def _recv_exact(self, n: int) -> bytes:
        while len(self._buf) < n:
            piece = self.sock.recv(65536)
            if not piece:
                raise ConnectionError("peer closed mid-frame")
            self._buf += piece
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def send_frame(self, payload: bytes, opcode: int = OP_BINARY, mask: bool = False) -> None:
        head = bytearray([0x80 | opcode])
        n = len(payload)
        mask_bit = 0x80 if mask else 0
        if n < 126:
            head.append(mask_bit | n)
        elif n < 65536:
            head.append(mask_bit | 126)
            head += struct.pack(">H", n)
        else:
            head.append(mask_bit | 127)
            head += struct.pack(">Q", n)
        if mask:
            key = os.urandom(4)
            head += key
            payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
        self.sock.sendall(bytes(head) + payload)

    def recv_frame(self) -> tuple[int, bytes]:
        """Next (opcode, payload); answers pings, raises on close."""
        while True:
            b0, b1 = self._recv_exact(2)
            opcode = b0 & 0x0F
            masked = bool(b1 & 0x80)
            n = b1 & 0x7F
            if n == 126:
                n = struct.unpack(">H", self._recv_exact(2))[0]
            elif n == 127:
                n = struct.unpack(">Q", self._recv_exact(8))[0]
            key = self._recv_exact(4) if masked else None
            payload = self._recv_exact(n) if n else b""
            if key:
                payload = bytes(b ^ key[i % 4] for i, b in enumerate(payload))
            if opcode == OP_PING:
                self.send_frame(payload, OP_PONG)
                continue
            if opcode == OP_PONG:
                continue
            if opcode == OP_CLOSE:
                raise ConnectionError("peer sent close")
            return opcode, payload

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def server_accept(conn: socket.socket) -> tuple[WsConn | None, str]:
    """Serve the upgrade side of the handshake on a fresh connection.

    Returns (frame connection, request line) for WebSocket requests, or
    (None, request line) when the peer sent plain HTTP.
    """
    head, residual = _read_http_head(conn)
    if not head:
        return None, ""
    request, headers = parse_headers(head)
    if headers.get("upgrade", "").lower() != "websocket":
        return None, request
    key = headers.get("sec-websocket-key", "")
    resp = (
        "HTTP/1.1 101 Switching Protocols\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Accept: {accept_key(key)}\r\n"
        "\r\n"
    )
    conn.sendall(resp.encode())
    return WsConn(conn, residual), request


def client_connect(host: str, port: int, path: str = "/", timeout: float = 30.0) -> WsConn:
    """Open a masked-client WebSocket connection."""
    sock = socket.create_connection((host, port), timeout=timeout)
    key = base64.b64encode(os.urandom(16)).decode()
    req = (
        f"GET {path} HTTP/1.1\r\n"
        f"Host: {host}:{port}\r\n"
        "Upgrade: websocket\r\n"
        "Connection: Upgrade\r\n"
        f"Sec-WebSocket-Key: {key}\r\n"
        "Sec-WebSocket-Version: 13\r\n"
        "\r\n"
    )
    sock.sendall(req.encode())
    head, residual = _read_http_head(sock)
    status, headers = parse_headers(head)
    if " 101 " not in status + " ":
        sock.close()
        raise ConnectionError(f"upgrade refused: {status}")
    if headers.get("sec-websocket-accept") != accept_key(key):
        sock.close()
        raise ConnectionError("bad accept key")
    return WsConn(sock, residual)
