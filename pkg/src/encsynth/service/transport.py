"""Request/reply transports carrying length-prefixed frames.

Every client frame is answered by exactly one server frame, so a transport
is a single ``exchange`` call. Both implementations deliver the same bytes,
which makes transcripts transport-independent.
"""

from __future__ import annotations

import hashlib
import socket
import struct
import threading


class TransportError(ConnectionError):
    pass


class Transcript:
    """Running digest and byte counts of every frame in both directions."""

    def __init__(self):
        self._h = hashlib.sha256()
        self.bytes_sent = 0
        self.bytes_received = 0
        self.frames = 0
        self.log: list | None = None

    def keep_log(self) -> "Transcript":
        self.log = []
        return self

    def record(self, direction: bytes, data: bytes) -> None:
        self._h.update(direction)
        self._h.update(data)
        self.frames += 1
        if direction == b">":
            self.bytes_sent += len(data)
        else:
            self.bytes_received += len(data)
        if self.log is not None:
            self.log.append((direction, data))

    def hexdigest(self) -> str:
        return self._h.hexdigest()


class Transport:
    def exchange(self, data: bytes) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessTransport(Transport):
    """Calls the server's frame handler directly (ordered and reliable)."""

    def __init__(self, server):
        self.server = server

    def exchange(self, data: bytes) -> bytes:
        return self.server.handle_frame(data)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise TransportError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    head = _recv_exact(sock, 4)
    (n,) = struct.unpack(">I", head)
    return head + _recv_exact(sock, n)


class SocketTransport(Transport):
    """Client side of a TCP stream carrying length-prefixed frames."""

    def __init__(self, host: str, port: int, timeout: float | None = 60.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    def exchange(self, data: bytes) -> bytes:
        try:
            self.sock.sendall(data)
            return read_frame(self.sock)
        except OSError as exc:
            raise TransportError(str(exc)) from None

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class SocketServer:
    """Serves one client connection at a time on a background thread."""

    def __init__(self, server, host: str = "127.0.0.1", port: int = 0):
        self.server = server
        self.listener = socket.create_server((host, port))
        self.listener.settimeout(0.2)  # lets the accept loop notice close()
        self.host, self.port = self.listener.getsockname()[:2]
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._stop = threading.Event()

    def start(self) -> "SocketServer":
        self._thread.start()
        return self

    def _serve(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(None)
            with conn:
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                while True:
                    try:
                        data = read_frame(conn)
                    except (TransportError, OSError):
                        break
                    try:
                        conn.sendall(self.server.handle_frame(data))
                    except OSError:
                        break

    def close(self) -> None:
        self._stop.set()
        try:
            self.listener.close()
        except OSError:
            pass
        self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()
