"""Newline-delimited JSON wire protocol for out-of-process agents.

Runner to agent::

    {"type": "session_start", "utterance_id": ..., "languages": [...], "mode": ..., "k": {...}}
    {"type": "source_segment", "index": 1, "frames": [[...], ...]}
    {"type": "write_request", "lang": "es", "slot": 1}
    {"type": "session_end"}

Agent to runner, one reply per write_request::

    {"type": "token", "lang": "es", "slot": 1, "token": "hola"}
    {"type": "eos", "lang": "es", "slot": 2}
    {"type": "error", "reason": "..."}

Each line is one canonical JSON object (sorted keys, no spaces, UTF-8).
Floats use ``repr``, which round-trips exactly.  A TCP connection carries
one session.  Over stdio, sessions follow each other until EOF.
"""

from __future__ import annotations

import json
import logging
import os
import select
import socket
import socketserver
import subprocess
import threading
import time
from collections.abc import Callable, Sequence
from urllib.parse import urlparse

import numpy as np

from .agents import EOS, Agent, SessionInfo
from .errors import ConfigError, ProtocolViolation
from .policy import Schedule
from .stream import Packet

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0
MESSAGE_TYPES = ("session_start", "source_segment", "write_request", "token", "eos",
                 "session_end", "error")
MALFORMED = "malformed message"


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False,
                       allow_nan=False) + "\n").encode("utf-8")


def decode(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, ValueError):
        raise ProtocolViolation(MALFORMED) from None
    if not isinstance(msg, dict) or msg.get("type") not in MESSAGE_TYPES:
        raise ProtocolViolation(MALFORMED)
    return msg


def parse_endpoint(endpoint: str) -> tuple[str, str | None, int | None]:
    if endpoint == "stdio://":
        return "stdio", None, None
    parsed = urlparse(endpoint)
    if parsed.scheme == "tcp" and parsed.hostname and parsed.port is not None:
        return "tcp", parsed.hostname, parsed.port
    raise ConfigError(f"bad endpoint {endpoint!r} (expected tcp://host:port or stdio://)")


# -- line channels -------------------------------------------------------------

class LineChannel:
    """Blocking line I/O over a pair of file descriptors with a read timeout."""

    def __init__(self, read_fd: int, write: Callable[[bytes], None], timeout: float | None,
                 close: Callable[[], None] = lambda: None, transcript: list | None = None):
        self._fd = read_fd
        self._write = write
        self._close = close
        self.timeout = timeout
        self.transcript = transcript
        self._buf = b""

    def send(self, msg: dict) -> None:
        data = encode(msg)
        if self.transcript is not None:
            self.transcript.append(b"> " + data)
        self._write(data)

    def recv_line(self) -> bytes | None:
        """Next line without its newline, or None at EOF."""
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        while b"\n" not in self._buf:
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TimeoutError("timed out waiting for a message")
                ready, _, _ = select.select([self._fd], [], [], remaining)
                if not ready:
                    raise TimeoutError("timed out waiting for a message")
            chunk = os.read(self._fd, 65536)
            if not chunk:
                if self._buf:
                    line, self._buf = self._buf, b""
                    return line
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        if self.transcript is not None:
            self.transcript.append(b"< " + line + b"\n")
        return line

    def recv(self) -> dict | None:
        line = self.recv_line()
        return None if line is None else decode(line)

    def close(self) -> None:
        self._close()

    @classmethod
    def for_socket(cls, sock: socket.socket, timeout: float | None, transcript=None) -> LineChannel:
        sock.setblocking(True)
        # many small request/reply lines: Nagle plus delayed ACKs would add ~40 ms each
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return cls(sock.fileno(), sock.sendall, timeout, sock.close, transcript)

    @classmethod
    def for_fds(cls, read_fd: int, write_fd: int, timeout: float | None = None,
                transcript=None) -> LineChannel:
        def write(data: bytes) -> None:
            view = memoryview(data)
            while view:
                n = os.write(write_fd, view)
                view = view[n:]
        return cls(read_fd, write, timeout, transcript=transcript)


# -- server side ---------------------------------------------------------------

def serve_session(agent: Agent, channel: LineChannel, first: dict | None = None) -> bool:
    """Serve one session on ``channel``.  Returns False if EOF came first."""
    try:
        msg = first if first is not None else channel.recv()
        if msg is None:
            return False
        if msg["type"] != "session_start":
            raise ProtocolViolation(f"expected session_start, got {msg['type']}")
        schedule = Schedule(msg["mode"], {str(k): int(v) for k, v in msg["k"].items()})
        agent.start(SessionInfo(str(msg["utterance_id"]), schedule))
        while True:
            msg = channel.recv()
            if msg is None:
                log.warning("client disconnected mid-session")
                return False
            kind = msg["type"]
            if kind == "source_segment":
                frames = np.asarray(msg["frames"], dtype=np.float32)
                agent.receive(Packet(frames, int(msg["index"])))
            elif kind == "write_request":
                lang, slot = msg["lang"], int(msg["slot"])
                token = agent.write(lang, slot)
                if token == EOS:
                    channel.send({"type": "eos", "lang": lang, "slot": slot})
                else:
                    channel.send({"type": "token", "lang": lang, "slot": slot, "token": token})
            elif kind == "session_end":
                agent.end()
                return True
            else:
                raise ProtocolViolation(f"unexpected message type {kind!r}")
    except (KeyError, TypeError, ValueError):
        _send_error(channel, MALFORMED)
        raise ProtocolViolation(MALFORMED) from None
    except ProtocolViolation as exc:
        _send_error(channel, str(exc))
        raise


def _send_error(channel: LineChannel, reason: str) -> None:
    try:
        channel.send({"type": "error", "reason": reason})
    except OSError:
        pass


class AgentServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, agent_factory: Callable[[], Agent], timeout: float = DEFAULT_TIMEOUT):
        self.agent_factory = agent_factory
        self.message_timeout = timeout
        super().__init__(address, _Handler)

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def start_background(self) -> AgentServer:
        threading.Thread(target=self.serve_forever, daemon=True).start()
        return self

    def __exit__(self, *exc):
        self.shutdown()
        super().__exit__(*exc)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        channel = LineChannel.for_socket(self.request, self.server.message_timeout)
        try:
            serve_session(self.server.agent_factory(), channel)
        except ProtocolViolation as exc:
            log.warning("session aborted: %s", exc)
        except (OSError, TimeoutError) as exc:
            log.warning("connection dropped: %s", exc)


def serve_agent(agent_factory: Callable[[], Agent], endpoint: str, *,
                timeout: float = DEFAULT_TIMEOUT, background: bool = False):
    """Host agents on ``endpoint``; a fresh agent is built per session.

    For TCP this returns the server (already serving when ``background``),
    otherwise blocks in ``serve_forever``.  For stdio it serves sessions on
    stdin/stdout until EOF.
    """
    kind, host, port = parse_endpoint(endpoint)
    if kind == "tcp":
        server = AgentServer((host, port), agent_factory, timeout)
        if background:
            return server.start_background()
        with server:
            server.serve_forever()
        return server
    channel = LineChannel.for_fds(0, 1)
    while True:
        try:
            first = channel.recv()
        except ProtocolViolation as exc:
            _send_error(channel, str(exc))
            continue
        if first is None:
            return None
        if first["type"] != "session_start":
            # leftovers of an aborted session
            continue
        try:
            serve_session(agent_factory(), channel, first)
        except ProtocolViolation as exc:
            log.warning("session aborted: %s", exc)


# -- client side ---------------------------------------------------------------

class RemoteAgent(Agent):
    """Proxy for an agent served over the wire; one connection per session.

    ``stdio://`` endpoints need ``command``, a server process started per
    session whose stdin/stdout carry the protocol.
    """

    def __init__(self, endpoint: str, *, timeout: float = DEFAULT_TIMEOUT,
                 command: Sequence[str] | None = None, transcript: list | None = None):
        self.kind, self.host, self.port = parse_endpoint(endpoint)
        if self.kind == "stdio" and not command:
            raise ConfigError("a stdio:// remote agent needs a server command")
        self.endpoint = endpoint
        self.timeout = timeout
        self.command = list(command) if command else None
        self.transcript = transcript
        self._channel: LineChannel | None = None
        self._proc: subprocess.Popen | None = None

    def _connect(self) -> LineChannel:
        if self.kind == "tcp":
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
            return LineChannel.for_socket(sock, self.timeout, self.transcript)
        self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      bufsize=0)
        proc = self._proc

        def close():
            proc.stdin.close()
            try:
                proc.wait(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                proc.kill()
            proc.stdout.close()

        channel = LineChannel.for_fds(proc.stdout.fileno(), proc.stdin.fileno(), self.timeout,
                                      self.transcript)
        channel._close = close
        return channel

    def _send(self, msg: dict) -> None:
        try:
            self._channel.send(msg)
        except OSError:
            # the server may have explained itself before hanging up
            reason = self._pending_error()
            if reason is None:
                raise
            raise ProtocolViolation(reason) from None

    def _pending_error(self) -> str | None:
        timeout, self._channel.timeout = self._channel.timeout, 1.0
        try:
            msg = self._channel.recv()
        except (OSError, TimeoutError, ProtocolViolation):
            return None
        finally:
            self._channel.timeout = timeout
        if msg and msg["type"] == "error":
            return str(msg.get("reason", "agent error"))
        return None

    def start(self, info):
        self._channel = self._connect()
        self._send({"type": "session_start", "utterance_id": info.utterance_id,
                            "languages": info.languages, "mode": info.schedule.mode,
                            "k": dict(info.schedule.k)})

    def receive(self, packet):
        self._send({"type": "source_segment", "index": packet.index,
                            "frames": np.asarray(packet.frames, dtype=np.float32).tolist()})

    def write(self, lang, slot):
        self._send({"type": "write_request", "lang": lang, "slot": slot})
        msg = self._channel.recv()
        if msg is None:
            raise ProtocolViolation("agent closed the connection")
        kind = msg["type"]
        if kind == "error":
            raise ProtocolViolation(str(msg.get("reason", "agent error")))
        if kind not in ("token", "eos") or msg.get("lang") != lang or msg.get("slot") != slot:
            raise ProtocolViolation(MALFORMED)
        if kind == "eos":
            return EOS
        token = msg.get("token")
        if not isinstance(token, str):
            raise ProtocolViolation(MALFORMED)
        return token

    def end(self):
        if self._channel is None:
            return
        try:
            self._channel.send({"type": "session_end"})
        except OSError:
            pass
        finally:
            self._channel.close()
            self._channel = None


def remote_agent(endpoint: str, **kwargs) -> RemoteAgent:
    return RemoteAgent(endpoint, **kwargs)


def probe(endpoint: str, timeout: float = 5.0) -> None:
    """Fail fast if a TCP endpoint does not accept connections."""
    kind, host, port = parse_endpoint(endpoint)
    if kind != "tcp":
        return
    try:
        socket.create_connection((host, port), timeout=timeout).close()
    except OSError as exc:
        raise ConfigError(f"cannot reach agent at {endpoint}: {exc}") from None
