"""Wire codec, transcripts, and the two delivery substrates.

Record format (one ASCII line per message)::

    CTRL,<k>,<u0_r>,<u0_l>,<u1_r>,<u1_l>,<A|R|N>,<seq or empty>
    MEAS,<k>,<y_1>,...,<y_n>

Reals are written with ``%.17g``, which round-trips every double exactly.
Transcript files hold the same records after ``#key=value`` header lines.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .messages import Ack, ControlMessage, MeasurementMessage

log = logging.getLogger(__name__)

HELLO = "HELLO"
ROLES = ("controller", "robot", "tap")


class DecodeError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class TransportError(RuntimeError):
    pass


def _real(x: float) -> str:
    return "%.17g" % x


def encode_message(msg) -> str:
    if isinstance(msg, ControlMessage):
        if msg.ack is None:
            ack = "N,"
        else:
            ack = f"{'A' if msg.ack.accepted else 'R'},{msg.ack.seq}"
        reals = ",".join(_real(v) for v in (*msg.u0, *msg.u1))
        return f"CTRL,{msg.step},{reals},{ack}\n"
    if isinstance(msg, MeasurementMessage):
        return f"MEAS,{msg.step}," + ",".join(_real(v) for v in msg.y) + "\n"
    raise TypeError(f"cannot encode {type(msg).__name__}")


def _fields(record: str):
    offset = 0
    for text in record.split(","):
        yield text, offset
        offset += len(text) + 1


def decode_message(record: str | bytes):
    """Parse one record; returns ``None`` for blank keepalive lines."""
    if isinstance(record, bytes):
        try:
            record = record.decode("ascii")
        except UnicodeDecodeError as exc:
            raise DecodeError("non-ASCII record", exc.start) from None
    record = record.rstrip("\r\n")
    if not record.strip():
        return None
    fields = list(_fields(record))

    def integer(i):
        text, off = fields[i]
        if not text.isdigit():
            raise DecodeError(f"expected non-negative integer, got {text!r}", off)
        return int(text)

    def real(i):
        text, off = fields[i]
        try:
            return float(text)
        except ValueError:
            raise DecodeError(f"expected real number, got {text!r}", off) from None

    tag = fields[0][0]
    if tag == "CTRL":
        if len(fields) != 8:
            raise DecodeError(f"CTRL record needs 8 fields, got {len(fields)}", len(record))
        step = integer(1)
        u = [real(i) for i in range(2, 6)]
        kind, off = fields[6]
        if kind == "N":
            if fields[7][0]:
                raise DecodeError("ack sequence given without ack", fields[7][1])
            ack = None
        elif kind in ("A", "R"):
            ack = Ack(kind == "A", integer(7))
        else:
            raise DecodeError(f"unknown ack kind {kind!r}", off)
        return ControlMessage(step, (u[0], u[1]), (u[2], u[3]), ack)
    if tag == "MEAS":
        if len(fields) < 3:
            raise DecodeError("MEAS record needs a step and at least one value", len(record))
        return MeasurementMessage(integer(1), tuple(real(i) for i in range(2, len(fields))))
    raise DecodeError(f"unknown record tag {tag!r}", 0)


@dataclass
class Transcript:
    """Append-only record log with a ``key=value`` header.

    When ``sink`` is given every line is written and flushed as soon as it
    is appended, so an aborted session still leaves a valid prefix.
    """

    header: dict[str, str] = field(default_factory=dict)
    records: list[str] = field(default_factory=list)
    sink: object | None = None

    def __post_init__(self):
        if self.sink is not None:
            for key, value in self.header.items():
                self.sink.write(f"#{key}={value}\n")
            self.sink.flush()

    def append(self, msg) -> str:
        line = msg if isinstance(msg, str) else encode_message(msg)
        self.records.append(line)
        if self.sink is not None:
            self.sink.write(line)
            self.sink.flush()
        return line

    def messages(self) -> list:
        return [decode_message(r) for r in self.records]

    def dumps(self) -> str:
        head = "".join(f"#{k}={v}\n" for k, v in self.header.items())
        return head + "".join(self.records)

    def save(self, path) -> None:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "Transcript":
        header, records = {}, []
        for line in text.splitlines(keepends=True):
            if line.startswith("#"):
                key, _, value = line[1:].rstrip("\n").partition("=")
                header[key] = value
            elif line.strip():
                decode_message(line)
                records.append(line if line.endswith("\n") else line + "\n")
        return cls(header, records)

    @classmethod
    def load(cls, path) -> "Transcript":
        with open(path, encoding="ascii") as fh:
            return cls.loads(fh.read())


class ControllerParty(Protocol):
    def start(self) -> ControlMessage: ...
    def on_measurement(self, msg: MeasurementMessage) -> ControlMessage: ...


class RobotParty(Protocol):
    def on_control(self, msg: ControlMessage) -> MeasurementMessage | None: ...


Tap = Callable[[object], None]


def lockstep_channel(controller: ControllerParty, robot: RobotParty, tap: Tap | None = None,
                     transcript: Transcript | None = None,
                     max_steps: int | None = None) -> Transcript:
    """Deterministic in-process delivery, one control/measurement exchange per step.

    Stops when the robot signals completion or after ``max_steps``
    measurements.
    """
    transcript = transcript if transcript is not None else Transcript()
    taps = [tap] if tap is not None else []
    msg = controller.start()
    steps = 0
    while True:
        transcript.append(msg)
        for t in taps:
            t(msg)
        reply = robot.on_control(msg)
        if reply is None:
            break
        transcript.append(reply)
        for t in taps:
            t(reply)
        steps += 1
        if max_steps is not None and steps >= max_steps:
            break
        msg = controller.on_measurement(reply)
    return transcript


def replay(transcript: Transcript, consumer: Tap) -> None:
    for msg in transcript.messages():
        consumer(msg)


# --------------------------------------------------------------------------
# socket substrate


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be HOST:PORT, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


def _connect(endpoint: str, role: str, timeout: float) -> socket.socket:
    host, port = parse_endpoint(endpoint)
    deadline = time.monotonic() + timeout
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise TransportError(f"cannot reach {endpoint}") from None
            time.sleep(0.05)
    sock.settimeout(None)
    sock.sendall(f"{HELLO},{role}\n".encode("ascii"))
    return sock


def _read_records(reader: Iterable[bytes]):
    for raw in reader:
        msg = decode_message(raw)
        if msg is not None:
            yield raw.decode("ascii"), msg


def _read_line_unbuffered(conn: socket.socket, limit: int = 64) -> str:
    # byte-wise so nothing past the handshake is swallowed by a buffer
    data = bytearray()
    while len(data) < limit:
        try:
            ch = conn.recv(1)
        except OSError:
            break
        if not ch or ch == b"\n":
            break
        data += ch
    return data.decode("ascii", "replace").strip()


class _TapLink:
    """Server-side handle on a read-only tap connection."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.alive = True
        threading.Thread(target=self._watch, daemon=True).start()

    def _watch(self):
        try:
            data = self.sock.recv(1)
        except OSError:
            data = b""
        if data:
            log.warning("tap attempted to write; closing its connection")
        self.close()

    def send(self, line: str):
        if not self.alive:
            return
        try:
            self.sock.sendall(line.encode("ascii"))
        except OSError:
            self.close()

    def close(self):
        if self.alive:
            self.alive = False
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


def serve_robot(robot: RobotParty, endpoint: str, taps: int = 0,
                transcript: Transcript | None = None, accept_timeout: float = 30.0) -> Transcript:
    """Robot end: listens, relays every record to connected taps.

    Waits for one controller and ``taps`` taps before the session starts.
    """
    transcript = transcript if transcript is not None else Transcript()
    host, port = parse_endpoint(endpoint)
    server = socket.create_server((host, port), reuse_port=False)
    server.settimeout(accept_timeout)
    controller = None
    tap_links: list[_TapLink] = []
    try:
        while controller is None or len(tap_links) < taps:
            try:
                conn, _ = server.accept()
            except socket.timeout:
                raise TransportError("timed out waiting for peers") from None
            conn.settimeout(accept_timeout)
            hello = _read_line_unbuffered(conn)
            conn.settimeout(None)
            role = hello.partition(",")[2]
            if hello.startswith(HELLO) and role == "controller" and controller is None:
                controller = conn
            elif hello.startswith(HELLO) and role == "tap":
                tap_links.append(_TapLink(conn))
            else:
                log.warning("rejecting connection with handshake %r", hello)
                conn.close()
    finally:
        server.close()

    reader = controller.makefile("rb")
    completed = False
    try:
        for line, msg in _read_records(reader):
            if not isinstance(msg, ControlMessage):
                raise TransportError(f"robot expected CTRL, got {line!r}")
            transcript.append(line)
            for t in tap_links:
                t.send(line)
            reply = robot.on_control(msg)
            if reply is None:
                completed = True
                break
            out = transcript.append(reply)
            for t in tap_links:
                t.send(out)
            controller.sendall(out.encode("ascii"))
    finally:
        for t in tap_links:
            t.close()
        try:
            controller.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        controller.close()
    if not completed:
        raise TransportError("controller disconnected before the session completed")
    return transcript


def run_controller(controller: ControllerParty, endpoint: str,
                   transcript: Transcript | None = None, connect_timeout: float = 30.0,
                   max_steps: int | None = None) -> Transcript:
    """Controller end; returns when the robot closes the session.

    ``max_steps`` drops the connection after that many measurements, which
    is only useful for exercising the abort path.
    """
    transcript = transcript if transcript is not None else Transcript()
    sock = _connect(endpoint, "controller", connect_timeout)
    reader = sock.makefile("rb")
    steps = 0
    try:
        out = transcript.append(controller.start())
        sock.sendall(out.encode("ascii"))
        for line, msg in _read_records(reader):
            if not isinstance(msg, MeasurementMessage):
                raise TransportError(f"controller expected MEAS, got {line!r}")
            transcript.append(line)
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
            out = transcript.append(controller.on_measurement(msg))
            sock.sendall(out.encode("ascii"))
    except (BrokenPipeError, ConnectionResetError) as exc:
        raise TransportError(f"connection lost: {exc}") from exc
    finally:
        sock.close()
    return transcript


def run_tap(endpoint: str, consumer: Tap | None = None, transcript: Transcript | None = None,
            connect_timeout: float = 30.0) -> Transcript:
    """Read-only listener receiving mirrored copies of every record."""
    transcript = transcript if transcript is not None else Transcript()
    sock = _connect(endpoint, "tap", connect_timeout)
    try:
        for line, msg in _read_records(sock.makefile("rb")):
            transcript.append(line)
            if consumer is not None:
                consumer(msg)
    except ConnectionResetError:
        pass
    finally:
        sock.close()
    return transcript
