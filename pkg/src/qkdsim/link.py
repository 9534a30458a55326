"""Framed classical channel between Alice and Bob.

Wire layout per frame, all integers little-endian:

    magic "QKD1" (4) | msg_type (1) | session_id (8) | sequence (8) |
    payload length (4) | payload | CRC32 of all preceding bytes (4)

Sequence numbers increase strictly per (session, direction). The channel
is assumed reliable and ordered (TCP-style); authentication is a stub that
always succeeds, and the format reserves no MAC field.
"""

from __future__ import annotations

import enum
import queue
import socket
import struct
import zlib
from dataclasses import dataclass

MAGIC = b"QKD1"
HEADER_LEN = 4 + 1 + 8 + 8 + 4
MAX_PAYLOAD = 1 << 24
DEFAULT_TIMEOUT = 30.0


class MsgType(enum.IntEnum):
    BASIS_ANNOUNCE = 1
    SIFT_INDICES = 2
    QBER_SAMPLE = 3
    QBER_VALUE = 4
    SYNDROME = 5
    RETRY = 6
    TOEPLITZ_SEED = 7
    VERIFY_HASH = 8
    CONFIRM = 9
    ABORT = 10


class LinkError(Exception):
    """Base class for framing and transport failures."""


class BadMagic(LinkError):
    pass


class BadCrc(LinkError):
    pass


class UnknownMsgType(LinkError):
    pass


class TruncatedFrame(LinkError):
    pass


class LinkTimeout(LinkError):
    pass


class LinkClosed(LinkError):
    pass


class SequenceError(LinkError):
    """Gap or regression in per-direction sequence numbers."""


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    session_id: int
    sequence: int
    payload: bytes = b""


def encode_frame(f: Frame) -> bytes:
    if len(f.payload) > MAX_PAYLOAD:
        raise LinkError(f"payload of {len(f.payload)} bytes exceeds maximum")
    head = MAGIC + struct.pack("<BQQI", int(f.msg_type), f.session_id,
                               f.sequence, len(f.payload)) + f.payload
    return head + struct.pack("<I", zlib.crc32(head))


def decode_frame(data: bytes) -> Frame:
    if len(data) < HEADER_LEN + 4:
        raise TruncatedFrame(f"frame of {len(data)} bytes is too short")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    msg_type, session_id, sequence, length = struct.unpack_from("<BQQI", data, 4)
    end = HEADER_LEN + length
    if len(data) < end + 4:
        raise TruncatedFrame("frame shorter than declared payload")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise BadCrc("CRC32 mismatch")
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownMsgType(f"unknown msg_type {msg_type}") from None
    return Frame(msg_type=mt, session_id=session_id, sequence=sequence,
                 payload=data[HEADER_LEN:end])


def authenticate() -> bool:
    """Pre-shared-key authentication stub; always succeeds by assumption."""
    return True


class Transport:
    """One endpoint of a reliable, ordered, bidirectional frame channel.

    Owned by a single protocol state machine; send and receive are never
    invoked concurrently on the same endpoint. Tracks sent/received byte
    and bit counts per message type for leakage audits.
    """

    def __init__(self):
        self._send_seq = 0
        self._recv_seq = -1
        self.sent_payload_bits: dict[MsgType, int] = {}
        self.received_payload_bits: dict[MsgType, int] = {}

    def send(self, msg_type: MsgType, session_id: int, payload: bytes = b"") -> None:
        frame = Frame(msg_type=msg_type, session_id=session_id,
                      sequence=self._send_seq, payload=payload)
        self._send_seq += 1
        self.sent_payload_bits[msg_type] = (
            self.sent_payload_bits.get(msg_type, 0) + 8 * len(payload))
        self._send_bytes(encode_frame(frame))

    def receive(self, timeout: float = DEFAULT_TIMEOUT) -> Frame:
        frame = decode_frame(self._recv_bytes(timeout))
        if frame.sequence != self._recv_seq + 1:
            raise SequenceError(
                f"expected sequence {self._recv_seq + 1}, got {frame.sequence}")
        self._recv_seq = frame.sequence
        self.received_payload_bits[frame.msg_type] = (
            self.received_payload_bits.get(frame.msg_type, 0)
            + 8 * len(frame.payload))
        return frame

    def close(self) -> None:
        pass

    def _send_bytes(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_bytes(self, timeout: float) -> bytes:
        raise NotImplementedError


class QueueTransport(Transport):
    """In-process realization over a pair of queues."""

    def __init__(self, outbox: queue.Queue, inbox: queue.Queue):
        super().__init__()
        self._outbox = outbox
        self._inbox = inbox
        self._closed = False

    def _send_bytes(self, data: bytes) -> None:
        self._outbox.put(data)

    def _recv_bytes(self, timeout: float) -> bytes:
        try:
            data = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise LinkTimeout(f"no frame within {timeout} s") from None
        if data is None:
            raise LinkClosed("peer closed the channel")
        return data

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(None)


def queue_pair() -> tuple[QueueTransport, QueueTransport]:
    """Connected in-process transport pair (Alice end, Bob end)."""
    a_to_b: queue.Queue = queue.Queue()
    b_to_a: queue.Queue = queue.Queue()
    return (QueueTransport(a_to_b, b_to_a), QueueTransport(b_to_a, a_to_b))


class SocketTransport(Transport):
    """Stream-socket realization; frames are length-delimited on the wire."""

    def __init__(self, sock: socket.socket):
        super().__init__()
        self._sock = sock

    @classmethod
    def listen(cls, host: str, port: int,
               timeout: float = DEFAULT_TIMEOUT) -> "SocketTransport":
        srv = socket.create_server((host, port))
        srv.settimeout(timeout)
        try:
            conn, _ = srv.accept()
        except socket.timeout:
            raise LinkTimeout("no peer connected") from None
        finally:
            srv.close()
        return cls(conn)

    @classmethod
    def connect(cls, host: str, port: int,
                timeout: float = DEFAULT_TIMEOUT) -> "SocketTransport":
        try:
            sock = socket.create_connection((host, port), timeout=timeout)
        except (socket.timeout, ConnectionError) as exc:
            raise LinkClosed(f"connect failed: {exc}") from None
        return cls(sock)

    def _send_bytes(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise LinkClosed(f"send failed: {exc}") from None

    def _read_exact(self, count: int, timeout: float) -> bytes:
        self._sock.settimeout(timeout)
        chunks = []
        remaining = count
        while remaining:
            try:
                chunk = self._sock.recv(remaining)
            except socket.timeout:
                raise LinkTimeout(f"no data within {timeout} s") from None
            except OSError as exc:
                raise LinkClosed(f"recv failed: {exc}") from None
            if not chunk:
                raise LinkClosed("peer disconnected")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _recv_bytes(self, timeout: float) -> bytes:
        head = self._read_exact(HEADER_LEN, timeout)
        if head[:4] != MAGIC:
            raise BadMagic(f"bad magic {head[:4]!r}")
        (length,) = struct.unpack_from("<I", head, HEADER_LEN - 4)
        if length > MAX_PAYLOAD:
            raise LinkError("declared payload exceeds maximum")
        rest = self._read_exact(length + 4, timeout)
        return head + rest

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass
