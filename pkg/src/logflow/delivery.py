"""Delivery: push encoded bytes to a file or a byte-stream endpoint, with retries."""

from __future__ import annotations

import logging
import os
import socket
import time
from pathlib import Path
from typing import Protocol, Union
from urllib.parse import urlparse

log = logging.getLogger(__name__)


class DeliveryError(OSError):
    pass


class Sink(Protocol):
    def write(self, payload: bytes) -> int: ...


class FileSink:
    """Append-only file sink.

    A failed write is truncated back to the pre-write offset, so a retried
    delivery never leaves a partial copy behind.
    """

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)

    def write(self, payload: bytes) -> int:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "ab") as f:
            start = f.tell()
            try:
                f.write(payload)
                f.flush()
            except OSError:
                f.truncate(start)
                raise
        return len(payload)

    def __repr__(self) -> str:
        return f"FileSink({str(self.path)!r})"


class MemorySink:
    def __init__(self) -> None:
        self.buffer = bytearray()

    def write(self, payload: bytes) -> int:
        self.buffer += payload
        return len(payload)

    def getvalue(self) -> bytes:
        return bytes(self.buffer)


class TcpSink:
    """Connects per delivery and streams the payload with ``sendall``."""

    def __init__(self, host: str, port: int, timeout: float = 5.0) -> None:
        self.host = host
        self.port = port
        self.timeout = timeout

    def write(self, payload: bytes) -> int:
        with socket.create_connection((self.host, self.port), timeout=self.timeout) as conn:
            conn.sendall(payload)
        return len(payload)

    def __repr__(self) -> str:
        return f"TcpSink({self.host!r}, {self.port})"


SinkSpec = Union[Sink, str, os.PathLike]


def open_sink(spec: SinkSpec) -> Sink:
    """Accepts a sink object, a file path, or ``tcp://host:port``."""
    if hasattr(spec, "write"):
        return spec  # type: ignore[return-value]
    text = os.fspath(spec)
    if text.startswith("tcp://"):
        url = urlparse(text)
        if not url.hostname or not url.port:
            raise ValueError(f"bad endpoint {text!r}")
        return TcpSink(url.hostname, url.port)
    return FileSink(text)


def deliver(sink: SinkSpec, payload: bytes, *, attempts: int = 3, backoff: float = 0.05) -> int:
    """Write ``payload`` fully to ``sink``; returns the delivered byte count."""
    if attempts < 1:
        raise ValueError("attempts must be >= 1")
    target = open_sink(sink)
    last: Exception | None = None
    for attempt in range(1, attempts + 1):
        try:
            return target.write(payload)
        except OSError as exc:
            last = exc
            log.warning("delivery to %r failed (attempt %d/%d): %s", target, attempt, attempts, exc)
            if attempt < attempts and backoff:
                time.sleep(backoff * attempt)
    raise DeliveryError(f"delivery to {target!r} failed after {attempts} attempts: {last}")
