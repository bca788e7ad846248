"""Length-prefixed stream protocol that carries one recording pair per session.

Wire format of every frame::

    u32 big-endian frame_len | JSON header | payload

``frame_len`` counts the header and payload bytes. The header states the
payload size in ``payload_bytes``. Clients send channel frames (``channel``
is ``acc`` or ``mic``, ``encoding`` is ``pcm16le`` or ``f32le``) until both
channels have seen a frame with ``final`` set. The server answers with a
``report`` frame whose payload is the match report JSON, or an ``error``
frame carrying ``code`` and ``message``.
"""

from __future__ import annotations

import asyncio
import json
import logging
import signal
import socket
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .decision import ClassifierModel, load_model
from .errors import ConnectError, ProtocolError, VAuthError
from .pipeline import DEFAULT_CONFIG, MatchReport, PipelineConfig, match
from .signal_core import SampledSignal
from .wavio import read_wav

log = logging.getLogger(__name__)

MAX_FRAME = 64 * 1024 * 1024
SESSION_TIMEOUT_SEC = 10.0
ENCODINGS = ("pcm16le", "f32le")
CHANNELS = ("acc", "mic")


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    header = dict(header, payload_bytes=len(payload))
    head = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(head) + len(payload)) + head + payload


def decode_body(body: bytes) -> tuple[dict, bytes]:
    """Split a frame body into its header and payload; raise ProtocolError on mismatch."""
    try:
        text = body.decode("utf-8", errors="surrogateescape")
        header, end = json.JSONDecoder().raw_decode(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError("BAD_FRAME", f"unparseable header: {exc}") from exc
    if not isinstance(header, dict):
        raise ProtocolError("BAD_FRAME", "header is not a JSON object")
    head_len = len(text[:end].encode("utf-8", errors="surrogateescape"))
    payload = body[head_len:]
    if header.get("payload_bytes") != len(payload):
        raise ProtocolError("BAD_FRAME", f"frame_len implies {len(payload)} payload bytes, "
                                         f"header says {header.get('payload_bytes')}")
    return header, payload


def encode_samples(x: np.ndarray, encoding: str) -> bytes:
    if encoding == "pcm16le":
        return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    if encoding == "f32le":
        return np.asarray(x, dtype="<f4").tobytes()
    raise ValueError(f"unknown encoding {encoding!r}")


def decode_samples(payload: bytes, encoding: str) -> np.ndarray:
    if encoding == "pcm16le":
        if len(payload) % 2:
            raise ProtocolError("BAD_FRAME", "odd pcm16le payload length")
        return np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    if encoding == "f32le":
        if len(payload) % 4:
            raise ProtocolError("BAD_FRAME", "f32le payload length not a multiple of 4")
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(x)):
            raise ProtocolError("BAD_FRAME", "non-finite samples")
        return x
    raise ProtocolError("BAD_FRAME", f"unknown encoding {encoding!r}")


def wire_encoding(x: np.ndarray) -> str:
    """Lossless encoding for ``x`` when one exists, else ``f32le``."""
    q = x * 32768.0
    if np.all(q == np.round(q)) and np.all((q >= -32768) & (q <= 32767)):
        return "pcm16le"
    return "f32le"


class _Session:
    def __init__(self, session_id):
        self.id = session_id
        self.chunks = {c: [] for c in CHANNELS}
        self.rate = {}
        self.final = set()
        self.want_cleaned = False
        self.keep_alive = False

    def add(self, header: dict, payload: bytes):
        ch = header.get("channel")
        if ch not in CHANNELS:
            raise ProtocolError("BAD_FRAME", f"unknown channel {ch!r}")
        if ch in self.final:
            raise ProtocolError("BAD_FRAME", f"channel {ch} already finalised")
        try:
            rate = float(header["rate_hz"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("BAD_FRAME", "missing or invalid rate_hz") from exc
        if not rate > 0:
            raise ProtocolError("BAD_FRAME", "rate_hz must be positive")
        if self.rate.setdefault(ch, rate) != rate:
            raise ProtocolError("BAD_FRAME", f"rate_hz changed within channel {ch}")
        self.chunks[ch].append(decode_samples(payload, header.get("encoding")))
        self.want_cleaned = self.want_cleaned or bool(header.get("want_cleaned"))
        self.keep_alive = self.keep_alive or bool(header.get("keep_alive"))
        if header.get("final"):
            self.final.add(ch)

    @property
    def complete(self) -> bool:
        return self.final == set(CHANNELS)

    def signal(self, ch) -> SampledSignal:
        return SampledSignal(np.concatenate(self.chunks[ch]) if self.chunks[ch] else np.zeros(0),
                             self.rate[ch])


class GatewayServer:
    """Asyncio server; ``start()`` runs it on a background thread."""

    def __init__(self, model: ClassifierModel | None, config: PipelineConfig = DEFAULT_CONFIG,
                 host: str = "127.0.0.1", port: int = 0, session_timeout: float = SESSION_TIMEOUT_SEC,
                 max_frame: int = MAX_FRAME, workers: int | None = None):
        self.model = model
        self.config = config
        self.host = host
        self.port = port
        self.session_timeout = session_timeout
        self.max_frame = max_frame
        self._pool = ThreadPoolExecutor(max_workers=workers)
        self._loop = None
        self._server = None
        self._thread = None
        self._stop = None
        self._ready = threading.Event()

    async def _send(self, writer, header, payload=b""):
        writer.write(encode_frame(header, payload))
        await writer.drain()

    async def _error(self, writer, code, message, session_id=None):
        log.info("session %s: %s %s", session_id, code, message)
        await self._send(writer, {"type": "error", "code": code, "message": message,
                                  "session_id": session_id})

    async def _read_frame(self, reader):
        prefix = await reader.readexactly(4)
        (n,) = struct.unpack(">I", prefix)
        if n > self.max_frame:
            raise ProtocolError("FRAME_TOO_LARGE", f"frame of {n} bytes exceeds {self.max_frame}")
        return decode_body(await reader.readexactly(n))

    def _run_match(self, sess: _Session) -> dict:
        try:
            rep = match(sess.signal("acc"), sess.signal("mic"), self.model, self.config)
        except VAuthError as exc:
            raise ProtocolError("INPUT_ERROR", str(exc)) from exc
        return rep.to_json(include_audio=sess.want_cleaned)

    async def _handle(self, reader, writer):
        sess = None
        try:
            while True:
                try:
                    header, payload = await asyncio.wait_for(self._read_frame(reader),
                                                             self.session_timeout)
                except asyncio.TimeoutError:
                    if sess is not None:
                        await self._error(writer, "SESSION_TIMEOUT",
                                          f"channels {sorted(set(CHANNELS) - sess.final)} missing "
                                          f"after {self.session_timeout:g} s", sess.id)
                    return
                except asyncio.IncompleteReadError:
                    return
                sid = header.get("session_id")
                if sess is None:
                    sess = _Session(sid)
                elif sid != sess.id:
                    raise ProtocolError("BAD_FRAME", f"session_id {sid!r} while {sess.id!r} is open")
                sess.add(header, payload)
                if not sess.complete:
                    continue
                loop = asyncio.get_running_loop()
                report = await loop.run_in_executor(self._pool, self._run_match, sess)
                body = json.dumps(report).encode("utf-8")
                await self._send(writer, {"type": "report", "session_id": sess.id}, body)
                if not sess.keep_alive:
                    return
                sess = None
        except ProtocolError as exc:
            try:
                await self._error(writer, exc.code, exc.message, sess.id if sess else None)
            except ConnectionError:
                pass
        except ConnectionError:
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass

    async def _main(self, stop: asyncio.Event | None = None):
        self._server = await asyncio.start_server(self._handle, self.host, self.port,
                                                  limit=2 ** 20)
        self.port = self._server.sockets[0].getsockname()[1]
        self._ready.set()
        async with self._server:
            if stop is None:
                await self._server.serve_forever()
            else:
                await stop.wait()

    def start(self) -> "GatewayServer":
        def run():
            self._loop = asyncio.new_event_loop()
            self._stop = asyncio.Event()
            try:
                self._loop.run_until_complete(self._main(self._stop))
            finally:
                self._loop.close()

        self._thread = threading.Thread(target=run, daemon=True)
        self._thread.start()
        if not self._ready.wait(10):
            raise RuntimeError("gateway failed to start")
        return self

    def stop(self):
        if self._loop is not None and not self._loop.is_closed():
            self._loop.call_soon_threadsafe(self._stop.set)
        if self._thread is not None:
            self._thread.join(5)
        self._pool.shutdown(wait=False)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host.strip("[]"), int(port)


def serve(listen_addr: str, model_path, config: PipelineConfig = DEFAULT_CONFIG,
          session_timeout: float = SESSION_TIMEOUT_SEC) -> None:
    """Run the gateway until SIGINT or SIGTERM."""
    model = load_model(model_path) if model_path else None
    host, port = parse_addr(listen_addr)
    srv = GatewayServer(model, config, host, port, session_timeout)

    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            try:
                loop.add_signal_handler(sig, stop.set)
            except (NotImplementedError, RuntimeError):
                pass
        task = asyncio.create_task(srv._main(stop))
        await asyncio.get_running_loop().run_in_executor(None, srv._ready.wait)
        log.info("listening on %s:%d", host, srv.port)
        await task

    asyncio.run(main())


# ---- client -------------------------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(min(n - len(buf), 1 << 20))
        if not chunk:
            raise ConnectError("connection closed by the gateway")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> tuple[dict, bytes]:
    (n,) = struct.unpack(">I", _recv_exact(sock, 4))
    if n > MAX_FRAME:
        raise ProtocolError("FRAME_TOO_LARGE", f"response frame of {n} bytes")
    return decode_body(_recv_exact(sock, n))


def _as_signal(x) -> SampledSignal:
    if isinstance(x, SampledSignal):
        return x
    return read_wav(Path(x))


def client_match(addr: str, acc_wav, mic_wav, session_id: str = "s0", want_cleaned: bool = False,
                 timeout: float = 60.0, chunk_samples: int | None = None) -> MatchReport:
    """Run one session against the gateway at ``addr`` ("host:port").

    ``acc_wav`` and ``mic_wav`` are WAV paths or :class:`SampledSignal`.
    Samples travel as ``pcm16le`` when that is lossless, else ``f32le``.
    Raises :class:`ConnectError` for network failures and
    :class:`ProtocolError` when the gateway answers with an error.
    """
    sigs = {"acc": _as_signal(acc_wav), "mic": _as_signal(mic_wav)}
    host, port = parse_addr(addr)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectError(f"cannot reach gateway at {addr}: {exc}") from exc
    try:
        with sock:
            for ch, sig in sigs.items():
                enc = wire_encoding(sig.samples)
                step = chunk_samples or max(1, len(sig))
                starts = list(range(0, len(sig), step)) or [0]
                for k, s in enumerate(starts):
                    payload = encode_samples(sig.samples[s:s + step], enc)
                    sock.sendall(encode_frame({
                        "session_id": session_id, "channel": ch, "rate_hz": sig.rate_hz,
                        "encoding": enc, "final": k == len(starts) - 1,
                        "want_cleaned": want_cleaned}, payload))
            header, payload = read_frame(sock)
    except OSError as exc:
        raise ConnectError(f"gateway connection failed: {exc}") from exc
    if header.get("type") == "error":
        raise ProtocolError(header.get("code", "UNKNOWN"), header.get("message", ""))
    if header.get("type") != "report":
        raise ProtocolError("BAD_FRAME", f"unexpected response type {header.get('type')!r}")
    try:
        return MatchReport.from_json(json.loads(payload.decode("utf-8")))
    except (ValueError, KeyError) as exc:
        raise ProtocolError("BAD_FRAME", f"unreadable report: {exc}") from exc
