"""Framed TCP front end for the enrollment/authentication device.

The wire format is deliberately minimal: each frame is a 4-byte big-endian
payload length followed by the payload, whose first byte is an opcode. The
service owns the simulated scattering tokens (the prover side); clients only
ever see record ids, verdicts, digests, and extracted bits, never raw
speckle. Records are persisted as one file per record id in a plain
directory.

A malformed or half-delivered frame gets an ERROR reply and the connection
stays usable; framing keeps recovery trivial because the next length prefix
restarts the parse.
"""

from __future__ import annotations

import dataclasses
import itertools
import os
import socket
import socketserver
import struct
import threading

import numpy as np

from . import bch
from ._binio import Reader, le, pack_bits, packed_size, unpack_bits
from .errors import FormatError
from .hashing import HashConfig
from .protocol import (
    EnrollmentRecord,
    authenticate,
    enroll,
    load_record,
    save_record,
    verify,
)
from .randomness import extract_bits
from .token import (
    NoiseParams,
    TokenModel,
    challenge_from_bytes,
    random_pattern,
    respond,
    token_id,
)

__all__ = [
    "OP_ENROLL",
    "OP_AUTH",
    "OP_RESULT",
    "OP_ERROR",
    "OP_RANDOM",
    "ERR_BAD_FRAME",
    "ERR_NOT_FOUND",
    "ERR_INTERNAL",
    "encode_frame",
    "decode_frame",
    "RecordStore",
    "PufService",
    "serve_forever",
    "ServiceClient",
]

OP_ENROLL = 0x01
OP_AUTH = 0x02
OP_RESULT = 0x03
OP_ERROR = 0x04
OP_RANDOM = 0x05

ERR_BAD_FRAME = 1
ERR_NOT_FOUND = 2
ERR_INTERNAL = 3

ERROR_NAMES = {ERR_BAD_FRAME: "bad_frame", ERR_NOT_FOUND: "not_found", ERR_INTERNAL: "internal"}

MAX_FRAME = 1 << 22  # 4 MiB; far above any legitimate message
MAX_RANDOM_BITS = 1 << 20

# Once the first byte of a frame has arrived the rest must follow within
# this window, else the frame counts as malformed.
DEFAULT_FRAME_TIMEOUT = 0.5


def encode_frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise ValueError("payload too large")
    return struct.pack(">I", len(payload)) + payload


def decode_frame(data: bytes) -> tuple[bytes, bytes]:
    """Split one frame off the front; returns (payload, rest)."""
    if len(data) < 4:
        raise FormatError("frame shorter than its length prefix")
    (n,) = struct.unpack(">I", data[:4])
    if n > MAX_FRAME:
        raise FormatError(f"frame length {n} exceeds maximum")
    if len(data) < 4 + n:
        raise FormatError("frame truncated")
    return data[4 : 4 + n], data[4 + n :]


def error_payload(code: int, message: str) -> bytes:
    raw = message.encode()[:1000]
    return bytes([OP_ERROR, code]) + le("H", len(raw)) + raw


def parse_error(payload: bytes) -> tuple[int, str]:
    r = Reader(payload)
    op, code = r.unpack("BB")
    if op != OP_ERROR:
        raise FormatError("not an error payload")
    n = r.unpack("H")
    return code, r.take(n).decode()


class RecordStore:
    """Directory of enrollment records, one file per record id."""

    def __init__(self, directory):
        self._dir = str(directory)
        os.makedirs(self._dir, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, record_id: bytes) -> str:
        return os.path.join(self._dir, record_id.hex() + ".pufr")

    def save(self, record: EnrollmentRecord):
        path = self._path(record.record_id)
        tmp = path + ".tmp"
        with self._lock:
            save_record(record, tmp)
            os.replace(tmp, path)

    def load(self, record_id: bytes) -> EnrollmentRecord:
        path = self._path(record_id)
        if not os.path.exists(path):
            raise KeyError(record_id.hex())
        return load_record(path)

    def __contains__(self, record_id: bytes) -> bool:
        return os.path.exists(self._path(record_id))

    def ids(self) -> list:
        out = []
        for name in sorted(os.listdir(self._dir)):
            if name.endswith(".pufr"):
                out.append(bytes.fromhex(name[:-5]))
        return out


class PufService:
    """Handles decoded payloads; transport-agnostic and thread-safe."""

    def __init__(
        self,
        store: RecordStore,
        hash_cfg: HashConfig | None = None,
        bch_params=None,
        noise: NoiseParams | None = None,
        rng_seed: int = 0,
    ):
        self.store = store
        self.bch_params = bch_params if bch_params is not None else bch.bch_new(8, 31)
        if hash_cfg is None:
            hash_cfg = HashConfig(algo="rbm", key_len=self.bch_params.n, rng_seed=rng_seed)
        if hash_cfg.key_len != self.bch_params.n:
            raise ValueError("hash key length must equal the code length")
        self.hash_cfg = hash_cfg
        self.noise = noise if noise is not None else NoiseParams()
        self._rng_seed = int(rng_seed)
        self._tokens: dict[bytes, TokenModel] = {}
        self._enroll_locks: dict[bytes, threading.Lock] = {}
        self._guard = threading.Lock()
        self._counter = itertools.count(1)

    def add_token(self, token: TokenModel) -> bytes:
        tid = token_id(token)
        with self._guard:
            self._tokens[tid] = token
            self._enroll_locks.setdefault(tid, threading.Lock())
        return tid

    def token_ids(self) -> list:
        with self._guard:
            return sorted(self._tokens)

    def _next(self) -> int:
        with self._guard:
            return next(self._counter)

    def _fresh_noise(self) -> NoiseParams:
        return self.noise.with_seed(self._rng_seed * 1_000_003 + self._next())

    # -- opcode handlers -------------------------------------------------

    def handle_payload(self, payload: bytes) -> bytes:
        if not payload:
            return error_payload(ERR_BAD_FRAME, "empty payload")
        op = payload[0]
        try:
            if op == OP_ENROLL:
                return self._handle_enroll(payload)
            if op == OP_AUTH:
                return self._handle_auth(payload)
            if op == OP_RANDOM:
                return self._handle_random(payload)
            return error_payload(ERR_BAD_FRAME, f"unknown opcode 0x{op:02x}")
        except KeyError as exc:
            return error_payload(ERR_NOT_FOUND, f"unknown id {exc.args[0]}")
        except (FormatError, ValueError, struct.error, IndexError) as exc:
            return error_payload(ERR_BAD_FRAME, str(exc))
        except Exception as exc:  # pragma: no cover - defensive catch-all
            return error_payload(ERR_INTERNAL, f"{type(exc).__name__}: {exc}")

    def _handle_enroll(self, payload: bytes) -> bytes:
        r = Reader(payload)
        r.unpack("B")
        tid = r.take(16)
        blob_len = r.unpack("I")
        challenge = challenge_from_bytes(r.take(blob_len))
        if challenge is None:
            raise ValueError("enroll needs a challenge descriptor")
        with self._guard:
            token = self._tokens.get(tid)
            lock = self._enroll_locks.setdefault(tid, threading.Lock())
        if token is None:
            raise KeyError(tid.hex())
        with lock:
            image = respond(token, challenge, noise=self._fresh_noise())
            cfg = dataclasses.replace(self.hash_cfg, rng_seed=self._next())
            _, record = enroll(
                image,
                cfg,
                self.bch_params,
                rng_seed=self._next(),
                token_id=tid,
                challenge=challenge,
            )
            self.store.save(record)
        return bytes([OP_RESULT, OP_ENROLL]) + record.record_id + record.key_digest

    def _handle_auth(self, payload: bytes) -> bytes:
        r = Reader(payload)
        r.unpack("B")
        rid = r.take(16)
        record = self.store.load(rid)
        with self._guard:
            token = self._tokens.get(record.token_id)
        if token is None:
            raise KeyError(record.token_id.hex())
        if record.challenge is None:
            return error_payload(ERR_INTERNAL, "record carries no challenge descriptor")
        image = respond(token, record.challenge, noise=self._fresh_noise())
        outcome = authenticate(image, record)
        accepted = outcome is not None and verify(outcome[0], record)
        corrected = outcome[1] if outcome is not None else 0
        return bytes([OP_RESULT, OP_AUTH, 1 if accepted else 0]) + le("H", corrected)

    def _handle_random(self, payload: bytes) -> bytes:
        r = Reader(payload)
        r.unpack("B")
        n_bits = r.unpack("I")
        if not 1 <= n_bits <= MAX_RANDOM_BITS:
            raise ValueError(f"bit count must be in 1..{MAX_RANDOM_BITS}")
        with self._guard:
            if not self._tokens:
                raise KeyError("no token installed")
            tid = sorted(self._tokens)[0]
            token = self._tokens[tid]
        per_image = min(2000, token.out_dims[0] * token.out_dims[1] // 2 - 1)
        cfg = HashConfig(algo="rbm", key_len=per_image, rng_seed=self._rng_seed)
        images = []
        need = -(-n_bits // per_image)
        for _ in range(need):
            pattern = random_pattern(token.grid_dims, self._next())
            images.append(respond(token, pattern, noise=self._fresh_noise()))
        stream = extract_bits(images, cfg)
        bits = stream.bits[:n_bits]
        return bytes([OP_RESULT, OP_RANDOM]) + le("I", n_bits) + pack_bits(bits)


# ----------------------------------------------------------------------
# socket plumbing

def _recv_exact(sock: socket.socket, n: int, timeout: float | None) -> bytes:
    """Read exactly n bytes. Raises TimeoutError mid-read, EOFError on close."""
    chunks = []
    got = 0
    sock.settimeout(timeout)
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise EOFError("connection closed mid-frame" if chunks else "connection closed")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: PufService = self.server.service  # type: ignore[attr-defined]
        frame_timeout = self.server.frame_timeout  # type: ignore[attr-defined]
        sock = self.request
        while True:
            try:
                sock.settimeout(self.server.idle_timeout)  # type: ignore[attr-defined]
                first = sock.recv(1)
            except (TimeoutError, socket.timeout, OSError):
                return
            if not first:
                return
            try:
                rest = _recv_exact(sock, 3, frame_timeout)
                (length,) = struct.unpack(">I", first + rest)
                if length > MAX_FRAME:
                    raise ValueError(f"frame length {length} exceeds maximum")
                payload = _recv_exact(sock, length, frame_timeout)
            except (TimeoutError, socket.timeout, ValueError):
                try:
                    sock.sendall(encode_frame(error_payload(ERR_BAD_FRAME, "incomplete frame")))
                    continue
                except OSError:
                    return
            except (EOFError, OSError):
                return
            response = service.handle_payload(payload)
            try:
                sock.sendall(encode_frame(response))
            except OSError:
                return


class PufServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, service: PufService, frame_timeout: float = DEFAULT_FRAME_TIMEOUT,
                 idle_timeout: float | None = None):
        self.service = service
        self.frame_timeout = frame_timeout
        self.idle_timeout = idle_timeout
        super().__init__(address, _Handler)


def serve_forever(address, service: PufService, frame_timeout: float = DEFAULT_FRAME_TIMEOUT):
    """Blocking entry point used by the command line."""
    with PufServer(address, service, frame_timeout) as server:
        server.serve_forever()


class ServiceClient:
    """Small blocking client for tests and the command line."""

    def __init__(self, address, timeout: float = 10.0):
        self._sock = socket.create_connection(address, timeout=timeout)
        self._timeout = timeout

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def send_raw(self, data: bytes):
        self._sock.sendall(data)

    def request(self, payload: bytes) -> bytes:
        self._sock.sendall(encode_frame(payload))
        return self.read_reply()

    def read_reply(self) -> bytes:
        header = _recv_exact(self._sock, 4, self._timeout)
        (length,) = struct.unpack(">I", header)
        return _recv_exact(self._sock, length, self._timeout)

    # -- typed calls ------------------------------------------------------

    def enroll(self, token_id: bytes, challenge_blob: bytes) -> tuple[bytes, bytes]:
        payload = bytes([OP_ENROLL]) + token_id + le("I", len(challenge_blob)) + challenge_blob
        reply = self.request(payload)
        self._raise_on_error(reply)
        r = Reader(reply)
        op, echo = r.unpack("BB")
        return r.take(16), r.take(32)

    def auth(self, record_id: bytes) -> tuple[bool, int]:
        reply = self.request(bytes([OP_AUTH]) + record_id)
        self._raise_on_error(reply)
        r = Reader(reply)
        op, echo, verdict = r.unpack("BBB")
        corrected = r.unpack("H")
        return bool(verdict), corrected

    def random_bits(self, n_bits: int) -> np.ndarray:
        reply = self.request(bytes([OP_RANDOM]) + le("I", n_bits))
        self._raise_on_error(reply)
        r = Reader(reply)
        r.unpack("BB")
        n = r.unpack("I")
        return unpack_bits(r.take(packed_size(n)), n)

    @staticmethod
    def _raise_on_error(reply: bytes):
        if reply and reply[0] == OP_ERROR:
            code, message = parse_error(reply)
            raise ServiceError(code, message)


class ServiceError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(f"{ERROR_NAMES.get(code, code)}: {message}")
        self.code = code
        self.message = message
