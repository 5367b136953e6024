"""Wire protocol for the environment server.

Length-prefixed binary frames over a byte stream (socket or pipe):

    frame   := u32 payload_length (LE) | payload
    payload := u8 message_type | body

Message types (client -> server):
    0x01 RESET  body: f32 difficulty | u64 seed | u16 preset_len | preset utf-8
    0x02 STEP   body: 5 x f32 action
    0x03 CLOSE  body: empty

Message types (server -> client):
    0x10 HELLO  body: 4-byte magic "GSRV" | u32 protocol_version
    0x11 OBS    body: u8 done | f32 reward | u32 info_len | info json utf-8 |
                16 x f32 scalars | 4096 x f32 grey | 4096 x f32 depth
    0x12 ERROR  body: u16 code | u16 detail_len | detail utf-8

All numeric payloads are little-endian; images are row-major float32.
Every request receives exactly one reply.
"""

from __future__ import annotations

import json
import struct

import numpy as np

PROTO_MAGIC = b"GSRV"
PROTO_VERSION = 1

MSG_RESET = 0x01
MSG_STEP = 0x02
MSG_CLOSE = 0x03
MSG_HELLO = 0x10
MSG_OBS = 0x11
MSG_ERROR = 0x12

ERR_BAD_FRAME = 1
ERR_BAD_ACTION = 2
ERR_NOT_RESET = 3
ERR_EPISODE_DONE = 4
ERR_INTERNAL = 5
ERR_BAD_MESSAGE = 6
ERR_BAD_RESET = 7

IMAGE_PIXELS = 64 * 64


class ProtocolError(Exception):
    def __init__(self, code: int, detail: str):
        super().__init__(detail)
        self.code = code
        self.detail = detail


def frame(payload: bytes) -> bytes:
    return struct.pack("<I", len(payload)) + payload


def encode_hello() -> bytes:
    return frame(struct.pack("<B", MSG_HELLO) + PROTO_MAGIC + struct.pack("<I", PROTO_VERSION))


def encode_reset(difficulty: float, seed: int, preset: str) -> bytes:
    p = preset.encode()
    return frame(struct.pack("<BfQH", MSG_RESET, difficulty, seed, len(p)) + p)


def encode_step(action) -> bytes:
    a = np.asarray(action, dtype="<f4").reshape(-1)
    if a.shape[0] != 5:
        raise ValueError("action must have 5 floats")
    return frame(struct.pack("<B", MSG_STEP) + a.tobytes())


def encode_close() -> bytes:
    return frame(struct.pack("<B", MSG_CLOSE))


def encode_obs(scalars, grey, depth, reward: float, done: bool, info: dict) -> bytes:
    blob = json.dumps(info, separators=(",", ":")).encode()
    body = struct.pack("<BBfI", MSG_OBS, 1 if done else 0, reward, len(blob))
    body += blob
    body += np.asarray(scalars, dtype="<f4").tobytes()
    body += np.asarray(grey, dtype="<f4").tobytes()
    body += np.asarray(depth, dtype="<f4").tobytes()
    return frame(body)


def encode_error(code: int, detail: str) -> bytes:
    d = detail.encode()[:65000]
    return frame(struct.pack("<BHH", MSG_ERROR, code, len(d)) + d)


def decode(payload: bytes) -> dict:
    """Decode one payload (after length removal) into a message dict."""
    try:
        return _decode(payload)
    except ProtocolError:
        raise
    except (struct.error, UnicodeDecodeError, ValueError, KeyError) as e:
        raise ProtocolError(ERR_BAD_FRAME, f"malformed frame: {e}") from None


def _decode(payload: bytes) -> dict:
    if len(payload) < 1:
        raise ProtocolError(ERR_BAD_FRAME, "empty frame")
    kind = payload[0]
    body = payload[1:]
    if kind == MSG_RESET:
        if len(body) < 14:
            raise ProtocolError(ERR_BAD_FRAME, "short reset body")
        difficulty, seed, plen = struct.unpack_from("<fQH", body, 0)
        preset = body[14:14 + plen]
        if len(preset) != plen:
            raise ProtocolError(ERR_BAD_FRAME, "truncated preset string")
        try:
            preset = preset.decode()
        except UnicodeDecodeError as e:
            raise ProtocolError(ERR_BAD_FRAME, f"preset not utf-8: {e}") from None
        return dict(kind="reset", difficulty=float(difficulty), seed=int(seed), preset=preset)
    if kind == MSG_STEP:
        if len(body) != 5 * 4:
            raise ProtocolError(ERR_BAD_ACTION, f"step body must be 20 bytes, got {len(body)}")
        action = np.frombuffer(body, dtype="<f4").astype(np.float64)
        return dict(kind="step", action=action)
    if kind == MSG_CLOSE:
        return dict(kind="close")
    if kind == MSG_HELLO:
        if len(body) != 8 or body[:4] != PROTO_MAGIC:
            raise ProtocolError(ERR_BAD_FRAME, "bad hello")
        (version,) = struct.unpack_from("<I", body, 4)
        return dict(kind="hello", version=int(version))
    if kind == MSG_OBS:
        hdr = struct.calcsize("<BfI")
        if len(body) < hdr:
            raise ProtocolError(ERR_BAD_FRAME, "short obs body")
        done, reward, ilen = struct.unpack_from("<BfI", body, 0)
        off = hdr
        info = json.loads(body[off:off + ilen].decode())
        off += ilen
        need = (16 + 2 * IMAGE_PIXELS) * 4
        if len(body) - off != need:
            raise ProtocolError(ERR_BAD_FRAME, "obs payload size mismatch")
        scalars = np.frombuffer(body, dtype="<f4", count=16, offset=off + 0).copy()
        grey = np.frombuffer(body, dtype="<f4", count=IMAGE_PIXELS,
                             offset=off + 16 * 4).reshape(64, 64).copy()
        depth = np.frombuffer(body, dtype="<f4", count=IMAGE_PIXELS,
                              offset=off + (16 + IMAGE_PIXELS) * 4).reshape(64, 64).copy()
        return dict(kind="obs", done=bool(done), reward=float(reward), info=info,
                    scalars=scalars, grey=grey, depth=depth)
    if kind == MSG_ERROR:
        if len(body) < 4:
            raise ProtocolError(ERR_BAD_FRAME, "short error body")
        code, dlen = struct.unpack_from("<HH", body, 0)
        return dict(kind="error", code=int(code), detail=body[4:4 + dlen].decode(errors="replace"))
    raise ProtocolError(ERR_BAD_MESSAGE, f"unknown message type 0x{kind:02x}")


class FrameReader:
    """Incremental length-prefixed frame splitter with a size cap."""

    def __init__(self, max_frame: int = 1 << 20):
        self.buf = bytearray()
        self.max_frame = max_frame

    def feed(self, data: bytes):
        self.buf.extend(data)

    def frames(self):
        while True:
            if len(self.buf) < 4:
                return
            (length,) = struct.unpack_from("<I", self.buf, 0)
            if length > self.max_frame:
                raise ProtocolError(ERR_BAD_FRAME, f"frame of {length} bytes exceeds cap")
            if len(self.buf) < 4 + length:
                return
            payload = bytes(self.buf[4:4 + length])
            del self.buf[:4 + length]
            yield payload
