"""Environment server: one isolated environment per session over the wire
protocol, plus a small in-process client used by tests and tools."""

from __future__ import annotations

import json
import socket
import struct
import threading

import numpy as np

from . import protocol as proto
from .config import Config
from .env import EpisodeError, GraspEnv


def _info_payload(info: dict) -> dict:
    """JSON-safe subset of the step info dict."""
    out = {}
    for key in ("stage", "n_logs_held", "x_dgrasp", "actuator_power", "success",
                "target_axis", "distance", "opening_fraction", "grapple_heading",
                "accumulated_reward"):
        if key in info:
            v = info[key]
            out[key] = bool(v) if isinstance(v, (bool, np.bool_)) else float(v)
    for key in ("target_position", "grapple_position"):
        if key in info:
            out[key] = [float(x) for x in np.asarray(info[key]).reshape(-1)]
    if "snapshot_hash" in info:
        out["snapshot_hash"] = int(info["snapshot_hash"])
    return out


class Session:
    """Protocol state machine owning one environment instance."""

    def __init__(self, cfg: Config):
        self.env = GraspEnv(cfg)
        self._active = False

    # request-level faults keep the session; framing faults tear it down
    _RECOVERABLE = (proto.ERR_BAD_ACTION, proto.ERR_NOT_RESET,
                    proto.ERR_EPISODE_DONE, proto.ERR_BAD_RESET)

    def handle(self, payload: bytes) -> tuple[bytes, bool]:
        """Returns (reply bytes, keep_session_alive)."""
        try:
            msg = proto.decode(payload)
        except proto.ProtocolError as e:
            return proto.encode_error(e.code, e.detail), e.code in self._RECOVERABLE
        try:
            if msg["kind"] == "reset":
                return self._reset(msg), True
            if msg["kind"] == "step":
                return self._step(msg), True
            if msg["kind"] == "close":
                return proto.encode_error(0, "closed"), False
            return proto.encode_error(proto.ERR_BAD_MESSAGE,
                                      f"unexpected {msg['kind']} from client"), False
        except proto.ProtocolError as e:
            return proto.encode_error(e.code, e.detail), e.code in self._RECOVERABLE
        except EpisodeError as e:
            self._active = False
            return proto.encode_error(proto.ERR_EPISODE_DONE, str(e)), True
        except Exception as e:  # never crash the server on a session fault
            self._active = False
            return proto.encode_error(proto.ERR_INTERNAL, f"{type(e).__name__}: {e}"), False

    def _reset(self, msg) -> bytes:
        if not 0.0 <= msg["difficulty"] <= 1.0:
            raise proto.ProtocolError(proto.ERR_BAD_RESET,
                                      f"difficulty {msg['difficulty']} outside [0, 1]")
        try:
            self.env.cfg.preset(msg["preset"])
        except KeyError as e:
            raise proto.ProtocolError(proto.ERR_BAD_RESET, str(e)) from None
        obs = self.env.reset(difficulty=msg["difficulty"], seed=msg["seed"],
                             preset=msg["preset"])
        self._active = True
        info = dict(target_axis=float(self.env.target_axis),
                    target_position=[float(x) for x in self.env.target_position],
                    log_positions=[[float(v) for v in p]
                                   for p in self.env.world.x[self.env.world.log_ids]])
        return proto.encode_obs(obs.scalars, obs.frame.grey, obs.frame.depth,
                                0.0, False, info)

    def _step(self, msg) -> bytes:
        if not self._active:
            raise proto.ProtocolError(proto.ERR_NOT_RESET, "step before reset")
        if self.env.done:
            raise proto.ProtocolError(proto.ERR_EPISODE_DONE, "episode finished; reset first")
        action = msg["action"]
        if not np.all(np.isfinite(action)):
            raise proto.ProtocolError(proto.ERR_BAD_ACTION, "non-finite action")
        obs, breakdown, done, info = self.env.step(action)
        payload = _info_payload(info)
        payload["r_target"] = breakdown.r_target
        payload["r_guide"] = breakdown.r_guide
        payload["r_energy"] = breakdown.r_energy
        return proto.encode_obs(obs.scalars, obs.frame.grey, obs.frame.depth,
                                breakdown.total, done, payload)


class EnvServer:
    """TCP server; each connection is one isolated session.

    All sessions are multiplexed on one selector thread: Python threads
    contend on the interpreter lock for the CPU-bound stepping, so a
    single-threaded event loop gives strictly higher aggregate throughput.
    Scale further by running several server processes.
    """

    def __init__(self, cfg: Config | None = None, host: str = "127.0.0.1",
                 port: int = 0, max_sessions: int | None = None):
        self.cfg = cfg or Config()
        self.max_sessions = max_sessions or self.cfg.server.max_sessions
        self._sock = socket.create_server((host, port))
        self._sock.setblocking(False)
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._conns: dict = {}

    def serve_forever(self):
        import selectors

        sel = selectors.DefaultSelector()
        sel.register(self._sock, selectors.EVENT_READ, ("accept", None))
        try:
            while not self._stop.is_set():
                for key, _ in sel.select(timeout=0.2):
                    tag, state = key.data
                    if tag == "accept":
                        try:
                            conn, _ = self._sock.accept()
                        except (BlockingIOError, OSError):
                            continue
                        if len(self._conns) >= self.max_sessions:
                            try:
                                conn.sendall(proto.encode_error(
                                    proto.ERR_INTERNAL, "session limit reached"))
                            finally:
                                conn.close()
                            continue
                        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                        conn.setblocking(True)  # replies are written eagerly
                        conn.sendall(proto.encode_hello())
                        state = dict(
                            session=Session(self.cfg),
                            reader=proto.FrameReader(self.cfg.server.max_frame_bytes),
                        )
                        self._conns[conn] = state
                        sel.register(conn, selectors.EVENT_READ, ("conn", state))
                        continue
                    conn = key.fileobj
                    alive = True
                    try:
                        data = conn.recv(1 << 16)
                    except (ConnectionError, OSError):
                        data = b""
                    if not data:
                        alive = False
                    else:
                        try:
                            state["reader"].feed(data)
                            for payload in state["reader"].frames():
                                reply, alive = state["session"].handle(payload)
                                conn.sendall(reply)
                                if not alive:
                                    break
                        except proto.ProtocolError as e:
                            try:
                                conn.sendall(proto.encode_error(e.code, e.detail))
                            except OSError:
                                pass
                            alive = False
                        except (ConnectionError, OSError):
                            alive = False
                    if not alive:
                        sel.unregister(conn)
                        self._conns.pop(conn, None)
                        try:
                            conn.close()
                        except OSError:
                            pass
        finally:
            sel.close()
            self._sock.close()

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, daemon=True)
        t.start()
        return t

    def stop(self):
        self._stop.set()


class EnvClient:
    """Blocking protocol client."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.reader = proto.FrameReader()
        hello = self._recv()
        if hello["kind"] != "hello" or hello["version"] != proto.PROTO_VERSION:
            raise proto.ProtocolError(proto.ERR_BAD_FRAME, f"unexpected hello {hello}")

    def _recv(self) -> dict:
        while True:
            for payload in self.reader.frames():
                return proto.decode(payload)
            data = self.sock.recv(1 << 16)
            if not data:
                raise ConnectionError("server closed the connection")
            self.reader.feed(data)

    def reset(self, difficulty: float = 0.0, seed: int = 0, preset: str = "default") -> dict:
        self.sock.sendall(proto.encode_reset(difficulty, seed, preset))
        return self._recv()

    def step(self, action) -> dict:
        self.sock.sendall(proto.encode_step(action))
        return self._recv()

    def send_raw(self, data: bytes):
        self.sock.sendall(data)

    def close(self):
        try:
            self.sock.sendall(proto.encode_close())
            self._recv()
        except Exception:
            pass
        self.sock.close()


def serve_stdio(cfg: Config | None = None, stdin=None, stdout=None):
    """Single-session server over stdio pipes (binary)."""
    import sys

    cfg = cfg or Config()
    fin = stdin or sys.stdin.buffer
    fout = stdout or sys.stdout.buffer
    fout.write(proto.encode_hello())
    fout.flush()
    session = Session(cfg)
    reader = proto.FrameReader(cfg.server.max_frame_bytes)
    alive = True
    while alive:
        data = fin.read1(1 << 16) if hasattr(fin, "read1") else fin.read(1 << 16)
        if not data:
            break
        try:
            reader.feed(data)
            for payload in reader.frames():
                reply, alive = session.handle(payload)
                fout.write(reply)
                fout.flush()
                if not alive:
                    break
        except proto.ProtocolError as e:
            fout.write(proto.encode_error(e.code, e.detail))
            fout.flush()
            break
