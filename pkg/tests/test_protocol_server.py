import time

import numpy as np
import pytest

from grapplesim import protocol as proto
from grapplesim import records
from grapplesim.config import Config
from grapplesim.env import GraspEnv
from grapplesim.policies import ReplayPolicy, ScriptedGraspPolicy
from grapplesim.server import EnvClient, EnvServer, Session


@pytest.fixture(scope="module")
def server():
    srv = EnvServer(Config(), port=0, max_sessions=8)
    srv.start()
    time.sleep(0.1)
    yield srv
    srv.stop()


def test_roundtrip_encoders():
    msg = proto.decode(proto.encode_reset(0.3, 42, "evaluation")[4:])
    assert msg == dict(kind="reset", difficulty=pytest.approx(0.3), seed=42,
                       preset="evaluation")
    a = np.array([0.1, -0.2, 0.3, -0.4, 0.5])
    msg = proto.decode(proto.encode_step(a)[4:])
    np.testing.assert_allclose(msg["action"], a, atol=1e-7)
    scalars = np.arange(16, dtype=np.float32)
    grey = np.random.default_rng(0).random((64, 64)).astype(np.float32)
    depth = np.random.default_rng(1).random((64, 64)).astype(np.float32)
    msg = proto.decode(proto.encode_obs(scalars, grey, depth, 1.5, True, {"a": 1})[4:])
    assert msg["kind"] == "obs" and msg["done"] and msg["reward"] == pytest.approx(1.5)
    np.testing.assert_array_equal(msg["scalars"], scalars)
    np.testing.assert_array_equal(msg["grey"], grey)
    np.testing.assert_array_equal(msg["depth"], depth)
    msg = proto.decode(proto.encode_error(3, "nope")[4:])
    assert msg == dict(kind="error", code=3, detail="nope")


def test_happy_path_episode(server):
    c = EnvClient(*server.address)
    obs = c.reset(0.0, 7, "evaluation-2log")
    assert obs["kind"] == "obs"
    assert obs["scalars"].shape == (16,)
    steps = 0
    done = False
    while not done and steps < 200:
        reply = c.step(np.zeros(5))
        done = reply["done"]
        steps += 1
    assert steps == 200 or done
    c.close()


def test_two_sessions_same_seed_identical(server):
    c1 = EnvClient(*server.address)
    c2 = EnvClient(*server.address)
    r1 = c1.reset(0.0, 33, "evaluation-2log")
    r2 = c2.reset(0.0, 33, "evaluation-2log")
    np.testing.assert_array_equal(r1["scalars"], r2["scalars"])
    np.testing.assert_array_equal(r1["grey"], r2["grey"])
    np.testing.assert_array_equal(r1["depth"], r2["depth"])
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.uniform(-1, 1, 5)
        s1 = c1.step(a)
        s2 = c2.step(a)
        np.testing.assert_array_equal(s1["scalars"], s2["scalars"])
        assert s1["reward"] == s2["reward"]
        assert s1["info"]["snapshot_hash"] == s2["info"]["snapshot_hash"]
    c1.close()
    c2.close()


def test_bad_action_size_rejected(server):
    c = EnvClient(*server.address)
    c.reset(0.0, 1, "evaluation-2log")
    c.send_raw(proto.frame(bytes([proto.MSG_STEP]) + b"\x00" * 16))
    err = c._recv()
    assert err["kind"] == "error" and err["code"] == proto.ERR_BAD_ACTION


def test_step_before_reset_rejected(server):
    c = EnvClient(*server.address)
    c.send_raw(proto.encode_step(np.zeros(5)))
    err = c._recv()
    assert err["kind"] == "error" and err["code"] == proto.ERR_NOT_RESET


def test_bad_preset_and_difficulty(server):
    c = EnvClient(*server.address)
    err = c.reset(0.0, 0, "no-such-preset")
    assert err["kind"] == "error" and err["code"] == proto.ERR_BAD_RESET
    err = c.reset(7.5, 0, "evaluation")
    assert err["kind"] == "error" and err["code"] == proto.ERR_BAD_RESET


def test_fuzz_random_frames_never_crash():
    """Random payloads through the session state machine: always a well-formed
    reply, never an exception."""
    session = Session(Config())
    rng = np.random.default_rng(0)
    n_ok = 0
    for _ in range(3000):
        size = int(rng.integers(0, 64))
        payload = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
        reply, alive = session.handle(payload)
        decoded = proto.decode(reply[4:])
        assert decoded["kind"] in ("error", "obs")
        n_ok += 1
    assert n_ok == 3000


def test_frame_reader_cap():
    reader = proto.FrameReader(max_frame=1024)
    import struct

    reader.feed(struct.pack("<I", 1 << 30))
    with pytest.raises(proto.ProtocolError):
        list(reader.frames())


def test_record_replay_byte_identical():
    env = GraspEnv(Config())
    rec = records.record_episode(env, ScriptedGraspPolicy(), 5, 0.0, "evaluation-2log")
    rec2 = records.record_episode(env, ReplayPolicy(rec.actions()), 5, 0.0, "evaluation-2log")
    assert rec.n_steps == rec2.n_steps
    for a, b in zip(rec.steps, rec2.steps):
        assert np.array_equal(a.scalars, b.scalars)
        assert np.array_equal(a.grey, b.grey)
        assert np.array_equal(a.depth, b.depth)
        assert a.snapshot_hash == b.snapshot_hash
    assert rec2.success == rec.success


def test_record_file_errors(tmp_path):
    env = GraspEnv(Config())
    rec = records.record_episode(env, ScriptedGraspPolicy(), 1, 0.0, "evaluation-2log")
    path = tmp_path / "ep.grec"
    records.save_episode(rec, path)
    again = records.load_episode(path)
    assert records.episode_to_bytes(again) == records.episode_to_bytes(rec)
    blob = path.read_bytes()
    with pytest.raises(ValueError, match="magic"):
        records.episode_from_bytes(b"YYYY" + blob[4:])
    with pytest.raises(ValueError):
        records.episode_from_bytes(blob[: len(blob) - 100])
