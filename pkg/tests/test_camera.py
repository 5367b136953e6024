import numpy as np
import pytest
from hypothesis import given, strategies as st

from grapplesim import camera
from grapplesim.camera import ReconstructionImage, capture, render, to_greyscale, view_extent
from grapplesim.config import CameraConfig, Config, DynamicsConfig
from grapplesim.maths import quat_from_axis_angle, quat_mul, quat_to_matrix
from grapplesim.scenes import GraspTarget, LogState, PileScene
from grapplesim.terrain import Heightfield, gen_terrain

from conftest import flat_heightfield


def make_scene(logs, terrain=None, seed=0):
    terrain = terrain if terrain is not None else flat_heightfield(extent=20.0, cell=0.25)
    target = GraspTarget(position=np.array([0.0, 0.0, 0.0]), axis_angle=0.0, log_index=0)
    return PileScene(terrain=terrain, logs=logs, target=target,
                     reconstruction=None, seed=seed, relaxed=True)


def brute_force_top(scene, cfg, x, y, log_cfg):
    """Independent ray-cast oracle: dense z-scan point-in-cuboid test."""
    q45 = quat_from_axis_angle((1, 0, 0), np.pi / 4)
    half = np.array([log_cfg.length / 2, log_cfg.thickness / 2, log_cfg.thickness / 2])
    top = float(scene.terrain.height_at(x, y))
    for log in scene.logs:
        for q in (log.quat, quat_mul(log.quat, q45)):
            R = quat_to_matrix(q)
            for z in np.arange(top + 1.0, top - 1e-9, -0.0005):
                local = R.T @ (np.array([x, y, z]) - log.position)
                if np.all(np.abs(local) <= half + 1e-12):
                    top = max(top, z)
                    break
    return top


class _Empty:
    pass


def test_capture_background_only(cfg):
    scene = make_scene([])
    # combined_com needs at least one log; patch a fake centre
    scene.logs = []
    scene.combined_com = lambda: np.zeros(3)
    rec = capture(scene, cfg.camera)
    assert np.all(rec.rgb == np.asarray(cfg.camera.ground_color, dtype=np.float32))
    # surface equals the (flat) terrain everywhere
    np.testing.assert_allclose(rec.surface_z, 0.0, atol=1e-6)


def test_capture_single_log_footprint_and_profile(cfg):
    s = cfg.logs.thickness
    # first cuboid face-flush on the ground: centre at one half-thickness
    log = LogState(position=np.array([0.0, 0.0, s / 2]), quat=np.array([1.0, 0, 0, 0]),
                   lin_vel=np.zeros(3), ang_vel=np.zeros(3))
    scene = make_scene([log])
    rec = capture(scene, cfg.camera)
    cell = rec.cell
    log_mask = rec.surface_z > 1e-4
    ys, xs = np.nonzero(log_mask)
    width = (xs.max() - xs.min() + 1) * cell
    height = (ys.max() - ys.min() + 1) * cell
    assert width == pytest.approx(3.5, abs=3 * cell)
    assert height == pytest.approx(0.2, abs=3 * cell)
    # peak of the twin-cuboid union: thickness * (1/2 + 1/sqrt(2)); the
    # raster samples cell centres, so it reads the knife-edge ridge up to
    # half a cell low
    expected_peak = s * (0.5 + 1.0 / np.sqrt(2.0))
    assert expected_peak == pytest.approx(0.17071, abs=1e-5)
    assert rec.surface_z.max() == pytest.approx(expected_peak, abs=rec.cell / 2 + 1e-4)
    # the independent ray-cast oracle confirms the analytic ridge height
    assert brute_force_top(scene, cfg, 0.123, 0.0, cfg.logs) == pytest.approx(
        expected_peak, abs=1e-3)
    # profile matches the brute-force ray-cast oracle at probe points
    for (px, py) in [(0.0, 0.0), (0.3, 0.05), (-1.0, -0.08), (1.2, 0.0), (0.5, 0.095)]:
        ix = int((px - (rec.centre[0] - rec.extent / 2)) / cell)
        iy = int((py - (rec.centre[1] - rec.extent / 2)) / cell)
        gx = rec.centre[0] - rec.extent / 2 + (ix + 0.5) * cell
        gy = rec.centre[1] - rec.extent / 2 + (iy + 0.5) * cell
        oracle = brute_force_top(scene, cfg, gx, gy, cfg.logs)
        assert rec.surface_z[iy, ix] == pytest.approx(oracle, abs=2e-3)


def test_capture_deterministic(cfg):
    terrain = gen_terrain(4, cfg.terrain)
    log = LogState(position=np.array([0.2, -0.1, 0.4]),
                   quat=quat_from_axis_angle((0, 0, 1), 0.3),
                   lin_vel=np.zeros(3), ang_vel=np.zeros(3))
    scene = make_scene([log], terrain=terrain, seed=9)
    a = capture(scene, cfg.camera)
    b = capture(scene, cfg.camera)
    assert np.array_equal(a.rgb, b.rgb) and np.array_equal(a.surface_z, b.surface_z)


def test_view_extent_endpoints_and_clamp(cfg):
    assert view_extent(5.0, cfg.camera) == pytest.approx(15.0)
    assert view_extent(0.0, cfg.camera) == pytest.approx(3.0)
    assert view_extent(2.5, cfg.camera) == pytest.approx(9.0)
    assert view_extent(99.0, cfg.camera) == pytest.approx(15.0)
    assert view_extent(-3.0, cfg.camera) == pytest.approx(3.0)


def _checker_recon(res=512, extent=16.0):
    rgb = np.zeros((res, res, 3), dtype=np.float32)
    rgb[:, :, 0] = (np.indices((res, res)).sum(axis=0) % 7 == 0).astype(np.float32)
    rgb[:, :, 1] = rgb[:, :, 0]
    rgb[:, :, 2] = rgb[:, :, 0]
    surface = np.linspace(0, 1, res, dtype=np.float32)[None, :].repeat(res, axis=0)
    return ReconstructionImage(extent=extent, centre=np.zeros(2), reference_z=0.0,
                               rgb=rgb, surface_z=surface)


def test_render_identity_crop(cfg):
    rec = _checker_recon()
    frame = render(rec, [0.0, 0.0, 5.0], 0.0, cfg.camera)
    assert frame.extent_used == pytest.approx(15.0)
    # manual nearest-neighbour crop-downsample oracle
    res = 64
    u = (np.arange(res) + 0.5) / res * 15.0 - 7.5
    v = 7.5 - (np.arange(res) + 0.5) / res * 15.0
    uu, vv = np.meshgrid(u, v)
    ix = np.clip(((uu + 8.0) / rec.cell).astype(int), 0, 511)
    iy = np.clip(((vv + 8.0) / rec.cell).astype(int), 0, 511)
    expected_grey = to_greyscale(rec.rgb[iy, ix], cfg.camera.luminance).astype(np.float32)
    np.testing.assert_array_equal(frame.grey, expected_grey)
    expected_depth = np.maximum(5.0 - rec.surface_z[iy, ix], 0.0).astype(np.float32)
    np.testing.assert_array_equal(frame.depth, expected_depth)


def test_render_rotation_equivariance(cfg):
    rec = _checker_recon()
    f0 = render(rec, [0.0, 0.0, 3.0], 0.0, cfg.camera)
    f90 = render(rec, [0.0, 0.0, 3.0], np.pi / 2.0, cfg.camera)
    # rotating the camera +90deg equals rotating the frame content -90deg
    np.testing.assert_allclose(f90.grey, np.rot90(f0.grey, k=-1), atol=1e-6)


def test_render_constant_depth_plane(cfg):
    res = 256
    rec = ReconstructionImage(
        extent=16.0, centre=np.zeros(2), reference_z=0.0,
        rgb=np.full((res, res, 3), 0.5, dtype=np.float32),
        surface_z=np.zeros((res, res), dtype=np.float32),
    )
    frame = render(rec, [0.0, 0.0, 4.0], 0.3, cfg.camera)
    np.testing.assert_allclose(frame.depth, 4.0, atol=1e-6)


def test_render_translation_equivariance(cfg):
    # shifting the camera by a whole number of view-pixels shifts the image
    rec = _checker_recon()
    z = 5.0  # extent 15 m -> pixel 15/64
    px = 15.0 / 64.0
    f0 = render(rec, [0.0, 0.0, z], 0.0, cfg.camera)
    f1 = render(rec, [4 * px, 0.0, z], 0.0, cfg.camera)
    np.testing.assert_array_equal(f1.grey[:, :-4], f0.grey[:, 4:])


def test_depth_plus_surface_equals_camera_height(cfg):
    rec = _checker_recon()
    r_rel = np.array([0.3, -0.2, 4.0])
    frame = render(rec, r_rel, 0.1, cfg.camera)
    # unclamped wherever surface < camera_z: here always
    cam_z = rec.reference_z + r_rel[2]
    res = 64
    u = (np.arange(res) + 0.5) / res * frame.extent_used - frame.extent_used / 2
    v = frame.extent_used / 2 - (np.arange(res) + 0.5) / res * frame.extent_used
    uu, vv = np.meshgrid(u, v)
    c, s = np.cos(0.1), np.sin(0.1)
    wx = r_rel[0] + c * uu - s * vv
    wy = r_rel[1] + s * uu + c * vv
    ix = np.clip(((wx + 8.0) / rec.cell).astype(int), 0, 511)
    iy = np.clip(((wy + 8.0) / rec.cell).astype(int), 0, 511)
    np.testing.assert_allclose(frame.depth + rec.surface_z[iy, ix], cam_z, atol=1e-5)


def test_greyscale_endpoints():
    assert to_greyscale((0.0, 0.0, 0.0)) == pytest.approx(0.0)
    assert to_greyscale((1.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert to_greyscale((0.5, 0.5, 0.5)) == pytest.approx(0.5)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1),
       st.floats(0.001, 0.3), st.integers(0, 2))
def test_greyscale_monotone(r, g, b, bump, channel):
    base = np.array([r, g, b])
    up = base.copy()
    up[channel] = min(1.0, up[channel] + bump)
    assert to_greyscale(up) >= to_greyscale(base)


def test_log_colours_near_mid_grey(cfg):
    from grapplesim.scenes import gen_scene

    scene = gen_scene(8, 4, cfg)
    rec = scene.reconstruction
    ground = np.asarray(cfg.camera.ground_color, dtype=np.float32)
    log_mask = np.any(rec.rgb != ground, axis=2)
    assert log_mask.any()
    lum = to_greyscale(rec.rgb[log_mask], cfg.camera.luminance)
    assert np.all(np.abs(lum - cfg.camera.log_grey) <= 3 * cfg.camera.log_grey_sigma + 1e-6)


def test_frozen_reconstruction_invariance(cfg):
    """Rendering after dynamics stepping equals rendering before."""
    from grapplesim.dynamics import World
    from grapplesim.scenes import gen_scene

    scene = gen_scene(21, 3, cfg)
    rec = scene.reconstruction
    pose = ([0.4, -0.2, 3.0], 0.7)
    before = render(rec, *pose, cfg.camera)
    w = World(DynamicsConfig())
    w.set_terrain(scene.terrain)
    for log in scene.logs:
        w.add_log(log.position, log.quat, log.lin_vel, log.ang_vel, cfg.logs)
    w.finalize()
    w.apply_force(w.log_ids[0], [4000.0, 0, 0])  # disturb the pile
    for _ in range(200):
        w.step()
    after = render(rec, *pose, cfg.camera)
    assert np.array_equal(before.grey, after.grey)
    assert np.array_equal(before.depth, after.depth)
    assert before.grey.shape == (64, 64) and before.depth.shape == (64, 64)
    assert np.all(after.depth >= 0.0)
