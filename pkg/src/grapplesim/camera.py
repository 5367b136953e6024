"""Virtual RGB-D camera over a frozen top-down reconstruction.

A settled scene is captured once into colour + surface-elevation rasters.
During episodes, 64x64 greyscale/depth frames are resampled from those
rasters for any camera pose; the underlying data never updates, so nothing
moved by the grapple is re-observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import CameraConfig
from .maths import quat_to_matrix

_GREY_EPS = 1e-12


@dataclass(frozen=True)
class ReconstructionImage:
    """Immutable top-down orthographic capture of a settled scene."""

    extent: float            # captured square side, m
    centre: np.ndarray       # (2,) world xy of the capture centre
    reference_z: float       # z of the capture reference (target height), m
    rgb: np.ndarray          # (res, res, 3) float32 in [0, 1]
    surface_z: np.ndarray    # (res, res) float32 world elevation, m

    @property
    def resolution(self) -> int:
        return self.rgb.shape[0]

    @property
    def cell(self) -> float:
        return self.extent / self.resolution

    def grey_raster(self, weights=(0.299, 0.587, 0.114)) -> np.ndarray:
        """Luminance raster, computed once and cached (frozen data)."""
        cached = getattr(self, "_grey_cache", None)
        if cached is None:
            cached = to_greyscale(self.rgb, weights).astype(np.float32)
            object.__setattr__(self, "_grey_cache", cached)
        return cached


@dataclass(frozen=True)
class CameraFrame:
    grey: np.ndarray         # (64, 64) float32 in [0, 1]
    depth: np.ndarray        # (64, 64) float32, m below the camera plane
    pose_used: tuple         # (r_rel: (3,), phi_rel: float)
    extent_used: float


def to_greyscale(rgb, weights=(0.299, 0.587, 0.114)) -> np.ndarray:
    """Luminance collapse of RGB in [0,1]; monotone in every channel."""
    rgb = np.asarray(rgb, dtype=np.float64)
    w = np.asarray(weights)
    return rgb @ w


def view_extent(z_rel: float, cfg: CameraConfig | None = None) -> float:
    """Camera side length vs height: linear between the near and far sizes,
    clamped outside the calibration interval."""
    cfg = cfg or CameraConfig()
    t = (z_rel - cfg.near_z) / (cfg.far_z - cfg.near_z)
    return float(cfg.s_near + (cfg.s_far - cfg.s_near) * np.clip(t, 0.0, 1.0))


def _ray_cast_box_tops(xs, ys, centre, quat, half):
    """World z of the top surface of an oriented box at grid points (vectorized
    vertical ray cast); -inf where the ray misses."""
    R = quat_to_matrix(quat)
    n = xs.shape[0]
    o_world = np.stack([xs - centre[0], ys - centre[1], np.full(n, 1000.0 - centre[2])], axis=1)
    o = o_world @ R  # world->local for row vectors
    d = R.T @ np.array([0.0, 0.0, -1.0])
    t_enter = np.full(n, -np.inf)
    t_exit = np.full(n, np.inf)
    ok = np.ones(n, dtype=bool)
    for k in range(3):
        if abs(d[k]) < 1e-12:
            ok &= np.abs(o[:, k]) <= half[k]
        else:
            t1 = (-half[k] - o[:, k]) / d[k]
            t2 = (half[k] - o[:, k]) / d[k]
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            t_enter = np.maximum(t_enter, lo)
            t_exit = np.minimum(t_exit, hi)
    ok &= t_enter <= t_exit
    z = np.where(ok, 1000.0 - t_enter, -np.inf)
    return z


def capture(scene, cfg: CameraConfig | None = None) -> ReconstructionImage:
    """Rasterize the settled scene into the frozen reconstruction."""
    from .config import LogConfig
    from .maths import quat_from_axis_angle, quat_mul

    cfg = cfg or CameraConfig()
    res = cfg.capture_resolution
    centre = scene.combined_com()[:2]
    cell = cfg.capture_extent / res
    # cell-centre world coordinates
    axis = (np.arange(res) + 0.5) * cell - cfg.capture_extent / 2.0
    gx, gy = np.meshgrid(axis + centre[0], axis + centre[1])

    surface = scene.terrain.height_at(gx.ravel(), gy.ravel()).reshape(res, res)
    rgb = np.empty((res, res, 3), dtype=np.float32)
    rgb[:] = np.asarray(cfg.ground_color, dtype=np.float32)

    log_cfg = LogConfig()
    colors = _log_colors(scene, cfg)
    half = np.array([log_cfg.length / 2.0, log_cfg.thickness / 2.0, log_cfg.thickness / 2.0])
    q45 = quat_from_axis_angle((1.0, 0.0, 0.0), np.pi / 4.0)
    for li, log in enumerate(scene.logs):
        for sub_q in (log.quat, quat_mul(log.quat, q45)):
            # only evaluate cells inside the box footprint AABB
            R = quat_to_matrix(sub_q)
            r_xy = np.abs(R[:2]) @ half
            lo = np.maximum(((log.position[:2] - r_xy - centre + cfg.capture_extent / 2.0) / cell).astype(int) - 1, 0)
            hi = np.minimum(((log.position[:2] + r_xy - centre + cfg.capture_extent / 2.0) / cell).astype(int) + 2, res)
            if np.any(lo >= hi):
                continue
            sl = (slice(lo[1], hi[1]), slice(lo[0], hi[0]))
            xs = gx[sl].ravel()
            ys = gy[sl].ravel()
            tops = _ray_cast_box_tops(xs, ys, log.position, sub_q, half).reshape(
                hi[1] - lo[1], hi[0] - lo[0]
            )
            region = surface[sl]
            better = tops > region
            region[better] = tops[better].astype(np.float32)
            surface[sl] = region
            rgb_region = rgb[sl]
            rgb_region[better] = colors[li]
            rgb[sl] = rgb_region

    return ReconstructionImage(
        extent=cfg.capture_extent,
        centre=np.asarray(centre, dtype=np.float64).copy(),
        reference_z=float(scene.target.position[2]),
        rgb=rgb.astype(np.float32),
        surface_z=surface.astype(np.float32),
    )


def _log_colors(scene, cfg: CameraConfig) -> np.ndarray:
    """Per-log RGB near mid-grey with small Gaussian channel variation,
    deterministic in the scene seed."""
    rng = np.random.default_rng(np.random.SeedSequence([0xC0106, scene.seed & 0xFFFFFFFF]))
    cols = cfg.log_grey + rng.normal(0.0, cfg.log_grey_sigma, size=(len(scene.logs), 3))
    return np.clip(cols, 0.0, 1.0).astype(np.float32)


_GRID_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _unit_grid(res: int):
    """Cached unit pixel grid: row 0 is +y_cam, column 0 is -x_cam."""
    got = _GRID_CACHE.get(res)
    if got is None:
        u = (np.arange(res) + 0.5) / res - 0.5
        uu, vv = np.meshgrid(u, -u)
        got = (np.ascontiguousarray(uu), np.ascontiguousarray(vv))
        _GRID_CACHE[res] = got
    return got


def render(
    recon: ReconstructionImage,
    r_rel,
    phi_rel: float,
    cfg: CameraConfig | None = None,
) -> CameraFrame:
    """Sample a 64x64 frame for a camera at r_rel (relative to the capture
    centre/reference plane), yawed by phi_rel.

    Nearest-neighbour sampling; outside the capture the rasters clamp to
    their border, which is plain terrain far from the pile.
    """
    cfg = cfg or CameraConfig()
    r_rel = np.asarray(r_rel, dtype=np.float64)
    res = cfg.resolution
    ext = view_extent(r_rel[2], cfg)
    camera_z = recon.reference_z + r_rel[2]

    uu, vv = _unit_grid(res)
    c, s = np.cos(phi_rel) * ext, np.sin(phi_rel) * ext
    half = recon.extent / 2.0
    inv_cell = 1.0 / recon.cell
    # grid indices of the sampled world points, clamped to the raster
    fx = (c * uu - s * vv + (r_rel[0] + half)) * inv_cell
    fy = (s * uu + c * vv + (r_rel[1] + half)) * inv_cell
    np.clip(fx, 0, recon.resolution - 1, out=fx)
    np.clip(fy, 0, recon.resolution - 1, out=fy)
    ix = fx.astype(np.int64)
    iy = fy.astype(np.int64)

    grey = recon.grey_raster(cfg.luminance)[iy, ix]
    depth = np.maximum(camera_z - recon.surface_z[iy, ix], 0.0).astype(np.float32)
    return CameraFrame(
        grey=grey,
        depth=depth,
        pose_used=(r_rel.copy(), float(phi_rel)),
        extent_used=ext,
    )
