"""Procedural terrain heightfields.

Classic gradient-lattice noise with a seeded permutation table, summed over a
few octaves and linearly rescaled so the elevation span of each generated
patch lands on a per-seed target drawn between the population bounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TerrainConfig


@dataclass(frozen=True)
class Heightfield:
    """Rasterized terrain elevation on a regular grid.

    ``elevations[i, j]`` is the elevation at world position
    ``(origin[0] + j * cell_size, origin[1] + i * cell_size)``.
    Queries outside the grid clamp to the border (flat extension).
    """

    origin: np.ndarray          # (2,) world position of node [0, 0], m
    cell_size: float            # m per cell
    elevations: np.ndarray      # (ny, nx) float32, m
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.shape

    @property
    def extent(self) -> tuple[float, float]:
        ny, nx = self.elevations.shape
        return ((nx - 1) * self.cell_size, (ny - 1) * self.cell_size)

    @property
    def span(self) -> float:
        return float(self.elevations.max() - self.elevations.min())

    def height_at(self, x, y):
        """Surface elevation at world (x, y), vectorized.

        Uses the same per-cell triangle split as the contact pipeline so the
        raster, the camera, and the physics all see one surface.
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ny, nx = self.elevations.shape
        fx = np.clip((x - self.origin[0]) / self.cell_size, 0.0, nx - 1 - 1e-9)
        fy = np.clip((y - self.origin[1]) / self.cell_size, 0.0, ny - 1 - 1e-9)
        j = fx.astype(np.int64)
        i = fy.astype(np.int64)
        u = fx - j
        v = fy - i
        z00 = self.elevations[i, j].astype(np.float64)
        z10 = self.elevations[i, j + 1].astype(np.float64)
        z01 = self.elevations[i + 1, j].astype(np.float64)
        z11 = self.elevations[i + 1, j + 1].astype(np.float64)
        # lower-left triangle for u+v<=1, upper-right otherwise
        lower = (u + v) <= 1.0
        z_low = z00 + u * (z10 - z00) + v * (z01 - z00)
        z_up = z11 + (1.0 - u) * (z01 - z11) + (1.0 - v) * (z10 - z11)
        return np.where(lower, z_low, z_up)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def _lattice_noise(px: np.ndarray, py: np.ndarray, perm: np.ndarray) -> np.ndarray:
    """2D gradient noise at lattice-space coordinates, in roughly [-1, 1]."""
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    xf = px - x0
    yf = py - y0
    x0 &= 255
    y0 &= 255

    def grad(hash_val, dx, dy):
        h = hash_val & 7
        u = np.where(h < 4, dx, dy)
        v = np.where(h < 4, dy, dx)
        return np.where(h & 1, -u, u) + 2.0 * np.where(h & 2, -v, v)

    aa = perm[(perm[x0] + y0) & 255]
    ba = perm[(perm[(x0 + 1) & 255] + y0) & 255]
    ab = perm[(perm[x0] + y0 + 1) & 255]
    bb = perm[(perm[(x0 + 1) & 255] + y0 + 1) & 255]

    u = _fade(xf)
    v = _fade(yf)
    n00 = grad(aa, xf, yf)
    n10 = grad(ba, xf - 1.0, yf)
    n01 = grad(ab, xf, yf - 1.0)
    n11 = grad(bb, xf - 1.0, yf - 1.0)
    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return (nx0 + v * (nx1 - nx0)) / 1.5


def gen_terrain(seed: int, params: TerrainConfig | None = None) -> Heightfield:
    """Generate a seeded rough patch whose elevation span is rescaled onto a
    per-seed target inside [span_min, span_max]."""
    params = params or TerrainConfig()
    rng = np.random.default_rng(np.random.SeedSequence([0x7E55A1, seed & 0xFFFFFFFF]))
    perm = rng.permutation(256).astype(np.int64)

    n = int(round(params.padded_size / params.cell_size)) + 1
    half = params.padded_size / 2.0
    coords = np.linspace(-half, half, n)
    gx, gy = np.meshgrid(coords, coords)

    # random phase offset decorrelates seeds beyond the permutation shuffle
    off = rng.uniform(0.0, 64.0, size=2)
    z = np.zeros_like(gx)
    freq = 1.0 / params.base_wavelength
    amp = 1.0
    total_amp = 0.0
    for _ in range(params.octaves):
        z += amp * _lattice_noise(gx * freq + off[0], gy * freq + off[1], perm)
        total_amp += amp
        freq *= params.lacunarity
        amp *= params.persistence
    z /= total_amp

    span_target = params.span_min + (params.span_max - params.span_min) * rng.beta(
        params.span_beta_a, params.span_beta_b
    )
    raw_span = z.max() - z.min()
    z = z * (span_target / raw_span)
    z -= z.mean()

    return Heightfield(
        origin=np.array([-half, -half]),
        cell_size=params.cell_size,
        elevations=z.astype(np.float32),
        seed=seed,
    )
