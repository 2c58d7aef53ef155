"""Equirectangular environment maps and the K-cell sphere partition.

Row 0 of a map is the zenith (+y); column u covers azimuth
phi in [2*pi*u/W, 2*pi*(u+1)/W), with direction (sin t cos p, cos t, sin t sin p).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

FOUR_PI = 4.0 * np.pi

# ring/sector counts for the ablation grid, (sectors, rings)
PARTITION_LAYOUTS = {1: (1, 1), 4: (2, 2), 8: (4, 2), 16: (4, 4), 32: (8, 4), 64: (8, 8)}


@dataclass
class EnvMap:
    radiance: np.ndarray  # H' x W' x 3

    def __post_init__(self):
        self.radiance = np.asarray(self.radiance, dtype=np.float64)
        if self.radiance.ndim != 3 or self.radiance.shape[2] != 3:
            raise ValueError(f"env map must be H x W x 3, got {self.radiance.shape}")
        if not np.all(np.isfinite(self.radiance)) or np.any(self.radiance < 0):
            raise ValueError("env radiance must be finite and nonnegative")

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]


def dir_from_pixel(u, v, width: int, height: int) -> np.ndarray:
    """Unit direction through the center of pixel (u, v); broadcasts."""
    theta = np.pi * (np.asarray(v, dtype=float) + 0.5) / height
    phi = 2 * np.pi * (np.asarray(u, dtype=float) + 0.5) / width
    return np.stack(np.broadcast_arrays(np.sin(theta) * np.cos(phi), np.cos(theta),
                                        np.sin(theta) * np.sin(phi)), axis=-1)


def direction_angles(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Polar angle from +y and azimuth in [0, 2*pi)."""
    d = np.asarray(d, dtype=float)
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0))
    phi = np.mod(np.arctan2(d[..., 2], d[..., 0]), 2 * np.pi)
    return theta, phi


def pixel_from_dir(d: np.ndarray, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    theta, phi = direction_angles(d)
    u = np.minimum(np.floor(phi / (2 * np.pi) * width), width - 1).astype(int)
    v = np.minimum(np.floor(theta / np.pi * height), height - 1).astype(int)
    return u, v


def pixel_solid_angle(v, width: int, height: int):
    v = np.asarray(v, dtype=float)
    return (2 * np.pi / width) * (np.cos(np.pi * v / height) - np.cos(np.pi * (v + 1) / height))


def envmap_directions(width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-center directions (H' x W' x 3) and solid angles (H' x W')."""
    v, u = np.mgrid[0:height, 0:width]
    omega = np.broadcast_to(pixel_solid_angle(np.arange(height), width, height)[:, None],
                            (height, width))
    return dir_from_pixel(u, v, width, height), np.array(omega)


# --- partition -------------------------------------------------------------------

def factor_layout(K: int) -> tuple[int, int]:
    """(sectors, rings) with rings the largest divisor of K not above sqrt(K)."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if K in PARTITION_LAYOUTS:
        return PARTITION_LAYOUTS[K]
    rings = max(b for b in range(1, math.isqrt(K) + 1) if K % b == 0)
    return K // rings, rings


@dataclass(frozen=True)
class BasisPartition:
    """Cells bounded by polar rings and equal azimuth sectors.

    `polar_edges` holds rings+1 polar angles from 0 to pi. Cell index is
    ring * sectors + sector.
    """

    kind: str
    sectors: int
    polar_edges: np.ndarray = field(repr=False)

    @property
    def rings(self) -> int:
        return len(self.polar_edges) - 1

    @property
    def K(self) -> int:
        return self.rings * self.sectors

    @property
    def id(self) -> str:
        return f"{self.kind}-{self.sectors}x{self.rings}"

    @property
    def cos_edges(self) -> np.ndarray:
        return np.cos(self.polar_edges)

    def cell_of_direction(self, d: np.ndarray) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        _, phi = direction_angles(d)
        if self.kind == "bands":
            # bands are uniform in cos(theta); index directly to avoid arccos rounding
            ring = np.floor((1.0 - np.clip(d[..., 1], -1, 1)) / 2.0 * self.rings).astype(int)
        else:
            theta, _ = direction_angles(d)
            ring = np.searchsorted(self.polar_edges, theta, side="right") - 1
        ring = np.clip(ring, 0, self.rings - 1)
        sector = np.minimum(np.floor(phi / (2 * np.pi) * self.sectors).astype(int), self.sectors - 1)
        return ring * self.sectors + sector

    def cell_bounds(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Per cell: (theta_lo, theta_hi, phi_lo, phi_hi)."""
        ring = np.repeat(np.arange(self.rings), self.sectors)
        sector = np.tile(np.arange(self.sectors), self.rings)
        dphi = 2 * np.pi / self.sectors
        return (self.polar_edges[ring], self.polar_edges[ring + 1], sector * dphi, (sector + 1) * dphi)

    @property
    def cell_solid_angle(self) -> np.ndarray:
        t0, t1, p0, p1 = self.cell_bounds()
        return (np.cos(t0) - np.cos(t1)) * (p1 - p0)

    @property
    def cell_centroid(self) -> np.ndarray:
        t0, t1, p0, p1 = self.cell_bounds()
        c0, c1 = np.cos(t0), np.cos(t1)

        def sin_integral(c):  # integral of sqrt(1 - c^2) dc
            return 0.5 * (c * np.sqrt(np.maximum(1 - c * c, 0)) + np.arcsin(c))

        radial = sin_integral(c0) - sin_integral(c1)
        v = np.stack([radial * (np.sin(p1) - np.sin(p0)), 0.5 * (c0 ** 2 - c1 ** 2) * (p1 - p0),
                      radial * (np.cos(p0) - np.cos(p1))], axis=-1)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "sectors": self.sectors, "rings": self.rings}
        if self.kind not in ("bands", "equirect"):
            d["polar_edges"] = self.polar_edges.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BasisPartition":
        kind, sectors, rings = d.get("kind", "bands"), int(d["sectors"]), int(d["rings"])
        if kind == "bands":
            return make_partition_layout(sectors, rings)
        if kind == "equirect":
            return equirect_partition(sectors, rings)
        return cls(kind, sectors, np.asarray(d["polar_edges"], dtype=float))


def make_partition_layout(sectors: int, rings: int) -> BasisPartition:
    edges = np.arccos(np.clip(1.0 - 2.0 * np.arange(rings + 1) / rings, -1, 1))
    return BasisPartition("bands", sectors, edges)


def make_partition(K: int) -> BasisPartition:
    """Equal-area partition: rings uniform in cos(polar angle) times azimuth sectors."""
    return make_partition_layout(*factor_layout(K))


def equirect_partition(width: int, height: int) -> BasisPartition:
    """One cell per pixel of a width x height equirectangular map."""
    return BasisPartition("equirect", width, np.pi * np.arange(height + 1) / height)


def sample_directions(part: BasisPartition, samples_per_cell: int):
    """Quadrature directions, shape (K, M, 3).

    M == 1 uses the cell center (polar and azimuth midpoints). Otherwise a
    rank-1 lattice: stratified in cos(polar angle), with the azimuth
    coordinate rotated by an offset derived from the cell index.
    """
    M = int(samples_per_cell)
    if M < 1:
        raise ValueError("samples_per_cell must be >= 1")
    t0, t1, p0, p1 = part.cell_bounds()
    K = part.K
    if M == 1:
        theta = (0.5 * (t0 + t1))[:, None]
        phi = (0.5 * (p0 + p1))[:, None]
    else:
        j = np.arange(M)
        golden = (np.sqrt(5.0) - 1) / 2
        a = (j + 0.5) / M
        b = np.mod(j * golden + np.mod(np.arange(K)[:, None] * 0.7548776662466927, 1.0), 1.0)
        c0, c1 = np.cos(t0)[:, None], np.cos(t1)[:, None]
        cos_t = c0 + (c1 - c0) * a[None, :]
        theta = np.arccos(np.clip(cos_t, -1, 1))
        phi = p0[:, None] + (p1 - p0)[:, None] * b
    return np.stack([np.sin(theta) * np.cos(phi), np.cos(theta), np.sin(theta) * np.sin(phi)], axis=-1)


# --- descriptor -------------------------------------------------------------------

@dataclass
class IlluminationDescriptor:
    l: np.ndarray  # 3 x K
    partition: BasisPartition

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=np.float64)
        if self.l.shape != (3, self.partition.K):
            raise ValueError(f"descriptor must be 3 x {self.partition.K}, got {self.l.shape}")

    @property
    def K(self) -> int:
        return self.partition.K

    def scaled(self, s: float) -> "IlluminationDescriptor":
        return IlluminationDescriptor(self.l * s, self.partition)

    def to_dict(self) -> dict:
        return {"K": self.K, "partition": self.partition.to_dict(), "l": self.l.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "IlluminationDescriptor":
        part = BasisPartition.from_dict(d["partition"])
        if int(d["K"]) != part.K:
            raise ValueError(f"descriptor K={d['K']} does not match partition with {part.K} cells")
        return cls(np.asarray(d["l"], dtype=float), part)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "IlluminationDescriptor":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def descriptor_from_envmap(env: EnvMap, part: BasisPartition) -> IlluminationDescriptor:
    """Per-cell radiant energy: sum of radiance * pixel solid angle over pixels whose
    center direction falls in the cell."""
    dirs, omega = envmap_directions(env.width, env.height)
    cells = part.cell_of_direction(dirs).ravel()
    weighted = (env.radiance * omega[..., None]).reshape(-1, 3)
    l = np.stack([np.bincount(cells, weights=weighted[:, c], minlength=part.K) for c in range(3)])
    return IlluminationDescriptor(l, part)


def rotate_envmap(env: EnvMap, yaw_deg: float) -> EnvMap:
    """Turn the map so that new(phi) = old(phi + yaw).

    Integer column shifts are exact; fractional shifts interpolate linearly
    with wrap-around.
    """
    shift = (yaw_deg % 360.0) / 360.0 * env.width
    whole = int(np.floor(shift))
    frac = shift - whole
    if abs(frac) < 1e-9 or abs(frac - 1) < 1e-9:
        return EnvMap(np.roll(env.radiance, -int(round(shift)), axis=1))
    a = np.roll(env.radiance, -whole, axis=1)
    b = np.roll(env.radiance, -whole - 1, axis=1)
    return EnvMap((1 - frac) * a + frac * b)


# --- procedural sky ---------------------------------------------------------------

@dataclass(frozen=True)
class SkyParams:
    sun_dir: tuple = (0.0, 1.0, 0.0)
    sun_radiance: tuple = (0.0, 0.0, 0.0)
    sun_angular_radius: float = 0.05
    zenith: tuple = (0.2, 0.3, 0.6)
    horizon: tuple = (0.5, 0.55, 0.6)
    ground: tuple = (0.15, 0.13, 0.1)
    condition: str = "sunny"

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SkyParams":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def sky_energy(params: SkyParams) -> np.ndarray:
    """Closed-form integral of the procedural sky over the sphere, per channel."""
    z, h, g = (np.asarray(x, dtype=float) for x in (params.zenith, params.horizon, params.ground))
    gradient = 2 * np.pi * h + np.pi * (z - h) + 2 * np.pi * g
    disc = 2 * np.pi * (1 - np.cos(params.sun_angular_radius)) * np.asarray(params.sun_radiance, float)
    return gradient + disc


def procedural_sky(params: SkyParams, width: int, height: int, supersample: int = 8) -> EnvMap:
    """Sun disc plus a zenith-to-horizon gradient over a constant ground.

    Each pixel is the solid-angle-weighted average over a supersample grid.
    The disc is rescaled so its integrated energy is exactly radiance times
    the cap solid angle regardless of resolution.
    """
    sun = np.asarray(params.sun_dir, dtype=float)
    if abs(np.linalg.norm(sun) - 1) > 1e-6:
        raise ValueError("sun_dir must be a unit vector")
    n = supersample
    sub = (np.arange(n) + 0.5) / n
    theta = np.pi * (np.arange(height)[:, None] + sub[None, :]) / height       # H x n
    phi = 2 * np.pi * (np.arange(width)[:, None] + sub[None, :]) / width       # W x n
    st, ct = np.sin(theta), np.cos(theta)
    w = st / st.sum(axis=1, keepdims=True)                                       # solid-angle weights
    # gradient depends on theta only
    up = np.clip(ct, 0, None)
    z, h, g = (np.asarray(x, float) for x in (params.zenith, params.horizon, params.ground))
    grad = np.where((ct > 0)[..., None], h + (z - h) * up[..., None], g)        # H x n x 3
    band = np.einsum("hn,hnc->hc", w, grad)
    radiance = np.repeat(band[:, None, :], width, axis=1)

    if np.any(np.asarray(params.sun_radiance) > 0) and params.sun_angular_radius > 0:
        cos_r = np.cos(params.sun_angular_radius)
        dx = st[:, None, :, None] * np.cos(phi)[None, :, None, :]
        dz = st[:, None, :, None] * np.sin(phi)[None, :, None, :]
        dy = ct[:, None, :, None]
        inside = (dx * sun[0] + dy * sun[1] + dz * sun[2]) >= cos_r               # H x W x n x n
        coverage = np.einsum("hwab,ha->hw", inside.astype(float), w) / n
        omega = pixel_solid_angle(np.arange(height), width, height)[:, None]
        covered = float(np.sum(coverage * omega))
        if covered > 0:
            coverage *= 2 * np.pi * (1 - cos_r) / covered
        radiance = radiance + coverage[..., None] * np.asarray(params.sun_radiance, float)
    return EnvMap(radiance)
