"""Synthetic image-on-scalar data with known coefficient fields.

Main effects live on a four-block layout over the first two axes: an empty
block, two smooth spheres, two flat boxes, and a sphere plus a box. Subject
deviations are random cones, the noise variance is a tilted sine wave, and
the three components are rescaled so their empirical variances follow the
requested ratio (error variance = 1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._seeds import derive_seed
from .errors import InvalidArgumentError
from .grid import Dataset, GroundTruth, VoxelGrid, make_grid

NOISE_KINDS = ("gaussian", "chisq3")

# shape parameters, as fractions of the block width along the first two axes
SPHERE_RADIUS = (0.15, 0.40)
BOX_SIDE = (0.20, 0.50)
AMPLITUDE = (0.5, 1.5)


@dataclass(frozen=True)
class SimConfig:
    dims: tuple = (16, 16, 8)
    N: int = 20
    J: int = 3
    noise: str = "gaussian"
    variance_ratio: tuple = (0.2, 0.5, 1.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "variance_ratio", tuple(float(r) for r in self.variance_ratio))
        if len(self.dims) < 2:
            raise InvalidArgumentError("simulation needs at least two axes")
        make_grid(self.dims)
        if self.N < 2:
            raise InvalidArgumentError("N must be >= 2")
        if self.J < 1:
            raise InvalidArgumentError("J must be >= 1")
        if self.noise not in NOISE_KINDS:
            raise InvalidArgumentError(f"noise must be one of {NOISE_KINDS}")
        if len(self.variance_ratio) != 3 or min(self.variance_ratio) <= 0:
            raise InvalidArgumentError("variance_ratio needs three positive entries")


def replication_seed(seed: int, rep: int) -> int:
    """Seed of replication ``rep`` under master ``seed``."""
    return derive_seed(seed, rep)


def _random_amplitude(rng):
    return rng.choice([-1.0, 1.0]) * rng.uniform(*AMPLITUDE)


def _blocks(dims):
    """Index ranges [lo, hi) on the first two axes for the four blocks."""
    h0, h1 = dims[0] // 2, dims[1] // 2
    top, bottom = (0, h0), (h0, dims[0])
    left, right = (0, h1), (h1, dims[1])
    return {"top_left": (top, left), "top_right": (top, right),
            "bottom_left": (bottom, left), "bottom_right": (bottom, right)}


def _in_block(idx, block):
    (a0, b0), (a1, b1) = block
    return (idx[:, 0] >= a0) & (idx[:, 0] < b0) & (idx[:, 1] >= a1) & (idx[:, 1] < b1)


def _block_extents(dims, block):
    (a0, b0), (a1, b1) = block
    return [(a0, b0), (a1, b1)] + [(0, d) for d in dims[2:]]


def _sphere(idx, dims, block, rng):
    """Quadratic bump amplitude * (1 - (r/R)^2)_+, centred on a voxel of the block."""
    ext = _block_extents(dims, block)
    width = min(ext[0][1] - ext[0][0], ext[1][1] - ext[1][0])
    radius = rng.uniform(*SPHERE_RADIUS) * width
    centre = np.array([rng.integers(lo, hi) for lo, hi in ext], dtype=np.float64)
    amp = _random_amplitude(rng)
    r2 = np.sum((idx - centre) ** 2, axis=1)
    return amp * np.maximum(0.0, 1.0 - r2 / radius**2) if radius > 0 else amp * (r2 == 0)


def _box(idx, dims, block, rng):
    """Axis-aligned box of constant value with integer corners inside the block."""
    ext = _block_extents(dims, block)
    width = min(ext[0][1] - ext[0][0], ext[1][1] - ext[1][0])
    amp = _random_amplitude(rng)
    inside = np.ones(idx.shape[0], dtype=bool)
    for k, (lo, hi) in enumerate(ext):
        span = hi - lo
        base = width if k < 2 else span
        side = int(min(span, max(1, round(rng.uniform(*BOX_SIDE) * base))))
        start = lo + int(rng.integers(0, span - side + 1))
        inside &= (idx[:, k] >= start) & (idx[:, k] < start + side)
    return amp * inside


def gen_main_effect(grid: VoxelGrid, rng):
    """One main-effect field and its support mask."""
    if grid.D < 2:
        raise InvalidArgumentError("main effect layout needs at least two axes")
    idx = grid.index_coords().astype(np.float64)
    beta = np.zeros(grid.V)
    blocks = _blocks(grid.dims)
    pieces = {"top_right": (_sphere, _sphere), "bottom_left": (_box, _box),
              "bottom_right": (_sphere, _box)}
    for name, makers in pieces.items():
        block = blocks[name]
        mask = _in_block(idx, block)
        if not mask.any():
            continue
        for make in makers:
            # overlapping pieces add up; nothing leaks outside the block
            beta += make(idx, grid.dims, block, rng) * mask
    return beta, beta != 0


def gen_individual_deviation(grid: VoxelGrid, rng):
    """A cone peaking at a random voxel, falling to 0 at half the grid diagonal."""
    coords = grid.coords
    centre = coords[rng.integers(grid.V)]
    value = _random_amplitude(rng)
    rho = 0.5 * np.linalg.norm(coords.max(axis=0) - coords.min(axis=0))
    if rho == 0:
        return np.full(grid.V, value)
    dist = np.linalg.norm(coords - centre, axis=1)
    return value * np.maximum(0.0, 1.0 - dist / rho)


def gen_noise_variance(grid: VoxelGrid, rng):
    """a + b sin(w u's + phase) with a > b > 0 and a random unit direction u."""
    u = rng.normal(size=grid.D)
    u /= np.linalg.norm(u)
    w = rng.uniform(np.pi, 3 * np.pi)
    phase = rng.uniform(0, 2 * np.pi)
    a = rng.uniform(0.75, 1.25)
    b = rng.uniform(0.25, 0.5 * a)
    return a + b * np.sin(w * (grid.coords @ u) + phase)


def standard_noise(kind, size, rng):
    """Mean-zero, unit-variance draws: Gaussian or (chi^2_3 - 3)/sqrt(6)."""
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "chisq3":
        return (rng.chisquare(3, size) - 3.0) / np.sqrt(6.0)
    raise InvalidArgumentError(f"unknown noise kind {kind!r}")


def generate(cfg: SimConfig):
    """Simulate ``(Dataset, GroundTruth)``; the dataset carries the truth as well."""
    rng = np.random.default_rng(cfg.seed)
    grid = make_grid(cfg.dims)
    X = rng.standard_normal((cfg.N, cfg.J))
    beta = np.empty((cfg.J, grid.V))
    for j in range(cfg.J):
        beta[j] = gen_main_effect(grid, rng)[0]
    alpha = np.stack([gen_individual_deviation(grid, rng) for _ in range(cfg.N)])
    sigma2 = gen_noise_variance(grid, rng)
    noise = np.sqrt(sigma2) * standard_noise(cfg.noise, (cfg.N, grid.V), rng)

    r_main, r_dev, r_err = cfg.variance_ratio
    err_scale = np.sqrt(1.0 / np.var(noise))
    noise *= err_scale
    sigma2 = sigma2 * err_scale**2

    signal = X @ beta
    if np.var(signal) > 0:
        beta *= np.sqrt(r_main / r_err / np.var(signal))
    if np.var(alpha) > 0:
        alpha *= np.sqrt(r_dev / r_err / np.var(alpha))
    Y = X @ beta + alpha + noise
    truth = GroundTruth(beta, alpha, sigma2, beta != 0, noise)
    return Dataset(grid, X, Y, truth), truth


def component_variances(X, truth: GroundTruth):
    """Empirical variances over (i, v) of X beta, alpha and the noise."""
    return (float(np.var(X @ truth.beta)), float(np.var(truth.alpha)),
            float(np.var(truth.noise)))
