"""Seeded synthetic RPCA instances.

Every generator is a pure function of its spec: the low-rank and sparse
parts draw from independent PCG64 streams keyed on ``(seed, stream_id)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .model import RpcaProblem

DEFAULT_LAMBDA = 1e-6

_LOW_RANK_STREAM = 0
_SPARSE_STREAM = 1
_PHOTO_STREAM = 2


@dataclass(frozen=True)
class SynthSpec:
    m: int
    n: int
    rank: int
    rho: float
    corruption_range: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.rank <= self.m <= self.n:
            raise ValueError(f"need 1 <= rank <= m <= n, got rank={self.rank}, m={self.m}, n={self.n}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        if self.corruption_range < 0:
            raise ValueError("corruption_range must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def gen_low_rank(spec: SynthSpec) -> np.ndarray:
    """Gaussian m x n draw with all but the ``rank`` largest singular values zeroed."""
    G = _rng(spec.seed, _LOW_RANK_STREAM).standard_normal((spec.m, spec.n))
    if spec.rank == spec.m:
        return G
    U, s, Vt = np.linalg.svd(G, full_matrices=False)
    r = spec.rank
    return (U[:, :r] * s[:r]) @ Vt[:r]


def gen_sparse(spec: SynthSpec) -> np.ndarray:
    rng = _rng(spec.seed, _SPARSE_STREAM)
    support = rng.random((spec.m, spec.n)) < spec.rho
    values = rng.uniform(-spec.corruption_range, spec.corruption_range, (spec.m, spec.n))
    return np.where(support, values, 0.0)


def gen_problem(spec: SynthSpec, lam: float = DEFAULT_LAMBDA):
    """Return ``(problem, X, S)`` with ``Y = X + S``."""
    X = gen_low_rank(spec)
    S = gen_sparse(spec)
    return RpcaProblem(X + S, lam), X, S


@dataclass(frozen=True)
class PhotoSpec:
    num_lights: int = 20
    num_pixels: int = 5000
    corruption_prob: float = 0.05
    seed: int = 0
    max_light_angle: float = 45.0
    max_normal_angle: float = 60.0
    specular_range: tuple = (0.5, 2.0)
    max_shadow_fraction: float = 0.1

    def __post_init__(self):
        if self.num_lights < 3:
            raise ValueError("at least three lights are needed to determine normals")
        if self.num_pixels < 1:
            raise ValueError("num_pixels must be positive")
        if not 0.0 <= self.corruption_prob <= 1.0:
            raise ValueError("corruption_prob must lie in [0, 1]")


@dataclass(frozen=True)
class PhotometricInstance:
    problem: RpcaProblem
    X: np.ndarray
    S: np.ndarray
    lights: np.ndarray   # 3 x m, unit columns
    normals: np.ndarray  # 3 x n, unit columns
    albedo: np.ndarray   # n
    shadow: np.ndarray   # m x n boolean, attached shadows
    specular: np.ndarray  # m x n boolean
    kept: np.ndarray     # indices of generated pixels that survived the shadow filter


def _cap_directions(rng, count, max_angle_deg):
    # uniform on the spherical cap around +z
    cos_max = np.cos(np.deg2rad(max_angle_deg))
    cz = rng.uniform(cos_max, 1.0, count)
    phi = rng.uniform(0.0, 2 * np.pi, count)
    sz = np.sqrt(1.0 - cz ** 2)
    return np.vstack([sz * np.cos(phi), sz * np.sin(phi), cz])


def _patch_normals(rng, count, max_angle_deg):
    # normals of a unit sphere seen orthographically: pixel (u, v) in a disk
    radius = np.sin(np.deg2rad(max_angle_deg))
    r = radius * np.sqrt(rng.random(count))
    phi = rng.uniform(0.0, 2 * np.pi, count)
    u, v = r * np.cos(phi), r * np.sin(phi)
    return np.vstack([u, v, np.sqrt(1.0 - u ** 2 - v ** 2)])


def gen_photometric(spec: PhotoSpec, lights: Optional[np.ndarray] = None,
                    lam: float = DEFAULT_LAMBDA) -> PhotometricInstance:
    """Lambertian stack ``X = L' N diag(albedo)`` plus sparse non-Lambertian effects.

    Attached shadows (``L' N < 0``) are clamped to zero intensity in ``Y``, so the
    shadow part of ``S`` is ``-X`` there.  Specular spikes hit a further
    ``corruption_prob`` fraction of the lit entries.  Pixels shadowed under more
    than ``max_shadow_fraction`` of the lights are discarded, so the returned
    problem can have fewer than ``num_pixels`` columns.
    """
    rng = _rng(spec.seed, _PHOTO_STREAM)
    if lights is None:
        L = _cap_directions(rng, spec.num_lights, spec.max_light_angle)
    else:
        L = np.asarray(lights, dtype=float)
        if L.shape != (3, spec.num_lights):
            raise ValueError(f"lights must have shape (3, {spec.num_lights})")
        L = L / np.linalg.norm(L, axis=0)
    N = _patch_normals(rng, spec.num_pixels, spec.max_normal_angle)
    albedo = rng.uniform(0.5, 1.0, spec.num_pixels)

    shading = L.T @ N
    shadow = shading < 0
    kept = np.flatnonzero(shadow.mean(axis=0) <= spec.max_shadow_fraction)
    N, albedo, shading, shadow = N[:, kept], albedo[kept], shading[:, kept], shadow[:, kept]

    X = shading * albedo[None, :]
    lo, hi = spec.specular_range
    specular = (rng.random(X.shape) < spec.corruption_prob) & ~shadow
    spikes = rng.uniform(lo, hi, X.shape)
    S = np.where(shadow, -X, 0.0) + np.where(specular, spikes, 0.0)
    Y = X + S
    return PhotometricInstance(RpcaProblem(Y, lam), X, S, L, N, albedo, shadow, specular, kept)
