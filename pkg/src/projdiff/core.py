"""Shared numeric types: state vectors, noise ladders and seeded Gaussian streams."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid construction parameters."""


class DimensionError(ValueError):
    """Raised when array dimensions do not agree."""


class NumericError(FloatingPointError):
    """Raised when a computation produces non-finite values."""


SHAPE_TAGS = ("flat", "grid", "path")


@dataclass(frozen=True)
class StateVector:
    """A flat float64 sample with enough metadata to restore its layout.

    ``shape_tag`` is one of ``"flat"``, ``"grid"`` (``shape=(frames, h, w)``)
    or ``"path"`` (``shape=(n_points, 2)``).
    """

    data: np.ndarray
    shape_tag: str = "flat"
    shape: Tuple[int, ...] = ()

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).ravel()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        if self.shape_tag not in SHAPE_TAGS:
            raise ConfigurationError(f"unknown shape_tag {self.shape_tag!r}")
        shape = tuple(int(s) for s in self.shape) or (data.size,)
        if int(np.prod(shape)) != data.size:
            raise DimensionError(f"shape {shape} does not match dim {data.size}")
        if self.shape_tag == "path" and (len(shape) != 2 or shape[1] != 2):
            raise DimensionError("path shape must be (n_points, 2)")
        if self.shape_tag == "grid" and len(shape) != 3:
            raise DimensionError("grid shape must be (frames, h, w)")
        object.__setattr__(self, "shape", shape)
        if not np.all(np.isfinite(data)):
            raise NumericError("state vector contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.data.size

    def reshaped(self) -> np.ndarray:
        return self.data.reshape(self.shape)


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-exploding noise ladder ``sigma_1 < ... < sigma_T``.

    ``gammas[t-1] = sigma_t**2 / (2 * sigma_T**2)`` is the Langevin step size
    at level ``t``; the optional VP fields are carried for reference only.
    """

    sigmas: np.ndarray
    gammas: np.ndarray = field(init=False)
    vp_betas: Optional[np.ndarray] = None
    vp_alpha_bars: Optional[np.ndarray] = field(init=False, default=None)

    def __post_init__(self):
        sigmas = np.asarray(self.sigmas, dtype=np.float64).copy()
        if sigmas.ndim != 1 or sigmas.size < 2:
            raise ConfigurationError("need at least two noise levels")
        if not np.all(sigmas > 0) or not np.all(np.diff(sigmas) > 0):
            raise ConfigurationError("sigmas must be positive and strictly increasing")
        gammas = sigmas**2 / (2.0 * sigmas[-1] ** 2)
        gammas[-1] = 0.5
        sigmas.setflags(write=False)
        gammas.setflags(write=False)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "gammas", gammas)
        if self.vp_betas is not None:
            betas = np.asarray(self.vp_betas, dtype=np.float64).copy()
            if betas.shape != sigmas.shape or np.any(betas <= 0) or np.any(betas >= 1):
                raise ConfigurationError("vp_betas must lie in (0, 1), one per level")
            alpha_bars = np.cumprod(1.0 - betas)
            betas.setflags(write=False)
            alpha_bars.setflags(write=False)
            object.__setattr__(self, "vp_betas", betas)
            object.__setattr__(self, "vp_alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return self.sigmas.size

    def sigma(self, t: int) -> float:
        """Noise level at 1-based level ``t``."""
        return float(self.sigmas[t - 1])

    def gamma(self, t: int) -> float:
        return float(self.gammas[t - 1])


def make_geometric_schedule(sigma_min: float, sigma_max: float, T: int,
                            vp_betas=None) -> NoiseSchedule:
    """Geometric ladder from ``sigma_min`` (level 1) to ``sigma_max`` (level T)."""
    if not (0 < sigma_min < sigma_max) or not np.isfinite(sigma_max):
        raise ConfigurationError(
            f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if int(T) != T or T < 2:
        raise ConfigurationError(f"T must be an integer >= 2, got {T}")
    sigmas = np.geomspace(sigma_min, sigma_max, int(T))
    sigmas[0], sigmas[-1] = sigma_min, sigma_max
    return NoiseSchedule(sigmas, vp_betas=vp_betas)


def linear_vp_betas(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> np.ndarray:
    """The usual linear beta ladder, kept for documentation tests."""
    return np.linspace(beta_start, beta_end, T)


class RngStream:
    """Reproducible Gaussian stream keyed by ``(seed, stream_id)``.

    Distinct stream ids give statistically independent streams from one seed.
    A stream has a single owner; share work across threads with separate ids.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed & (2**64 - 1), spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def normal(self, size) -> np.ndarray:
        return self.generator.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def spawn(self, stream_id: int) -> "RngStream":
        """A sibling stream with the same seed."""
        return RngStream(self.seed, stream_id)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_noise(rng: RngStream, dim: int) -> np.ndarray:
    """``dim`` i.i.d. standard normal draws; advances ``rng``."""
    if dim < 1:
        raise ConfigurationError("dim must be >= 1")
    return rng.normal(int(dim))


def as_batch(x, dim: Optional[int] = None) -> Tuple[np.ndarray, bool]:
    """Promote ``x`` to a 2-D float64 batch; report whether it was a single vector."""
    if isinstance(x, StateVector):
        x = x.data
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    elif arr.ndim != 2:
        raise DimensionError(f"expected a vector or a batch of vectors, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise DimensionError(f"expected dimension {dim}, got {arr.shape[1]}")
    return arr, single
