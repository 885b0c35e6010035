"""Synthetic dataset generators for the physics, trajectory and materials experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from typing import List, Tuple

import numpy as np
import yaml
from scipy.ndimage import gaussian_filter

from ..core import ConfigurationError, RngStream
from ..metrics import path_length, porosity_measure
from ..projections import (ObjectPlacementConstraint, TrajectoryConstraint,
                           disc_mask)

logger = logging.getLogger(__name__)

EARTH_G = 9.81
MOON_G = 1.62


class GenerationError(RuntimeError):
    pass


# ------------------------------------------------------------------ physics

def compute_positions(p0: float, a: float, n_frames: int) -> List[float]:
    """Positions under constant acceleration from rest.

    Uses the recurrence ``v_t = v_{t-1} + a``, ``p_t = p_{t-1} + v_{t-1} + a / 2``
    with ``v_0 = 0``, which gives ``p_t = p0 + a t^2 / 2``.
    """
    if n_frames < 1:
        raise ConfigurationError("n_frames must be >= 1")
    pos, p, v = [float(p0)], float(p0), 0.0
    for _ in range(1, n_frames):
        p = p + v + a / 2.0
        v = v + a
        pos.append(p)
    return pos


@dataclass(frozen=True)
class BallMotionSpec:
    frame_size: int = 16
    n_frames: int = 6
    gravity: float = None
    n_samples: int = 1000
    train_fraction: float = 0.9
    object_radius: float = None

    def __post_init__(self):
        if self.frame_size < 4 or self.n_frames < 1:
            raise ConfigurationError("frame_size must be >= 4 and n_frames >= 1")
        if self.gravity is None:
            # 2 px/frame^2 at 64 px, scaled with the frame
            object.__setattr__(self, "gravity", 2.0 * self.frame_size / 64.0)
        if self.object_radius is None:
            object.__setattr__(self, "object_radius", max(1.0, 3.0 * self.frame_size / 64.0))

    @property
    def moon_gravity(self) -> float:
        return self.gravity * MOON_G / EARTH_G

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.n_frames, self.frame_size, self.frame_size)


def ball_targets(spec: BallMotionSpec, start, gravity: float) -> np.ndarray:
    """Integer ``(row, col)`` centres per frame for a drop from ``start``."""
    rows = np.floor(np.asarray(compute_positions(start[0], gravity, spec.n_frames)) + 0.5)
    return np.stack([rows, np.full(spec.n_frames, np.floor(start[1] + 0.5))], axis=1).astype(int)


def ball_constraint(spec: BallMotionSpec, start, gravity: float) -> ObjectPlacementConstraint:
    return ObjectPlacementConstraint(spec.shape, ball_targets(spec, start, gravity),
                                     mask=disc_mask(spec.object_radius))


def render_ball(spec: BallMotionSpec, targets: np.ndarray) -> np.ndarray:
    frames = np.ones(spec.shape)
    offsets = disc_mask(spec.object_radius)
    for f, (r, c) in enumerate(targets):
        frames[f, r + offsets[:, 0], c + offsets[:, 1]] = -1.0
    return frames


def gen_ball_dataset(spec: BallMotionSpec, rng: RngStream):
    """Frame stacks of a disc dropped from rest, split into train and test.

    Returns ``(train, test, starts)`` where the stacks are flattened to
    ``(n, frames * h * w)`` and ``starts`` holds the ``(row, col)`` start of
    every sample (train first). Starts whose drop leaves the frame are
    resampled.
    """
    r = int(np.ceil(spec.object_radius))
    lo, hi = r, spec.frame_size - 1 - r
    fall = compute_positions(0.0, spec.gravity, spec.n_frames)[-1]
    if hi - lo < fall:
        raise ConfigurationError("frame too small for the drop")
    starts = np.empty((spec.n_samples, 2))
    for k in range(spec.n_samples):
        while True:
            s = rng.uniform(0.0, spec.frame_size - 1, size=2)
            t = ball_targets(spec, s, spec.gravity)
            if t.min() >= lo and t.max() <= hi:
                break
        starts[k] = s
    X = np.stack([render_ball(spec, ball_targets(spec, s, spec.gravity)).ravel() for s in starts])
    n_train = int(round(spec.train_fraction * spec.n_samples))
    return X[:n_train], X[n_train:], starts


# --------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class TopographySpec:
    map_id: int
    obstacles: Tuple[Tuple[float, float, float], ...]
    inference_obstacles: Tuple[Tuple[float, float, float], ...] = ()
    start: Tuple[float, float] = (0.0, 0.5)
    goal: Tuple[float, float] = (2.0, 0.5)
    endpoint_jitter: float = 0.1
    n_points: int = 16
    margin: float = 0.02

    def __post_init__(self):
        for name in ("obstacles", "inference_obstacles"):
            circles = tuple(tuple(float(v) for v in c) for c in getattr(self, name))
            if any(len(c) != 3 or c[2] <= 0 for c in circles):
                raise ConfigurationError(f"{name} must be (x, y, radius) triples")
            object.__setattr__(self, name, circles)

    def circles(self, inference: bool = False):
        circles = self.obstacles + (self.inference_obstacles if inference else ())
        arr = np.array(circles, dtype=np.float64).reshape(-1, 3)
        return arr[:, :2], arr[:, 2]

    def constraint(self, start, goal, inference: bool = False, **kwargs) -> TrajectoryConstraint:
        centers, radii = self.circles(inference)
        return TrajectoryConstraint(centers, radii, start, goal, n_points=self.n_points,
                                    margin=self.margin, **kwargs)

    def sample_endpoints(self, n: int, rng: RngStream, inference: bool = True):
        """Jittered start/goal pairs outside every obstacle (``(n, 2)`` each)."""
        centers, radii = self.circles(inference)
        out = []
        for base in (self.start, self.goal):
            pts = np.empty((n, 2))
            for k in range(n):
                for _ in range(1000):
                    p = np.asarray(base) + rng.uniform(-1.0, 1.0, size=2) * self.endpoint_jitter
                    if np.all(np.linalg.norm(centers - p, axis=1) > radii + self.margin):
                        break
                else:
                    raise GenerationError(f"no free endpoint near {base}")
                pts[k] = p
            out.append(pts)
        return out[0], out[1]


def load_topography(map_id: int, **overrides) -> TopographySpec:
    """Load a shipped map (``1`` or ``2``) from the package data files."""
    if map_id not in (1, 2):
        raise ConfigurationError("map_id must be 1 or 2")
    text = resources.files(__package__).joinpath(f"maps/topography_{map_id}.yaml").read_text()
    data = yaml.safe_load(text)
    data.update(overrides)
    data["obstacles"] = tuple(map(tuple, data["obstacles"]))
    data["inference_obstacles"] = tuple(map(tuple, data.get("inference_obstacles", ())))
    for k in ("start", "goal"):
        data[k] = tuple(data[k])
    return TopographySpec(**data)


def _straight(start, goal, n_points):
    s = np.linspace(0.0, 1.0, n_points)[None, :, None]
    return (start[:, None, :] * (1 - s) + goal[:, None, :] * s).reshape(len(start), -1)


def _length_grad(Y: np.ndarray, n_points: int) -> np.ndarray:
    P = Y.reshape(len(Y), n_points, 2)
    d = np.diff(P, axis=1)
    u = d / np.maximum(np.linalg.norm(d, axis=2, keepdims=True), 1e-12)
    g = np.zeros_like(P)
    g[:, :-1] -= u
    g[:, 1:] += u
    g[:, 0] = g[:, -1] = 0.0
    return g.reshape(Y.shape)


def shorten_paths(Y: np.ndarray, constraint: TrajectoryConstraint, n_iter: int = 30,
                  step: float = 0.02) -> np.ndarray:
    """Projected descent on path length; a step is kept only if it stays feasible and shorter."""
    n = constraint.n_points
    lengths = np.array([path_length(y) for y in Y])
    for _ in range(n_iter):
        cand, viol = constraint.project_with_status(Y - step * _length_grad(Y, n))
        new_len = np.array([path_length(y) for y in cand])
        ok = (viol <= constraint.tol_proj) & constraint.is_feasible(cand, 1e-6) & (new_len < lengths)
        if not np.any(ok):
            break
        Y[ok], lengths[ok] = cand[ok], new_len[ok]
    return Y


def gen_trajectory_dataset(spec: TopographySpec, n: int, rng: RngStream):
    """Short feasible paths (training obstacles only) between jittered endpoints.

    Returns ``(paths (n, 2 * n_points), starts (n, 2), goals (n, 2))``.
    """
    starts, goals = spec.sample_endpoints(n, rng, inference=False)
    C = spec.constraint(starts, goals)
    Y, viol = C.project_with_status(_straight(starts, goals, spec.n_points))
    bad = ~C.is_feasible(Y, 1e-6)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise GenerationError(
            f"path {k} infeasible after projection (violation {viol[k]:.3g}); start="
            f"{starts[k].tolist()} goal={goals[k].tolist()} obstacles={spec.obstacles}")
    return shorten_paths(Y, C), starts, goals


# ------------------------------------------------------------------ textures

@dataclass(frozen=True)
class TextureSpec:
    patch_size: int = 16
    correlation_length: float = 1.5
    offset: float = 0.0
    porosity_targets: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    threshold: float = 0.0

    def __post_init__(self):
        if self.patch_size < 2 or self.correlation_length <= 0:
            raise ConfigurationError("patch_size must be >= 2 and correlation_length > 0")
        if not all(0 <= p <= 1 for p in self.porosity_targets):
            raise ConfigurationError("porosity targets must lie in [0, 1]")

    @property
    def n_pixels(self) -> int:
        return self.patch_size**2

    def target_counts(self) -> List[int]:
        return [int(np.floor(p * self.n_pixels)) for p in self.porosity_targets]


def gen_texture_dataset(spec: TextureSpec, n: int, rng: RngStream):
    """Smooth periodic random fields squashed into ``[-1, 1]``.

    White noise is blurred with a Gaussian kernel of width
    ``correlation_length``, standardised, shifted by ``offset`` and passed
    through ``tanh``. Returns ``(images (n, size * size), porosity (n,))``.
    """
    s = spec.patch_size
    noise = rng.normal((n, s, s))
    grf = np.stack([gaussian_filter(z, spec.correlation_length, mode="wrap") for z in noise])
    grf /= grf.reshape(n, -1).std(axis=1)[:, None, None]
    images = np.tanh(grf + spec.offset).reshape(n, -1)
    porosity = np.array([porosity_measure(im, spec.threshold) for im in images])
    return images, porosity
