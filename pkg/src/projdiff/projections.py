"""Constraint sets and their Euclidean (or domain-specific) projections.

Every constraint is a scikit-learn transformer whose ``transform`` is the
projection, so it can sit at the end of a ``Pipeline``. All methods accept a
single vector ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from sklearn.base import BaseEstimator, TransformerMixin

from .core import ConfigurationError, DimensionError, as_batch


class ProjectionError(RuntimeError):
    """Projection failed to reach feasibility.

    ``best`` holds the last iterate (same shape as the input) and
    ``max_violation`` the largest remaining constraint violation.
    """

    def __init__(self, message, best=None, max_violation=float("nan")):
        super().__init__(message)
        self.best = best
        self.max_violation = max_violation


class ConvergenceError(ProjectionError):
    pass


class ConstraintSet(BaseEstimator, TransformerMixin):
    """Base class. Subclasses implement ``_project(X, strict)`` and ``_feasible(X, tol)``."""

    #: tolerance at which ``is_feasible(project(x))`` is guaranteed
    tol_proj = 1e-12
    convex = False

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return self.project(X)

    def _dim(self) -> Optional[int]:
        return None

    def project(self, x, strict: bool = True):
        X, single = as_batch(x, self._dim())
        out = self._project(X, strict)
        return out[0] if single else out

    def distance_sq(self, x, strict: bool = False):
        """``||project(x) - x||^2``, the cost of the projection."""
        X, single = as_batch(x, self._dim())
        out = np.sum((self._project(X, strict) - X) ** 2, axis=1)
        return float(out[0]) if single else out

    def is_feasible(self, x, tol: float = 0.0):
        X, single = as_batch(x, self._dim())
        out = np.asarray(self._feasible(X, tol), dtype=bool)
        return bool(out[0]) if single else out


class IdentityConstraint(ConstraintSet):
    """The whole space; projection is the identity."""

    tol_proj = 0.0
    convex = True

    def _project(self, X, strict):
        return X.copy()

    def _feasible(self, X, tol):
        return np.ones(len(X), dtype=bool)


# ------------------------------------------------------------------ convex sets

class BoxConstraint(ConstraintSet):
    tol_proj = 0.0
    convex = True

    def __init__(self, lo=-1.0, hi=1.0):
        self.lo = lo
        self.hi = hi

    def _bounds(self, d):
        lo = np.broadcast_to(np.asarray(self.lo, dtype=np.float64), (d,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=np.float64), (d,))
        if np.any(lo > hi):
            raise ConfigurationError("box requires lo <= hi elementwise")
        return lo, hi

    def _project(self, X, strict):
        lo, hi = self._bounds(X.shape[1])
        return np.clip(X, lo, hi)

    def _feasible(self, X, tol):
        lo, hi = self._bounds(X.shape[1])
        return np.all((X >= lo - tol) & (X <= hi + tol), axis=1)


class BallConstraint(ConstraintSet):
    tol_proj = 1e-12
    convex = True

    def __init__(self, center=0.0, radius=1.0):
        self.center = center
        self.radius = radius

    def _project(self, X, strict):
        if self.radius <= 0:
            raise ConfigurationError("ball radius must be positive")
        c = np.broadcast_to(np.asarray(self.center, dtype=np.float64), (X.shape[1],))
        diff = X - c
        norm = np.linalg.norm(diff, axis=1)
        out = X.copy()
        outside = norm > self.radius
        if np.any(outside):
            out[outside] = c + diff[outside] * (self.radius / norm[outside])[:, None]
            # guard against landing a rounding error outside the sphere
            for _ in range(4):
                over = np.linalg.norm(out - c, axis=1) > self.radius
                if not np.any(over):
                    break
                out[over] = c + (out[over] - c) * (1.0 - 2.0**-52)
        return out

    def _feasible(self, X, tol):
        c = np.broadcast_to(np.asarray(self.center, dtype=np.float64), (X.shape[1],))
        return np.linalg.norm(X - c, axis=1) <= self.radius + tol


class HalfspaceConstraint(ConstraintSet):
    """``{x : a . x <= b}``."""

    tol_proj = 1e-12
    convex = True

    def __init__(self, a=(1.0,), b=0.0):
        self.a = a
        self.b = b

    def _normal(self):
        a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        nrm2 = float(a @ a)
        if nrm2 == 0.0:
            raise ConfigurationError("halfspace normal must be non-zero")
        return a, nrm2

    def _dim(self):
        return np.atleast_1d(np.asarray(self.a)).size

    def _project(self, X, strict):
        a, nrm2 = self._normal()
        step = np.maximum(0.0, (X @ a - self.b) / nrm2)
        out = X - step[:, None] * a
        # rounding can leave a.x a few ulps above b; walk inward one ulp at a time
        away = np.where(a > 0, -np.inf, np.where(a < 0, np.inf, 0.0))
        for _ in range(64):
            over = out @ a > self.b
            if not np.any(over):
                break
            out[over] = np.where(a != 0, np.nextafter(out[over], away), out[over])
        return out

    def _feasible(self, X, tol):
        a, nrm2 = self._normal()
        return (X @ a - self.b) <= tol * np.sqrt(nrm2)


class AffineConstraint(ConstraintSet):
    """``{x : A x = b}`` with ``A`` of full row rank."""

    tol_proj = 1e-12
    convex = True

    def __init__(self, A=((1.0,),), b=(0.0,)):
        self.A = A
        self.b = b

    def _factor(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        b = np.atleast_1d(np.asarray(self.b, dtype=np.float64))
        if b.shape != (A.shape[0],):
            raise DimensionError("b must have one entry per row of A")
        if np.linalg.matrix_rank(A) < A.shape[0]:
            raise np.linalg.LinAlgError("A must have full row rank")
        return A, b

    def _dim(self):
        return np.atleast_2d(np.asarray(self.A)).shape[1]

    def _project(self, X, strict):
        A, b = self._factor()
        resid = X @ A.T - b
        corr = np.linalg.solve(A @ A.T, resid.T).T
        return X - corr @ A

    def _feasible(self, X, tol):
        A, b = self._factor()
        return np.linalg.norm(X @ A.T - b, axis=1) <= tol


class IntersectionConstraint(ConstraintSet):
    """Intersection of convex sets, projected with Dykstra's algorithm."""

    tol_proj = 1e-8
    convex = True

    def __init__(self, sets=(), max_iter=10_000, tol=1e-10):
        self.sets = sets
        self.max_iter = max_iter
        self.tol = tol

    def _project(self, X, strict):
        return dykstra(list(self.sets), X, self.max_iter, self.tol)

    def _feasible(self, X, tol):
        ok = np.ones(len(X), dtype=bool)
        for s in self.sets:
            ok &= np.asarray(s.is_feasible(X, tol), dtype=bool).reshape(len(X))
        return ok


def dykstra(sets: Sequence[ConstraintSet], X: np.ndarray, max_iter: int = 10_000,
            tol: float = 1e-10) -> np.ndarray:
    """Dykstra's alternating projections for a batch ``X`` of shape ``(n, d)``.

    Stops when a full sweep moves every row by less than ``tol``.
    """
    if not sets:
        return X.copy()
    if any(not s.convex for s in sets):
        raise ConfigurationError("Dykstra's algorithm needs convex member sets")
    y = X.copy()
    incs = [np.zeros_like(X) for _ in sets]
    for _ in range(max_iter):
        prev = y.copy()
        for k, s in enumerate(sets):
            z = s.project(y + incs[k])
            incs[k] = y + incs[k] - z
            y = z
        move = np.max(np.linalg.norm(y - prev, axis=1))
        if move < tol:
            return y
    raise ConvergenceError(f"Dykstra did not converge in {max_iter} sweeps (last move {move:.3g})",
                           best=y, max_violation=move)


# --------------------------------------------------------------- function forms

def project_box(lo, hi, x):
    return BoxConstraint(lo, hi).project(x)


def project_ball(center, radius, x):
    return BallConstraint(center, radius).project(x)


def project_halfspace(a, b, x):
    return HalfspaceConstraint(a, b).project(x)


def project_affine(A, b, x):
    return AffineConstraint(A, b).project(x)


def project_intersection_dykstra(sets, x, max_iter=10_000, tol=1e-10):
    return IntersectionConstraint(sets, max_iter, tol).project(x)


# ------------------------------------------------------------------- porosity

class PorosityConstraint(ConstraintSet):
    """Exactly ``target_count`` entries strictly below ``threshold``.

    Projection flips the entries nearest the threshold, landing them
    ``margin`` across it; everything else is untouched.
    """

    tol_proj = 0.0

    def __init__(self, target_count=0, threshold=0.0, margin=1e-3):
        self.target_count = target_count
        self.threshold = threshold
        self.margin = margin

    def _project(self, X, strict):
        k, tau, delta = int(self.target_count), float(self.threshold), float(self.margin)
        if k < 0 or k > X.shape[1]:
            raise ConfigurationError(f"target_count {k} outside [0, {X.shape[1]}]")
        out = X.copy()
        for row in out:
            below = np.flatnonzero(row < tau)
            m = below.size
            if m > k:
                # below-threshold entries closest to tau: largest values
                order = below[np.argsort(-row[below], kind="stable")]
                row[order[: m - k]] = tau + delta
            elif m < k:
                above = np.flatnonzero(row >= tau)
                order = above[np.argsort(row[above], kind="stable")]
                row[order[: k - m]] = tau - delta
        return out

    def _feasible(self, X, tol):
        return np.count_nonzero(X < self.threshold, axis=1) == int(self.target_count)


def project_porosity(c: PorosityConstraint, x):
    return c.project(x)


# ---------------------------------------------------------- object placement

def disc_mask(radius: float) -> np.ndarray:
    """Integer offsets ``(dr, dc)`` of a filled disc."""
    r = int(np.floor(radius))
    rr, cc = np.mgrid[-r:r + 1, -r:r + 1]
    keep = rr**2 + cc**2 <= radius**2 + 1e-9
    return np.stack([rr[keep], cc[keep]], axis=1)


def _center(coords: np.ndarray) -> np.ndarray:
    return np.floor(coords.mean(axis=0) + 0.5).astype(int)


class ObjectPlacementConstraint(ConstraintSet):
    """Object (pixels darker than ``detect_threshold``) centred on per-frame targets.

    ``frame_shape`` is ``(frames, h, w)`` and ``targets`` is ``(frames, 2)``
    integer ``(row, col)`` centres. A frame is feasible when the rounded
    centroid of its dark pixels equals its target.
    """

    tol_proj = 0.0

    def __init__(self, frame_shape=(6, 16, 16), targets=(), mask=None, background=1.0,
                 object_value=-1.0, detect_threshold=0.0):
        self.frame_shape = frame_shape
        self.targets = targets
        self.mask = mask
        self.background = background
        self.object_value = object_value
        self.detect_threshold = detect_threshold

    def _dim(self):
        return int(np.prod(self.frame_shape))

    def _targets(self):
        F, H, W = self.frame_shape
        t = np.asarray(self.targets, dtype=int).reshape(F, 2)
        if np.any(t < 0) or np.any(t[:, 0] >= H) or np.any(t[:, 1] >= W):
            raise ConfigurationError("target centre outside frame bounds")
        return t

    def _template(self):
        return disc_mask(1.0) if self.mask is None else np.asarray(self.mask, dtype=int).reshape(-1, 2)

    def _frame_ok(self, frame, target):
        coords = np.argwhere(frame < self.detect_threshold)
        return coords.size > 0 and np.array_equal(_center(coords), target)

    def _stamp(self, frame, target, offsets, values):
        H, W = frame.shape
        dest = target + offsets
        keep = (dest[:, 0] >= 0) & (dest[:, 0] < H) & (dest[:, 1] >= 0) & (dest[:, 1] < W)
        frame[dest[keep, 0], dest[keep, 1]] = values[keep] if np.ndim(values) else values

    def project_frame(self, frame: np.ndarray, target) -> np.ndarray:
        target = np.asarray(target, dtype=int)
        if self._frame_ok(frame, target):
            return frame
        coords = np.argwhere(frame < self.detect_threshold)
        out = frame.copy()
        if coords.size:
            values = frame[coords[:, 0], coords[:, 1]]
            out[coords[:, 0], coords[:, 1]] = self.background
            cleared = out.copy()
            self._stamp(out, target, coords - _center(coords), values)
            if self._frame_ok(out, target):
                return out
            out = cleared
        # detected object missing or clipped by the border: stamp the template
        cleared = out.copy()
        self._stamp(out, target, self._template(), self.object_value)
        if not self._frame_ok(out, target):
            out = cleared
            out[target[0], target[1]] = self.object_value
        return out

    def _project(self, X, strict):
        targets = self._targets()
        out = X.copy().reshape((len(X),) + tuple(self.frame_shape))
        for s in range(len(out)):
            for f in range(out.shape[1]):
                out[s, f] = self.project_frame(out[s, f], targets[f])
        return out.reshape(X.shape)

    def _feasible(self, X, tol):
        targets = self._targets()
        frames = X.reshape((len(X),) + tuple(self.frame_shape))
        return np.array([all(self._frame_ok(s[f], targets[f]) for f in range(len(targets)))
                         for s in frames], dtype=bool)

    def frame_errors(self, x) -> np.ndarray:
        """Per-frame pixel distance between detected object centre and target."""
        X, _ = as_batch(x, self._dim())
        targets = self._targets()
        frames = X.reshape((len(X),) + tuple(self.frame_shape))
        err = np.zeros((len(X), len(targets)))
        for s, stack in enumerate(frames):
            for f, frame in enumerate(stack):
                coords = np.argwhere(frame < self.detect_threshold)
                err[s, f] = np.inf if coords.size == 0 else \
                    float(np.linalg.norm(coords.mean(axis=0) - targets[f]))
        return err


def project_object_position(c: ObjectPlacementConstraint, frames):
    return c.project(frames)


# ------------------------------------------------------------- trajectories

def segment_distances(P: np.ndarray, centers: np.ndarray):
    """Closest-point geometry between path segments and circle centres.

    ``P`` is ``(B, N, 2)``; returns ``dist (B, N-1, K)``, the unit direction
    from centre to the closest point ``(B, N-1, K, 2)`` and the segment
    parameter ``u (B, N-1, K)``. A closest point exactly on a centre gets
    direction ``+y``.
    """
    a = P[:, :-1, None, :]
    d = (P[:, 1:] - P[:, :-1])[:, :, None, :]
    rel = centers[None, None] - a
    dd = np.sum(d * d, axis=-1)
    u = np.where(dd > 0, np.sum(rel * d, axis=-1) / np.where(dd > 0, dd, 1.0), 0.0)
    u = np.clip(u, 0.0, 1.0)
    q = a + u[..., None] * d - centers[None, None]
    dist = np.linalg.norm(q, axis=-1)
    safe = dist > 1e-12
    unit = np.where(safe[..., None], q / np.where(safe, dist, 1.0)[..., None], np.array([0.0, 1.0]))
    return dist, unit, u


class TrajectoryConstraint(ConstraintSet):
    """2-D waypoint paths with pinned endpoints that keep clear of circular obstacles.

    Every segment must stay at least ``radius`` from each obstacle centre;
    the projection aims for ``radius + margin`` so results are strictly
    clear. ``start``/``goal`` may be ``(2,)`` or ``(n, 2)`` for one endpoint
    pair per batch row.

    The default ``method="slsqp"`` solves each violating path separately,
    using only obstacles within ``screen`` of the path (all obstacles are
    retried if the screened answer is infeasible). With ``restarts=True`` the
    solver also starts from two pushed-out paths and keeps the best local
    optimum. Without restarts the result is the local projection nearest the
    input, which is what the sampler expects. ``method="auglag"`` uses an
    augmented Lagrangian with ``max_outer``/``max_inner``/``mu0``.
    """

    tol_proj = 1e-6

    def __init__(self, centers=(), radii=(), start=(0.0, 0.0), goal=(1.0, 1.0), n_points=16,
                 margin=0.02, method="slsqp", max_outer=30, max_inner=50, tol=1e-9,
                 inner_tol=1e-7, mu0=10.0, restarts=False, screen=0.25):
        self.centers = centers
        self.radii = radii
        self.start = start
        self.goal = goal
        self.n_points = n_points
        self.margin = margin
        self.method = method
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.tol = tol
        self.inner_tol = inner_tol
        self.mu0 = mu0
        self.restarts = restarts
        self.screen = screen

    def _dim(self):
        return 2 * int(self.n_points)

    def _geometry(self):
        c = np.asarray(self.centers, dtype=np.float64).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if c.shape[0] != r.size:
            raise DimensionError("one radius per obstacle centre")
        return c, r

    def _endpoints(self, B):
        s = np.asarray(self.start, dtype=np.float64)
        g = np.asarray(self.goal, dtype=np.float64)
        return np.broadcast_to(s, (B, 2)), np.broadcast_to(g, (B, 2))

    def clearance(self, x) -> np.ndarray:
        """Smallest ``distance - radius`` over all segments and obstacles, per path."""
        X, single = as_batch(x, self._dim())
        c, r = self._geometry()
        if c.shape[0] == 0:
            out = np.full(len(X), np.inf)
        else:
            dist, _, _ = segment_distances(X.reshape(len(X), -1, 2), c)
            out = np.min(dist - r, axis=(1, 2))
        return float(out[0]) if single else out

    def _feasible(self, X, tol):
        s, g = self._endpoints(len(X))
        P = X.reshape(len(X), -1, 2)
        ends = (np.max(np.abs(P[:, 0] - s), axis=1) <= tol) & (np.max(np.abs(P[:, -1] - g), axis=1) <= tol)
        return ends & (self.clearance(X) >= -tol)

    def check_endpoints(self):
        c, r = self._geometry()
        for name, p in (("start", self.start), ("goal", self.goal)):
            p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
            if c.shape[0] and np.any(np.linalg.norm(p[:, None] - c[None], axis=-1) < r + self.margin):
                raise ProjectionError(f"{name} point lies inside an obstacle (constraint infeasible)")

    def _project(self, X, strict):
        self.check_endpoints()
        s, g = self._endpoints(len(X))
        P = X.reshape(len(X), -1, 2).copy()
        P[:, 0], P[:, -1] = s, g
        Y, viol = self._solve(P)
        out = Y.reshape(X.shape)
        if strict and np.any(viol > self.tol_proj):
            raise ConvergenceError(
                f"trajectory projection did not reach feasibility (max violation {viol.max():.3g})",
                best=out, max_violation=float(viol.max()))
        return out

    def project_with_status(self, x, warm_start=None):
        """Best-effort projection plus per-path remaining violation (0 when solved).

        ``warm_start`` (same shape as ``x``) is a second SQP starting point,
        tried only for paths whose solve from ``x`` itself fails. The sampler
        passes its previous, already projected iterate here.
        """
        X, single = as_batch(x, self._dim())
        self.check_endpoints()
        s, g = self._endpoints(len(X))
        P = X.reshape(len(X), -1, 2).copy()
        P[:, 0], P[:, -1] = s, g
        W = None
        if warm_start is not None:
            W = as_batch(warm_start, self._dim())[0].reshape(P.shape).copy()
            W[:, 0], W[:, -1] = s, g
        Y, viol = self._solve(P, W)
        Y = Y.reshape(X.shape)
        return (Y[0], float(viol[0])) if single else (Y, viol)

    def _violation(self, P, c, R):
        if c.shape[0] == 0:
            return np.zeros(len(P))
        dist, _, _ = segment_distances(P, c)
        return np.maximum(0.0, np.max(R - dist, axis=(1, 2)))

    def _solve(self, Z, warm=None):
        if self.method == "slsqp":
            return self._solve_slsqp(Z, warm)
        if self.method == "auglag":
            return self._solve_auglag(Z)
        raise ConfigurationError(f"unknown trajectory solver {self.method!r}")

    def _clearance_jacobian(self, P, c):
        """Jacobian of ``dist`` w.r.t. waypoints, shape ``(B, (N-1)*K, 2N)``."""
        dist, unit, u = segment_distances(P, c)
        B, N = P.shape[:2]
        K = c.shape[0]
        jac = np.zeros((B, N - 1, K, N, 2))
        seg = np.arange(N - 1)
        jac[:, seg, :, seg, :] = np.moveaxis((1 - u)[..., None] * unit, 1, 0)
        jac[:, seg, :, seg + 1, :] = np.moveaxis(u[..., None] * unit, 1, 0)
        return dist, jac.reshape(B, (N - 1) * K, 2 * N)

    def _solve_slsqp(self, Z, warm=None):
        """Per-path SQP on the interior waypoints (endpoints held fixed).

        Only obstacles within ``screen`` of the path enter the subproblem; if
        the result then violates a screened-out obstacle the path is solved
        again against all of them. ``warm`` holds optional fallback starts.
        """
        c, r = self._geometry()
        R = r + float(self.margin)
        Y = Z.copy()
        if c.shape[0] == 0:
            return Y, np.zeros(len(Y))
        viol = self._violation(Y, c, R)
        for b in np.flatnonzero(viol > self.tol):
            z = Z[b]
            dist, _, _ = segment_distances(z[None], c)
            near = np.min(dist[0], axis=0) - R < float(self.screen)
            w = None if warm is None else warm[b]
            y = self._slsqp_path(z, c[near], R[near], w)
            if not np.all(near) and self._violation(y[None], c, R)[0] > self.tol:
                y = self._slsqp_path(z, c, R, w)
            Y[b] = y
        return Y, self._violation(Y, c, R)

    def _slsqp_path(self, z, c, R, warm=None):
        N = z.shape[0]

        def full(v):
            return np.vstack([z[0], v.reshape(N - 2, 2), z[-1]])[None]

        def objective(v):
            diff = v - z[1:-1].ravel()
            return 0.5 * diff @ diff, diff

        def cons(v):
            dist, _, _ = segment_distances(full(v), c)
            return (dist[0] - R).ravel()

        def cons_jac(v):
            _, jac = self._clearance_jacobian(full(v), c)
            return jac[0][:, 2:-2]

        def key(v):
            v_viol = float(self._violation(full(v), c, R)[0])
            return (max(v_viol - self.tol, 0.0), objective(v)[0])

        # SQP can end far away after reporting incompatible linearised
        # constraints, so only successful runs that stay inside this box count;
        # a nearest feasible path never needs to leave it
        lo = np.minimum(z.min(axis=0), (c - R[:, None]).min(axis=0))
        hi = np.maximum(z.max(axis=0), (c + R[:, None]).max(axis=0))
        lo, hi = lo - (hi - lo), hi + (hi - lo)
        starts = [z[1:-1].ravel()]
        if self.restarts:
            line = np.linspace(z[0], z[-1], N)
            starts += [self._push_out(z, c, R), self._push_out(line, c, R)]
        best = min(starts, key=key)
        best_key = key(best)
        if warm is not None:
            # only the SQP result from the warm start may be kept, never the start itself
            starts.append(warm[1:-1].ravel())
        for v0 in starts:
            res = minimize(objective, v0, jac=True, method="SLSQP",
                           constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
                           options={"ftol": 1e-14, "maxiter": int(self.max_outer) * 10})
            w = res.x.reshape(-1, 2)
            if not res.success or not np.all(np.isfinite(w)) or np.any(w < lo) or np.any(w > hi):
                continue
            k = key(res.x)
            if k < best_key:
                best_key, best = k, res.x
            if k[0] == 0.0:
                break
        return full(best)[0]

    @staticmethod
    def _push_out(z, c, R):
        """Interior waypoints moved radially just outside any obstacle containing them."""
        P = z[1:-1].copy()
        for k in range(c.shape[0]):
            d = P - c[k]
            n = np.linalg.norm(d, axis=1)
            inside = n < R[k] * 1.05
            d[inside & (n < 1e-12)] = (0.0, 1.0)
            n = np.linalg.norm(d, axis=1)
            P[inside] = c[k] + d[inside] * (R[k] * 1.05 / n[inside])[:, None]
        return P.ravel()

    def _solve_auglag(self, Z):
        """Augmented Lagrangian over segment clearances, batched over paths.

        Inner loop: damped Newton steps (finite-difference Hessian of the
        analytic gradient) with backtracking on the penalised objective;
        outer loop: multiplier and penalty updates.
        """
        c, r = self._geometry()
        R = r + float(self.margin)
        Y = Z.copy()
        if c.shape[0] == 0:
            return Y, np.zeros(len(Y))
        viol = self._violation(Y, c, R)
        idx = np.flatnonzero(viol > self.tol)
        if idx.size == 0:
            return Y, viol
        Zs, Ys = Z[idx], Y[idx].copy()
        B, N = Ys.shape[:2]
        lam = np.zeros((B, N - 1, c.shape[0]))
        mu = np.full(B, float(self.mu0))
        done = np.zeros(B, dtype=bool)
        prev_viol = viol[idx]
        eye = np.eye(2 * N)

        def penalised(Yb, zb, lb, mb, with_hessian=False):
            dist, jac = self._clearance_jacobian(Yb, c)
            h = R - dist
            a = np.maximum(0.0, lb + mb[:, None, None] * h)
            f = 0.5 * np.sum((Yb - zb) ** 2, axis=(1, 2)) + \
                np.sum(a**2 - lb**2, axis=(1, 2)) / (2 * mb)
            # constraint gradient is -jac; pinned endpoints carry no gradient
            jac = -jac
            jac[..., :2] = 0.0
            jac[..., -2:] = 0.0
            grad = (Yb - zb).reshape(len(Yb), -1) + np.einsum("bc,bcn->bn", a.reshape(len(Yb), -1), jac)
            grad[:, :2] = 0.0
            grad[:, -2:] = 0.0
            if not with_hessian:
                return f, grad
            # Hessian by central differences of the analytic gradient, one batched call
            nb, n2 = len(Yb), 2 * N
            hstep = 1e-6
            pert = np.concatenate([np.eye(n2), -np.eye(n2)]) * hstep
            Yp = (Yb.reshape(nb, 1, n2) + pert[None]).reshape(-1, N, 2)
            rep = lambda v: np.repeat(v, 2 * n2, axis=0)
            _, gp = penalised(Yp, rep(zb), rep(lb), rep(mb))
            gp = gp.reshape(nb, 2, n2, n2)
            H = (gp[:, 0] - gp[:, 1]) / (2 * hstep)
            H = 0.5 * (H + np.swapaxes(H, 1, 2))
            pinned = np.r_[0, 1, n2 - 2, n2 - 1]
            H[:, pinned, :] = 0.0
            H[:, :, pinned] = 0.0
            H[:, pinned, pinned] = 1.0
            low = np.linalg.eigvalsh(H)[:, 0]
            H += np.maximum(0.0, 0.1 - low)[:, None, None] * eye
            return f, grad, H

        for _outer in range(int(self.max_outer)):
            live = np.flatnonzero(~done)
            if live.size == 0:
                break
            y, z, l, m = Ys[live], Zs[live], lam[live], mu[live]
            for _ in range(int(self.max_inner)):
                f, gr, H = penalised(y, z, l, m, with_hessian=True)
                gnorm = np.linalg.norm(gr, axis=1)
                moving = gnorm > self.inner_tol
                if not np.any(moving):
                    break
                d = -np.linalg.solve(H, gr[..., None])[..., 0]
                slope = np.sum(gr * d, axis=1)
                t = np.ones(len(y))
                accepted = ~moving
                y_new = y.copy()
                for _ls in range(40):
                    todo = np.flatnonzero(~accepted)
                    if todo.size == 0:
                        break
                    yt = y[todo] + (t[todo, None] * d[todo]).reshape(-1, N, 2)
                    ft, _ = penalised(yt, z[todo], l[todo], m[todo])
                    ok = ft <= f[todo] + 1e-4 * t[todo] * slope[todo]
                    y_new[todo[ok]] = yt[ok]
                    accepted[todo[ok]] = True
                    t[todo[~ok]] *= 0.5
                stalled = ~accepted
                y = y_new
                if np.all(stalled | ~moving):
                    break
            dist, _, _ = segment_distances(y, c)
            h = R - dist
            l = np.maximum(0.0, l + m[:, None, None] * h)
            v = np.maximum(0.0, np.max(h, axis=(1, 2)))
            m = np.where(v > 0.25 * prev_viol[live], np.minimum(m * 10.0, 1e10), m)
            Ys[live], lam[live], mu[live] = y, l, m
            prev_viol[live] = v
            done[live] = v <= self.tol
        Y[idx] = Ys
        return Y, self._violation(Y, c, R)


def project_trajectory(c: TrajectoryConstraint, path):
    return c.project(path)


class RowwiseConstraint(ConstraintSet):
    """Applies ``constraints[i]`` to batch row ``i`` (one constraint per chain)."""

    def __init__(self, constraints: Sequence[ConstraintSet] = ()):
        self.constraints = constraints

    @property
    def tol_proj(self):
        return max((c.tol_proj for c in self.constraints), default=0.0)

    def _check(self, X):
        if len(X) != len(self.constraints):
            raise DimensionError(f"{len(self.constraints)} constraints for {len(X)} rows")

    def _project(self, X, strict):
        self._check(X)
        return np.vstack([c.project(row, strict) for c, row in zip(self.constraints, X)])

    def _feasible(self, X, tol):
        self._check(X)
        return np.array([c.is_feasible(row, tol) for c, row in zip(self.constraints, X)])
