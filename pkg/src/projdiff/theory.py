"""Monte-Carlo checks of the projection-cost inequality and its vanishing limit.

The setting is a single isotropic Gaussian centred at the origin and a convex
feasible set that excludes the origin. The Langevin update is
``U(x) = x + gamma * s(x) + sqrt(2 gamma) * eps`` and ``Error(y)`` is the
squared distance from ``y`` to the feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConfigurationError, NoiseSchedule, RngStream
from .projections import BallConstraint, ConstraintSet, HalfspaceConstraint
from .sampler import SamplerConfig, sample
from .score import GaussianMixture

Z95 = 1.959963984540054


@dataclass
class TheoremProbe:
    """One (score, constraint, step size) configuration.

    ``sigma`` is the noise level at which the score is evaluated; the
    effective variance is ``variance + sigma**2``. ``xi`` is the error bound
    used by the vanishing-error check.
    """

    gmm: GaussianMixture
    constraint: ConstraintSet
    gamma: float
    sigma: float = 0.0
    xi: float = 1e-3
    rho_t: Optional[float] = field(default=None)

    def __post_init__(self):
        if self.gmm.K != 1 or not np.allclose(self.gmm.optimum_mean, 0.0):
            raise ConfigurationError("probes need a single Gaussian centred at the origin")
        v = self.gmm.variances[0]
        if not np.allclose(v, v[0]):
            raise ConfigurationError("probes need an isotropic Gaussian")
        if not 0 < self.gamma < self.variance:
            raise ConfigurationError("gamma must lie in (0, variance)")
        if self.rho_t is None:
            self.rho_t = compute_rho(self)

    @property
    def variance(self) -> float:
        return float(self.gmm.variances[0, 0]) + self.sigma**2

    @property
    def dim(self) -> int:
        return self.gmm.dim

    @property
    def contraction(self) -> float:
        """``x + gamma * s(x) = contraction * x`` for this score."""
        return 1.0 - self.gamma / self.variance

    def update(self, x, eps):
        return x + self.gamma * self.gmm.score(x, self.sigma) + np.sqrt(2.0 * self.gamma) * eps

    def error(self, y):
        return self.constraint.distance_sq(y)

    def beyond_I_bar(self, x) -> np.ndarray:
        """Operational test of the gradient-size criterion for each state."""
        x = np.atleast_2d(x)
        step = x + self.gamma * self.gmm.score(x, self.sigma)
        return np.linalg.norm(step, axis=1) <= self.rho_t + 1e-12


def _distance_to_origin(constraint: ConstraintSet, dim: int) -> float:
    if isinstance(constraint, HalfspaceConstraint):
        a, nrm2 = constraint._normal()
        if a.size != dim:
            raise ConfigurationError("halfspace dimension does not match the probe")
        if constraint.b >= 0:
            raise ConfigurationError("the halfspace must exclude the origin")
        return -float(constraint.b) / np.sqrt(nrm2)
    if isinstance(constraint, BallConstraint):
        c = np.broadcast_to(np.asarray(constraint.center, dtype=np.float64), (dim,))
        gap = float(np.linalg.norm(c)) - float(constraint.radius)
        if gap <= 0:
            raise ConfigurationError("the ball must exclude the origin")
        return gap
    raise ConfigurationError(
        f"unsupported constraint family {type(constraint).__name__}; use a halfspace or a ball")


def compute_rho(probe: TheoremProbe) -> float:
    """Norm of the closest point to the optimum reachable in one gradient step from C.

    With score ``-x / v`` one step maps ``x`` to ``(1 - gamma / v) x``, so the
    minimum over C is the contraction times the distance from the origin to C.
    For ``C = {x >= c}`` with unit variance this is ``c (1 - gamma)``.
    """
    return probe.contraction * _distance_to_origin(probe.constraint, probe.dim)


def uniform_i_bar_states(probe: TheoremProbe) -> Callable[[RngStream, int], np.ndarray]:
    """States drawn uniformly from the ball ``||x|| <= dist(0, C)``.

    Every such state satisfies the gradient-size criterion, and all but a
    measure-zero set are infeasible.
    """
    radius = _distance_to_origin(probe.constraint, probe.dim)

    def draw(rng: RngStream, n: int) -> np.ndarray:
        d = probe.dim
        u = rng.normal((n, d))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = radius * rng.uniform(size=n) ** (1.0 / d)
        return u * r[:, None]

    return draw


def _mean_ci(v: np.ndarray):
    return float(np.mean(v)), float(Z95 * np.std(v, ddof=1) / np.sqrt(v.size))


def verify_theorem1(probe: TheoremProbe, n_trials: int = 100_000,
                    x_distribution: Optional[Callable] = None, seed: int = 0) -> dict:
    """Estimate ``E[Error(U(x))]`` and ``E[Error(U(P(x)))]`` with 95% confidence intervals.

    Both sides share the same ``eps`` per trial, so the paired difference is
    also reported. ``holds`` is ``lhs_mean + ci_lhs >= rhs_mean - ci_rhs``.

    Parameters
    ----------
    x_distribution : callable ``(rng, n) -> (n, d)``, optional
        Generator of probe states; defaults to :func:`uniform_i_bar_states`.
    """
    if n_trials < 2:
        raise ConfigurationError("n_trials must be >= 2")
    draw = x_distribution or uniform_i_bar_states(probe)
    x = np.asarray(draw(RngStream(seed, 0), n_trials), dtype=np.float64).reshape(n_trials, probe.dim)
    eps = RngStream(seed, 1).normal((n_trials, probe.dim))
    lhs = probe.error(probe.update(x, eps))
    rhs = probe.error(probe.update(probe.constraint.project(x), eps))
    lhs_mean, lhs_ci = _mean_ci(lhs)
    rhs_mean, rhs_ci = _mean_ci(rhs)
    diff_mean, diff_ci = _mean_ci(lhs - rhs)
    return {
        "gamma": probe.gamma,
        "rho_t": probe.rho_t,
        "n_trials": int(n_trials),
        "lhs_mean": lhs_mean,
        "rhs_mean": rhs_mean,
        "ci_halfwidths": [lhs_ci, rhs_ci],
        "diff_mean": diff_mean,
        "diff_ci_halfwidth": diff_ci,
        "fraction_beyond_I_bar": float(np.mean(probe.beyond_I_bar(x))),
        "holds": bool(lhs_mean + lhs_ci >= rhs_mean - rhs_ci),
    }


def halfspace_probe(c: float, gamma: float, variance: float = 1.0) -> TheoremProbe:
    """1-D probe with ``C = {x >= c}``."""
    return TheoremProbe(GaussianMixture.single([0.0], variance),
                        HalfspaceConstraint([-1.0], -float(c)), gamma)


THEOREM_GRID = {"gamma": (0.05, 0.1, 0.3, 0.5), "c": (0.5, 1.0, 2.0)}


def verify_theorem1_grid(n_trials: int = 100_000, seed: int = 0) -> list:
    """Run :func:`verify_theorem1` over the standard ``(gamma, c)`` grid."""
    reports = []
    for gamma in THEOREM_GRID["gamma"]:
        for c in THEOREM_GRID["c"]:
            rep = verify_theorem1(halfspace_probe(c, gamma), n_trials, seed=seed)
            rep["c"] = c
            reports.append(rep)
    return reports


def verify_corollary1(probe: TheoremProbe, schedule: NoiseSchedule, M: int = 100,
                      xi: Optional[float] = None, n_chains: int = 100, seed: int = 0) -> dict:
    """Run projected chains and locate where the mean pre-projection Error settles below ``xi``.

    The Error of each step is ``||P(x') - x'||^2`` for the update ``x'``,
    averaged over ``n_chains``. The report gives the first ``(t, i)`` after
    which the mean stays ``<= xi`` for every later step. When no such index
    exists ``found`` is false and ``final_error`` carries the last value.
    """
    xi = probe.xi if xi is None else float(xi)
    if xi <= 0:
        raise ConfigurationError("xi must be positive")
    cfg = SamplerConfig(schedule, M=M, variant="pgdm_alg1", seed=seed)
    _, traces = sample(cfg, probe.gmm, probe.constraint, n_chains, probe.dim)
    err = np.mean([tr.pre_error for tr in traces], axis=0)
    t_idx, i_idx = traces[0].t, traces[0].i
    # suffix maximum: position k qualifies when nothing after it exceeds xi
    suffix_max = np.maximum.accumulate(err[::-1])[::-1]
    below = np.flatnonzero(suffix_max <= xi)
    levels = np.arange(schedule.T, 0, -1)
    level_mean = [float(np.mean(err[t_idx == t])) for t in levels]
    report = {
        "xi": xi,
        "n_chains": int(n_chains),
        "found": bool(below.size),
        "first_t": None,
        "first_i": None,
        "final_error": float(err[-1]),
        "levels": levels.tolist(),
        "level_mean_error": level_mean,
        "error_trace": err.tolist(),
    }
    if below.size:
        k = int(below[0])
        report["first_t"], report["first_i"] = int(t_idx[k]), int(i_idx[k])
    return report
