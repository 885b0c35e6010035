"""Annealed Langevin sampling with a projection after every update.

Variants
--------
``pgdm_alg1``
    project after every inner step at levels ``t <= projection_start_t``
``unconstrained``
    plain annealed Langevin dynamics
``post_proc``
    plain dynamics, one projection of the final iterate
``sde_corrector``
    SNR-adaptive step size, projection after every step
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (ConfigurationError, NoiseSchedule, NumericError, RngStream,
                   make_geometric_schedule)
from .projections import ConstraintSet, IdentityConstraint, ProjectionError

logger = logging.getLogger(__name__)

VARIANTS = ("pgdm_alg1", "unconstrained", "post_proc", "sde_corrector")
TRACE_COLUMNS = ("t", "i", "pre_error", "post_error", "grad_norm", "gamma")

ScoreField = Callable[[np.ndarray, float], np.ndarray]


class DivergenceError(NumericError):
    """Iterates left the ``|x| <= bound`` box; ``trace`` holds what was recorded."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass
class SamplerConfig:
    schedule: NoiseSchedule
    M: int = 100
    projection_start_t: Optional[int] = None
    variant: str = "pgdm_alg1"
    snr_r: float = 0.16
    snr_norm: str = "batch"
    seed: int = 0
    divergence_bound: float = 1e6
    track_errors: bool = False

    def __post_init__(self):
        if self.projection_start_t is None:
            self.projection_start_t = self.schedule.T
        if self.M < 1:
            raise ConfigurationError("M must be >= 1")
        if not 0 <= self.projection_start_t <= self.schedule.T:
            raise ConfigurationError("projection_start_t must lie in [0, T]")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.snr_r <= 0:
            raise ConfigurationError("snr_r must be positive")
        if self.snr_norm not in ("batch", "chain"):
            raise ConfigurationError("snr_norm must be 'batch' or 'chain'")

    def projects_at(self, t: int) -> bool:
        return self.variant in ("pgdm_alg1", "sde_corrector") and t <= self.projection_start_t


@dataclass
class ChainTrace:
    """Per-step records of one chain, in sampling order (``t`` from T down to 1)."""

    t: np.ndarray
    i: np.ndarray
    pre_error: np.ndarray
    post_error: np.ndarray
    grad_norm: np.ndarray
    gamma: np.ndarray

    def level_mean(self, column: str = "pre_error") -> dict:
        vals = getattr(self, column)
        return {int(t): float(np.mean(vals[self.t == t])) for t in np.unique(self.t)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for row in zip(self.t, self.i, self.pre_error, self.post_error, self.grad_norm, self.gamma):
                w.writerow([int(row[0]), int(row[1])] + [repr(float(v)) for v in row[2:]])


@dataclass
class _TraceBuffer:
    n: int
    steps: int
    cols: dict = field(default_factory=dict)
    pos: int = 0

    def __post_init__(self):
        self.t = np.zeros(self.steps, dtype=int)
        self.i = np.zeros(self.steps, dtype=int)
        for name in TRACE_COLUMNS[2:]:
            self.cols[name] = np.full((self.n, self.steps), np.nan)

    def record(self, t, i, pre, post, gnorm, gamma):
        k = self.pos
        self.t[k], self.i[k] = t, i
        self.cols["pre_error"][:, k] = pre
        self.cols["post_error"][:, k] = post
        self.cols["grad_norm"][:, k] = gnorm
        self.cols["gamma"][:, k] = gamma
        self.pos += 1

    def chains(self) -> List[ChainTrace]:
        k = self.pos
        return [ChainTrace(self.t[:k], self.i[:k], *(self.cols[c][j, :k] for c in TRACE_COLUMNS[2:]))
                for j in range(self.n)]


def update_step_U(x, score: ScoreField, gamma: float, rng, sigma: float = 1.0, t=None, i=None):
    """One Langevin update ``x + gamma * s(x) + sqrt(2 gamma) * eps``."""
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(score(x, sigma), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError(f"score returned non-finite values at (t={t}, i={i})")
    eps = rng.normal(x.shape)
    return x + gamma * g + np.sqrt(2.0 * gamma) * eps


def projected_step(x, score: ScoreField, gamma: float, constraint: ConstraintSet, rng,
                   sigma: float = 1.0):
    """``constraint.project(update_step_U(x, ...))``; projection failures propagate."""
    return constraint.project(update_step_U(x, score, gamma, rng, sigma))


def snr_step_size(eps, g, r, norm="batch", previous=None):
    """``2 (r ||eps|| / ||g||)^2`` per chain.

    ``norm="chain"`` uses each chain's own norms; ``"batch"`` uses norms
    averaged over the batch, which keeps low-dimensional chains stable.
    Chains with a zero score norm reuse ``previous`` (NaN when unavailable).
    """
    eps, g = np.atleast_2d(eps), np.atleast_2d(g)
    en, gn = np.linalg.norm(eps, axis=1), np.linalg.norm(g, axis=1)
    if norm == "batch":
        en = np.full_like(en, en.mean())
        gn = np.full_like(gn, gn.mean())
    ok = gn > 0
    gamma = 2.0 * (r * en / np.where(ok, gn, 1.0)) ** 2
    prev = np.full(len(gamma), np.nan) if previous is None else np.asarray(previous, dtype=float)
    return np.where(ok, gamma, prev)


def _lenient_project(constraint: ConstraintSet, X: np.ndarray, warm_start=None):
    """Project a batch without raising; returns the result and residual squared violation.

    ``warm_start`` is forwarded to constraints whose solver accepts one.
    """
    if hasattr(constraint, "project_with_status"):
        Y, viol = constraint.project_with_status(X, warm_start=warm_start)
        return Y, np.asarray(viol) ** 2
    try:
        return constraint.project(X), np.zeros(len(X))
    except ProjectionError as exc:
        if exc.best is None:
            raise
        Y = np.asarray(exc.best).reshape(X.shape)
        return Y, np.full(len(X), exc.max_violation**2)


def _resolve_dim(score, constraint, dim):
    if dim is not None:
        return int(dim)
    for obj in (constraint, score):
        d = obj._dim() if hasattr(obj, "_dim") else getattr(obj, "dim", None)
        if d:
            return int(d)
    raise ConfigurationError("cannot infer the sample dimension; pass dim=")


def sample(config: SamplerConfig, score: ScoreField, constraint: Optional[ConstraintSet] = None,
           n_samples: int = 1, dim: Optional[int] = None):
    """Run ``n_samples`` chains; returns ``(samples (n, d), [ChainTrace, ...])``."""
    if config.variant == "sde_corrector":
        return sample_sde_corrector(config, score, constraint, n_samples, dim)
    return _run(config, score, constraint, n_samples, dim, adaptive=False)


def sample_sde_corrector(config: SamplerConfig, score: ScoreField,
                         constraint: Optional[ConstraintSet] = None, n_samples: int = 1,
                         dim: Optional[int] = None):
    """Corrector-style chains with step ``2 (r ||eps|| / ||g||)^2`` and projection after each step."""
    return _run(config, score, constraint, n_samples, dim, adaptive=True)


def _run(config, score, constraint, n_samples, dim, adaptive):
    constraint = IdentityConstraint() if constraint is None else constraint
    d = _resolve_dim(score, constraint, dim)
    sched = config.schedule
    rng = RngStream(config.seed, 0)
    x = sched.sigmas[-1] * rng.normal((n_samples, d))
    buf = _TraceBuffer(n_samples, sched.T * config.M)
    last_gamma = np.full(n_samples, np.nan)
    project_always = adaptive or config.variant == "pgdm_alg1"
    projected = False
    for t in range(sched.T, 0, -1):
        sigma, gamma_t = sched.sigma(t), sched.gamma(t)
        active = project_always and config.projects_at(t)
        for i in range(1, config.M + 1):
            eps = rng.normal(x.shape)
            g = np.asarray(score(x, sigma), dtype=np.float64)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"score returned non-finite values at (t={t}, i={i})")
            gnorm = np.linalg.norm(g, axis=1)
            if adaptive:
                gamma = snr_step_size(eps, g, config.snr_r, config.snr_norm, last_gamma)
                fallback = np.isnan(gamma)
                if np.any(fallback):
                    logger.info("zero score norm at (t=%d, i=%d); using schedule step", t, i)
                    gamma[fallback] = gamma_t
                last_gamma = gamma
            else:
                gamma = np.full(n_samples, gamma_t)
            proposal = x + gamma[:, None] * g + np.sqrt(2.0 * gamma)[:, None] * eps
            if active:
                x, post = _lenient_project(constraint, proposal, x if projected else None)
                pre = np.sum((x - proposal) ** 2, axis=1)
                projected = True
            else:
                x = proposal
                pre = post = constraint.distance_sq(x) if config.track_errors else np.nan
            buf.record(t, i, pre, post, gnorm, gamma)
            if not np.all(np.abs(x) <= config.divergence_bound):
                raise DivergenceError(f"iterates diverged at (t={t}, i={i})", buf.chains())
    if config.variant == "post_proc":
        x, _ = _lenient_project(constraint, x)
    return x, buf.chains()


class ProjectedLangevinSampler(BaseEstimator):
    """Estimator front end: ``fit`` builds a score model from data, ``sample`` draws.

    ``score_model`` is ``"empirical"`` (Gaussian-smoothed training set,
    bandwidth ``bandwidth``), ``"mlp"`` (trained by denoising score matching)
    or any prefit callable ``score(x, sigma)``.
    """

    def __init__(self, constraint=None, score_model="empirical", bandwidth=1e-4,
                 sigma_min=0.01, sigma_max=1.0, T=10, M=100, projection_start_t=None,
                 variant="pgdm_alg1", snr_r=0.16, seed=0, mlp_params=None):
        self.constraint = constraint
        self.score_model = score_model
        self.bandwidth = bandwidth
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.T = T
        self.M = M
        self.projection_start_t = projection_start_t
        self.variant = variant
        self.snr_r = snr_r
        self.seed = seed
        self.mlp_params = mlp_params

    def fit(self, X=None, y=None):
        from .score import DsmScoreModel, GaussianMixture

        self.schedule_ = make_geometric_schedule(self.sigma_min, self.sigma_max, self.T)
        if callable(self.score_model):
            self.score_ = self.score_model
            self.n_features_in_ = getattr(self.score_model, "dim", None)
            return self
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        if self.score_model == "empirical":
            self.score_ = GaussianMixture.from_samples(X, self.bandwidth)
        elif self.score_model == "mlp":
            params = dict(sigma_min=self.sigma_min, sigma_max=self.sigma_max,
                          n_levels=self.T, seed=self.seed)
            params.update(self.mlp_params or {})
            self.score_ = DsmScoreModel(**params).fit(X)
        else:
            raise ConfigurationError(f"unknown score_model {self.score_model!r}")
        return self

    def config(self) -> SamplerConfig:
        check_is_fitted(self, "schedule_")
        return SamplerConfig(self.schedule_, self.M, self.projection_start_t, self.variant,
                             self.snr_r, seed=self.seed)

    def sample(self, n_samples=1, return_traces=False):
        cfg = self.config()
        X, traces = sample(cfg, self.score_, self.constraint, n_samples, self.n_features_in_)
        self.traces_ = traces
        return (X, traces) if return_traces else X
