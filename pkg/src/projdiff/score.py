"""Score fields: closed-form Gaussian mixtures and a small numpy MLP trained by DSM.

A score field is any callable ``score(x, sigma)`` mapping a batch ``(n, d)``
and a noise level to the gradient of the log density of the
``sigma``-perturbed data distribution, shape ``(n, d)``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import (ConfigurationError, DimensionError, NoiseSchedule, NumericError,
                   RngStream, as_batch)

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianMixture:
    """Diagonal-covariance Gaussian mixture.

    Parameters
    ----------
    weights : (K,) array on the simplex
    means : (K, d) array
    variances : (K, d) array, or (K,) for isotropic components
    optimum_mean : the global mode used by the theory probes; defaults to the
        mean of the heaviest component.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    optimum_mean: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        m = np.asarray(self.means, dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None] if w.size > 1 else m[None, :]
        v = np.asarray(self.variances, dtype=np.float64)
        if v.ndim == 0:
            v = np.full(m.shape, float(v))
        elif v.ndim == 1:
            v = np.repeat(v[:, None], m.shape[1], axis=1) if v.size == m.shape[0] else \
                np.broadcast_to(v, m.shape).copy()
        if m.shape[0] != w.size or v.shape != m.shape:
            raise DimensionError("weights, means and variances disagree on K or d")
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
            raise ConfigurationError("mixture weights must lie on the simplex")
        if np.any(v <= 0):
            raise ConfigurationError("component variances must be positive")
        mu = m[np.argmax(w)] if self.optimum_mean is None else \
            np.asarray(self.optimum_mean, dtype=np.float64).reshape(m.shape[1])
        for name, arr in (("weights", w), ("means", m), ("variances", v), ("optimum_mean", mu)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def K(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def single(cls, mean, variance=1.0) -> "GaussianMixture":
        mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        return cls(np.ones(1), mean[None, :], np.broadcast_to(variance, mean.shape)[None, :],
                   optimum_mean=mean)

    @classmethod
    def from_samples(cls, X, variance: float) -> "GaussianMixture":
        """Equal-weight mixture with one isotropic component per data point.

        Its perturbed score is the exact score of the smoothed empirical
        distribution, a training-free stand-in for a learned model.
        """
        X = check_array(X, dtype=np.float64)
        return cls(np.full(len(X), 1.0 / len(X)), X, np.full(len(X), float(variance)))

    def _check(self, x):
        return as_batch(x, self.dim)

    def _terms(self, x: np.ndarray, sigma: float):
        inv = 1.0 / (self.variances + float(sigma) ** 2)
        # squared Mahalanobis distances via matrix products, (n, K)
        maha = (x**2) @ inv.T - 2.0 * x @ (self.means * inv).T + np.sum(self.means**2 * inv, axis=1)
        maha = np.maximum(maha, 0.0)
        log_norm = -0.5 * (self.dim * LOG_2PI - np.sum(np.log(inv), axis=1))
        log_comp = np.log(self.weights) + log_norm - 0.5 * maha
        return log_comp, inv

    def log_density(self, x, sigma: float = 0.0):
        x, single = self._check(x)
        log_comp, _ = self._terms(x, sigma)
        out = logsumexp(log_comp, axis=1)
        return float(out[0]) if single else out

    def score(self, x, sigma: float = 0.0):
        x, single = self._check(x)
        log_comp, inv = self._terms(x, sigma)
        resp = np.exp(log_comp - logsumexp(log_comp, axis=1, keepdims=True))
        out = resp @ (self.means * inv) - x * (resp @ inv)
        return out[0] if single else out

    __call__ = score

    def sample(self, n: int, rng: RngStream, sigma: float = 0.0) -> np.ndarray:
        comp = rng.generator.choice(self.K, size=n, p=self.weights)
        std = np.sqrt(self.variances[comp] + float(sigma) ** 2)
        return self.means[comp] + std * rng.normal((n, self.dim))


def gmm_log_density(gmm: GaussianMixture, x, sigma: float = 0.0):
    """Log density of ``gmm`` convolved with ``N(0, sigma^2 I)``."""
    return gmm.log_density(x, sigma)


def gmm_score(gmm: GaussianMixture, x, sigma: float = 0.0):
    """Gradient of :func:`gmm_log_density` with respect to ``x``."""
    return gmm.score(x, sigma)


# --------------------------------------------------------------------------- MLP

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda z, a: 1.0 - a**2),
    "softplus": (lambda z: np.logaddexp(0.0, z), lambda z, a: 0.5 * (1.0 + np.tanh(0.5 * z))),
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
}
CONDITIONING_MODES = ("log_sigma_input_and_scale", "none")


@dataclass
class MlpScoreNet:
    """Fully connected score network.

    With ``conditioning="log_sigma_input_and_scale"`` the input is
    ``[x, log sigma]`` and the output is divided by ``sigma``; with ``"none"``
    the net is a plain map of ``x``. ``weights[l]`` has shape ``(out, in)``.
    """

    widths: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    activation: str = "tanh"
    conditioning: str = "log_sigma_input_and_scale"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigurationError(f"unknown conditioning {self.conditioning!r}")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("need one weight matrix and bias per layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.widths[l + 1], self.widths[l]) or b.shape != (self.widths[l + 1],):
                raise DimensionError(f"layer {l} has shape {W.shape}/{b.shape}")
        if self.output_dim != self.data_dim:
            raise DimensionError("output dimension must equal data dimension")

    @classmethod
    def init(cls, data_dim: int, hidden: Sequence[int], rng: RngStream,
             activation: str = "tanh", conditioning: str = "log_sigma_input_and_scale",
             zero: bool = False) -> "MlpScoreNet":
        in_dim = data_dim + (1 if conditioning != "none" else 0)
        widths = [in_dim, *[int(h) for h in hidden], data_dim]
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            if zero:
                W = np.zeros((fan_out, fan_in))
            else:
                W = rng.normal((fan_out, fan_in)) * np.sqrt(1.0 / fan_in)
            weights.append(W)
            biases.append(np.zeros(fan_out))
        if not zero:
            weights[-1] *= 0.1
        return cls(widths, weights, biases, activation, conditioning)

    @property
    def data_dim(self) -> int:
        return self.widths[0] - (1 if self.conditioning != "none" else 0)

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> List[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.parameters()])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        pos = 0
        for l in range(len(self.weights)):
            for attr in ("weights", "biases"):
                p = getattr(self, attr)[l]
                getattr(self, attr)[l] = flat[pos:pos + p.size].reshape(p.shape).copy()
                pos += p.size
        if pos != flat.size:
            raise DimensionError(f"expected {pos} parameters, got {flat.size}")

    def copy(self) -> "MlpScoreNet":
        return MlpScoreNet(list(self.widths), [W.copy() for W in self.weights],
                           [b.copy() for b in self.biases], self.activation, self.conditioning)

    def __call__(self, x, sigma):
        return mlp_forward(self, x, sigma)

    def save(self, path) -> None:
        """Write a JSON header line followed by little-endian float64 parameters."""
        header = {"widths": self.widths, "activation": self.activation,
                  "conditioning": self.conditioning, "n_params": int(self.flat_parameters().size)}
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(self.flat_parameters().astype("<f8").tobytes())

    @classmethod
    def load(cls, path) -> "MlpScoreNet":
        raw = Path(path).read_bytes()
        head, _, body = raw.partition(b"\n")
        header = json.loads(head)
        flat = np.frombuffer(body, dtype="<f8").astype(np.float64)
        widths = header["widths"]
        net = cls(widths, [np.zeros((o, i)) for i, o in zip(widths[:-1], widths[1:])],
                  [np.zeros(o) for o in widths[1:]], header["activation"], header["conditioning"])
        net.set_flat_parameters(flat)
        return net


def _inputs(net: MlpScoreNet, x, sigma):
    x, single = as_batch(x)
    if x.shape[1] != net.data_dim:
        raise DimensionError(f"net expects dimension {net.data_dim}, got {x.shape[1]}")
    if net.conditioning == "none":
        return x, None, single
    sig = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (x.shape[0],))
    if np.any(sig <= 0):
        raise ConfigurationError("sigma must be positive for a sigma-conditioned net")
    return np.hstack([x, np.log(sig)[:, None]]), sig, single


def _forward(net: MlpScoreNet, x, sigma):
    h, sig, single = _inputs(net, x, sigma)
    act, _ = _ACTIVATIONS[net.activation]
    cache = [(None, h)]
    n_layers = len(net.weights)
    for l, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ W.T + b
        h = z if l == n_layers - 1 else act(z)
        cache.append((z, h))
    out = h if sig is None else h / sig[:, None]
    return out, cache, sig, single


def mlp_forward(net: MlpScoreNet, x, sigma=1.0):
    """Evaluate the network on a vector or batch."""
    out, _, _, single = _forward(net, x, sigma)
    return out[0] if single else out


def mlp_backward(net: MlpScoreNet, x, sigma, upstream) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Reverse-mode gradients ``[(dW_l, db_l), ...]`` of ``sum(upstream * forward(x))``."""
    out, cache, sig, single = _forward(net, x, sigma)
    g = np.asarray(upstream, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != out.shape:
        raise DimensionError(f"upstream gradient shape {g.shape} != output shape {out.shape}")
    if sig is not None:
        g = g / sig[:, None]
    _, dact = _ACTIVATIONS[net.activation]
    grads = []
    for l in range(len(net.weights) - 1, -1, -1):
        z, a = cache[l + 1]
        if l != len(net.weights) - 1:
            g = g * dact(z, a)
        h_prev = cache[l][1]
        grads.append((g.T @ h_prev, g.sum(axis=0)))
        g = g @ net.weights[l]
    return grads[::-1]


# --------------------------------------------------------------------------- DSM

@dataclass
class DsmConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 2e-3
    seed: int = 0
    schedule: Optional[NoiseSchedule] = None
    holdout_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigurationError("epochs, batch_size and learning_rate must be positive")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigurationError("holdout_fraction must lie in (0, 1)")


@dataclass
class DsmResult:
    net: MlpScoreNet
    train_loss: List[float] = field(default_factory=list)
    holdout_loss: List[float] = field(default_factory=list)
    initial_holdout_loss: float = float("nan")


def dsm_loss(net: MlpScoreNet, x0: np.ndarray, sigmas: np.ndarray, eps: np.ndarray):
    """Weighted denoising score-matching loss and its gradient w.r.t. the output.

    Per sample: ``0.5 * sigma^2 * ||s(x0 + sigma eps, sigma) + eps / sigma||^2``.
    """
    xt = x0 + sigmas[:, None] * eps
    s = mlp_forward(net, xt, sigmas)
    resid = s + eps / sigmas[:, None]
    w = sigmas[:, None] ** 2
    loss = 0.5 * np.mean(np.sum(w * resid**2, axis=1))
    return loss, xt, w * resid / len(x0)


def _adam(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    state["t"] += 1
    t = state["t"]
    for k, (p, g) in enumerate(zip(params, grads)):
        m, v = state["m"][k], state["v"][k]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        p -= lr * (m / (1 - beta1**t)) / (np.sqrt(v / (1 - beta2**t)) + eps)


def dsm_train(net: MlpScoreNet, data, schedule: NoiseSchedule, cfg: DsmConfig) -> DsmResult:
    """Fit ``net`` in place by denoising score matching over the schedule's levels.

    Noise levels are drawn uniformly from the ladder per sample. A
    ``holdout_fraction`` split with a frozen noise draw tracks generalisation.
    """
    X = check_array(np.asarray(data, dtype=np.float64))
    if X.shape[1] != net.data_dim:
        raise DimensionError(f"data dimension {X.shape[1]} != net dimension {net.data_dim}")
    rng = RngStream(cfg.seed, 1)
    order = rng.generator.permutation(len(X))
    n_hold = max(1, int(round(cfg.holdout_fraction * len(X)))) if len(X) > 1 else 0
    hold, train = X[order[:n_hold]], X[order[n_hold:]]
    if len(train) == 0:
        train = hold
    hold = hold if len(hold) else train
    eval_rng = RngStream(cfg.seed, 2)
    reps = max(1, 512 // len(hold))
    hold_x = np.repeat(hold, reps, axis=0)
    hold_sig = schedule.sigmas[eval_rng.integers(0, schedule.T, len(hold_x))]
    hold_eps = eval_rng.normal(hold_x.shape)

    result = DsmResult(net)
    result.initial_holdout_loss = dsm_loss(net, hold_x, hold_sig, hold_eps)[0]
    params = net.parameters()
    state = {"t": 0, "m": [np.zeros_like(p) for p in params], "v": [np.zeros_like(p) for p in params]}
    for epoch in range(cfg.epochs):
        perm = rng.generator.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(train), cfg.batch_size):
            x0 = train[perm[start:start + cfg.batch_size]]
            sig = schedule.sigmas[rng.integers(0, schedule.T, len(x0))]
            eps = rng.normal(x0.shape)
            loss, xt, g_out = dsm_loss(net, x0, sig, eps)
            if not np.isfinite(loss):
                raise TrainingError(f"DSM loss became non-finite at epoch {epoch}")
            grads = mlp_backward(net, xt, sig, g_out)
            _adam(params, [g for pair in grads for g in pair], state, cfg.learning_rate)
            total += loss * len(x0)
            count += len(x0)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingError(f"parameters became non-finite at epoch {epoch}")
        result.train_loss.append(total / count)
        result.holdout_loss.append(dsm_loss(net, hold_x, hold_sig, hold_eps)[0])
        if not np.isfinite(result.holdout_loss[-1]):
            raise TrainingError(f"held-out loss became non-finite at epoch {epoch}")
    logger.info("dsm_train: held-out loss %.4g -> %.4g", result.initial_holdout_loss,
                result.holdout_loss[-1])
    return result


class DsmScoreModel(BaseEstimator):
    """Estimator wrapper: ``fit(X)`` trains an MLP score, the fitted object is a score field.

    Example
    -------
    >>> model = DsmScoreModel(sigma_min=0.05, sigma_max=3.0, epochs=5).fit(X)  # doctest: +SKIP
    >>> model(X[:3], 0.5)  # doctest: +SKIP
    """

    def __init__(self, hidden=(64, 64), activation="tanh", sigma_min=0.01, sigma_max=1.0,
                 n_levels=10, epochs=200, batch_size=128, learning_rate=2e-3, seed=0):
        self.hidden = hidden
        self.activation = activation
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.n_levels = n_levels
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y=None):
        from .core import make_geometric_schedule

        X = check_array(X, dtype=np.float64)
        self.schedule_ = make_geometric_schedule(self.sigma_min, self.sigma_max, self.n_levels)
        net = MlpScoreNet.init(X.shape[1], self.hidden, RngStream(self.seed, 0), self.activation)
        cfg = DsmConfig(self.epochs, self.batch_size, self.learning_rate, self.seed, self.schedule_)
        self.result_ = dsm_train(net, X, self.schedule_, cfg)
        self.net_ = self.result_.net
        self.n_features_in_ = X.shape[1]
        return self

    def __call__(self, x, sigma):
        check_is_fitted(self, "net_")
        return mlp_forward(self.net_, x, sigma)

    score = __call__


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity of two batches."""
    num = np.sum(a * b, axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    if np.any(den == 0):
        raise NumericError("cosine similarity of a zero vector")
    return num / den
