"""Score fields: exact Gaussian/mixture oracles and a small trained network.

All score functions return the gradient of the log marginal density of the
diffused data at a discrete step i. Oracles are closed-form; the network is
a 2-hidden-layer MLP trained by denoising score matching to predict the
standardized noise, from which the score is recovered as
-eps_hat / sqrt(1 - alpha_bar_i).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from bnslab.schedule import NoiseSchedule, alpha_continuous

EIGENVALUE_FLOOR = 1e-12

# First-layer weight scale groups. The late-time score varies over length
# scales down to ~1/50 of the data range; plain SGD is too slow to grow
# weights that large from a conventional init, so units are seeded across
# scales and the zero output layer keeps the initial loss surface tame.
MLP_INIT_SCALES = (1.0, 4.0, 16.0, 48.0)
MLP_MAGIC = b"BNS1"


class TrainingError(RuntimeError):
    """Raised when DSM training hits a non-finite loss."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian data distribution with mean mu0 and covariance Sigma0."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self) -> None:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"cov must be {d}x{d}, got {cov.shape}")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("cov must be symmetric within 1e-12")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("cov must be positive definite")

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def isotropic(d: int, variance: float, mean: Sequence[float] | None = None) -> "GaussianSpec":
        mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
        return GaussianSpec(mean=mu, cov=variance * np.eye(d))


@dataclass(frozen=True)
class MixtureSpec:
    """Finite Gaussian mixture; components share one dimension."""

    weights: np.ndarray
    components: tuple[GaussianSpec, ...]

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) == 0:
            raise ValueError("mixture needs at least one component")
        if weights.shape != (len(self.components),):
            raise ValueError("one weight per component required")
        if (weights <= 0).any():
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must sum to 1 within 1e-9, got {weights.sum()}")
        dims = {c.d for c in self.components}
        if len(dims) != 1:
            raise ValueError(f"components must share one dimension, got {dims}")

    @property
    def d(self) -> int:
        return self.components[0].d


def gaussian_marginal(
    spec: GaussianSpec, schedule: NoiseSchedule, i: int
) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the diffused Gaussian at index i: (a*mu0, I + a^2(Sigma0 - I))."""
    a = alpha_continuous(schedule, i)
    mean = a * spec.mean
    cov = np.eye(spec.d) + a * a * (spec.cov - np.eye(spec.d))
    return mean, cov


def gaussian_score(
    spec: GaussianSpec, schedule: NoiseSchedule, i: int, x: np.ndarray
) -> np.ndarray:
    """Exact score -Sigma_t^{-1}(x - mu_t) of the diffused Gaussian.

    Solved through the Cholesky factor with the same operation order as
    the mixture components, so a one-component mixture reproduces this
    value bit for bit.
    """
    mean, cov = gaussian_marginal(spec, schedule, i)
    xb, squeeze = _as_batch(x, spec.d)
    chol = np.linalg.cholesky(cov)
    y = np.linalg.solve(chol, (xb - mean).T)
    out = -np.linalg.solve(chol.T, y).T
    return out[0] if squeeze else out


def _mixture_marginal_params(
    spec: MixtureSpec, schedule: NoiseSchedule, i: int
) -> tuple[np.ndarray, np.ndarray]:
    means = np.stack([gaussian_marginal(c, schedule, i)[0] for c in spec.components])
    covs = np.stack([gaussian_marginal(c, schedule, i)[1] for c in spec.components])
    return means, covs


def mixture_score(
    spec: MixtureSpec, schedule: NoiseSchedule, i: int, x: np.ndarray
) -> np.ndarray:
    """Posterior-responsibility-weighted sum of per-component Gaussian scores.

    Responsibilities are computed with log-sum-exp stabilization. If every
    component log density underflows to -inf (astronomically far probes),
    the score of the Euclidean-nearest component mean is returned instead.
    """
    xb, squeeze = _as_batch(x, spec.d)
    n, d = xb.shape
    means, covs = _mixture_marginal_params(spec, schedule, i)

    log_dens, comp_scores = _component_log_density_and_scores(xb, means, covs)
    log_dens = log_dens + np.log(spec.weights)

    finite = np.isfinite(log_dens).any(axis=1)
    out = np.empty((n, d))
    if finite.any():
        ld = log_dens[finite]
        shifted = ld - ld.max(axis=1, keepdims=True)
        resp = np.exp(shifted)
        resp /= resp.sum(axis=1, keepdims=True)
        out[finite] = np.einsum("nk,nkd->nd", resp, comp_scores[finite])
    if (~finite).any():
        # documented fallback: nearest-component score
        far = xb[~finite]
        dist2 = ((far[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        nearest = dist2.argmin(axis=1)
        rows = np.arange(far.shape[0])
        out[~finite] = comp_scores[~finite][rows, nearest]
    return out[0] if squeeze else out


def _component_log_density_and_scores(
    xb: np.ndarray, means: np.ndarray, covs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-component Gaussian log densities and scores for a batch of probes."""
    n, d = xb.shape
    m = means.shape[0]
    log_dens = np.empty((n, m))
    scores = np.empty((n, m, d))
    log2pi = d * np.log(2 * np.pi)
    for k in range(m):
        chol = np.linalg.cholesky(covs[k])
        diff = xb - means[k]
        # solve Sigma z = diff via the Cholesky factor
        y = np.linalg.solve(chol, diff.T)
        z = np.linalg.solve(chol.T, y).T
        maha = np.einsum("nd,nd->n", diff, z)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        with np.errstate(invalid="ignore"):
            log_dens[:, k] = -0.5 * (maha + logdet + log2pi)
        scores[:, k, :] = -z
    return log_dens, scores


@dataclass(frozen=True)
class TrainConfig:
    """Denoising-score-matching run parameters."""

    n_iterations: int
    batch_size: int
    learning_rate: float
    seed: int

    def __post_init__(self) -> None:
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be non-negative")
        if self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("batch_size and learning_rate must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative 64-bit integer")


@dataclass(frozen=True)
class MlpScoreNet:
    """Noise-prediction MLP: input (x, i/N), two tanh hidden layers, output eps_hat."""

    widths: tuple[int, int, int, int]
    weights: tuple[np.ndarray, ...]  # W1, b1, W2, b2, W3, b3
    activation: str = "tanh"
    loss_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != 6:
            raise ValueError("expected 3 (W, b) layer pairs")
        for w in self.weights:
            if not np.isfinite(w).all():
                raise ValueError("network parameters must be finite")

    @property
    def d(self) -> int:
        return self.widths[3]

    def predict_eps(self, x: np.ndarray, t: float) -> np.ndarray:
        """Forward pass on probe points x with scalar time input t."""
        xb, squeeze = _as_batch(x, self.d)
        X = np.concatenate([xb, np.full((xb.shape[0], 1), t)], axis=1)
        out = _mlp_forward(self.weights, X)[0]
        return out[0] if squeeze else out

    def save(self, path: str | Path) -> None:
        """Flat binary: magic, dimension + widths as int32 LE, float64 LE params."""
        with open(path, "wb") as fh:
            fh.write(MLP_MAGIC)
            fh.write(struct.pack("<5i", self.d, *self.widths))
            for w in self.weights:
                fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())

    @staticmethod
    def load(path: str | Path) -> "MlpScoreNet":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MLP_MAGIC:
                raise ValueError(f"bad magic {magic!r}, expected {MLP_MAGIC!r}")
            d, *widths = struct.unpack("<5i", fh.read(20))
            widths = tuple(widths)
            if widths[0] != d + 1 or widths[3] != d:
                raise ValueError(f"inconsistent header: d={d}, widths={widths}")
            weights = []
            for fan_in, fan_out in zip(widths[:-1], widths[1:]):
                W = np.frombuffer(fh.read(8 * fan_in * fan_out), dtype="<f8")
                weights.append(W.reshape(fan_in, fan_out).copy())
                b = np.frombuffer(fh.read(8 * fan_out), dtype="<f8")
                weights.append(b.copy())
            leftover = fh.read(1)
            if leftover:
                raise ValueError("trailing bytes after parameters")
        return MlpScoreNet(widths=widths, weights=tuple(weights))


def _mlp_forward(weights: Sequence[np.ndarray], X: np.ndarray):
    W1, b1, W2, b2, W3, b3 = weights
    h1 = np.tanh(X @ W1 + b1)
    h2 = np.tanh(h1 @ W2 + b2)
    out = h2 @ W3 + b3
    return out, (X, h1, h2)


def _mlp_backward(weights: Sequence[np.ndarray], cache, dout: np.ndarray):
    W1, b1, W2, b2, W3, b3 = weights
    X, h1, h2 = cache
    gW3 = h2.T @ dout
    gb3 = dout.sum(axis=0)
    dh2 = (dout @ W3.T) * (1.0 - h2 * h2)
    gW2 = h1.T @ dh2
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ W2.T) * (1.0 - h1 * h1)
    gW1 = X.T @ dh1
    gb1 = dh1.sum(axis=0)
    return gW1, gb1, gW2, gb2, gW3, gb3


def _init_mlp_weights(rng: np.random.Generator, d: int, hidden: int = 128):
    n_in = d + 1
    W1 = rng.standard_normal((n_in, hidden)) / np.sqrt(n_in)
    b1 = np.zeros(hidden)
    groups = np.array_split(np.arange(hidden), len(MLP_INIT_SCALES))
    for g, s in zip(groups, MLP_INIT_SCALES):
        W1[:, g] *= s
        b1[g] = rng.uniform(-1.5 * s, 1.5 * s, size=len(g))
    W2 = rng.standard_normal((hidden, hidden)) * np.sqrt(1.0 / hidden)
    b2 = np.zeros(hidden)
    W3 = np.zeros((hidden, d))
    b3 = np.zeros(d)
    return [W1, b1, W2, b2, W3, b3]


def dsm_train(
    data_sampler: Callable[[int, np.random.Generator], np.ndarray],
    schedule: NoiseSchedule,
    config: TrainConfig,
) -> MlpScoreNet:
    """Train the noise-prediction MLP by denoising score matching.

    data_sampler(n, rng) must return an (n, d) array of data draws. Steps i
    are sampled uniformly over 1..N; the loss is the mean squared noise
    prediction error; optimization is plain SGD at a fixed learning rate.
    Deterministic given (data_sampler determinism per rng, config.seed).
    """
    rng = np.random.default_rng([config.seed, 0x44534D])
    probe = np.atleast_2d(data_sampler(1, rng))
    d = probe.shape[1]
    weights = _init_mlp_weights(rng, d)
    n = schedule.n_steps
    losses = np.empty(config.n_iterations)
    for it in range(config.n_iterations):
        x0 = np.atleast_2d(data_sampler(config.batch_size, rng))
        i = rng.integers(1, n + 1, size=x0.shape[0])
        ab = schedule.alpha_bars[i - 1]
        eps = rng.standard_normal(x0.shape)
        xt = np.sqrt(ab)[:, None] * x0 + np.sqrt(1.0 - ab)[:, None] * eps
        X = np.concatenate([xt, (i / n)[:, None]], axis=1)
        # overflow here is diagnosed via the finiteness check, not a warning
        with np.errstate(over="ignore", invalid="ignore"):
            out, cache = _mlp_forward(weights, X)
            diff = out - eps
            loss = float(np.mean(np.sum(diff * diff, axis=1)))
        if not np.isfinite(loss):
            raise TrainingError(it, "non-finite training loss")
        losses[it] = loss
        grads = _mlp_backward(weights, cache, 2.0 * diff / x0.shape[0])
        for w, g in zip(weights, grads):
            w -= config.learning_rate * g
    widths = (d + 1, weights[0].shape[1], weights[2].shape[1], d)
    return MlpScoreNet(
        widths=widths,
        weights=tuple(np.asarray(w) for w in weights),
        loss_history=losses,
    )


def net_score(
    net: MlpScoreNet, schedule: NoiseSchedule, i: int, x: np.ndarray
) -> np.ndarray:
    """Score from the trained net: -eps_hat(x, i/N) / sqrt(1 - alpha_bar_i)."""
    if not 1 <= i <= schedule.n_steps:
        raise ValueError(f"step index must be in [1, {schedule.n_steps}], got {i}")
    eps_hat = net.predict_eps(x, i / schedule.n_steps)
    return -eps_hat / np.sqrt(1.0 - schedule.alpha_bar(i))


@dataclass(frozen=True)
class ScoreField:
    """Uniform (x, i) -> score interface over the three field variants.

    tau > 1 flattens the field (score / tau) at every step; tau is part of
    the field, not the integrator, so all dynamics see one interface.
    """

    tag: str  # gaussian-oracle | mixture-oracle | trained-net
    d: int
    schedule: NoiseSchedule
    spec: GaussianSpec | MixtureSpec | None = None
    net: MlpScoreNet | None = None
    tau: float = 1.0

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def score(self, x: np.ndarray, i: int) -> np.ndarray:
        if self.tag == "gaussian-oracle":
            raw = gaussian_score(self.spec, self.schedule, i, x)
        elif self.tag == "mixture-oracle":
            raw = mixture_score(self.spec, self.schedule, i, x)
        elif self.tag == "trained-net":
            raw = net_score(self.net, self.schedule, i, x)
        else:
            raise ValueError(f"unknown field tag {self.tag!r}")
        return raw if self.tau == 1.0 else raw / self.tau

    def scaled(self, tau: float) -> "ScoreField":
        """Same field with its output divided by tau."""
        return replace(self, tau=tau)


def gaussian_field(spec: GaussianSpec, schedule: NoiseSchedule) -> ScoreField:
    return ScoreField(tag="gaussian-oracle", d=spec.d, schedule=schedule, spec=spec)


def mixture_field(spec: MixtureSpec, schedule: NoiseSchedule) -> ScoreField:
    return ScoreField(tag="mixture-oracle", d=spec.d, schedule=schedule, spec=spec)


def net_field(net: MlpScoreNet, schedule: NoiseSchedule) -> ScoreField:
    return ScoreField(tag="trained-net", d=net.d, schedule=schedule, net=net)


def _as_batch(x: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != d:
            raise ValueError(f"expected a {d}-vector, got shape {arr.shape}")
        return arr[None, :], True
    if arr.ndim == 2 and arr.shape[1] == d:
        return arr, False
    raise ValueError(f"expected shape (n, {d}) or ({d},), got {arr.shape}")
