"""Closed-form predictions for Gaussian data under every sampler variant.

Everything here is exact arithmetic on small dense matrices: the final
moments reached by stochastic and deterministic reverse runs from a
mismatched initialization, the parameter region where the boosted start
amplifies variance, the coupled-trajectory contraction bound, the total
variation contraction factor, and the tempered target that temperature
scaling nominally aims at. Simulation modules test against these values;
nothing here simulates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from bnslab.schedule import NoiseSchedule, SkipPlan, alpha_continuous
from bnslab.score import EIGENVALUE_FLOOR, GaussianSpec, gaussian_marginal

REGION_CASES = ("empty", "upper-interval", "lower-interval", "all")


def _matfun(mat: np.ndarray, fn) -> np.ndarray:
    """Apply fn to the spectrum of a symmetric matrix, flooring eigenvalues."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.maximum(vals, EIGENVALUE_FLOOR)
    return vecs @ np.diag(fn(vals)) @ vecs.T


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


@dataclass(frozen=True)
class MomentPrediction:
    """Final-time mean and covariance reached from a mismatched start.

    marginal_mean / marginal_cov are the matched-initialization values
    (the forward marginal at the start index); initializing there makes
    the prediction collapse to the data moments.
    """

    mean: np.ndarray
    cov: np.ndarray
    regime: str
    marginal_mean: np.ndarray
    marginal_cov: np.ndarray

    def __post_init__(self) -> None:
        if self.regime not in ("sde", "ode"):
            raise ValueError(f"regime must be sde or ode, got {self.regime!r}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ValueError("predicted covariance must be symmetric")


def _start_marginal(
    spec: GaussianSpec, alpha: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Forward marginal (mean, cov) at continuous scale alpha."""
    d = spec.d
    eye = np.eye(d)
    return alpha * spec.mean, eye + alpha**2 * (spec.cov - eye)


def predict_bns_sde(
    spec: GaussianSpec,
    schedule: NoiseSchedule,
    skip: SkipPlan,
    init_mean: np.ndarray,
    init_cov: np.ndarray,
) -> MomentPrediction:
    """Moments after a stochastic reverse run started at the skip index.

    mean = mu0 + M (init_mean - mean_Ts) and cov = Sigma0 + M (init_cov -
    cov_Ts) M with M = alpha Sigma0 cov_Ts^{-1}; the sandwich form keeps
    the result symmetric and agrees with the plain product whenever the
    initialization commutes with Sigma0 (isotropic init always does).
    """
    init_mean = np.atleast_1d(np.asarray(init_mean, dtype=float))
    init_cov = np.atleast_2d(np.asarray(init_cov, dtype=float))
    alpha = skip.alpha_at_skip
    mean_ts, cov_ts = _start_marginal(spec, alpha)
    transfer = alpha * spec.cov @ _matfun(cov_ts, lambda v: 1.0 / v)
    mean = spec.mean + transfer @ (init_mean - mean_ts)
    cov = spec.cov + transfer @ (init_cov - cov_ts) @ transfer.T
    return MomentPrediction(
        mean=mean,
        cov=_symmetrize(cov),
        regime="sde",
        marginal_mean=mean_ts,
        marginal_cov=cov_ts,
    )


def predict_bns_ode(
    spec: GaussianSpec,
    schedule: NoiseSchedule,
    skip: SkipPlan,
    init_mean: np.ndarray,
    init_cov: np.ndarray,
) -> MomentPrediction:
    """Moments after a deterministic reverse run started at the skip index.

    The flow transports the start law linearly by S = Sigma0^{1/2}
    cov_Ts^{-1/2}: mean = mu0 + S (init_mean - mean_Ts), cov = S init_cov
    S. For matched init this is the identity map onto the data moments.
    """
    init_mean = np.atleast_1d(np.asarray(init_mean, dtype=float))
    init_cov = np.atleast_2d(np.asarray(init_cov, dtype=float))
    alpha = skip.alpha_at_skip
    mean_ts, cov_ts = _start_marginal(spec, alpha)
    root = _matfun(spec.cov, np.sqrt) @ _matfun(cov_ts, lambda v: 1.0 / np.sqrt(v))
    mean = spec.mean + root @ (init_mean - mean_ts)
    cov = root @ init_cov @ root.T
    return MomentPrediction(
        mean=mean,
        cov=_symmetrize(cov),
        regime="ode",
        marginal_mean=mean_ts,
        marginal_cov=cov_ts,
    )


@dataclass(frozen=True)
class AmplificationRegion:
    """Start-time region where the boosted run inflates the variance.

    Membership at start index i reduces to the scalar discriminant
    gamma^2 - 1 > alpha_bar_i (sigma0^2 - 1); the case tag classifies the
    region shape over start times, kappa is the continuous-scale boundary
    (defined when sigma0 != 1), and boundary_index is the discrete index
    realizing it (0 when every positive start time qualifies, None when
    no grid index does).
    """

    case: str
    sigma0: float
    gamma: float
    schedule: NoiseSchedule
    kappa: Optional[float]
    boundary_index: Optional[int]

    def __post_init__(self) -> None:
        if self.case not in REGION_CASES:
            raise ValueError(f"case must be one of {REGION_CASES}, got {self.case!r}")

    def contains_index(self, i: int) -> bool:
        """True when starting at index i amplifies variance (strictly)."""
        if not 1 <= i <= self.schedule.n_steps:
            raise ValueError(f"index {i} outside 1..{self.schedule.n_steps}")
        ab = self.schedule.alpha_bar(i)
        return self.gamma**2 - 1.0 > ab * (self.sigma0**2 - 1.0)

    def contains_delta(self, delta_skip: int) -> bool:
        return self.contains_index(self.schedule.n_steps - delta_skip)


def amplification_region(
    sigma0: float, gamma: float, schedule: NoiseSchedule
) -> AmplificationRegion:
    """Classify where boosting by gamma amplifies sigma0-variance data."""
    if not sigma0 > 0 or not gamma > 0:
        raise ValueError("sigma0 and gamma must be positive")

    if sigma0 == 1.0:
        kappa = None
        case = "all" if gamma > 1.0 else "empty"
    else:
        ratio = (gamma**2 - 1.0) / (sigma0**2 - 1.0)
        kappa = math.sqrt(max(ratio, 0.0))
        if sigma0 > 1.0:
            case = "upper-interval" if gamma > 1.0 else "empty"
        else:
            case = "all" if gamma >= 1.0 else "lower-interval"

    boundary: Optional[int] = None
    if case == "all":
        boundary = 0
    elif case == "upper-interval":
        # Start times above the boundary: smallest member index; index 0
        # when kappa >= 1 so every positive start time qualifies.
        if kappa is not None and kappa >= 1.0:
            boundary = 0
        else:
            disc = gamma**2 - 1.0 > schedule.alpha_bars * (sigma0**2 - 1.0)
            boundary = int(np.argmax(disc)) + 1 if disc.any() else None
    elif case == "lower-interval":
        disc = gamma**2 - 1.0 > schedule.alpha_bars * (sigma0**2 - 1.0)
        boundary = int(len(disc) - np.argmax(disc[::-1])) if disc.any() else None

    return AmplificationRegion(
        case=case,
        sigma0=float(sigma0),
        gamma=float(gamma),
        schedule=schedule,
        kappa=kappa,
        boundary_index=boundary,
    )


@dataclass(frozen=True)
class ContractionReport:
    """Coupled-trajectory error bound at one step of a skipped run."""

    lam: float
    floor_term: float
    init_term: float
    bound: float
    C: float
    B: float
    gamma: float
    d: int

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"contraction rate must be in (0, 1), got {self.lam}")


def contraction_rate(schedule: NoiseSchedule, i: int, n_skip: int) -> float:
    """max over j in {i+1..n_skip} of sqrt(alpha_j) (1-ab_{j-1})/(1-ab_j)."""
    if not 0 <= i < n_skip <= schedule.n_steps:
        raise ValueError(
            f"need 0 <= i < n_skip <= {schedule.n_steps}, got i={i}, n_skip={n_skip}"
        )
    j = np.arange(i + 1, n_skip + 1)
    ab = np.concatenate([[1.0], schedule.alpha_bars])
    factors = np.sqrt(schedule.alphas[j - 1]) * (1.0 - ab[j - 1]) / (1.0 - ab[j])
    return float(factors.max())


def contraction_bound(
    schedule: NoiseSchedule, i: int, n_skip: int, gamma: float, B: float, d: int
) -> ContractionReport:
    """Bound on the mean squared coupled error at step i.

    Two terms: a diffusion floor 2C/(1 - lam^2) with C = d (1 - ab_{n_skip}),
    and the initial mismatch B^2 + gamma^2 d decayed by lam^{2 (n_skip - i)}.
    At i = n_skip the decay factor is exactly 1 and the rate is taken over
    the single boundary step.
    """
    if not B > 0:
        raise ValueError(f"B must be positive, got {B}")
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if not 0 <= i <= n_skip:
        raise ValueError(f"need 0 <= i <= n_skip={n_skip}, got i={i}")
    lam = contraction_rate(schedule, min(i, n_skip - 1), n_skip)
    if lam >= 1.0:
        raise RuntimeError(f"contraction rate {lam} >= 1 on a valid schedule")
    C = d * (1.0 - schedule.alpha_bar(n_skip))
    floor_term = 2.0 * C / (1.0 - lam**2)
    init_term = lam ** (2 * (n_skip - i)) * (B**2 + gamma**2 * d)
    return ContractionReport(
        lam=lam,
        floor_term=floor_term,
        init_term=init_term,
        bound=floor_term + init_term,
        C=C,
        B=float(B),
        gamma=float(gamma),
        d=int(d),
    )


def _q_tail(x: float) -> float:
    """Standard normal upper tail via the complementary error function."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def tv_contraction_factor(
    B: float, L1: float, t_min: float, t_max: float, schedule: NoiseSchedule
) -> float:
    """Per-window total-variation contraction factor, in [0, 1).

    1 - 2 Q(B / (2 sqrt(a_max^{-2} - a_min^{-2}))) exp(-B L1 / t_min
    - L1^2 a_max^{-2} / t_min^2) where a(t) is the continuous scale at
    the aligned index. Approaches 1 as B grows.
    """
    if not (B > 0 and L1 > 0):
        raise ValueError("B and L1 must be positive")
    if not 0 < t_min < t_max <= schedule.horizon:
        raise ValueError(
            f"need 0 < t_min < t_max <= {schedule.horizon}, "
            f"got t_min={t_min}, t_max={t_max}"
        )
    a_min = alpha_continuous(schedule, schedule.index_of_time(t_min))
    a_max = alpha_continuous(schedule, schedule.index_of_time(t_max))
    inv2_min = 1.0 / a_min**2
    inv2_max = 1.0 / a_max**2
    if inv2_max <= inv2_min:
        raise RuntimeError(
            f"scale inverses out of order: {inv2_max} <= {inv2_min} "
            f"for t_min={t_min}, t_max={t_max}"
        )
    spread = math.sqrt(inv2_max - inv2_min)
    damping = math.exp(-B * L1 / t_min - L1**2 * inv2_max / t_min**2)
    # For large B the tail product underflows and 1 - 0 would land exactly
    # on 1; the factor is strictly below 1 for finite inputs, so return the
    # nearest representable value inside the interval instead.
    return min(1.0 - 2.0 * _q_tail(B / (2.0 * spread)) * damping,
               math.nextafter(1.0, 0.0))


def tempered_target_moments(
    spec: GaussianSpec, schedule: NoiseSchedule, tau: float, i: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Moments of the normalized tau-tempered forward marginal at index i.

    Tempering a Gaussian rescales covariance by tau and keeps the mean,
    so the nominal target of temperature scaling is (mu_i, tau Sigma_i).
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    mean, cov = gaussian_marginal(spec, schedule, i)
    return mean, tau * cov
