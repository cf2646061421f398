"""Discrete diffusion noise schedules and the continuous-time view derived from them.

A schedule is the clock shared by every sampler and every closed-form
prediction: the betas define the discrete forward chain, and the continuous
scale alpha(t) is realized exactly as sqrt(alpha_bar) at the aligned index,
never by quadrature, so simulation and theory always agree on time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Appendix-recipe threshold: starting below this residual signal scale makes
# the skipped start indistinguishable from pure noise.
ALPHA_SKIP_ADVISORY = 0.01

DEFAULT_N_STEPS = 1000
DEFAULT_BETA_MIN = 1e-4
DEFAULT_BETA_MAX = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete variance-preserving schedule with derived products.

    Index convention: step i runs over 1..n_steps; arrays are stored
    0-based, so betas[i - 1] belongs to step i. alpha_bar at i = 0 is 1.
    """

    n_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if self.n_steps < 2:
            raise ValueError(f"n_steps must be >= 2, got {self.n_steps}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        for name in ("betas", "alphas", "alpha_bars"):
            arr = getattr(self, name)
            if arr.shape != (self.n_steps,):
                raise ValueError(f"{name} must have shape ({self.n_steps},)")
        if not ((self.betas > 0) & (self.betas < 1)).all():
            raise ValueError("betas must lie strictly inside (0, 1)")
        if not np.array_equal(self.alphas, 1.0 - self.betas):
            raise ValueError("alphas must equal 1 - betas exactly")
        if not (np.diff(self.alpha_bars) < 0).all() or self.alpha_bars[0] >= 1.0:
            raise ValueError("alpha_bars must be strictly decreasing from below 1")

    def alpha_bar(self, i: int) -> float:
        """alpha_bar_i with the i = 0 convention of exactly 1."""
        self._check_index(i)
        return 1.0 if i == 0 else float(self.alpha_bars[i - 1])

    def beta(self, i: int) -> float:
        if not 1 <= i <= self.n_steps:
            raise ValueError(f"step index must be in [1, {self.n_steps}], got {i}")
        return float(self.betas[i - 1])

    def alpha(self, i: int) -> float:
        if not 1 <= i <= self.n_steps:
            raise ValueError(f"step index must be in [1, {self.n_steps}], got {i}")
        return float(self.alphas[i - 1])

    def time_of_index(self, i: int) -> float:
        """Continuous time of index i on the linear grid [0, horizon]."""
        self._check_index(i)
        return self.horizon * i / self.n_steps

    def index_of_time(self, t: float) -> int:
        """Nearest grid index for continuous time t in [0, horizon]."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"time must be in [0, {self.horizon}], got {t}")
        return int(round(t / self.horizon * self.n_steps))

    def fingerprint(self) -> str:
        """Compact provenance string for CSV headers."""
        return (
            f"linear(n={self.n_steps},beta_min={self.betas[0]:.6g},"
            f"beta_max={self.betas[-1]:.6g},T={self.horizon:.6g})"
        )

    def _check_index(self, i: int) -> None:
        if not 0 <= i <= self.n_steps:
            raise ValueError(f"index must be in [0, {self.n_steps}], got {i}")


@dataclass(frozen=True)
class SkipPlan:
    """Where a skipped reverse run starts and how much signal remains there."""

    delta_skip: int
    n_skip: int
    alpha_at_skip: float
    recipe_violated: bool  # advisory only, never an error


def build_linear_schedule(
    n_steps: int = DEFAULT_N_STEPS,
    beta_min: float = DEFAULT_BETA_MIN,
    beta_max: float = DEFAULT_BETA_MAX,
    horizon: float = 1.0,
) -> NoiseSchedule:
    """Linearly interpolated betas from beta_min to beta_max inclusive."""
    if n_steps < 2:
        raise ValueError(f"n_steps must be >= 2, got {n_steps}")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(
            f"need 0 < beta_min <= beta_max < 1, got beta_min={beta_min}, beta_max={beta_max}"
        )
    betas = np.linspace(beta_min, beta_max, n_steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(
        n_steps=n_steps,
        betas=betas,
        alphas=alphas,
        alpha_bars=alpha_bars,
        horizon=horizon,
    )


def alpha_continuous(schedule: NoiseSchedule, i: int) -> float:
    """Continuous signal scale alpha(t) at index i, i.e. sqrt(alpha_bar_i)."""
    return float(np.sqrt(schedule.alpha_bar(i)))


def plan_skip(schedule: NoiseSchedule, delta_skip: int) -> SkipPlan:
    """Plan a reverse run that starts delta_skip indices early."""
    if not 0 <= delta_skip < schedule.n_steps:
        raise ValueError(
            f"delta_skip must be in [0, {schedule.n_steps - 1}], got {delta_skip}"
        )
    n_skip = schedule.n_steps - delta_skip
    alpha_at_skip = alpha_continuous(schedule, n_skip)
    return SkipPlan(
        delta_skip=delta_skip,
        n_skip=n_skip,
        alpha_at_skip=alpha_at_skip,
        recipe_violated=alpha_at_skip <= ALPHA_SKIP_ADVISORY,
    )
