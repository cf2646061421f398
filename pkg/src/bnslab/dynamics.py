"""Single-step forward/reverse integrators and trajectory recording.

Two reverse-time integrators share one discrete clock: the stochastic
ancestral step and the deterministic probability-flow Euler step. Both are
pure given (score field, schedule, rng state), so trajectories can run
concurrently, each owning its own random stream. The posterior-mean
estimator and the re-noised prediction error are diagnostic views of the
same score field and never perturb the stream that drives the dynamics.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from bnslab.schedule import NoiseSchedule
from bnslab.score import ScoreField

# Substream tag ("ESTI") so recording estimation errors mid-trajectory
# draws its fresh noise from a parallel stream and leaves the trajectory's
# own draw sequence untouched.
ESTIMATION_TAG = 0x45535449

# Below this alpha_bar the 1/sqrt(alpha_bar) factor in the posterior mean
# amplifies score error by more than 1e6; results are flagged, not refused.
CONDITIONING_FLOOR = 1e-12


class ConditioningWarning(RuntimeWarning):
    """Posterior-mean estimate divided by a vanishing signal scale."""


class IntegrationError(RuntimeError):
    """A reverse step produced or received a non-finite state.

    Carries the failing index and state; when raised out of run_reverse
    the partial trajectory recorded so far is attached as `trajectory`.
    """

    def __init__(self, i: int, x: np.ndarray, message: str):
        super().__init__(f"step i={i}: {message}")
        self.i = i
        self.x = x
        self.trajectory: Optional["Trajectory"] = None


@dataclass(frozen=True)
class RngStream:
    """Seeded random stream; one stream per trajectory.

    Identical (seed, stream) always reproduces identical draws. Substreams
    derive independent generators keyed by (tag, index) for side-channel
    draws that must not advance the main sequence.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.stream])

    def substream(self, tag: int, index: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.stream, tag, index])


Rng = Union[RngStream, np.random.Generator]


def _generator(rng: Rng) -> np.random.Generator:
    """Accept a stream (fresh generator each call) or a live generator."""
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


@dataclass(frozen=True)
class RecordFlags:
    """Selects what run_reverse stores beyond the final state."""

    states: bool = True
    norms: bool = True
    denoised: bool = False
    estimation_errors: bool = False


@dataclass(frozen=True)
class Trajectory:
    """Recorded reverse pass, indices strictly decreasing down to 0.

    `states` holds (i, x_i) pairs. `denoised` and `estimation_errors`
    align with the visited step indices i >= 1 (no entry at index 0).
    """

    states: Tuple[Tuple[int, np.ndarray], ...]
    norms: Tuple[float, ...]
    denoised: Optional[Tuple[np.ndarray, ...]] = None
    estimation_errors: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        indices = [i for i, _ in self.states]
        if any(b >= a for a, b in zip(indices, indices[1:])):
            raise ValueError("state indices must be strictly decreasing")
        for i, x in self.states:
            if not np.isfinite(x).all():
                raise ValueError(f"non-finite state recorded at i={i}")
        if self.norms and not np.isfinite(self.norms).all():
            raise ValueError("non-finite norm recorded")

    @property
    def final(self) -> np.ndarray:
        if not self.states:
            raise ValueError("empty trajectory")
        return self.states[-1][1]

    def csv_rows(self, traj_id: int) -> list:
        """Rows (traj_id, i, norm, err, denoise_norm); blanks where unrecorded."""
        rows = []
        for k, (i, _) in enumerate(self.states):
            norm = self.norms[k] if k < len(self.norms) else ""
            err = ""
            dnorm = ""
            if self.estimation_errors is not None and k < len(self.estimation_errors):
                err = self.estimation_errors[k]
            if self.denoised is not None and k < len(self.denoised):
                dnorm = float(np.linalg.norm(self.denoised[k]))
            rows.append((traj_id, i, norm, err, dnorm))
        return rows


def forward_perturb(
    x0: np.ndarray, schedule: NoiseSchedule, i: int, rng: Rng
) -> np.ndarray:
    """One-shot forward noising: sqrt(ab_i) x0 + sqrt(1 - ab_i) z."""
    if not 1 <= i <= schedule.n_steps:
        raise ValueError(f"index {i} outside 1..{schedule.n_steps}")
    x0 = np.asarray(x0, dtype=float)
    ab = schedule.alpha_bar(i)
    z = _generator(rng).standard_normal(x0.shape)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * z


def _checked_score(field: ScoreField, x: np.ndarray, i: int) -> np.ndarray:
    s = field.score(x, i)
    if not np.isfinite(s).all():
        raise IntegrationError(i, x, "score evaluation returned non-finite values")
    return s


def ancestral_mean(x: np.ndarray, score: np.ndarray, alpha_i: float) -> np.ndarray:
    """Deterministic part of the ancestral update, shared with batch paths."""
    return (x + (1.0 - alpha_i) * score) / math.sqrt(alpha_i)


def ancestral_step(
    field: ScoreField,
    schedule: NoiseSchedule,
    x_i: np.ndarray,
    i: int,
    rng: Rng,
) -> np.ndarray:
    """One stochastic reverse step from index i to i - 1.

    Noise injection is suppressed on the final i = 1 -> 0 transition.
    """
    if not 1 <= i <= schedule.n_steps:
        raise ValueError(f"index {i} outside 1..{schedule.n_steps}")
    x_i = np.asarray(x_i, dtype=float)
    score = _checked_score(field, x_i, i)
    alpha_i = schedule.alpha(i)
    x = ancestral_mean(x_i, score, alpha_i)
    if i > 1:
        z = _generator(rng).standard_normal(x_i.shape)
        x = x + math.sqrt(1.0 - alpha_i) * z
    return x


def ode_step(
    field: ScoreField, schedule: NoiseSchedule, x_i: np.ndarray, i: int
) -> np.ndarray:
    """One explicit Euler step of the probability-flow ODE, i to i - 1.

    Reverse-time Euler on the shared grid: the drift -(beta/2)(x + s) of
    forward time flips sign when integrating toward 0, so the state moves
    by +(beta_i/2)(x + s). With the standard-normal oracle (s = -x) the
    drift vanishes and the step is the identity.
    """
    if not 1 <= i <= schedule.n_steps:
        raise ValueError(f"index {i} outside 1..{schedule.n_steps}")
    x_i = np.asarray(x_i, dtype=float)
    score = _checked_score(field, x_i, i)
    return x_i + 0.5 * schedule.beta(i) * (x_i + score)


def posterior_mean(
    field: ScoreField, schedule: NoiseSchedule, x_i: np.ndarray, i: int
) -> np.ndarray:
    """Tweedie estimate of x0 given x_i: (x_i + (1 - ab_i) s) / sqrt(ab_i)."""
    if not 1 <= i <= schedule.n_steps:
        raise ValueError(f"index {i} outside 1..{schedule.n_steps}")
    x_i = np.asarray(x_i, dtype=float)
    ab = schedule.alpha_bar(i)
    if ab < CONDITIONING_FLOOR:
        warnings.warn(
            f"alpha_bar({i}) = {ab:.3e} is below {CONDITIONING_FLOOR:.0e}; "
            "posterior mean is ill-conditioned",
            ConditioningWarning,
            stacklevel=2,
        )
    score = field.score(x_i, i)
    return (x_i + (1.0 - ab) * score) / math.sqrt(ab)


def estimation_error(
    field: ScoreField,
    schedule: NoiseSchedule,
    x_i: np.ndarray,
    i: int,
    rng: Rng,
) -> float:
    """Re-noised prediction error at step i.

    Re-noises the posterior mean with fresh eps, predicts the noise back
    from the re-noised point, and returns the l2 prediction error. With an
    RngStream the fresh eps comes from a (tag, i) substream, so computing
    this mid-trajectory leaves the trajectory's own draws unchanged and
    the value is reproducible per (stream, i).
    """
    x_i = np.asarray(x_i, dtype=float)
    x0_hat = posterior_mean(field, schedule, x_i, i)
    if isinstance(rng, RngStream):
        gen = rng.substream(ESTIMATION_TAG, i)
    else:
        gen = rng
    eps = gen.standard_normal(x_i.shape)
    ab = schedule.alpha_bar(i)
    x_prime = math.sqrt(ab) * x0_hat + math.sqrt(1.0 - ab) * eps
    eps_hat = -math.sqrt(1.0 - ab) * field.score(x_prime, i)
    return float(np.linalg.norm(eps_hat - eps))


def run_reverse(
    field: ScoreField,
    schedule: NoiseSchedule,
    start: np.ndarray,
    start_index: int,
    dynamics: str,
    rng: Rng,
    record: RecordFlags = RecordFlags(),
) -> Trajectory:
    """Integrate from start_index down to 0, recording per flags.

    dynamics is "stochastic" (ancestral) or "ode" (probability flow). The
    final state is always stored at index 0; a failing step raises
    IntegrationError with the partial trajectory attached. Passing an
    RngStream keeps estimation-error draws on an isolated substream; a raw
    generator is consumed for both stepping and estimation draws.
    """
    if dynamics not in ("stochastic", "ode"):
        raise ValueError(f"unknown dynamics {dynamics!r}")
    if not 1 <= start_index <= schedule.n_steps:
        raise ValueError(f"start_index {start_index} outside 1..{schedule.n_steps}")
    x = np.asarray(start, dtype=float)
    gen = rng.generator() if isinstance(rng, RngStream) else rng

    states: list = []
    norms: list = []
    denoised: list = []
    errors: list = []

    def _record(i: int, x_i: np.ndarray) -> None:
        if record.states or i == 0:
            states.append((i, np.array(x_i)))
        if record.norms:
            norms.append(float(np.linalg.norm(x_i)))
        if i >= 1 and record.denoised:
            denoised.append(posterior_mean(field, schedule, x_i, i))
        if i >= 1 and record.estimation_errors:
            errors.append(estimation_error(field, schedule, x_i, i, rng))

    try:
        for i in range(start_index, 0, -1):
            if not np.isfinite(x).all():
                raise IntegrationError(i, x, "non-finite state")
            _record(i, x)
            if dynamics == "stochastic":
                x = ancestral_step(field, schedule, x, i, gen)
            else:
                x = ode_step(field, schedule, x, i)
        _record(0, x)
    except IntegrationError as exc:
        exc.trajectory = Trajectory(
            states=tuple(states),
            norms=tuple(norms),
            denoised=tuple(denoised) if record.denoised else None,
            estimation_errors=tuple(errors) if record.estimation_errors else None,
        )
        raise

    return Trajectory(
        states=tuple(states),
        norms=tuple(norms),
        denoised=tuple(denoised) if record.denoised else None,
        estimation_errors=tuple(errors) if record.estimation_errors else None,
    )
