"""Named samplers composing initialization, dynamics, and score scaling.

Three modes share one machinery: standard (neutral everything),
boost_skip (gamma-scaled init plus a shortened reverse run), and
temperature (flattened score at every step). Each mode runs under either
stochastic or deterministic dynamics. Sampling is vectorized across
trajectories but draws noise from per-trajectory streams, so batches are
bitwise identical to one-at-a-time execution and to any worker split.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from bnslab.dynamics import Rng, RngStream, _generator, ancestral_mean
from bnslab.schedule import NoiseSchedule, plan_skip
from bnslab.score import ScoreField

MODES = ("standard", "boost_skip", "temperature")
DYNAMICS = ("stochastic", "ode")

# Trajectories per vectorized chunk, sized so the pre-pulled noise block
# (chunk x start_index x d float64) stays in the tens of megabytes.
CHUNK_TARGET_FLOATS = 4_000_000

THREADS_ENV_VAR = "BNSLAB_THREADS"


class BatchError(RuntimeError):
    """A trajectory inside a batch produced a non-finite state or score."""

    def __init__(self, traj_id: int, i: int, message: str):
        super().__init__(f"trajectory {traj_id} failed at step i={i}: {message}")
        self.traj_id = traj_id
        self.i = i


@dataclass(frozen=True)
class SamplerConfig:
    """Complete description of one sampling run.

    Mode invariants: standard pins gamma=1, delta_skip=0, tau=1;
    temperature pins gamma=1, delta_skip=0; boost_skip pins tau=1 and
    permits gamma < 1 (quality regime).
    """

    mode: str
    n_samples: int
    seed: int
    dynamics: str = "stochastic"
    gamma: float = 1.0
    delta_skip: int = 0
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dynamics not in DYNAMICS:
            raise ValueError(
                f"dynamics must be one of {DYNAMICS}, got {self.dynamics!r}"
            )
        if self.n_samples < 1:
            raise ValueError(f"n_samples must be positive, got {self.n_samples}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.delta_skip < 0:
            raise ValueError(f"delta_skip must be >= 0, got {self.delta_skip}")
        if self.mode == "standard" and not (
            self.gamma == 1.0 and self.delta_skip == 0 and self.tau == 1.0
        ):
            raise ValueError("standard mode requires gamma=1, delta_skip=0, tau=1")
        if self.mode == "temperature" and not (
            self.gamma == 1.0 and self.delta_skip == 0
        ):
            raise ValueError("temperature mode requires gamma=1, delta_skip=0")
        if self.mode == "boost_skip" and self.tau != 1.0:
            raise ValueError("boost_skip mode requires tau=1")

    def provenance_items(self) -> list:
        return [
            ("mode", self.mode),
            ("dynamics", self.dynamics),
            ("gamma", f"{self.gamma:.12g}"),
            ("delta_skip", self.delta_skip),
            ("tau", f"{self.tau:.12g}"),
            ("n_samples", self.n_samples),
            ("seed", self.seed),
        ]


@dataclass(frozen=True)
class SampleBatch:
    """Final samples of one run plus enough provenance to rerun it."""

    points: np.ndarray
    config: SamplerConfig
    provenance: Tuple[Tuple[str, str], ...]

    def __post_init__(self) -> None:
        if self.points.ndim != 2:
            raise ValueError(f"points must be 2-d, got shape {self.points.shape}")
        if self.points.shape[0] != self.config.n_samples:
            raise ValueError(
                f"expected {self.config.n_samples} rows, got {self.points.shape[0]}"
            )
        if not np.isfinite(self.points).all():
            raise ValueError("batch contains non-finite points")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def write_csv(self, path) -> None:
        """Header x0..x{d-1}, one row per sample, config as # comments."""
        lines = [f"# {key}={value}" for key, value in self.provenance]
        lines.append(",".join(f"x{j}" for j in range(self.d)))
        for row in self.points:
            lines.append(",".join(format(v, ".12g") for v in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def draw_init(config: SamplerConfig, d: int, rng: Rng) -> np.ndarray:
    """Initial state: standard normal scaled by gamma (1 unless boosting)."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    return config.gamma * _generator(rng).standard_normal(d)


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
    return max(1, n)


def _run_chunk(
    field: ScoreField,
    schedule: NoiseSchedule,
    config: SamplerConfig,
    start: int,
    offset: int,
    size: int,
) -> np.ndarray:
    """Integrate trajectories offset..offset+size-1 as one vectorized block.

    Noise layout per trajectory stream: row 0 is the init draw, row k the
    injection for step i = start - k + 1. Pulling all rows in one call
    yields the same values as stepwise draws from the same stream, which
    is what makes batch, serial, and any chunk split bitwise identical.
    """
    d = field.d
    n_draws = start if config.dynamics == "stochastic" else 1
    noise = np.empty((size, n_draws, d))
    for j in range(size):
        gen = RngStream(config.seed, offset + j).generator()
        noise[j] = gen.standard_normal((n_draws, d))

    x = config.gamma * noise[:, 0, :]
    for i in range(start, 0, -1):
        score = field.score(x, i)
        bad = ~np.isfinite(score).all(axis=1)
        if bad.any():
            j = int(np.argmax(bad))
            raise BatchError(offset + j, i, "non-finite score")
        if config.dynamics == "stochastic":
            x = ancestral_mean(x, score, schedule.alpha(i))
            if i > 1:
                x = x + math.sqrt(1.0 - schedule.alpha(i)) * noise[:, start - i + 1, :]
        else:
            x = x + 0.5 * schedule.beta(i) * (x + score)
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            j = int(np.argmax(bad))
            raise BatchError(offset + j, i, "non-finite state")
    return x


def sample(
    field: ScoreField, schedule: NoiseSchedule, config: SamplerConfig
) -> SampleBatch:
    """Draw config.n_samples finals; deterministic given config.seed.

    Trajectory j draws from stream (seed, j) regardless of batching, so
    the output is independent of chunk size and worker count. Workers are
    capped by the BNSLAB_THREADS environment variable (default 1).
    """
    start = plan_skip(schedule, config.delta_skip).n_skip
    eff_field = field if config.tau == 1.0 else field.scaled(config.tau)
    n = config.n_samples
    chunk = max(1, CHUNK_TARGET_FLOATS // max(1, start * field.d))
    spans = [(off, min(chunk, n - off)) for off in range(0, n, chunk)]

    workers = min(_worker_count(), len(spans))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(
                pool.map(
                    lambda span: _run_chunk(
                        eff_field, schedule, config, start, span[0], span[1]
                    ),
                    spans,
                )
            )
    else:
        parts = [
            _run_chunk(eff_field, schedule, config, start, off, size)
            for off, size in spans
        ]

    points = np.concatenate(parts, axis=0)
    provenance = tuple(
        [(str(k), str(v)) for k, v in config.provenance_items()]
        + [
            ("start_index", str(start)),
            ("schedule", schedule.fingerprint()),
            ("field", field.tag),
        ]
    )
    return SampleBatch(points=points, config=config, provenance=provenance)


def _mix64(value: int) -> int:
    """splitmix64 finalizer; deterministic across runs and platforms."""
    z = (value + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_cell_seed(base_seed: int, cell_index: int) -> int:
    """Per-cell seed: base xor a mixed cell index, reproducible everywhere."""
    return (base_seed ^ _mix64(cell_index)) & 0xFFFFFFFFFFFFFFFF


def sample_grid(
    field: ScoreField,
    schedule: NoiseSchedule,
    base_config: SamplerConfig,
    gamma_values: Sequence[float],
    delta_values: Sequence[int],
) -> list:
    """Sample every (gamma, delta) cell of the Cartesian grid.

    Cells run as boost_skip with seeds derived from (base seed, cell
    index), row-major over gamma then delta. Returns (gamma, delta,
    SampleBatch) triples in grid order; a failed cell carries its
    BatchError in the batch slot without disturbing the other cells.
    """
    if len(gamma_values) == 0 or len(delta_values) == 0:
        raise ValueError("gamma_values and delta_values must be non-empty")
    results = []
    for gi, gamma in enumerate(gamma_values):
        for di, delta in enumerate(delta_values):
            cell_index = gi * len(delta_values) + di
            config = replace(
                base_config,
                mode="boost_skip",
                tau=1.0,
                gamma=float(gamma),
                delta_skip=int(delta),
                seed=derive_cell_seed(base_config.seed, cell_index),
            )
            try:
                batch = sample(field, schedule, config)
            except BatchError as exc:
                results.append((float(gamma), int(delta), exc))
                continue
            results.append((float(gamma), int(delta), batch))
    return results
