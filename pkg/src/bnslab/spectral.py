"""Frequency filtering of initialization noise fields.

Variance boosting scales every frequency alike; these helpers split a 2D
noise field at a radial cutoff to show which bands carry the boost. Hard
(ideal) cutoffs in integer frequency-index units, so low and high parts
partition the spectrum exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

FILTER_KINDS = ("low_pass", "high_pass")


@dataclass(frozen=True)
class NoiseField:
    """One channel of initialization noise plus the boost that drew it."""

    values: np.ndarray
    gamma: float = 1.0

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 2:
            raise ValueError(f"values must be 2-d, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("noise field contains non-finite entries")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def boosted(self, gamma: float) -> "NoiseField":
        """Scale the field by gamma (linear, commutes with filtering)."""
        return NoiseField(values=gamma * self.values, gamma=gamma * self.gamma)

    @property
    def energy(self) -> float:
        return float((self.values**2).sum())


def draw_noise_field(
    height: int, width: int, gamma: float, rng: np.random.Generator
) -> NoiseField:
    """White Gaussian field scaled by gamma."""
    if height < 1 or width < 1:
        raise ValueError("field dimensions must be positive")
    return NoiseField(values=gamma * rng.standard_normal((height, width)), gamma=gamma)


def _radial_index(shape: Tuple[int, int]) -> np.ndarray:
    h, w = shape
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    return np.sqrt(ky[:, None] ** 2 + kx[None, :] ** 2)


def filter_noise(field: NoiseField, cutoff: float, kind: str) -> NoiseField:
    """Hard radial filter at the cutoff (integer frequency-index units).

    low_pass keeps radial frequencies <= cutoff; high_pass removes them,
    except cutoff 0 which means uncut and returns the field unchanged.
    For cutoff > 0 the two kinds partition the spectrum, so their outputs
    sum back to the original field.
    """
    if kind not in FILTER_KINDS:
        raise ValueError(f"kind must be one of {FILTER_KINDS}, got {kind!r}")
    if cutoff < 0:
        raise ValueError(f"cutoff must be >= 0, got {cutoff}")
    if kind == "high_pass" and cutoff == 0:
        return field
    radial = _radial_index(field.values.shape)
    spectrum = np.fft.fft2(field.values)
    if kind == "low_pass":
        spectrum = np.where(radial <= cutoff, spectrum, 0.0)
    else:
        spectrum = np.where(radial <= cutoff, 0.0, spectrum)
    return NoiseField(values=np.fft.ifft2(spectrum).real, gamma=field.gamma)


def write_field_csv(path: Union[str, Path], field: NoiseField) -> None:
    """Matrix CSV, one row per line, gamma recorded in the comment.

    Full %.17g precision so a re-imported field reproduces the original
    bit for bit.
    """
    np.savetxt(
        path,
        field.values,
        delimiter=",",
        fmt="%.17g",
        header=f"gamma={field.gamma:.17g}",
    )


def read_field_csv(path: Union[str, Path]) -> NoiseField:
    """Inverse of write_field_csv; gamma defaults to 1 if no comment."""
    gamma = 1.0
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if first.startswith("# gamma="):
        gamma = float(first[len("# gamma=") :])
    values = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return NoiseField(values=values, gamma=gamma)


def band_energy(field: NoiseField, cutoff: float) -> Tuple[float, float]:
    """Spectral energy below/above the radial cutoff.

    Scaled by 1/(H W) so low + high equals the spatial energy sum(values^2)
    (Plancherel identity).
    """
    if cutoff < 0:
        raise ValueError(f"cutoff must be >= 0, got {cutoff}")
    radial = _radial_index(field.values.shape)
    power = np.abs(np.fft.fft2(field.values)) ** 2
    scale = field.values.size
    low = float(power[radial <= cutoff].sum() / scale)
    high = float(power[radial > cutoff].sum() / scale)
    return low, high
