"""Uniform mid-tread quantizer and subtractive-style dither."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

# |y|/step beyond this cannot be rounded to an integer level exactly in float64
MAX_LEVEL = 2.0**52


@dataclass(frozen=True)
class QuantizerSpec:
    """Step ``step`` and range: ``levels=None`` is unbounded, otherwise the
    alphabet is ``{l * step : l = 0, +/-1, ..., +/-levels}``."""

    step: float
    levels: Optional[int] = None

    def __post_init__(self):
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError(f"quantizer step must be positive and finite, got {self.step}")
        if self.levels is not None and (int(self.levels) != self.levels or self.levels < 1):
            raise ValueError(f"levels must be a positive integer, got {self.levels}")

    @property
    def bounded(self) -> bool:
        return self.levels is not None

    @property
    def saturation_level(self) -> float:
        """Inputs with magnitude at or above this overload a finite quantizer."""
        if self.levels is None:
            return math.inf
        return (self.levels + 0.5) * self.step

    @property
    def n_levels(self) -> Optional[int]:
        return None if self.levels is None else 2 * self.levels + 1

    @property
    def bits(self) -> Optional[int]:
        return None if self.levels is None else math.ceil(math.log2(2 * self.levels + 1))


def quantize(y, delta: float):
    """Map ``y`` to ``k * delta`` with ``(k - 1/2) delta <= y < (k + 1/2) delta``.

    Works elementwise on arrays.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    y_arr = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y_arr)):
        raise ValueError("quantizer input must be finite")
    scaled = y_arr / delta
    if np.any(np.abs(scaled) >= MAX_LEVEL):
        raise ValueError("quantizer input too large relative to the step")
    out = np.floor(scaled + 0.5) * delta
    return float(out) if out.ndim == 0 else out


def quantization_error(y, delta: float):
    return quantize(y, delta) - np.asarray(y, dtype=float)


class DitherSource:
    """Seeded i.i.d. dither, uniform on ``[-step/2, step/2)``.

    Samples never depend on the signal being quantized. Two sources built
    from the same seed emit the same stream.
    """

    def __init__(self, seed: Union[int, np.random.SeedSequence, np.random.Generator], step: float):
        if not step > 0:
            raise ValueError(f"dither step must be positive, got {step}")
        self.step = float(step)
        if isinstance(seed, np.random.Generator):
            self.rng = seed
        else:
            self.rng = np.random.Generator(np.random.PCG64(seed))

    def unit(self, size=None) -> np.ndarray:
        """Raw uniform samples on [0, 1), the state consumed by every draw."""
        return self.rng.random(size)

    def draw(self, size=None, step: Optional[float] = None):
        """``size`` dither samples at ``step`` (default: the source's own step)."""
        return to_dither(self.unit(size), self.step if step is None else step)

    def dither(self) -> float:
        return float(self.draw())


def to_dither(u, step):
    """Map uniforms on [0, 1) to [-step/2, step/2) without touching +step/2."""
    half = 0.5 * np.asarray(step, dtype=float)
    nu = (np.asarray(u, dtype=float) - 0.5) * (2.0 * half)
    return np.minimum(nu, np.nextafter(half, 0.0))


def dithered_quantize(y: float, nu: float, spec: QuantizerSpec) -> Optional[float]:
    """Quantize ``y + nu``; ``None`` means a finite quantizer saturated."""
    half = 0.5 * spec.step
    if not (-half <= nu < half):
        raise ValueError(f"dither {nu} outside [-{half}, {half})")
    z = y + nu
    if spec.bounded and abs(z) >= spec.saturation_level:
        return None
    return quantize(z, spec.step)
