"""Decaying gain sequences alpha(i) = s * a / (i + 1)**tau and step schedules."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np


@dataclass(frozen=True)
class WeightSequence:
    """Gains ``alpha(i) = scale * a / (i + 1)**tau``.

    ``tau_d``/``d0`` optionally describe a time-varying quantizer step
    ``delta(i) = d0 * (i + 1)**tau_d``; leave ``tau_d`` as ``None`` for a
    constant step.
    """

    a: float
    tau: float = 1.0
    scale: float = 1.0
    tau_d: Optional[float] = None
    d0: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.tau_d is not None and self.tau_d < 0:
            raise ValueError(f"tau_d must be non-negative, got {self.tau_d}")
        if not self.d0 > 0:
            raise ValueError(f"d0 must be positive, got {self.d0}")

    @property
    def gain(self) -> float:
        """Leading coefficient ``scale * a``."""
        return self.scale * self.a

    def scaled(self, scale: float) -> "WeightSequence":
        return WeightSequence(self.a, self.tau, scale, self.tau_d, self.d0)

    def alpha(self, i):
        return alpha(self, i)

    def delta(self, i, base_step: float):
        """Quantizer step at iteration ``i``; ``base_step`` when no schedule."""
        if self.tau_d is None:
            return base_step if np.ndim(i) == 0 else np.full(np.shape(i), float(base_step))
        return self.d0 * (np.asarray(i, dtype=float) + 1.0) ** self.tau_d


def alpha(seq: WeightSequence, i):
    """Gain at iteration ``i`` (scalar or array of iterations)."""
    i_arr = np.asarray(i, dtype=float)
    if np.any(i_arr < 0):
        raise ValueError("iteration index must be non-negative")
    out = seq.gain / (i_arr + 1.0) ** seq.tau
    return float(out) if out.ndim == 0 else out


class Persistence(NamedTuple):
    persistent: bool
    generalized_persistent: bool


def persistence_check(seq: WeightSequence) -> Persistence:
    """p-series tests for sum(alpha) = inf with sum(alpha^2) < inf, and the
    time-varying variant sum(alpha^2 delta^2) < inf."""
    tau_d = 0.0 if seq.tau_d is None else seq.tau_d
    persistent = 0.5 < seq.tau <= 1.0
    generalized = seq.tau <= 1.0 and 2.0 * seq.tau - 2.0 * tau_d > 1.0
    return Persistence(persistent, generalized)
