"""Seeded random reservoirs that satisfy the convergence constraint.

``A`` has i.i.d. standard-normal entries rescaled so that its largest
singular value is ``rho * a`` with ``rho ~ U(rho_range)``; ``B`` has
i.i.d. ``U(-b_scale, b_scale)`` entries. Each member draws from its own
stream derived from ``(seed, index)``, so results do not depend on the
order or thread in which members are generated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import UsageError
from .reservoir import CONTRACTION_BOUND, EsnParams


@dataclass(frozen=True)
class SamplerSpec:
    n: int = 10
    activation: str = "sigmoid"
    rho_range: Tuple[float, float] = (0.1, 0.975)
    b_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rho_range
        if not 0.0 < lo <= hi < 1.0:
            raise UsageError(f"rho_range {self.rho_range} must lie inside (0, 1)")
        if self.activation not in CONTRACTION_BOUND:
            raise UsageError(f"unknown activation {self.activation!r}")
        if not self.b_scale > 0 or self.n < 1:
            raise UsageError(f"invalid sampler spec {self}")

    @property
    def a(self) -> float:
        return CONTRACTION_BOUND[self.activation]


def member_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def sample_esn(spec: SamplerSpec, index: int) -> EsnParams:
    rng = member_rng(spec.seed, index)
    A = rng.standard_normal((spec.n, spec.n))
    rho = rng.uniform(*spec.rho_range)
    A *= rho * spec.a / np.linalg.norm(A, 2)
    B = rng.uniform(-spec.b_scale, spec.b_scale, spec.n)
    return EsnParams(A=A, B=B, activation=spec.activation)
