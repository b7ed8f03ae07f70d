"""Frequency-energy levels (Xi, e_v, e_R, e_J) with derivative order L."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class FrequencyEnergyLevels:
    Xi: float
    e_v: float
    e_R: float
    e_J: float
    L: int = 2

    def __post_init__(self):
        if self.Xi < 2:
            raise ValueError(f"Xi must be >= 2, got {self.Xi}")
        if not (self.e_v >= self.e_R >= self.e_J > 0):
            raise ValueError(f"need e_v >= e_R >= e_J > 0, got {self.e_v}, {self.e_R}, {self.e_J}")
        if self.L < 2:
            raise ValueError("order L must be >= 2")

    @property
    def tau_hat(self):
        return 1.0 / (self.Xi * self.e_v ** 0.5)

    def to_dict(self):
        return asdict(self)
