"""Model configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass


class Scenario(str, enum.Enum):
    """Weight-tying scenario of the CP model.

    ``SYM`` ties all factors, ``u^(1) = ... = u^(nu)``; ``ASYM`` keeps them
    independent.
    """

    SYM = "sym"
    ASYM = "asym"

    @classmethod
    def parse(cls, value) -> "Scenario":
        if isinstance(value, Scenario):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown scenario {value!r}; expected 'sym' or 'asym'") from None


@dataclass(frozen=True)
class ModelConfig:
    """Parameters of the rank-``H`` CP model of an order-``nu`` tensor.

    Parameters
    ----------
    nu : int
        Tensor order, at least 2.
    scenario : Scenario or str
        ``"sym"`` or ``"asym"``.
    p : int, optional
        Outer dimension. Optional for the symbolic engine.
    H : int, optional
        Rank. Optional for the symbolic engine.
    sigma : float
        Initialization standard deviation.
    T : float
        Inverse learning rate.
    """

    nu: int
    scenario: Scenario
    p: int | None = None
    H: int | None = None
    sigma: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if int(self.nu) != self.nu or self.nu < 2:
            raise ValueError(f"nu must be an integer >= 2, got {self.nu}")
        object.__setattr__(self, "nu", int(self.nu))
        for name in ("p", "H"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def sym(self) -> bool:
        return self.scenario is Scenario.SYM

    @property
    def n_colors(self) -> int:
        """Number of distinct edge colors in diagrams."""
        return 1 if self.sym else self.nu
