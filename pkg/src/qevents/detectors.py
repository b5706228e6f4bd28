"""Position-detector coupling profiles g(x) >= 0."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import Grid1D

SHAPES = ("gaussian", "indicator", "constant", "tabulated")


@dataclass(frozen=True)
class DetectorSpec:
    """A yes/no counter coupled through the multiplication operator g(x).

    Parameters by shape: ``gaussian`` (center, width, strength),
    ``indicator`` (a, b, strength), ``constant`` (strength) and ``tabulated``
    (values). ``alpha`` is the classical counter state, ``active`` whether it
    is currently monitoring. ``reusable`` detectors re-arm ``dead_time`` after
    a click instead of switching off for good.
    """

    shape: str = "gaussian"
    params: dict = field(default_factory=dict)
    alpha: int = 0
    active: bool = True
    reusable: bool = False
    dead_time: float = 0.0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown detector shape {self.shape!r}; expected one of {SHAPES}")
        if self.alpha not in (0, 1):
            raise ValueError(f"alpha must be 0 or 1, got {self.alpha}")
        if self.shape != "tabulated" and float(self.params.get("strength", 1.0)) < 0:
            raise ValueError(f"detector strength must be >= 0, got {self.params['strength']}")
        if self.shape == "gaussian" and float(self.params.get("width", 1.0)) <= 0:
            raise ValueError("gaussian detector width must be positive")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")

    @property
    def strength(self) -> float:
        return float(self.params.get("strength", 1.0))

    def profile(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.shape == "gaussian":
            return self.strength * np.exp(-((x - p.get("center", 0.0)) ** 2) / (2.0 * p["width"] ** 2))
        if self.shape == "indicator":
            return np.where((x >= p["a"]) & (x < p["b"]), self.strength, 0.0)
        if self.shape == "constant":
            return np.full_like(x, self.strength)
        values = np.asarray(p["values"], dtype=float)
        if values.shape != x.shape:
            raise ValueError(f"tabulated profile has {values.size} values for {x.size} points")
        return values.copy()

    def on_grid(self, grid: Grid1D) -> np.ndarray:
        g = self.profile(grid.points)
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise ValueError("detector profile must be finite and non-negative at every grid point")
        return g

    def clicked(self) -> "DetectorSpec":
        return DetectorSpec(self.shape, self.params, 1, self.reusable, self.reusable, self.dead_time)

    def to_dict(self) -> dict:
        params = dict(self.params)
        if "values" in params:
            params["values"] = [float(v) for v in params["values"]]
        return {
            "shape": self.shape,
            "params": params,
            "reusable": self.reusable,
            "dead_time": self.dead_time,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorSpec":
        return cls(
            shape=d.get("shape", "gaussian"),
            params=dict(d.get("params", {})),
            reusable=bool(d.get("reusable", False)),
            dead_time=float(d.get("dead_time", 0.0)),
        )


def rate_profile(detectors, grid: Grid1D, mask=None) -> np.ndarray:
    """Sum of g_i(x)^2 over detectors selected by ``mask`` (all by default)."""
    total = np.zeros(grid.n_points)
    for i, det in enumerate(detectors):
        if mask is None or mask[i]:
            total += det.on_grid(grid) ** 2
    return total
