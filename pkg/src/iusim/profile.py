from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError
from .pfm import PfmConfig


@dataclass(frozen=True, eq=False)
class ContributionProfile:
    """Per-PFM sub-network responses of one image (or the mean of several)."""

    components: np.ndarray
    pfm_config: PfmConfig

    def __post_init__(self):
        c = np.array(self.components, dtype=np.float64).reshape(-1)
        if c.shape != (4,):
            raise ShapeError(f"a contribution profile has 4 components, got {c.shape[0]}")
        if not np.all(np.isfinite(c)) or np.any(np.abs(c) > 1.0):
            raise RangeError("profile components must lie in [-1, 1]")
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    @property
    def names(self):
        return self.pfm_config.names

    def norm(self) -> float:
        return float(np.linalg.norm(self.components))

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.components)}
