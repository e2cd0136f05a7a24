from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..ius import BaselineProfile, ContributionProfile, Scope


@dataclass(frozen=True)
class ComponentRecord:
    name: str
    baseline_value: float
    image_value: float
    deviation: float
    sign_agreement: bool


def interpretation_report(profile: ContributionProfile, baseline: BaselineProfile, class_key=None) -> list[ComponentRecord]:
    """Side-by-side baseline vs image contributions, one record per PFM."""
    if profile.pfm_config is not baseline.pfm_config:
        raise ConfigError("profile and baseline use different PFM configs")
    ref = baseline.vector(class_key if baseline.scope is Scope.PER_CLASS else None)
    return [
        ComponentRecord(name, float(b), float(c), float(c - b), bool(np.sign(c) == np.sign(b)))
        for name, b, c in zip(profile.names, ref, profile.components)
    ]
