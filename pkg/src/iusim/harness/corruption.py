"""Blur/noise corruption ladder and the degradation study."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.stats import spearmanr

from ..ius import UtilityLevel, score_set
from ..pfm import Image, decompose


@dataclass(frozen=True)
class CorruptionLevel:
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self.blur_sigma == 0 and self.noise_sigma == 0


DEFAULT_LADDER = (
    CorruptionLevel(0.0, 0.0),
    CorruptionLevel(0.75, 0.04),
    CorruptionLevel(1.5, 0.08),
    CorruptionLevel(2.25, 0.12),
    CorruptionLevel(3.0, 0.16),
)


def corrupt(image: Image, level: CorruptionLevel, rng: np.random.Generator) -> Image:
    if level.is_identity:
        return image
    px = image.pixels
    if level.blur_sigma > 0:
        px = gaussian_filter(px, sigma=(level.blur_sigma, level.blur_sigma, 0), mode="nearest", truncate=3.0)
    if level.noise_sigma > 0:
        px = px + rng.normal(0.0, level.noise_sigma, size=px.shape)
    return Image(np.clip(px, 0.0, 1.0), image.color_space)


def corruption_ladder(images, levels=DEFAULT_LADDER, seed=42) -> list[list[Image]]:
    """One list of corrupted copies per level; level order and image order preserved."""
    out = []
    for k, level in enumerate(levels):
        rng = np.random.default_rng([seed, k])
        out.append([corrupt(im, level, rng) for im in images])
    return out


def cf_energy(image: Image) -> float:
    """Mean squared deviation of the coarse-fine map from its neutral value 0.5."""
    cf = decompose(image).maps[3]
    return float(np.mean((cf - 0.5) ** 2))


@dataclass
class DegradationRow:
    level: int
    blur_sigma: float
    noise_sigma: float
    n: int
    mean_u: float
    sd_u: float
    histogram: dict

    def as_dict(self) -> dict:
        d = {"level": self.level, "blur_sigma": self.blur_sigma, "noise_sigma": self.noise_sigma,
             "n": self.n, "mean_u": self.mean_u, "sd_u": self.sd_u}
        d.update({f"n_{lvl.value}": self.histogram[lvl] for lvl in UtilityLevel})
        return d


@dataclass
class DegradationReport:
    rows: list
    spearman: float
    failures: list

    def table(self) -> list[dict]:
        return [r.as_dict() for r in self.rows]


def degradation_study(model, baseline, images, class_keys=None, ladder=DEFAULT_LADDER, seed=42) -> DegradationReport:
    """Score every corruption level of the held-out images against the baseline."""
    images = list(images)
    keys = list(class_keys) if class_keys is not None else [None] * len(images)
    rows, failures = [], []
    for k, (level, corrupted) in enumerate(zip(ladder, corruption_ladder(images, ladder, seed))):
        res = score_set(model, baseline, [(f"{i}", im, key) for i, (im, key) in enumerate(zip(corrupted, keys))])
        failures.extend((k, f) for f in res.failures)
        u = np.array([it.u for it in res.items])
        hist = {lvl: sum(it.level is lvl for it in res.items) for lvl in UtilityLevel}
        rows.append(
            DegradationRow(k, level.blur_sigma, level.noise_sigma, len(u),
                           float(u.mean()) if len(u) else float("nan"),
                           float(u.std(ddof=1)) if len(u) > 1 else 0.0, hist)
        )
    means = [r.mean_u for r in rows]
    rho = float(spearmanr(np.arange(len(means)), means).statistic) if len(means) > 1 else float("nan")
    return DegradationReport(rows, rho, failures)
