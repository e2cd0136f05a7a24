"""Baseline-subsampling sensitivity and profile-magnitude analyses."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, EmptySetError, SizeError
from ..ius import (
    GLOBAL_KEY,
    BaselineProfile,
    Scope,
    UtilityLevel,
    baseline_from_profiles,
    cosine,
    ius_score,
    profile_of,
)

DEFAULT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


@dataclass
class SensitivityResult:
    fractions: tuple
    baselines: dict
    sizes: dict
    cosines: list
    agreement: dict

    def cosine_rows(self) -> list[dict]:
        return [dict(zip(("fraction_a", "fraction_b", "class", "cosine"), r)) for r in self.cosines]

    def agreement_rows(self) -> list[dict]:
        return [
            {"fraction": f, "n_images": self.sizes[f], "vh_agreement": self.agreement[f]} for f in self.fractions
        ]


def _subset_size(fraction: float, n: int) -> int:
    k = int(np.floor(fraction * n + 0.5))
    if k < 1:
        raise SizeError(f"fraction {fraction} of {n} images selects no samples")
    return min(k, n)


def _subset(rng, fraction, groups: dict) -> list[int]:
    if fraction == 1.0:
        return sorted(i for idx in groups.values() for i in idx)
    picked = []
    for key in sorted(groups):
        idx = groups[key]
        k = _subset_size(fraction, len(idx))
        picked.extend(idx[j] for j in rng.choice(len(idx), size=k, replace=False))
    return sorted(picked)


def is_vh(profile, baseline: BaselineProfile, class_key) -> bool:
    return ius_score(profile, baseline, class_key).level is UtilityLevel.VH


def baseline_sensitivity(model, images, labels=None, pool=(), fractions=DEFAULT_FRACTIONS, seed=42,
                         scope=None, profiles=None) -> SensitivityResult:
    """Rebuild the baseline from random subsets of the real test images.

    Subsets are drawn per class when labels are given. For each fraction the
    result holds the subset baseline, its cosine with every other fraction's
    baseline (per class key), and the share of ``pool`` items whose VH / not-VH
    category matches the one obtained under the full baseline.
    ``profiles`` may carry precomputed image profiles.
    """
    fractions = tuple(float(f) for f in fractions)
    if any(not 0.0 < f <= 1.0 for f in fractions):
        raise ConfigError(f"fractions must lie in (0, 1], got {fractions}")
    if 1.0 not in fractions:
        raise ConfigError("fractions must include 1.0 (the full baseline)")
    if profiles is None:
        profiles = [profile_of(model, im) for im in images]
    if not profiles:
        raise EmptySetError("sensitivity analysis needs at least one real image")
    if scope is None:
        scope = Scope.PER_CLASS if labels is not None else Scope.GLOBAL
    scope = Scope(scope)
    keys = [str(k) for k in labels] if scope is Scope.PER_CLASS else [GLOBAL_KEY] * len(profiles)
    groups: dict = {}
    for i, k in enumerate(keys):
        groups.setdefault(k, []).append(i)

    baselines, sizes = {}, {}
    for f in fractions:
        rng = np.random.default_rng([seed, int(round(f * 1_000_000))])
        idx = _subset(rng, f, groups)
        sizes[f] = len(idx)
        baselines[f] = baseline_from_profiles(
            [profiles[i] for i in idx], [keys[i] for i in idx] if scope is Scope.PER_CLASS else None, scope
        )

    cos_rows = []
    for fa, fb in itertools.combinations(fractions, 2):
        for key in baselines[1.0].keys:
            cos_rows.append((fa, fb, key, cosine(baselines[fa].profiles[key], baselines[fb].profiles[key])))

    full = baselines[1.0]
    agreement = {}
    pool = list(pool)
    for f in fractions:
        if not pool:
            agreement[f] = float("nan")
            continue
        same = 0
        for item in pool:
            key = item.class_key if scope is Scope.PER_CLASS else None
            same += is_vh(item.profile, baselines[f], key) == is_vh(item.profile, full, key)
        agreement[f] = same / len(pool)
    return SensitivityResult(fractions, baselines, sizes, cos_rows, agreement)


# --- magnitude analyses -----------------------------------------------------


@dataclass
class Summary:
    count: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float

    @classmethod
    def of(cls, values) -> "Summary":
        v = np.asarray(values, dtype=np.float64)
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        return cls(len(v), float(v.min()), float(q1), float(med), float(q3), float(v.max()))

    def as_dict(self) -> dict:
        return {"count": self.count, "min": self.minimum, "q1": self.q1, "median": self.median,
                "q3": self.q3, "max": self.maximum}


@dataclass
class MagnitudeReport:
    per_level: dict
    vh_components: dict
    notes: list = field(default_factory=list)

    def rows(self) -> list[dict]:
        out = [{"group": f"level={lvl.value}", **s.as_dict()} for lvl, s in self.per_level.items()]
        out += [{"group": f"VH|{name}|", **s.as_dict()} for name, s in self.vh_components.items()]
        return out


def group_by_level(items) -> dict:
    groups = {lvl: [] for lvl in UtilityLevel}
    for it in items:
        groups[it.level].append(it.profile)
    return groups


def magnitude_stats(groups: dict) -> MagnitudeReport:
    """L2-norm summaries per utility level, plus per-component |f_i| for VH."""
    per_level, notes = {}, []
    for lvl in UtilityLevel:
        profs = groups.get(lvl, [])
        if not profs:
            notes.append(f"level {lvl.value}: no profiles, omitted")
            continue
        per_level[lvl] = Summary.of([np.linalg.norm(p.components) for p in profs])
    vh_components = {}
    vh = groups.get(UtilityLevel.VH, [])
    if vh:
        comps = np.abs(np.stack([p.components for p in vh]))
        for j, name in enumerate(vh[0].names):
            vh_components[name] = Summary.of(comps[:, j])
    return MagnitudeReport(per_level, vh_components, notes)


DEFAULT_THRESHOLD_GRID = tuple(i / 10 for i in range(11))


def joint_threshold_probability(profiles, thresholds=DEFAULT_THRESHOLD_GRID) -> list[tuple[float, float]]:
    """Empirical P(max_i |c_i| <= t) for each threshold t."""
    if len(profiles) == 0:
        raise EmptySetError("joint_threshold_probability needs at least one profile")
    peak = np.max(np.abs(np.stack([p.components for p in profiles])), axis=1)
    return [(float(t), float(np.mean(peak <= t))) for t in thresholds]
