"""Contribution profiles, baselines and the cosine utility-similarity score."""
from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateProfileError,
    EmptySetError,
    IusError,
    MissingClassError,
    RangeError,
)
from .neural import EpuModel, epu_forward
from .pfm import Image, PfmConfig, decompose
from .profile import ContributionProfile

__all__ = [
    "ContributionProfile",
    "BaselineProfile",
    "Scope",
    "UtilityLevel",
    "UtilityScore",
    "DEFAULT_THRESHOLDS",
    "GLOBAL_KEY",
    "profile_of",
    "compute_baseline",
    "baseline_from_profiles",
    "cosine",
    "ius_score",
    "utility_level",
    "dataset_ius",
    "score_set",
    "ScoredItem",
    "ScoreSetResult",
]

GLOBAL_KEY = "*"
NORM_FLOOR = 1e-9
DEFAULT_THRESHOLDS = (0.2, 0.4, 0.6, 0.8)


class Scope(enum.Enum):
    GLOBAL = "global"
    PER_CLASS = "per-class"


class UtilityLevel(enum.Enum):
    VL = "VL"
    L = "L"
    M = "M"
    H = "H"
    VH = "VH"


_LEVELS = (UtilityLevel.VL, UtilityLevel.L, UtilityLevel.M, UtilityLevel.H, UtilityLevel.VH)


@dataclass(frozen=True)
class UtilityScore:
    u: float
    level: UtilityLevel


@dataclass(frozen=True, eq=False)
class BaselineProfile:
    """Mean profile(s) of held-out real images.

    ``profiles`` maps a class key (or ``"*"`` for GLOBAL scope) to a 4-vector;
    ``counts`` holds the number of images J averaged under each key.
    """

    scope: Scope
    profiles: dict
    counts: dict
    pfm_config: PfmConfig

    def __post_init__(self):
        if set(self.profiles) != set(self.counts):
            raise ConfigError("baseline profiles and counts must share keys")
        if not self.profiles:
            raise EmptySetError("baseline holds no profiles")
        if self.scope is Scope.GLOBAL and set(self.profiles) != {GLOBAL_KEY}:
            raise ConfigError(f"GLOBAL baseline must have the single key {GLOBAL_KEY!r}")
        vecs = {}
        for k, v in self.profiles.items():
            vec = np.array(v, dtype=np.float64).reshape(-1)
            if vec.shape != (4,) or np.any(np.abs(vec) > 1.0) or not np.all(np.isfinite(vec)):
                raise RangeError(f"baseline vector for {k!r} must be 4 values in [-1, 1]")
            vec.setflags(write=False)
            vecs[k] = vec
            if int(self.counts[k]) < 1:
                raise RangeError(f"baseline count for {k!r} must be >= 1")
        object.__setattr__(self, "profiles", vecs)
        object.__setattr__(self, "counts", {k: int(v) for k, v in self.counts.items()})

    @property
    def keys(self) -> list:
        return sorted(self.profiles)

    def vector(self, class_key=None) -> np.ndarray:
        if self.scope is Scope.GLOBAL:
            return self.profiles[GLOBAL_KEY]
        if class_key is None:
            raise ConfigError("a PER_CLASS baseline needs a class key")
        try:
            return self.profiles[class_key]
        except KeyError:
            raise MissingClassError(f"baseline has no class {class_key!r} (known: {self.keys})") from None


def profile_of(model: EpuModel, image: Image) -> ContributionProfile:
    """Decompose an image into PFMs and return its sub-network responses."""
    if PfmConfig.for_color_space(image.color_space) is not model.pfm_config:
        raise ConfigError(
            f"{image.color_space.value} image cannot be scored by a {model.pfm_config.value} model"
        )
    return epu_forward(model, decompose(image)).profile


def baseline_from_profiles(profiles: Sequence[ContributionProfile], labels=None, scope=None) -> BaselineProfile:
    if not profiles:
        raise EmptySetError("baseline needs at least one profile")
    configs = {p.pfm_config for p in profiles}
    if len(configs) != 1:
        raise ConfigError("profiles come from different PFM configs")
    if scope is None:
        scope = Scope.PER_CLASS if labels is not None else Scope.GLOBAL
    scope = Scope(scope)
    if scope is Scope.PER_CLASS:
        if labels is None:
            raise ConfigError("PER_CLASS baseline requires labels")
        if len(labels) != len(profiles):
            raise ConfigError(f"{len(profiles)} profiles but {len(labels)} labels")
        keys = [str(k) for k in labels]
    else:
        keys = [GLOBAL_KEY] * len(profiles)
    groups: dict[str, list] = {}
    for k, p in zip(keys, profiles):
        groups.setdefault(k, []).append(p.components)
    means = {k: np.mean(np.stack(v), axis=0) for k, v in groups.items()}
    counts = {k: len(v) for k, v in groups.items()}
    return BaselineProfile(scope, means, counts, configs.pop())


def compute_baseline(model: EpuModel, images: Sequence[Image], labels=None, scope=None,
                     classes: Iterable | None = None) -> BaselineProfile:
    """Average the profiles of held-out real images, globally or per class.

    ``classes`` optionally lists classes that must be present; a class with no
    member images raises :class:`MissingClassError`.
    """
    if not images:
        raise EmptySetError("baseline needs at least one image")
    profiles = [profile_of(model, im) for im in images]
    base = baseline_from_profiles(profiles, labels, scope)
    if classes is not None and base.scope is Scope.PER_CLASS:
        missing = sorted(set(map(str, classes)) - set(base.profiles))
        if missing:
            raise MissingClassError(f"no images for class(es) {missing}")
    return base


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = math.sqrt(float(a @ a)), math.sqrt(float(b @ b))
    if na < NORM_FLOOR or nb < NORM_FLOOR:
        raise DegenerateProfileError(
            f"cosine similarity undefined for near-zero vector (norms {na:.3g}, {nb:.3g})"
        )
    u = float(a @ b) / (na * nb)
    return min(1.0, max(-1.0, u))


def utility_level(u: float, thresholds=DEFAULT_THRESHOLDS) -> UtilityLevel:
    """Bucket a score: lower bound closed, upper open, top bucket closed at 1."""
    if not -1.0 <= u <= 1.0:
        raise RangeError(f"utility score {u!r} outside [-1, 1]")
    t = tuple(thresholds)
    if len(t) != 4 or any(x >= y for x, y in zip(t, t[1:])):
        raise ConfigError(f"thresholds must be 4 increasing values, got {t}")
    idx = sum(u >= x for x in t)
    return _LEVELS[idx]


def _check_config(profile: ContributionProfile, baseline: BaselineProfile):
    if profile.pfm_config is not baseline.pfm_config:
        raise ConfigError(
            f"profile config {profile.pfm_config.value} does not match baseline {baseline.pfm_config.value}"
        )


def ius_score(profile: ContributionProfile, baseline: BaselineProfile, class_key=None,
              thresholds=DEFAULT_THRESHOLDS) -> UtilityScore:
    _check_config(profile, baseline)
    u = cosine(profile.components, baseline.vector(class_key))
    return UtilityScore(u, utility_level(u, thresholds))


def dataset_ius(profiles: Sequence[ContributionProfile], baseline: BaselineProfile, class_key=None,
                thresholds=DEFAULT_THRESHOLDS) -> UtilityScore:
    """Score a whole synthetic set through its mean profile."""
    if not profiles:
        raise EmptySetError("dataset_ius needs at least one profile")
    for p in profiles:
        _check_config(p, baseline)
    avg = ContributionProfile(np.mean(np.stack([p.components for p in profiles]), axis=0), baseline.pfm_config)
    return ius_score(avg, baseline, class_key, thresholds)


@dataclass(frozen=True)
class ScoredItem:
    id: str
    class_key: str | None
    profile: ContributionProfile
    u: float
    level: UtilityLevel


@dataclass
class ScoreSetResult:
    items: list
    failures: list = field(default_factory=list)

    def __len__(self):
        return len(self.items)

    def summary(self) -> str:
        return f"{len(self.items)} scored, {len(self.failures)} failed"


def score_set(model: EpuModel, baseline: BaselineProfile, entries, workers: int = 1,
              thresholds=DEFAULT_THRESHOLDS) -> ScoreSetResult:
    """Score ``(id, image, class_key)`` triples, keeping input order.

    Failures are collected as ``(id, message)`` instead of aborting the batch.
    """
    entries = list(entries)

    def one(entry):
        item_id, image, key = entry
        try:
            prof = profile_of(model, image)
            s = ius_score(prof, baseline, key if baseline.scope is Scope.PER_CLASS else None, thresholds)
            return ScoredItem(str(item_id), key, prof, s.u, s.level)
        except IusError as exc:
            return (str(item_id), f"{type(exc).__name__}: {exc}")

    if workers > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, entries))
    else:
        results = [one(e) for e in entries]
    out = ScoreSetResult([], [])
    for r in results:
        if isinstance(r, ScoredItem):
            out.items.append(r)
        else:
            out.failures.append(r)
    return out
