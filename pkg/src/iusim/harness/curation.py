"""Build training subsets from a scored synthetic pool."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import largest_remainder
from ..errors import ConfigError, DeficitError, DataError
from ..ius import ScoredItem, UtilityLevel, utility_level


@dataclass
class ScoredPool:
    entries: list = field(default_factory=list)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("pool ids must be unique")

    @classmethod
    def from_items(cls, items) -> "ScoredPool":
        return cls(list(items))

    def __len__(self):
        return len(self.entries)

    @property
    def classes(self) -> list:
        return sorted({e.class_key for e in self.entries})

    def class_distribution(self) -> dict:
        counts: dict = {}
        for e in self.entries:
            counts[e.class_key] = counts.get(e.class_key, 0) + 1
        return dict(sorted(counts.items()))

    def check_levels(self, thresholds=(0.2, 0.4, 0.6, 0.8)) -> None:
        for e in self.entries:
            if utility_level(e.u, thresholds) is not e.level:
                raise DataError(f"entry {e.id}: level {e.level.value} inconsistent with u={e.u}")


def class_counts(target_count: int, class_distribution: dict, pool: ScoredPool) -> dict:
    if not class_distribution:
        raise ConfigError("class distribution is empty")
    unknown = set(class_distribution) - set(pool.classes)
    if unknown:
        raise ConfigError(f"distribution names classes absent from the pool: {sorted(unknown)}")
    keys = sorted(class_distribution)
    counts = largest_remainder(target_count, [class_distribution[k] for k in keys])
    return dict(zip(keys, counts))


def curate_vh(pool: ScoredPool, target_count: int, class_distribution: dict) -> list[str]:
    """Pick the highest-scoring VH entries per class (ties by id).

    Raises :class:`DeficitError` naming each class that has too few VH entries.
    """
    counts = class_counts(target_count, class_distribution, pool)
    selected, shortfall = [], {}
    for key, need in counts.items():
        vh = [e for e in pool.entries if e.class_key == key and e.level is UtilityLevel.VH]
        vh.sort(key=lambda e: (-e.u, e.id))
        if len(vh) < need:
            shortfall[key] = need - len(vh)
        selected.extend(e.id for e in vh[:need])
    if shortfall:
        raise DeficitError(shortfall)
    return selected


def random_control(pool: ScoredPool, target_count: int, class_distribution: dict, seed: int) -> list[str]:
    """Uniform sample without replacement per class, ignoring scores. Ids come back in pool order."""
    counts = class_counts(target_count, class_distribution, pool)
    rng = np.random.default_rng(seed)
    chosen, shortfall = set(), {}
    for key, need in counts.items():
        members = [e.id for e in pool.entries if e.class_key == key]
        if len(members) < need:
            shortfall[key] = need - len(members)
            continue
        for i in rng.choice(len(members), size=need, replace=False):
            chosen.add(members[i])
    if shortfall:
        raise DeficitError(shortfall)
    return [e.id for e in pool.entries if e.id in chosen]


def parse_distribution(spec: str) -> dict:
    """``"classA=0.5,classB=0.5"`` -> ``{"classA": 0.5, "classB": 0.5}``."""
    out = {}
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        key, sep, val = part.partition("=")
        if not sep:
            raise ConfigError(f"bad distribution entry {part!r} (expected name=weight)")
        try:
            w = float(val)
        except ValueError:
            raise ConfigError(f"bad weight in {part!r}") from None
        if w < 0:
            raise ConfigError(f"negative weight in {part!r}")
        out[key.strip()] = w
    if not out or sum(out.values()) <= 0:
        raise ConfigError(f"distribution {spec!r} has no positive weight")
    return out


def pool_from_items(items: list[ScoredItem]) -> ScoredPool:
    return ScoredPool(list(items))
