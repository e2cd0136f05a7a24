"""Interpretable utility similarity (IUS) scoring of synthetic images."""
from .ius import (
    BaselineProfile,
    ContributionProfile,
    Scope,
    UtilityLevel,
    UtilityScore,
    compute_baseline,
    dataset_ius,
    ius_score,
    profile_of,
    score_set,
    utility_level,
)
from .neural import EpuModel, TrainConfig, epu_forward, train_epu
from .pfm import ColorSpace, Image, PfmConfig, PfmSet, decompose, decompose_color, decompose_gray

__all__ = [
    "BaselineProfile",
    "ContributionProfile",
    "Scope",
    "UtilityLevel",
    "UtilityScore",
    "compute_baseline",
    "dataset_ius",
    "ius_score",
    "profile_of",
    "score_set",
    "utility_level",
    "EpuModel",
    "TrainConfig",
    "epu_forward",
    "train_epu",
    "ColorSpace",
    "Image",
    "PfmConfig",
    "PfmSet",
    "decompose",
    "decompose_color",
    "decompose_gray",
]

__version__ = "0.1.0"
