"""Procedural two-class color corpus.

Classes differ only by a constant shift of the Lab a-channel (+offset/2 vs
-offset/2). Everything else (base lightness, smooth blobs, b-channel tint,
pixel texture on L) is class-independent nuisance.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import Manifest, ManifestRow, Split, save_png
from ..errors import ConfigError
from ..pfm import ColorSpace, Image, lab_array_to_srgb


@dataclass(frozen=True)
class ToyCorpusConfig:
    image_size: int = 32
    color_offset: float = 60.0
    noise_amplitude: float = 6.0
    train_per_class: int = 200
    val_per_class: int = 50
    test_per_class: int = 25
    rng_seed: int = 42
    class_names: tuple = ("class0", "class1")

    def __post_init__(self):
        if len(self.class_names) != 2 or len(set(self.class_names)) != 2:
            raise ConfigError("toy corpus has exactly two distinct classes")
        if min(self.train_per_class, self.val_per_class, self.test_per_class) < 1:
            raise ConfigError("toy corpus counts must be >= 1")
        if self.image_size < 8:
            raise ConfigError("toy images must be at least 8x8")
        if self.color_offset < 0 or self.noise_amplitude < 0:
            raise ConfigError("color_offset and noise_amplitude must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["class_names"] = list(self.class_names)
        return d


@dataclass
class ToySample:
    id: str
    image: Image
    label: str
    split: Split


@dataclass
class ToyCorpus:
    config: ToyCorpusConfig
    samples: list = field(default_factory=list)

    def split(self, which: Split) -> list:
        return [s for s in self.samples if s.split is which]

    @property
    def train(self):
        return self.split(Split.TRAIN)

    @property
    def val(self):
        return self.split(Split.VAL)

    @property
    def test(self):
        return self.split(Split.TEST)

    def write(self, directory) -> Manifest:
        """Save PNGs plus ``manifest.csv`` (with split column) under ``directory``."""
        from pathlib import Path

        from ..data import write_manifest

        directory = Path(directory)
        rows = []
        for s in self.samples:
            rel = f"images/{s.id}.png"
            save_png(s.image, directory / rel)
            rows.append(ManifestRow(rel, s.label, s.split))
        manifest = Manifest(rows, directory)
        write_manifest(manifest, directory / "manifest.csv")
        return manifest


def _smooth_field(rng, size, n_blobs=3, amplitude=10.0):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, size, 2)
        sigma = rng.uniform(size / 8, size / 3)
        amp = rng.uniform(-amplitude, amplitude)
        out += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return out


def toy_image(rng, size, a_shift, noise_amplitude) -> Image:
    L = rng.uniform(45, 65) + _smooth_field(rng, size)
    if noise_amplitude > 0:
        L = L + noise_amplitude * rng.standard_normal((size, size))
    L = np.clip(L, 20.0, 85.0)
    a = np.full((size, size), a_shift)
    b = np.full((size, size), rng.uniform(-8, 8))
    rgb = lab_array_to_srgb(np.stack([L, a, b], axis=-1))
    return Image(rgb, ColorSpace.SRGB)


def toy_dataset_generate(config: ToyCorpusConfig = ToyCorpusConfig()) -> ToyCorpus:
    rng = np.random.default_rng(config.rng_seed)
    counts = {Split.TRAIN: config.train_per_class, Split.VAL: config.val_per_class, Split.TEST: config.test_per_class}
    corpus = ToyCorpus(config)
    for split, n in counts.items():
        for k in range(n):
            for cls, name in enumerate(config.class_names):
                shift = (config.color_offset / 2) * (1 if cls == 1 else -1)
                image = toy_image(rng, config.image_size, shift, config.noise_amplitude)
                sid = f"{split.value.lower()}_{k:04d}_{cls}"
                corpus.samples.append(ToySample(sid, image, name, split))
    return corpus
