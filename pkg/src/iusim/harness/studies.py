"""End-to-end toy pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import save_baseline, save_model
from ..ius import Scope, compute_baseline, score_set
from ..neural import EpuModel, LabeledArrays, TrainConfig, train_epu
from ..pfm import PfmConfig, decompose
from .corruption import DEFAULT_LADDER, CorruptionLevel, corrupt, degradation_study
from .curation import ScoredPool, curate_vh, random_control
from .probe import downstream_probe
from .records import write_run_manifest, write_table
from .sensitivity import baseline_sensitivity, group_by_level, joint_threshold_probability, magnitude_stats
from .toy import ToyCorpus, ToyCorpusConfig, toy_dataset_generate

log = logging.getLogger(__name__)

# batch 16: the 400-image toy corpus gives 25 updates per epoch at the default learning rate
TOY_TRAIN_CONFIG = TrainConfig(learning_rate=1e-3, momentum=0.9, batch_size=16, max_epochs=30, patience=10)
PROBE_TRAIN_CONFIG = TrainConfig(learning_rate=1e-3, momentum=0.9, batch_size=16, max_epochs=20, patience=5)


def pfm_array(images, dtype=np.float32) -> np.ndarray:
    return np.stack([decompose(im).stack(dtype) for im in images])


def labeled_arrays(samples, class_names, config=PfmConfig.COLOR) -> LabeledArrays:
    x = pfm_array([s.image for s in samples])
    y = np.array([list(class_names).index(s.label) for s in samples])
    return LabeledArrays(x, y, config, [s.id for s in samples])


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig(config.learning_rate, config.momentum, config.batch_size, config.max_epochs,
                       config.patience, seed)


@dataclass
class ToyRun:
    corpus: ToyCorpus
    model: EpuModel
    history: list
    baseline: object
    test_items: list = field(default_factory=list)

    @property
    def best_val_accuracy(self) -> float:
        return max((h.val_accuracy for h in self.history), default=float("nan"))


def train_toy(seed=42, corpus_config=None, train_config=TOY_TRAIN_CONFIG, callback=None) -> ToyRun:
    """Generate the toy corpus, train the EPU model and build a per-class test baseline."""
    cc = corpus_config or ToyCorpusConfig(rng_seed=seed)
    corpus = toy_dataset_generate(cc)
    names = cc.class_names
    tr = labeled_arrays(corpus.train, names)
    va = labeled_arrays(corpus.val, names)
    model, history = train_epu(tr, va, with_seed(train_config, seed), callback=callback)
    test = corpus.test
    baseline = compute_baseline(model, [s.image for s in test], [s.label for s in test], Scope.PER_CLASS)
    items = score_set(model, baseline, [(s.id, s.image, s.label) for s in test]).items
    return ToyRun(corpus, model, history, baseline, items)


def history_rows(history) -> list[dict]:
    return [h.__dict__.copy() for h in history]


def toy_study(out_dir, seed=42, run: ToyRun | None = None) -> ToyRun:
    """Train on the toy corpus and write model, baseline, history, scores and magnitude tables."""
    out = Path(out_dir)
    run = run or train_toy(seed)
    save_model(run.model, out / "model.json")
    save_baseline(run.baseline, out / "baseline.json")
    write_table(history_rows(run.history), out / "history.csv")
    from ..data import write_score_report

    write_score_report(run.test_items, out / "test_scores.csv", run.model.pfm_config)
    mag = magnitude_stats(group_by_level(run.test_items))
    write_table(mag.rows(), out / "magnitudes.csv",
                ["group", "count", "min", "q1", "median", "q3", "max"])
    jtp = joint_threshold_probability([it.profile for it in run.test_items])
    write_table([{"threshold": t, "probability": p} for t, p in jtp], out / "joint_threshold.csv")
    write_run_manifest(out / "run_manifest.json", seed,
                       {"study": "toy", "corpus": run.corpus.config.to_dict(), "train": TOY_TRAIN_CONFIG.__dict__,
                        "best_val_accuracy": run.best_val_accuracy},
                       [out / "model.json", out / "baseline.json"])
    return run


def degradation(out_dir, seed=42, run: ToyRun | None = None, ladder=DEFAULT_LADDER):
    run = run or train_toy(seed)
    test = run.corpus.test
    report = degradation_study(run.model, run.baseline, [s.image for s in test], [s.label for s in test],
                               ladder, seed)
    if out_dir is not None:
        out = Path(out_dir)
        write_table(report.table(), out / "degradation.csv")
        write_table([{"spearman_level_vs_mean_u": report.spearman}], out / "degradation_summary.csv")
        write_run_manifest(out / "run_manifest.json", seed,
                           {"study": "degradation", "ladder": [lv.__dict__ for lv in ladder]})
    return report


# --- curation probe ---------------------------------------------------------

POOL_CORRUPTION = CorruptionLevel(blur_sigma=2.0, noise_sigma=0.25)


def synthetic_pool(seed, per_class=60, corrupted_fraction=0.5, corruption=POOL_CORRUPTION, size=32,
                   class_names=("class0", "class1")):
    """Stand-in for a generator's output: toy images, a share of them visibly degraded.

    Returns ``{id: (Image, label)}`` in generation order.
    """
    cfg = ToyCorpusConfig(image_size=size, rng_seed=seed + 7919, train_per_class=per_class,
                          val_per_class=1, test_per_class=1, class_names=tuple(class_names),
                          color_offset=ToyCorpusConfig().color_offset)
    corpus = toy_dataset_generate(cfg)
    rng = np.random.default_rng([seed, 17])
    pool = {}
    for s in corpus.train:
        bad = rng.random() < corrupted_fraction
        image = corrupt(s.image, corruption, rng) if bad else s.image
        pool[f"syn_{s.id}{'_c' if bad else ''}"] = (image, s.label)
    return pool


@dataclass
class ProbeStudy:
    pool: ScoredPool
    curated: list
    control: list
    runs: list

    @property
    def wins(self) -> int:
        return sum(r.curated_accuracy >= r.control_accuracy for r in self.runs)


def probe(out_dir, seed=42, run: ToyRun | None = None, repeats=5, target_count=40, pool_per_class=60,
          train_config=PROBE_TRAIN_CONFIG) -> ProbeStudy:
    run = run or train_toy(seed)
    names = run.corpus.config.class_names
    pool_images = synthetic_pool(seed, pool_per_class, class_names=names)
    scored = score_set(run.model, run.baseline, [(i, im, lbl) for i, (im, lbl) in pool_images.items()])
    pool = ScoredPool.from_items(scored.items)
    real_test = run.corpus.test
    dist = {}
    for s in real_test:
        dist[s.label] = dist.get(s.label, 0) + 1
    curated = curate_vh(pool, target_count, dist)
    control = random_control(pool, target_count, dist, seed)
    runs = downstream_probe(curated, control, pool_images, [s.image for s in real_test],
                            [s.label for s in real_test], with_seed(train_config, seed), repeats, names)
    result = ProbeStudy(pool, curated, control, runs)
    if out_dir is not None:
        out = Path(out_dir)
        from ..data import write_score_report

        write_score_report(scored.items, out / "pool_scores.csv", run.model.pfm_config)
        write_table([{"id": i, "set": "curated"} for i in curated] + [{"id": i, "set": "control"} for i in control],
                    out / "selections.csv")
        write_table([r.as_dict() for r in runs], out / "probe.csv")
        write_run_manifest(out / "run_manifest.json", seed,
                           {"study": "probe", "repeats": repeats, "target_count": target_count,
                            "pool_per_class": pool_per_class, "probe_train": train_config.__dict__,
                            "curated_wins": result.wins})
    return result


def sensitivity_on_toy(run: ToyRun, pool_items, seed=42):
    test = run.corpus.test
    return baseline_sensitivity(run.model, [s.image for s in test], [s.label for s in test], pool_items,
                                seed=seed, profiles=[it.profile for it in run.test_items])
