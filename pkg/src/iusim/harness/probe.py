"""Downstream probe: train a plain classifier on a curated vs a control set."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import roc_auc_score

from ..data import largest_remainder
from ..errors import ProtocolError
from ..neural import LabeledArrays, PlainClassifier, TrainConfig, fit, predict_proba


@dataclass
class ProbeRun:
    repeat: int
    seed: int
    curated_accuracy: float
    control_accuracy: float
    curated_auc: float
    control_auc: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _pixels(images) -> np.ndarray:
    return np.stack([im.pixels for im in images]).astype(np.float32)


def _holdout(labels, seed, fraction=0.2):
    """Stratified (train, val) index split; val takes ``fraction`` of each class."""
    rng = np.random.default_rng(seed)
    train, val = [], []
    for cls in sorted(set(labels)):
        idx = [i for i, y in enumerate(labels) if y == cls]
        perm = rng.permutation(len(idx))
        n_tr, n_val = largest_remainder(len(idx), [1 - fraction, fraction])
        if n_val == 0 and n_tr > 1:
            n_tr, n_val = n_tr - 1, 1
        train += [idx[j] for j in perm[:n_tr]]
        val += [idx[j] for j in perm[n_tr:]]
    return sorted(train), sorted(val)


def train_probe(images, labels01, config: TrainConfig, filters=(32, 64), hidden=32):
    x = _pixels(images)
    y = np.asarray(labels01)
    tr, va = _holdout(list(y), config.rng_seed)
    if not va:
        va = tr
    model = PlainClassifier.init(x.shape[3], x.shape[1:3], filters, hidden, seed=config.rng_seed)
    best, _ = fit(model, LabeledArrays(x[tr], y[tr]), LabeledArrays(x[va], y[va]), config)
    return best


def evaluate_probe(model, images, labels01) -> tuple[float, float]:
    y = np.asarray(labels01)
    p = predict_proba(model, _pixels(images))
    acc = float(np.mean((p >= 0.5) == (y == 1)))
    auc = float(roc_auc_score(y, p)) if len(set(y.tolist())) == 2 else float("nan")
    return acc, auc


def downstream_probe(curated_ids, control_ids, pool: dict, test_images, test_labels, config: TrainConfig,
                     repeats=5, class_names=None, filters=(32, 64), hidden=32) -> list[ProbeRun]:
    """Paired curated-vs-control training runs evaluated on the real test set.

    ``pool`` maps id -> (Image, label). Repeat ``r`` uses seed
    ``config.rng_seed + r`` for both members of the pair.
    """
    curated_ids, control_ids = list(curated_ids), list(control_ids)
    if len(curated_ids) != len(control_ids):
        raise ProtocolError(f"curated ({len(curated_ids)}) and control ({len(control_ids)}) sets differ in size")

    def dist(ids):
        out = {}
        for i in ids:
            out[pool[i][1]] = out.get(pool[i][1], 0) + 1
        return out

    if dist(curated_ids) != dist(control_ids):
        raise ProtocolError(f"class distributions differ: {dist(curated_ids)} vs {dist(control_ids)}")
    names = list(class_names) if class_names else sorted({pool[i][1] for i in curated_ids} | set(test_labels))
    if len(names) != 2:
        raise ProtocolError(f"probe is binary, got classes {names}")
    y_test = [names.index(lbl) for lbl in test_labels]

    runs = []
    for r in range(repeats):
        seed = config.rng_seed + r
        cfg = TrainConfig(config.learning_rate, config.momentum, config.batch_size, config.max_epochs,
                          config.patience, seed)
        scores = []
        for ids in (curated_ids, control_ids):
            model = train_probe([pool[i][0] for i in ids], [names.index(pool[i][1]) for i in ids], cfg,
                                filters, hidden)
            scores.append(evaluate_probe(model, test_images, y_test))
        runs.append(ProbeRun(r, seed, scores[0][0], scores[1][0], scores[0][1], scores[1][1]))
    return runs
