"""Manifests, image ingestion, stratified splitting and on-disk formats."""
from __future__ import annotations

import base64
import csv
import enum
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import ConfigError, ChecksumError, DataError, EmptySetError, FormatError, ImageTypeError, VersionError
from .ius import BaselineProfile, ScoredItem, Scope, UtilityLevel
from .neural import PARAM_NAMES, Architecture, EpuModel, SubNetwork
from .pfm import ColorSpace, Image, PfmConfig
from .profile import ContributionProfile

FORMAT_VERSION = 1


class Split(enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    TEST = "TEST"


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: str
    split: Split | None = None


@dataclass
class Manifest:
    rows: list = field(default_factory=list)
    root: Path | None = None

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            if r.path in seen:
                raise DataError(f"duplicate path in manifest: {r.path}")
            if r.label is not None and not r.label:
                raise DataError(f"empty label for {r.path}")
            seen.add(r.path)

    @property
    def labeled(self) -> bool:
        return all(r.label is not None for r in self.rows)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.rows]

    @property
    def classes(self) -> list[str]:
        return sorted({lbl for lbl in self.labels if lbl is not None})

    def in_split(self, split: "Split") -> "Manifest":
        return self.subset(r for r in self.rows if r.split is split)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p

    def subset(self, rows) -> "Manifest":
        return Manifest(list(rows), self.root)


def read_manifest(path, require_labels=True) -> Manifest:
    """Parse ``path,label[,split]`` CSV. Relative image paths resolve against the manifest's folder.

    With ``require_labels=False`` a bare ``path`` header is accepted as well
    (unlabeled sets for global baselines and scoring); rows then carry
    ``label=None``.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: manifest is not UTF-8 ({exc})") from exc
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty manifest (missing header)")
    header = [h.strip() for h in lines[0].split(",")]
    allowed = [["path", "label"], ["path", "label", "split"]] + ([] if require_labels else [["path"]])
    if header not in allowed:
        raise DataError(f"{path}: header must be 'path,label[,split]', got {lines[0]!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = [p.strip() for p in line.split(",")]
        if parts == header:
            raise DataError(f"{path}:{lineno}: repeated header row")
        if len(parts) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} fields, got {len(parts)} (commas in paths are not allowed)"
            )
        split = None
        if len(parts) == 3 and parts[2]:
            try:
                split = Split(parts[2].upper())
            except ValueError:
                raise DataError(f"{path}:{lineno}: unknown split {parts[2]!r}") from None
        if len(parts) > 1 and not parts[1]:
            raise DataError(f"{path}:{lineno}: empty label")
        rows.append(ManifestRow(parts[0], parts[1] if len(parts) > 1 else None, split))
    try:
        return Manifest(rows, path.parent)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_manifest(manifest: Manifest, path) -> None:
    with_split = any(r.split is not None for r in manifest.rows)
    if not manifest.labeled:
        if with_split:
            raise DataError("unlabeled manifests cannot carry a split column")
        lines = ["path"]
    else:
        lines = ["path,label,split" if with_split else "path,label"]
    for r in manifest.rows:
        if "," in r.path or "," in (r.label or ""):
            raise DataError(f"commas are not allowed in manifest fields: {r.path}")
        cells = [r.path] + ([r.label] if r.label is not None else [])
        cells += [r.split.value if r.split else ""] if with_split else []
        lines.append(",".join(cells))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


# --- images -----------------------------------------------------------------


def bilinear_resize(arr: np.ndarray, size) -> np.ndarray:
    """Resize (H, W, C) with half-pixel-centred bilinear interpolation and edge clamping."""
    H, W = arr.shape[:2]
    th, tw = int(size[0]), int(size[1])
    if (H, W) == (th, tw):
        return arr.astype(np.float64, copy=True)

    def axis_weights(n_src, n_dst):
        pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        pos = np.clip(pos, 0, n_src - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, n_src - 1)
        return lo, hi, pos - lo

    r0, r1, wr = axis_weights(H, th)
    c0, c1, wc = axis_weights(W, tw)
    a = arr.astype(np.float64)
    rows = a[r0] * (1 - wr)[:, None, None] + a[r1] * wr[:, None, None]
    return rows[:, c0] * (1 - wc)[None, :, None] + rows[:, c1] * wc[None, :, None]


def load_image(path, target_size=(64, 64), modality: ColorSpace | str = ColorSpace.SRGB) -> Image:
    """Decode an 8-bit PNG, drop alpha, resize bilinearly and scale to [0, 1]."""
    modality = ColorSpace(modality) if not isinstance(modality, ColorSpace) else modality
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image not found: {path}")
    try:
        with PILImage.open(path) as im:
            fmt = im.format
            mode = im.mode
            im.load()
            if fmt != "PNG":
                raise DataError(f"{path}: unsupported format {fmt} (PNG only)")
            if mode in ("RGB", "RGBA"):
                source = ColorSpace.SRGB
                arr = np.asarray(im.convert("RGB"))
            elif mode in ("L", "LA"):
                source = ColorSpace.GRAY
                arr = np.asarray(im.convert("L"))[:, :, None]
            else:
                raise DataError(f"{path}: unsupported PNG mode {mode} (8-bit RGB/RGBA/L only)")
    except OSError as exc:
        raise DataError(f"{path}: cannot decode image ({exc})") from exc
    if source is not modality:
        raise ImageTypeError(f"{path}: file is {source.value} but {modality.value} was requested")
    px = bilinear_resize(arr.astype(np.float64) / 255.0, target_size)
    return Image(np.clip(px, 0.0, 1.0), modality)


def save_png(image: Image, path) -> None:
    arr = np.round(image.pixels * 255.0).astype(np.uint8)
    if image.color_space is ColorSpace.GRAY:
        pil = PILImage.fromarray(arr[:, :, 0])
    else:
        pil = PILImage.fromarray(arr)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")


def load_manifest_images(manifest: Manifest, target_size, modality) -> list[Image]:
    return [load_image(manifest.resolve(r), target_size, modality) for r in manifest.rows]


# --- splitting --------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    val: float = 0.20
    test: float = 0.10
    rng_seed: int = 42
    stratified: bool = True

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")

    @property
    def fractions(self):
        return (self.train, self.val, self.test)


def largest_remainder(total: int, weights) -> list[int]:
    """Integer apportionment of ``total`` proportional to ``weights`` (ties go to the earlier entry)."""
    w = np.asarray(weights, dtype=np.float64)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("apportionment needs a non-negative total and positive weights")
    quotas = total * w / w.sum()
    base = np.floor(quotas).astype(int)
    rem = quotas - base
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[: total - int(base.sum())]:
        base[i] += 1
    return base.tolist()


def stratified_split(manifest: Manifest, spec: SplitSpec = SplitSpec()) -> tuple[Manifest, Manifest, Manifest]:
    """Partition into (train, val, test).

    Rows carrying an explicit split keep it; the rest are shuffled per class
    under ``spec.rng_seed`` and apportioned by largest remainder. Output rows
    keep manifest order.
    """
    if len(manifest) == 0:
        raise EmptySetError("cannot split an empty manifest")
    rng = np.random.default_rng(spec.rng_seed)
    assign: dict[int, Split] = {}
    free = []
    for i, r in enumerate(manifest.rows):
        if r.split is not None:
            assign[i] = r.split
        else:
            free.append(i)
    if spec.stratified:
        groups: dict[str, list] = {}
        for i in free:
            groups.setdefault(manifest.rows[i].label, []).append(i)
        group_list = [groups[k] for k in sorted(groups)]
    else:
        group_list = [free] if free else []
    for members in group_list:
        perm = rng.permutation(len(members))
        counts = largest_remainder(len(members), spec.fractions)
        bounds = np.cumsum([0] + counts)
        for split, lo, hi in zip(Split, bounds[:-1], bounds[1:]):
            for j in perm[lo:hi]:
                assign[members[j]] = split
    parts = {s: [] for s in Split}
    for i, r in enumerate(manifest.rows):
        parts[assign[i]].append(ManifestRow(r.path, r.label, assign[i]))
    return tuple(manifest.subset(parts[s]) for s in Split)


# --- persistence ------------------------------------------------------------


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _checksum(blobs) -> int:
    crc = 0
    for b in blobs:
        crc = zlib.crc32(b, crc)
    return crc


def model_to_json(model: EpuModel) -> str:
    tensors, blobs = [], []
    for i, s in enumerate(model.subnets):
        for n in PARAM_NAMES:
            arr = np.ascontiguousarray(s.params[n], dtype="<f4")
            raw = arr.tobytes()
            blobs.append(raw)
            tensors.append(
                {"name": f"subnet{i}.{n}", "shape": list(arr.shape), "dtype": "f32",
                 "data": base64.b64encode(raw).decode("ascii")}
            )
    bias = np.asarray(model.bias, dtype="<f4").reshape(1)
    blobs.append(bias.tobytes())
    doc = {
        "format_version": FORMAT_VERSION,
        "pfm_config": model.pfm_config.value,
        "input_size": list(model.input_size),
        "architecture": model.arch.to_dict(),
        "bias": float(bias[0]),
        "tensors": tensors,
        "checksum": _checksum(blobs),
    }
    return json.dumps(doc, indent=1)


def save_model(model: EpuModel, path) -> None:
    """Write the versioned JSON container. The CRC32 covers tensor bytes followed by the bias."""
    _atomic_write(path, model_to_json(model).encode("utf-8"))


def _read_json(path, what):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: malformed or truncated {what} file ({exc})") from exc
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: {what} file must hold a JSON object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise VersionError(doc.get("format_version"), FORMAT_VERSION)
    return doc


def _pfm_config(tag) -> PfmConfig:
    try:
        return PfmConfig(tag)
    except ValueError:
        raise ConfigError(f"unknown pfm_config {tag!r}") from None


def load_model(path) -> EpuModel:
    doc = _read_json(path, "model")
    try:
        cfg = _pfm_config(doc["pfm_config"])
        arch = Architecture.from_dict(doc["architecture"])
        shapes = arch.param_shapes()
        by_name = {t["name"]: t for t in doc["tensors"]}
        blobs, params = [], {}
        for i in range(EpuModel.n_maps):
            params[i] = {}
            for n in PARAM_NAMES:
                t = by_name[f"subnet{i}.{n}"]
                if t["dtype"] != "f32":
                    raise FormatError(f"{path}: tensor {t['name']} has dtype {t['dtype']!r}, expected 'f32'")
                raw = base64.b64decode(t["data"], validate=True)
                blobs.append(raw)
                shape = tuple(t["shape"])
                if shape != shapes[n] or len(raw) != 4 * int(np.prod(shape)):
                    raise FormatError(f"{path}: tensor {t['name']} has inconsistent shape/size")
                params[i][n] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
        bias = np.array([doc["bias"]], dtype="<f4")
        blobs.append(bias.tobytes())
        input_size = tuple(int(v) for v in doc["input_size"])
        expected = int(doc["checksum"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise FormatError(f"{path}: malformed model file ({exc!r})") from exc
    actual = _checksum(blobs)
    if actual != expected:
        raise ChecksumError(f"{path}: checksum mismatch (stored {expected}, computed {actual})")
    subnets = [SubNetwork(arch, params[i]) for i in range(EpuModel.n_maps)]
    return EpuModel(subnets, bias.astype(np.float32), cfg, input_size)


def baseline_to_json(baseline: BaselineProfile) -> str:
    keys = baseline.keys
    doc = {
        "format_version": FORMAT_VERSION,
        "pfm_config": baseline.pfm_config.value,
        "scope": baseline.scope.value,
        "pfm_names": list(baseline.pfm_config.names),
        "profiles": {k: [float(v) for v in baseline.profiles[k]] for k in keys},
        "counts": {k: baseline.counts[k] for k in keys},
    }
    return json.dumps(doc, indent=1)


def save_baseline(baseline: BaselineProfile, path) -> None:
    _atomic_write(path, baseline_to_json(baseline).encode("utf-8"))


def load_baseline(path) -> BaselineProfile:
    doc = _read_json(path, "baseline")
    try:
        cfg = _pfm_config(doc["pfm_config"])
        if list(doc["pfm_names"]) != list(cfg.names):
            raise ConfigError(f"{path}: pfm_names {doc['pfm_names']} do not match {cfg.value} order")
        scope = Scope(doc["scope"])
        return BaselineProfile(scope, dict(doc["profiles"]), dict(doc["counts"]), cfg)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise FormatError(f"{path}: malformed baseline file ({exc!r})") from exc


# --- score reports ----------------------------------------------------------


def report_header(pfm_config: PfmConfig) -> list[str]:
    return ["id", "class", "u", "level"] + [f"c_{n}" for n in pfm_config.names]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_score_report(items, path, pfm_config: PfmConfig, note: str | None = None) -> None:
    """CSV with one row per scored image, in input order.

    ``note`` (e.g. non-standard thresholds) is written as a leading ``#`` line.
    """
    lines = []
    if note:
        lines.append(f"# {note}")
    lines.append(",".join(report_header(pfm_config)))
    for it in items:
        if it.profile.pfm_config is not pfm_config:
            raise ConfigError(f"item {it.id} scored under {it.profile.pfm_config.value}")
        cells = [it.id, it.class_key or "", _fmt(it.u), it.level.value]
        cells += [_fmt(c) for c in it.profile.components]
        lines.append(",".join(cells))
    _atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def read_score_report(path) -> tuple[list[ScoredItem], PfmConfig]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"score report not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise FormatError(f"{path}: empty score report") from None
    cfg = None
    for c in PfmConfig:
        if header == report_header(c):
            cfg = c
    if cfg is None:
        raise FormatError(f"{path}: unrecognised score report header {header}")
    items = []
    for lineno, row in enumerate(reader, start=2):
        try:
            comps = [float(v) for v in row[4:8]]
            items.append(
                ScoredItem(row[0], row[1] or None, ContributionProfile(comps, cfg), float(row[2]), UtilityLevel(row[3]))
            )
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}:{lineno}: bad score row ({exc})") from exc
    return items, cfg
