"""Dataset bookkeeping: labeled images, hazy/clear pairs, splits and batching.

Split and batch order are pure functions of identity keys and seeds, never of
file-system or worker ordering.
"""
from __future__ import annotations

import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
import torch

from .errors import DatasetError, LeakageError, ShapeError
from .images import load_image, resize_image

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLIT_VERSION = 1
PARTITIONS = ("train", "validation", "test")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


@dataclass
class LabeledImage:
    identity_key: str
    path: str
    label: int
    # "train"/"test" when the dataset ships its own split (CUB-200-2011 style)
    subset: str | None = None


@dataclass
class PairedSample:
    identity_key: str
    hazy: np.ndarray | None
    clear: np.ndarray | None
    label: int
    hazy_path: str | None = None
    clear_path: str | None = None
    subset: str | None = None
    haze: dict = field(default_factory=dict)

    def load(self, size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Return (hazy, clear) arrays, reading from disk when not in memory."""
        hazy = self.hazy if self.hazy is not None else load_image(self.hazy_path, size)
        clear = self.clear if self.clear is not None else load_image(self.clear_path, size)
        if size is not None:
            if hazy.shape[:2] != (size, size):
                hazy = resize_image(hazy, size, size)
            if clear.shape[:2] != (size, size):
                clear = resize_image(clear, size, size)
        if hazy.shape != clear.shape:
            raise ShapeError(f"{self.identity_key}: hazy {hazy.shape} vs clear {clear.shape}")
        return hazy, clear


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list

    def partitions(self) -> dict[str, list]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def assignments(self) -> dict[str, str]:
        out = {}
        for name, items in self.partitions().items():
            for item in items:
                if item.identity_key in out:
                    raise LeakageError(
                        f"{item.identity_key} is in both {out[item.identity_key]} and {name}",
                        [item.identity_key],
                    )
                out[item.identity_key] = name
        return out

    def sizes(self) -> dict[str, int]:
        return {name: len(items) for name, items in self.partitions().items()}


def _floor_fraction(fraction: float, n: int) -> int:
    # guards against 0.29 * 100 = 28.999999999999996
    return int(math.floor(fraction * n + 1e-9))


def build_split(samples: Sequence, val_fraction: float, seed: int, train_per_class: int | None = None) -> DatasetSplit:
    """Stratified train/validation/test split.

    Items whose ``subset`` is ``"test"`` go straight to test and ``"train"``
    items form the training pool. Unassigned items all join the pool, unless
    ``train_per_class`` is given, in which case that many per class are drawn
    into the pool and the remainder become test (Caltech-256 protocol).
    Validation takes floor(val_fraction * pool size) items from each class's
    pool. Class ``c`` is shuffled by ``np.random.default_rng([seed, c])`` over
    its key-sorted members.
    """
    if not 0 <= val_fraction < 1:
        raise DatasetError(f"val_fraction must be in [0, 1), got {val_fraction}")
    if not samples:
        raise DatasetError("cannot split an empty collection")
    keys = [s.identity_key for s in samples]
    if len(set(keys)) != len(keys):
        raise DatasetError("identity keys must be unique")

    by_class = defaultdict(list)
    for s in samples:
        by_class[int(s.label)].append(s)

    train, validation, test = [], [], []
    for label in sorted(by_class):
        members = sorted(by_class[label], key=lambda s: s.identity_key)
        rng = np.random.default_rng([int(seed), label])
        pool = [s for s in members if s.subset == "train"]
        test += [s for s in members if s.subset == "test"]
        free = [s for s in members if s.subset not in ("train", "test")]
        if train_per_class is not None and free:
            order = rng.permutation(len(free))
            chosen = sorted(order[:train_per_class].tolist())
            rest = sorted(order[train_per_class:].tolist())
            pool += [free[i] for i in chosen]
            test += [free[i] for i in rest]
        else:
            pool += free
        pool.sort(key=lambda s: s.identity_key)
        n_val = _floor_fraction(val_fraction, len(pool))
        order = rng.permutation(len(pool))
        val_idx = set(order[:n_val].tolist())
        validation += [s for i, s in enumerate(pool) if i in val_idx]
        class_train = [s for i, s in enumerate(pool) if i not in val_idx]
        if not class_train:
            raise DatasetError(f"class {label} has no training items")
        train += class_train
    return DatasetSplit(train=train, validation=validation, test=test)


def enforce_pairing(split: DatasetSplit, pairs) -> DatasetSplit:
    """Put every hazy pair in the partition of its clear source.

    ``pairs`` is either a flat collection (each pair inherits its source's
    partition) or a mapping ``partition -> pairs`` proposing an assignment,
    which must agree with the sources. Any disagreement, an unknown source or
    a label mismatch raises :class:`LeakageError` listing the offenders.
    """
    source_part = split.assignments()
    source_label = {s.identity_key: int(s.label) for items in split.partitions().values() for s in items}
    if isinstance(pairs, dict):
        unknown = set(pairs) - set(PARTITIONS)
        if unknown:
            raise DatasetError(f"unknown partitions {sorted(unknown)}")
        proposed = [(part, p) for part in PARTITIONS for p in pairs.get(part, [])]
    else:
        proposed = [(None, p) for p in pairs]

    out = {name: [] for name in PARTITIONS}
    seen = {}
    violations = []
    for part, pair in proposed:
        key = pair.identity_key
        src = source_part.get(key)
        if src is None:
            violations.append((key, "no clear source in split"))
            continue
        if part is not None and part != src:
            violations.append((key, f"hazy in {part}, clear source in {src}"))
            continue
        if key in seen:
            violations.append((key, f"paired twice ({seen[key]} and {src})"))
            continue
        if int(pair.label) != source_label[key]:
            violations.append((key, "label differs from clear source"))
            continue
        seen[key] = src
        out[src].append(pair)
    if violations:
        detail = "; ".join(f"{k}: {why}" for k, why in violations[:10])
        raise LeakageError(f"{len(violations)} pairing violation(s): {detail}", violations)
    log.info("pairing check passed: %d pairs, 0 violations", len(seen))
    return DatasetSplit(**out)


def batch_iterator(partition: Sequence, batch_size: int, seed: int, epoch: int) -> Iterator[list]:
    """Yield one epoch of batches in the order given by ``default_rng([seed, epoch])``."""
    if batch_size < 1:
        raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
    if not partition:
        raise DatasetError("cannot iterate an empty partition")
    order = np.random.default_rng([int(seed), int(epoch)]).permutation(len(partition))
    return ([partition[i] for i in order[start:start + batch_size]] for start in range(0, len(order), batch_size))


class ImageCache:
    """Keeps decoded pairs as uint8 arrays at the network resolution."""

    def __init__(self, size: int = 256):
        self.size = size
        self._store: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, pair: PairedSample) -> tuple[np.ndarray, np.ndarray]:
        hit = self._store.get(pair.identity_key)
        if hit is None:
            hazy, clear = pair.load(self.size)
            hit = (
                np.round(hazy * 255).astype(np.uint8),
                np.round(clear * 255).astype(np.uint8),
            )
            self._store[pair.identity_key] = hit
        return hit

    def batch(self, pairs: Sequence[PairedSample], dtype=torch.float32):
        """Return (hazy NCHW, clear NCHW, labels, keys) for a list of pairs."""
        hazy, clear = zip(*(self.get(p) for p in pairs))
        hazy = torch.from_numpy(np.stack(hazy).transpose(0, 3, 1, 2).copy()).to(dtype) / 255
        clear = torch.from_numpy(np.stack(clear).transpose(0, 3, 1, 2).copy()).to(dtype) / 255
        labels = torch.tensor([int(p.label) for p in pairs], dtype=torch.long)
        return hazy, clear, labels, [p.identity_key for p in pairs]


# -- external file formats ----------------------------------------------------


def scan_class_folders(root) -> tuple[list[LabeledImage], list[str]]:
    """Ingest ``root/<class>/<image>``; ``root/{train,test}/<class>/<image>`` marks subsets.

    Identity keys are ``<class>/<file stem>``; labels follow sorted class names.
    """
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise DatasetError(f"dataset directory not found: {root}")
    layouts = [(None, root)]
    if os.path.isdir(os.path.join(root, "train")) and os.path.isdir(os.path.join(root, "test")):
        layouts = [("train", os.path.join(root, "train")), ("test", os.path.join(root, "test"))]
    class_names = sorted({
        d for _, base in layouts for d in os.listdir(base) if os.path.isdir(os.path.join(base, d))
    })
    if not class_names:
        raise DatasetError(f"no class folders under {root}")
    items = []
    for subset, base in layouts:
        for label, name in enumerate(class_names):
            folder = os.path.join(base, name)
            if not os.path.isdir(folder):
                continue
            for fname in sorted(os.listdir(folder)):
                stem, ext = os.path.splitext(fname)
                if ext.lower() in IMAGE_EXTENSIONS:
                    items.append(LabeledImage(f"{name}/{stem}", os.path.join(folder, fname), label, subset))
    if not items:
        raise DatasetError(f"no images under {root}")
    return items, class_names


def write_manifest(path, pairs: Sequence[PairedSample], haze_params: dict, class_names=None) -> None:
    """Write the pair manifest; paths are stored relative to the manifest's folder."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    for p in sorted(pairs, key=lambda p: p.identity_key):
        rec = {
            "key": p.identity_key,
            "label": int(p.label),
            "clear": os.path.relpath(os.path.abspath(p.clear_path), base),
            "hazy": os.path.relpath(os.path.abspath(p.hazy_path), base),
            "beta": p.haze.get("beta"),
            "depth": p.haze.get("depth"),
            "depth_map": p.haze.get("depth_map"),
            "airlight": p.haze.get("airlight"),
        }
        if p.subset is not None:
            rec["subset"] = p.subset
        records.append(rec)
    doc = {
        "format": "ccdehaze-manifest",
        "version": MANIFEST_VERSION,
        "haze": haze_params,
        "class_names": list(class_names) if class_names is not None else None,
        "pairs": records,
    }
    os.makedirs(base, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> tuple[list[PairedSample], dict]:
    """Load a manifest into path-backed pairs plus its metadata."""
    if not os.path.isfile(path):
        raise DatasetError(f"manifest not found: {path}")
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "ccdehaze-manifest" or doc.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path} is not a version-{MANIFEST_VERSION} ccdehaze manifest")
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    for rec in doc["pairs"]:
        pairs.append(PairedSample(
            identity_key=rec["key"],
            hazy=None,
            clear=None,
            label=int(rec["label"]),
            hazy_path=os.path.join(base, rec["hazy"]),
            clear_path=os.path.join(base, rec["clear"]),
            subset=rec.get("subset"),
            haze={k: rec.get(k) for k in ("beta", "depth", "depth_map", "airlight")},
        ))
    if not pairs:
        raise DatasetError(f"manifest {path} lists no pairs")
    meta = {k: v for k, v in doc.items() if k != "pairs"}
    return pairs, meta


def save_split(path, split: DatasetSplit, meta: dict | None = None) -> None:
    doc = {
        "version": SPLIT_VERSION,
        "meta": meta or {},
        "assignments": dict(sorted(split.assignments().items())),
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


def load_split(path, samples: Sequence) -> DatasetSplit:
    """Rebuild a split from its file; every listed key must be present in ``samples``."""
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != SPLIT_VERSION:
        raise DatasetError(f"unsupported split file version {doc.get('version')}")
    by_key = {s.identity_key: s for s in samples}
    out = {name: [] for name in PARTITIONS}
    for key, part in sorted(doc["assignments"].items()):
        if key not in by_key:
            raise DatasetError(f"split file lists {key!r}, missing from dataset")
        out[part].append(by_key[key])
    return DatasetSplit(**out)
