"""
Dataset ingestion, deterministic splitting and preprocessing

The dataset lives on disk as ``<root>/<ClassName>/<image files>``. A scan
produces a DatasetManifest; split_dataset assigns stratified
train/val/test tags; make_batches turns a split into numeric batches.
"""

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (AlreadySplitError, BadConfigError, BadManifestError,
                     BadRatiosError, DecodeError, EmptyDatasetError,
                     EmptySplitError, MissingFileError, MissingRootError)
from .logging_config import setup_logging
from .rng import SplitMix64, splitmix64

logger = setup_logging('dataset_pipeline')

TRAIN, VAL, TEST, UNASSIGNED = 'train', 'val', 'test', 'unassigned'
SPLITS = (TRAIN, VAL, TEST)
IMAGE_EXTENSIONS = {'.jpg', '.jpeg', '.png'}
DECODABLE_FORMATS = ('JPEG', 'MPO', 'PNG')
DEFAULT_RATIOS = (0.70, 0.15, 0.15)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_BILINEAR = getattr(Image, 'Resampling', Image).BILINEAR


def _byte_key(text):
    return text.encode('utf-8', 'surrogateescape')


@dataclass(frozen=True)
class ClassVocabulary:
    """Ordered class names; a name's position is its label index."""

    names: Tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, 'names', names)
        if any(not name for name in names):
            raise BadConfigError("class names must be non-empty")
        if len(set(names)) != len(names):
            raise BadConfigError(f"class names must be unique: {list(names)}")
        if list(names) != sorted(names, key=_byte_key):
            raise BadConfigError(f"class names must be sorted by byte value: {list(names)}")

    def __len__(self):
        return len(self.names)

    def index_of(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None


@dataclass(frozen=True)
class ImageRecord:
    path: Path
    class_index: int
    split: str = UNASSIGNED


@dataclass(frozen=True)
class ScanReport:
    """Files a scan passed over, and images found per class."""

    skipped: Tuple[Path, ...]
    per_class: Dict[str, int]


@dataclass
class DatasetManifest:
    root: Path
    vocabulary: ClassVocabulary
    records: List[ImageRecord]
    split_seed: Optional[int] = None
    ratios: Optional[Tuple[float, float, float]] = None

    def __post_init__(self):
        for record in self.records:
            if not 0 <= record.class_index < len(self.vocabulary):
                raise BadManifestError(
                    f"record {record.path} has class index {record.class_index} "
                    f"outside vocabulary of {len(self.vocabulary)}"
                )

    @property
    def num_classes(self):
        return len(self.vocabulary)

    @property
    def is_split(self):
        return any(record.split != UNASSIGNED for record in self.records)

    def split_records(self, split):
        return [record for record in self.records if record.split == split]

    def split_counts(self):
        """Counts as {split: [per-class count]}."""
        counts = {name: [0] * self.num_classes for name in SPLITS + (UNASSIGNED,)}
        for record in self.records:
            counts[record.split][record.class_index] += 1
        return counts


@dataclass(frozen=True)
class PreprocessConfig:
    target_height: int = 175
    target_width: int = 175
    scaling_mode: str = 'unit'

    def __post_init__(self):
        if self.target_height < 8 or self.target_width < 8:
            raise BadConfigError(
                f"target dimensions must be >= 8, got {self.target_height}x{self.target_width}"
            )
        if self.scaling_mode not in ('unit', 'imagenet'):
            raise BadConfigError(f"unknown scaling mode: {self.scaling_mode}")

    @property
    def input_shape(self):
        return (self.target_height, self.target_width, 3)

    def to_dict(self):
        return {
            'target_height': self.target_height,
            'target_width': self.target_width,
            'scaling_mode': self.scaling_mode,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(int(data['target_height']), int(data['target_width']), str(data['scaling_mode']))


def scan_dataset(root):
    """
    Catalog every image under ``root``, one subdirectory per class

    Args:
        root: Dataset directory

    Returns:
        (DatasetManifest with every record unassigned, ScanReport)

    Raises:
        MissingRootError: root does not exist
        EmptyDatasetError: no class directory holds an image
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingRootError(f"dataset root not found: {root}")

    class_dirs = sorted(
        (entry for entry in root.iterdir() if entry.is_dir() and not entry.name.startswith('.')),
        key=lambda entry: _byte_key(entry.name),
    )
    skipped = [entry for entry in root.iterdir() if entry.is_file()]
    vocabulary = ClassVocabulary(tuple(entry.name for entry in class_dirs))

    records = []
    per_class = {}
    for class_index, class_dir in enumerate(class_dirs):
        images = []
        for entry in class_dir.iterdir():
            if entry.is_file() and entry.suffix.lower() in IMAGE_EXTENSIONS:
                images.append(entry)
            else:
                skipped.append(entry)
        images.sort(key=lambda path: _byte_key(path.name))
        per_class[class_dir.name] = len(images)
        records.extend(ImageRecord(path, class_index) for path in images)

    if not records:
        raise EmptyDatasetError(f"no class directory under {root} contains an image")

    skipped.sort(key=lambda path: _byte_key(str(path)))
    for path in skipped:
        logger.debug(f"skipped non-image entry: {path}")
    logger.info(
        f"Scanned {root}: {len(vocabulary)} classes, {len(records)} images, "
        f"{len(skipped)} skipped"
    )
    manifest = DatasetManifest(root=root, vocabulary=vocabulary, records=records)
    return manifest, ScanReport(tuple(skipped), per_class)


def validate_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise BadRatiosError(f"expected three ratios (train, val, test), got {len(ratios)}")
    if any(not math.isfinite(r) or r < 0 for r in ratios):
        raise BadRatiosError(f"ratios must be finite and non-negative: {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatiosError(f"ratios must sum to 1.0, got {sum(ratios)!r}")
    return ratios


def apportion(count, ratios):
    """
    Largest-remainder apportionment of ``count`` items over ``ratios``

    Floors each quota, then hands leftovers out by descending fractional
    part; equal fractions go to the earlier slot (train, then val, then test).
    """
    exact = [Fraction(repr(r)) for r in ratios]
    quotas = [count * r for r in exact]
    counts = [math.floor(q) for q in quotas]
    leftover = count - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for k in range(max(leftover, 0)):
        counts[order[k % len(order)]] += 1
    return tuple(counts)


def split_dataset(manifest, ratios=DEFAULT_RATIOS, seed=0, overwrite=False):
    """
    Assign stratified train/val/test splits

    Within each class (in class-index order) records are sorted by path,
    shuffled by one SplitMix64 stream seeded with ``seed``, then cut into
    train/val/test runs whose sizes come from apportion().

    Returns:
        New DatasetManifest with every record assigned
    """
    ratios = validate_ratios(ratios)
    if manifest.is_split and not overwrite:
        raise AlreadySplitError("manifest already has split assignments (pass overwrite)")

    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = SplitMix64(seed)
    by_class = {index: [] for index in range(manifest.num_classes)}
    for record in manifest.records:
        by_class[record.class_index].append(record)

    assigned = {}
    for class_index in range(manifest.num_classes):
        members = sorted(by_class[class_index], key=lambda rec: _byte_key(str(rec.path)))
        rng.shuffle(members)
        counts = apportion(len(members), ratios)
        start = 0
        for split, size in zip(SPLITS, counts):
            for record in members[start:start + size]:
                assigned[record.path] = split
            start += size

    records = [replace(record, split=assigned[record.path]) for record in manifest.records]
    logger.info(f"Split {len(records)} records with ratios {ratios} and seed {seed}")
    return replace(manifest, records=records, split_seed=seed, ratios=ratios)


def _decode_rgb(path):
    try:
        with Image.open(path) as img:
            if img.format not in DECODABLE_FORMATS:
                raise DecodeError(f"unsupported image format {img.format} in {path}")
            # MPO is a JPEG with extra frames; the first one is the photo
            img.seek(0)
            return img.convert('RGB')
    except FileNotFoundError:
        raise MissingFileError(f"image file not found: {path}") from None
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from None


def load_and_preprocess(record, config=PreprocessConfig()):
    """
    Decode one image and turn it into a H x W x 3 float32 tensor

    Grayscale is replicated to three channels, alpha is dropped, the image
    is stretched to the target size with bilinear resampling and then scaled.

    Args:
        record: ImageRecord or a path
        config: PreprocessConfig

    Returns:
        numpy array of shape (target_height, target_width, 3)
    """
    path = record.path if isinstance(record, ImageRecord) else Path(record)
    if not os.path.exists(path):
        raise MissingFileError(f"image file not found: {path}")

    image = _decode_rgb(path)
    if image.size != (config.target_width, config.target_height):
        image = image.resize((config.target_width, config.target_height), _BILINEAR)

    tensor = np.asarray(image, dtype=np.float32) / np.float32(255.0)
    if config.scaling_mode == 'imagenet':
        mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
        std = np.asarray(IMAGENET_STD, dtype=np.float32)
        tensor = (tensor - mean) / std
    return tensor


def one_hot(indices, num_classes):
    return np.eye(num_classes, dtype=np.float32)[np.asarray(indices, dtype=np.int64)]


def batch_order(manifest, split, batch_size, shuffle_seed=None, epoch=0):
    """
    The record order make_batches will follow, grouped into batches

    Raises:
        EmptySplitError: the split has no records
    """
    if batch_size < 1:
        raise BadConfigError(f"batch_size must be >= 1, got {batch_size}")
    records = manifest.split_records(split)
    if not records:
        raise EmptySplitError(f"split '{split}' has no records")
    if shuffle_seed is not None:
        stream_seed = splitmix64((int(shuffle_seed) ^ int(epoch)) & 0xFFFFFFFFFFFFFFFF)
        SplitMix64(stream_seed).shuffle(records)
    return [records[start:start + batch_size] for start in range(0, len(records), batch_size)]


def make_batches(manifest, split, batch_size, config=PreprocessConfig(),
                 shuffle_seed=None, epoch=0, workers=1):
    """
    Preprocessed (inputs, one-hot labels) batches covering a split once

    Args:
        manifest: DatasetManifest with splits assigned
        split: 'train', 'val' or 'test'
        batch_size: Records per batch; the last batch may be smaller
        config: PreprocessConfig
        shuffle_seed: Shuffle with splitmix64(shuffle_seed ^ epoch); None keeps manifest order
        epoch: Epoch number mixed into the shuffle seed
        workers: Decoder threads; batch order does not depend on it

    Returns:
        Iterator of (B x H x W x 3 float32, B x num_classes float32) pairs
    """
    groups = batch_order(manifest, split, batch_size, shuffle_seed, epoch)
    return _iter_batches(groups, manifest.num_classes, config, workers)


def _iter_batches(groups, num_classes, config, workers):
    def load(record):
        return load_and_preprocess(record, config)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for group in groups:
                inputs = np.stack(list(pool.map(load, group)))
                yield inputs, one_hot([r.class_index for r in group], num_classes)
    else:
        for group in groups:
            inputs = np.stack([load(record) for record in group])
            yield inputs, one_hot([r.class_index for r in group], num_classes)


def save_manifest(manifest, path):
    """Write the manifest as JSON with record paths relative to the root."""
    root = Path(manifest.root)
    data = {
        'root': str(root.resolve()),
        'vocabulary': list(manifest.vocabulary.names),
        'ratios': list(manifest.ratios) if manifest.ratios is not None else None,
        'split_seed': manifest.split_seed,
        'records': [
            {
                'path': Path(os.path.relpath(record.path, root)).as_posix(),
                'class_index': record.class_index,
                'split': record.split,
            }
            for record in manifest.records
        ],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
    logger.info(f"Saved manifest with {len(manifest.records)} records to {path}")
    return path


def load_manifest(path, root=None):
    """
    Read a manifest written by save_manifest()

    Args:
        path: Manifest JSON file
        root: Override for the dataset root stored in the file
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        base = Path(root) if root is not None else Path(data.get('root') or path.parent)
        if not base.is_absolute():
            base = path.parent / base
        vocabulary = ClassVocabulary(tuple(data['vocabulary']))
        records = []
        for entry in data['records']:
            if entry['split'] not in SPLITS + (UNASSIGNED,):
                raise BadManifestError(f"unknown split tag {entry['split']!r}")
            records.append(ImageRecord(base / entry['path'], int(entry['class_index']), entry['split']))
        ratios = tuple(data['ratios']) if data.get('ratios') is not None else None
        seed = data.get('split_seed')
    except (ValueError, KeyError, TypeError) as exc:
        raise BadManifestError(f"malformed manifest {path}: {exc}") from None
    return DatasetManifest(base, vocabulary, records, seed, ratios)
