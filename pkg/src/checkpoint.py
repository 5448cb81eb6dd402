"""
Checkpoint files and pretrained weight bundles

Checkpoint layout (single file):
    8 bytes   magic b"CITYSCP1"
    8 bytes   little-endian uint64 header length
    N bytes   UTF-8 JSON header (format version, architecture, mask,
              preprocessing, vocabulary, optimizer scalars, tensor directory)
    ...       raw little-endian tensors at the offsets the directory lists

Weight bundle layout (directory):
    manifest.json   {name: {"shape": [...], "file": ..., "dtype": "f32", "byte_order": "little"}}
    <file>          one raw row-major tensor per entry
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .dataset_pipeline import ClassVocabulary, PreprocessConfig
from .errors import (CheckpointIOError, CorruptBundleError,
                     CorruptCheckpointError, MissingRequiredError,
                     ShapeMismatchError, VersionMismatchError)
from .logging_config import setup_logging
from .model_zoo import ArchitectureSpec, is_backbone
from .training_engine import OptimizerState

logger = setup_logging('checkpoint')

MAGIC = b'CITYSCP1'
FORMAT_VERSION = 1
_LENGTH = struct.Struct('<Q')


@dataclass
class Checkpoint:
    arch: ArchitectureSpec
    params: Dict[str, np.ndarray]
    mask: Dict[str, bool]
    optimizer_state: Optional[OptimizerState] = None
    vocabulary: Optional[ClassVocabulary] = None
    preprocess: Optional[PreprocessConfig] = None
    label: str = 'model'


def _little_endian(array):
    array = np.asarray(array)
    return array.astype(array.dtype.newbyteorder('<'), copy=False)


def save_checkpoint(path, arch, params, mask, optimizer_state=None,
                    vocabulary=None, preprocess=None, label='model'):
    """
    Write a checkpoint file

    Tensors keep their dtype, so a load returns bit-identical arrays.
    """
    groups = [('params', params)]
    if optimizer_state is not None:
        groups += [('m', optimizer_state.m), ('v', optimizer_state.v)]

    directory = []
    blobs = []
    offset = 0
    for group, tensors in groups:
        for name, tensor in tensors.items():
            data = _little_endian(tensor)
            raw = data.tobytes(order='C')
            directory.append({
                'group': group,
                'name': name,
                'shape': list(data.shape),
                'dtype': data.dtype.str,
                'offset': offset,
                'nbytes': len(raw),
            })
            blobs.append(raw)
            offset += len(raw)

    header = {
        'format_version': FORMAT_VERSION,
        'label': label,
        'arch': arch.to_dict(),
        'mask': dict(mask),
        'vocabulary': list(vocabulary.names) if vocabulary is not None else None,
        'preprocess': preprocess.to_dict() if preprocess is not None else None,
        'optimizer': None if optimizer_state is None else {
            'learning_rate': optimizer_state.learning_rate,
            'beta1': optimizer_state.beta1,
            'beta2': optimizer_state.beta2,
            'epsilon': optimizer_state.epsilon,
            't': optimizer_state.t,
        },
        'tensors': directory,
    }
    encoded = json.dumps(header).encode('utf-8')

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            f.write(MAGIC)
            f.write(_LENGTH.pack(len(encoded)))
            f.write(encoded)
            for raw in blobs:
                f.write(raw)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write checkpoint {path}: {exc}") from None
    logger.info(f"Saved checkpoint '{label}' ({len(params)} tensors, {offset} bytes) to {path}")
    return path


def load_checkpoint(path):
    """
    Read a checkpoint written by save_checkpoint()

    Raises:
        CheckpointIOError: file missing or unreadable
        CorruptCheckpointError: bad magic, malformed header or truncated data
        VersionMismatchError: unknown format version
    """
    path = Path(path)
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc}") from None

    prefix = len(MAGIC) + _LENGTH.size
    if len(data) < prefix or data[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path} is not a cityscope checkpoint")
    (header_length,) = _LENGTH.unpack(data[len(MAGIC):prefix])
    if prefix + header_length > len(data):
        raise CorruptCheckpointError(f"{path}: header truncated")
    try:
        header = json.loads(data[prefix:prefix + header_length].decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None

    version = header.get('format_version')
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, expected {FORMAT_VERSION}")

    body = data[prefix + header_length:]
    tensors = {'params': OrderedDict(), 'm': OrderedDict(), 'v': OrderedDict()}
    try:
        for entry in header['tensors']:
            start, size = int(entry['offset']), int(entry['nbytes'])
            if start + size > len(body):
                raise CorruptCheckpointError(f"{path}: tensor {entry['name']} truncated")
            array = np.frombuffer(body[start:start + size], dtype=np.dtype(entry['dtype']))
            tensors[entry['group']][entry['name']] = array.reshape(entry['shape']).copy()
        arch = ArchitectureSpec.from_dict(header['arch'])
        mask = {name: bool(flag) for name, flag in header['mask'].items()}
        optimizer = header.get('optimizer')
        optimizer_state = None
        if optimizer is not None:
            optimizer_state = OptimizerState(
                learning_rate=float(optimizer['learning_rate']),
                beta1=float(optimizer['beta1']),
                beta2=float(optimizer['beta2']),
                epsilon=float(optimizer['epsilon']),
                t=int(optimizer['t']),
                m=tensors['m'],
                v=tensors['v'],
            )
        vocabulary = ClassVocabulary(tuple(header['vocabulary'])) if header.get('vocabulary') else None
        preprocess = PreprocessConfig.from_dict(header['preprocess']) if header.get('preprocess') else None
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed header ({exc})") from None

    return Checkpoint(arch, tensors['params'], mask, optimizer_state, vocabulary, preprocess,
                      header.get('label', 'model'))


@dataclass
class LoadReport:
    loaded: List[str] = field(default_factory=list)
    ignored: List[str] = field(default_factory=list)
    not_loaded: List[str] = field(default_factory=list)

    def summary(self):
        return (f"{len(self.loaded)} tensors loaded, {len(self.ignored)} ignored, "
                f"{len(self.not_loaded)} initialized, not loaded")


def write_weight_bundle(params, names, directory):
    """Export the named tensors as a weight bundle (float32, little-endian)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for name in names:
        data = np.asarray(params[name], dtype='<f4')
        filename = f'{name}.bin'
        data.tofile(directory / filename)
        manifest[name] = {'shape': list(data.shape), 'file': filename,
                          'dtype': 'f32', 'byte_order': 'little'}
    with open(directory / 'manifest.json', 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
    return directory


def _read_bundle_manifest(directory):
    try:
        with open(directory / 'manifest.json', 'r', encoding='utf-8') as f:
            manifest = json.load(f)
    except (OSError, ValueError) as exc:
        raise CorruptBundleError(f"cannot read bundle manifest in {directory}: {exc}") from None
    if not isinstance(manifest, dict):
        raise CorruptBundleError(f"bundle manifest in {directory} must be an object")
    return manifest


def import_pretrained_weights(weight_bundle, arch, store, strict=False):
    """
    Replace store entries with bundle tensors of matching name and shape

    Args:
        weight_bundle: Bundle directory
        arch: ArchitectureSpec the store belongs to
        store: Current parameters (not modified)
        strict: Require every backbone conv weight to be present

    Returns:
        (new parameter dict, LoadReport)

    Raises:
        ShapeMismatchError: a name matches but its shape differs
        MissingRequiredError: strict and a backbone conv weight is absent
        CorruptBundleError: unreadable manifest or tensor file
    """
    directory = Path(weight_bundle)
    manifest = _read_bundle_manifest(directory)

    offenders = []
    for name, entry in manifest.items():
        if name in store and tuple(entry.get('shape', ())) != tuple(store[name].shape):
            offenders.append(f"{name} {tuple(entry.get('shape', ()))} != {tuple(store[name].shape)}")
    if offenders:
        raise ShapeMismatchError("bundle shapes differ: " + "; ".join(offenders))

    if strict:
        conv_layers = [layer.name for layer in arch.layers if layer.kind == 'conv2d']
        required = [f'{name}.weight' for name in conv_layers if is_backbone(name)]
        missing = [name for name in required if name not in manifest]
        if missing:
            raise MissingRequiredError("bundle lacks backbone weights: " + ", ".join(missing))

    params = dict(store)
    report = LoadReport()
    for name, entry in manifest.items():
        if name not in store:
            report.ignored.append(name)
            continue
        if entry.get('dtype', 'f32') != 'f32' or entry.get('byte_order', 'little') != 'little':
            raise CorruptBundleError(f"{name}: only little-endian f32 tensors are supported")
        try:
            data = np.fromfile(directory / entry['file'], dtype='<f4')
        except (OSError, KeyError) as exc:
            raise CorruptBundleError(f"{name}: cannot read tensor file ({exc})") from None
        if data.size != store[name].size:
            raise CorruptBundleError(f"{name}: file holds {data.size} values, expected {store[name].size}")
        params[name] = data.reshape(store[name].shape).astype(store[name].dtype)
        report.loaded.append(name)

    report.not_loaded = [name for name in store if name not in report.loaded]
    logger.info(f"Imported weights from {directory}: {report.summary()}")
    return params, report
