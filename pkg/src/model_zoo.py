"""
Network architectures: layer specs, shape inference, builders, initialization

An ArchitectureSpec is an immutable, ordered list of LayerSpecs. Parameters
live in a plain dict ``{"<layer>.<weight|bias|gamma|beta|running_mean|running_var>": ndarray}``
and trainability in a dict ``{learnable name: bool}``.
"""

from collections import OrderedDict, namedtuple
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import BadConfigError, ShapeUnderflowError
from .logging_config import setup_logging
from .rng import SplitMix64

logger = setup_logging('model_zoo')

LAYER_KINDS = ('conv2d', 'batchnorm', 'relu', 'maxpool', 'dropout', 'flatten', 'dense', 'softmax')
LEARNABLE_SUFFIXES = ('weight', 'bias', 'gamma', 'beta')
RUNNING_SUFFIXES = ('running_mean', 'running_var')

# Canonical VGG16 convolutional stack: (convs per block, channels)
VGG16_BLOCKS = ((2, 64), (2, 128), (3, 256), (3, 512), (3, 512))

ParameterCount = namedtuple('ParameterCount', ['total', 'trainable', 'frozen'])


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    filters: int = 0
    units: int = 0
    rate: float = 0.0
    kernel: int = 3
    pool: int = 2
    epsilon: float = 1e-5
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise BadConfigError(f"unknown layer kind '{self.kind}' for layer {self.name}")
        if not self.name:
            raise BadConfigError("layer names must be non-empty")
        if self.kind == 'conv2d' and (self.filters < 1 or self.kernel != 3):
            raise BadConfigError(f"{self.name}: conv2d needs filters >= 1 and a 3x3 kernel")
        if self.kind == 'dense' and self.units < 1:
            raise BadConfigError(f"{self.name}: dense needs width >= 1")
        if self.kind == 'dropout' and not 0.0 <= self.rate < 1.0:
            raise BadConfigError(f"{self.name}: dropout rate must be in [0, 1), got {self.rate}")
        if self.kind == 'maxpool' and self.pool != 2:
            raise BadConfigError(f"{self.name}: only 2x2 stride-2 pooling is supported")

    def to_dict(self):
        data = {'kind': self.kind, 'name': self.name}
        if self.kind == 'conv2d':
            data['filters'] = self.filters
        elif self.kind == 'dense':
            data['units'] = self.units
        elif self.kind == 'dropout':
            data['rate'] = self.rate
        elif self.kind == 'batchnorm':
            data['epsilon'] = self.epsilon
            data['momentum'] = self.momentum
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def infer_shapes(input_shape, layers):
    """
    Output shape after every layer

    conv2d keeps H x W and sets channels to filters; maxpool floors H and W
    by 2; flatten maps (H, W, C) to H*W*C; dense maps n to its width.

    Raises:
        ShapeUnderflowError: a spatial dimension reaches 0
    """
    shape = tuple(int(d) for d in input_shape)
    if len(shape) != 3 or shape[2] != 3 or min(shape) < 1:
        raise BadConfigError(f"input shape must be (H, W, 3), got {input_shape}")
    shapes = []
    for layer in layers:
        if layer.kind == 'conv2d':
            if len(shape) != 3:
                raise BadConfigError(f"{layer.name}: conv2d after flatten")
            shape = (shape[0], shape[1], layer.filters)
        elif layer.kind == 'maxpool':
            if len(shape) != 3:
                raise BadConfigError(f"{layer.name}: maxpool after flatten")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
            if shape[0] == 0 or shape[1] == 0:
                raise ShapeUnderflowError(
                    f"{layer.name}: spatial size reaches 0 (input {tuple(input_shape)})"
                )
        elif layer.kind == 'flatten':
            shape = (int(np.prod(shape)),)
        elif layer.kind == 'dense':
            if len(shape) != 1:
                raise BadConfigError(f"{layer.name}: dense needs a flattened input")
            shape = (layer.units,)
        shapes.append(shape)
    return shapes


@dataclass(frozen=True)
class ArchitectureSpec:
    input_shape: Tuple[int, int, int]
    layers: Tuple[LayerSpec, ...]
    num_classes: int
    family: str = 'custom'
    shapes: Tuple[tuple, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, 'input_shape', tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, 'layers', tuple(self.layers))
        if self.num_classes < 2:
            raise BadConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise BadConfigError("layer names must be unique within an architecture")
        if (len(self.layers) < 2 or self.layers[-1].kind != 'softmax'
                or self.layers[-2].kind != 'dense' or self.layers[-2].units != self.num_classes):
            raise BadConfigError("architecture must end with dense(num_classes) then softmax")
        object.__setattr__(self, 'shapes', tuple(infer_shapes(self.input_shape, self.layers)))

    def input_shape_of(self, index):
        return self.input_shape if index == 0 else self.shapes[index - 1]

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def to_dict(self):
        return {
            'family': self.family,
            'input_shape': list(self.input_shape),
            'num_classes': self.num_classes,
            'layers': [layer.to_dict() for layer in self.layers],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            input_shape=tuple(data['input_shape']),
            layers=tuple(LayerSpec.from_dict(entry) for entry in data['layers']),
            num_classes=int(data['num_classes']),
            family=data.get('family', 'custom'),
        )


@dataclass(frozen=True)
class VanillaConfig:
    """Every number of the from-scratch CNN; defaults give the 4-block network."""

    filters: Tuple[int, ...] = (32, 64, 128, 128)
    block_dropout_after: Tuple[int, ...] = (3, 4)
    block_dropout_rate: float = 0.25
    dense_units: Tuple[int, ...] = (256,)
    head_dropout: float = 0.5


@dataclass(frozen=True)
class HeadConfig:
    """Dense head placed on top of the VGG16 backbone."""

    dense_units: Tuple[int, ...] = (256,)
    dropout: float = 0.5


def _head_layers(num_classes, dense_units, dropout):
    layers = [LayerSpec('flatten', 'flatten')]
    for i, units in enumerate(dense_units, 1):
        if units < 1:
            raise BadConfigError(f"dense widths must be positive, got {units}")
        layers.append(LayerSpec('dense', f'fc{i}', units=units))
        layers.append(LayerSpec('relu', f'fc{i}_relu'))
        if dropout > 0:
            layers.append(LayerSpec('dropout', f'fc{i}_dropout', rate=dropout))
    layers.append(LayerSpec('dense', 'predictions', units=num_classes))
    layers.append(LayerSpec('softmax', 'softmax'))
    return layers


def build_vanilla_cnn(input_shape, num_classes, config=VanillaConfig()):
    """
    Conv blocks (conv 3x3 -> batchnorm -> relu -> maxpool 2x2) then a dense head

    Args:
        input_shape: (H, W, 3)
        num_classes: Number of output classes (>= 2)
        config: VanillaConfig

    Returns:
        ArchitectureSpec
    """
    if num_classes < 2:
        raise BadConfigError(f"num_classes must be >= 2, got {num_classes}")
    if not config.filters or any(f < 1 for f in config.filters):
        raise BadConfigError(f"filter counts must be positive, got {config.filters}")

    layers = []
    for block, filters in enumerate(config.filters, 1):
        layers += [
            LayerSpec('conv2d', f'block{block}_conv', filters=filters),
            LayerSpec('batchnorm', f'block{block}_bn'),
            LayerSpec('relu', f'block{block}_relu'),
            LayerSpec('maxpool', f'block{block}_pool'),
        ]
        if block in config.block_dropout_after and config.block_dropout_rate > 0:
            layers.append(LayerSpec('dropout', f'block{block}_dropout', rate=config.block_dropout_rate))
    layers += _head_layers(num_classes, config.dense_units, config.head_dropout)
    arch = ArchitectureSpec(tuple(input_shape), tuple(layers), num_classes, family='vanilla')
    logger.debug(f"vanilla CNN shape trace: {[s for s in arch.shapes]}")
    return arch


def build_vgg16_transfer(input_shape, num_classes, head_config=HeadConfig()):
    """
    VGG16 convolutional backbone plus a task head

    Returns:
        (ArchitectureSpec, mask) with the backbone frozen and the head trainable
    """
    if num_classes < 2:
        raise BadConfigError(f"num_classes must be >= 2, got {num_classes}")
    layers = []
    for block, (convs, channels) in enumerate(VGG16_BLOCKS, 1):
        for conv in range(1, convs + 1):
            layers.append(LayerSpec('conv2d', f'block{block}_conv{conv}', filters=channels))
            layers.append(LayerSpec('relu', f'block{block}_conv{conv}_relu'))
        layers.append(LayerSpec('maxpool', f'block{block}_pool'))
    layers += _head_layers(num_classes, head_config.dense_units, head_config.dropout)
    arch = ArchitectureSpec(tuple(input_shape), tuple(layers), num_classes, family='vgg16')
    mask = {name: not is_backbone(name) for name in learnable_names(arch)}
    return arch, mask


def is_backbone(param_name):
    return param_name.startswith('block')


def parameter_shapes(arch):
    """OrderedDict of every parameter name to its shape, in layer order."""
    shapes = OrderedDict()
    for index, layer in enumerate(arch.layers):
        in_shape = arch.input_shape_of(index)
        if layer.kind == 'conv2d':
            shapes[f'{layer.name}.weight'] = (layer.kernel, layer.kernel, in_shape[-1], layer.filters)
            shapes[f'{layer.name}.bias'] = (layer.filters,)
        elif layer.kind == 'dense':
            shapes[f'{layer.name}.weight'] = (in_shape[0], layer.units)
            shapes[f'{layer.name}.bias'] = (layer.units,)
        elif layer.kind == 'batchnorm':
            channels = in_shape[-1]
            for suffix in LEARNABLE_SUFFIXES[2:] + RUNNING_SUFFIXES:
                shapes[f'{layer.name}.{suffix}'] = (channels,)
    return shapes


def learnable_names(arch):
    return [name for name in parameter_shapes(arch) if name.rsplit('.', 1)[1] in LEARNABLE_SUFFIXES]


def full_mask(arch, trainable=True):
    return {name: trainable for name in learnable_names(arch)}


def init_parameters(arch, seed=0, dtype=np.float32):
    """
    Fresh parameters for an architecture

    conv/dense weights are He-uniform over +-sqrt(6 / fan_in) drawn from one
    SplitMix64 stream in layer order; biases and betas 0; gammas 1;
    running means 0 and running variances 1.
    """
    rng = SplitMix64(seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(arch).items():
        suffix = name.rsplit('.', 1)[1]
        if suffix == 'weight':
            fan_in = int(np.prod(shape[:-1]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = ((rng.uniform(shape) * 2.0 - 1.0) * bound).astype(dtype)
        elif suffix in ('gamma', 'running_var'):
            params[name] = np.ones(shape, dtype=dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


def count_parameters(arch, mask=None):
    """
    (total, trainable, frozen) learnable parameter counts

    Running batchnorm statistics are excluded. A missing mask means
    everything is trainable.
    """
    total = trainable = 0
    for name, shape in parameter_shapes(arch).items():
        if name.rsplit('.', 1)[1] not in LEARNABLE_SUFFIXES:
            continue
        size = int(np.prod(shape))
        total += size
        if mask is None or mask.get(name, False):
            trainable += size
    return ParameterCount(total, trainable, total - trainable)
