"""
Forward pass, backpropagation and finite-difference gradient checks

Parameters are never mutated here: batchnorm running statistics computed
in training mode are handed back to the caller as ``running_updates``.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import layers as L
from .errors import NonFiniteInputError, ShapeMismatchError
from .logging_config import setup_logging
from .losses import categorical_cross_entropy, cross_entropy_logit_grad
from .model_zoo import parameter_shapes
from .rng import SplitMix64

logger = setup_logging('network')

TRAIN_MODE, EVAL_MODE = 'train', 'eval'


@dataclass
class ForwardResult:
    logits: np.ndarray
    probabilities: np.ndarray
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    running_updates: Dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class GradientStore:
    """Gradients for the trainable parameters plus the batch loss."""

    grads: Dict[str, np.ndarray]
    loss: float
    running_updates: Dict[str, np.ndarray] = field(default_factory=dict)
    probabilities: Optional[np.ndarray] = None


def _check_inputs(arch, params, batch):
    batch = np.asarray(batch)
    if batch.ndim != 4 or tuple(batch.shape[1:]) != arch.input_shape:
        raise ShapeMismatchError(
            f"batch shape {batch.shape} does not match input shape (B,) + {arch.input_shape}"
        )
    for name, shape in parameter_shapes(arch).items():
        if name not in params:
            raise ShapeMismatchError(f"missing parameter {name}")
        if tuple(params[name].shape) != shape:
            raise ShapeMismatchError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
    if not np.all(np.isfinite(batch)):
        raise NonFiniteInputError("input batch contains NaN or infinite values")
    first = next(iter(parameter_shapes(arch)))
    return batch.astype(params[first].dtype, copy=False)


def first_trainable_layer(arch, mask):
    """Index of the earliest layer owning a trainable parameter, or None."""
    for index, layer in enumerate(arch.layers):
        if any(mask.get(f'{layer.name}.{suffix}', False) for suffix in ('weight', 'bias', 'gamma', 'beta')):
            return index
    return None


def _run_layers(arch, params, x, mode, dropout_seed, cache_from=None):
    """
    Push ``x`` through every layer except the final softmax

    Returns:
        (logits, caches, batch_stats, running_updates); caches are kept only
        for layers at or after ``cache_from``.
    """
    training = mode == TRAIN_MODE
    rng = SplitMix64(dropout_seed if dropout_seed is not None else 0)
    caches = [None] * len(arch.layers)
    batch_stats = {}
    running_updates = {}

    for index, layer in enumerate(arch.layers[:-1]):
        keep = cache_from is not None and index >= cache_from
        name = layer.name
        if layer.kind == 'conv2d':
            x, cache = L.conv2d_forward(x, params[f'{name}.weight'], params[f'{name}.bias'])
        elif layer.kind == 'batchnorm':
            x, cache = L.batchnorm_forward(
                x, params[f'{name}.gamma'], params[f'{name}.beta'],
                params[f'{name}.running_mean'], params[f'{name}.running_var'],
                layer.epsilon, training,
            )
            if training:
                mean, var = cache[4], cache[5]
                batch_stats[name] = (mean, var)
                momentum = layer.momentum
                old_mean = params[f'{name}.running_mean']
                old_var = params[f'{name}.running_var']
                running_updates[f'{name}.running_mean'] = (
                    momentum * old_mean + (1.0 - momentum) * mean).astype(old_mean.dtype)
                running_updates[f'{name}.running_var'] = (
                    momentum * old_var + (1.0 - momentum) * var).astype(old_var.dtype)
        elif layer.kind == 'relu':
            x, cache = L.relu_forward(x)
        elif layer.kind == 'maxpool':
            x, cache = L.maxpool_forward(x)
        elif layer.kind == 'dropout':
            if training and layer.rate > 0:
                x, cache = L.dropout_forward(x, layer.rate, rng)
            else:
                cache = None
        elif layer.kind == 'flatten':
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        elif layer.kind == 'dense':
            x, cache = L.dense_forward(x, params[f'{name}.weight'], params[f'{name}.bias'])
        else:
            raise ShapeMismatchError(f"softmax may only appear as the last layer ({name})")
        if keep or layer.kind in ('relu', 'maxpool'):
            caches[index] = cache
    return x, caches, batch_stats, running_updates


def forward(arch, params, batch, mode=EVAL_MODE, dropout_seed=None):
    """
    Run a batch through the network

    Args:
        arch: ArchitectureSpec
        params: Parameter dict
        batch: B x H x W x 3 array
        mode: 'train' (batch statistics, dropout on) or 'eval'
        dropout_seed: Seed for the dropout masks in train mode

    Returns:
        ForwardResult with logits, probabilities and, in train mode, the
        batch statistics and updated running statistics
    """
    x = _check_inputs(arch, params, batch)
    logits, _, batch_stats, running_updates = _run_layers(arch, params, x, mode, dropout_seed)
    return ForwardResult(logits, L.softmax_rows(logits), batch_stats, running_updates)


def compute_gradients(arch, params, mask, batch, onehot_labels, mode=TRAIN_MODE, dropout_seed=None):
    """
    Mean categorical cross-entropy over the batch and its gradient

    Gradients are returned only for parameters the mask marks trainable;
    backpropagation stops at the earliest trainable layer.
    """
    x = _check_inputs(arch, params, batch)
    onehot = np.asarray(onehot_labels)
    if onehot.shape != (x.shape[0], arch.num_classes):
        raise ShapeMismatchError(f"labels {onehot.shape} do not match ({x.shape[0]}, {arch.num_classes})")

    start = first_trainable_layer(arch, mask)
    logits, caches, _, running_updates = _run_layers(arch, params, x, mode, dropout_seed, cache_from=start)
    probabilities = L.softmax_rows(logits)
    loss = categorical_cross_entropy(probabilities, onehot)

    grads = {}
    if start is None:
        return GradientStore(grads, loss, running_updates, probabilities)

    def wanted(name):
        return mask.get(name, False)

    dout = cross_entropy_logit_grad(probabilities, onehot)
    for index in range(len(arch.layers) - 2, start - 1, -1):
        layer = arch.layers[index]
        name = layer.name
        cache = caches[index]
        need_input = index > start
        if layer.kind == 'conv2d':
            dout, dweight, dbias = L.conv2d_backward(dout, cache, params[f'{name}.weight'], need_input)
            grads[f'{name}.weight'], grads[f'{name}.bias'] = dweight, dbias
        elif layer.kind == 'dense':
            dout, dweight, dbias = L.dense_backward(dout, cache, params[f'{name}.weight'], need_input)
            grads[f'{name}.weight'], grads[f'{name}.bias'] = dweight, dbias
        elif layer.kind == 'batchnorm':
            dout, dgamma, dbeta = L.batchnorm_backward(dout, cache)
            grads[f'{name}.gamma'], grads[f'{name}.beta'] = dgamma, dbeta
        elif layer.kind == 'relu':
            dout = L.relu_backward(dout, cache)
        elif layer.kind == 'maxpool':
            dout = L.maxpool_backward(dout, cache)
        elif layer.kind == 'dropout':
            if cache is not None:
                dout = L.dropout_backward(dout, cache)
        elif layer.kind == 'flatten':
            dout = dout.reshape(cache)

    grads = {name: grad for name, grad in grads.items() if wanted(name)}
    return GradientStore(grads, loss, running_updates, probabilities)


def batch_loss(arch, params, batch, onehot_labels, mode=TRAIN_MODE, dropout_seed=None):
    result = forward(arch, params, batch, mode, dropout_seed)
    return categorical_cross_entropy(result.probabilities, onehot_labels)


@dataclass
class GradientCheckReport:
    """Outcome of a central finite-difference comparison."""

    max_relative_error: Dict[str, float]
    compared: int
    nonsmooth: int
    worst: Optional[Tuple[str, tuple, float, float]] = None

    @property
    def overall_max(self):
        return max(self.max_relative_error.values(), default=0.0)

    def passed(self, tolerance=1e-3):
        return self.overall_max <= tolerance


def _loss_and_pattern(arch, params, x, onehot, mode, dropout_seed):
    """Loss plus the ReLU masks and max-pool choices it was computed with."""
    logits, caches, _, _ = _run_layers(arch, params, x, mode, dropout_seed)
    loss = categorical_cross_entropy(L.softmax_rows(logits), onehot)
    pattern = []
    for layer, cache in zip(arch.layers, caches):
        if layer.kind == 'relu':
            pattern.append(cache)
        elif layer.kind == 'maxpool':
            pattern.append(cache[0])
    return loss, pattern


def _same_pattern(left, right):
    return all(np.array_equal(a, b) for a, b in zip(left, right))


def check_gradients(arch, params, mask, batch, onehot_labels, epsilon=1e-3,
                    mode=TRAIN_MODE, dropout_seed=None):
    """
    Compare analytic gradients with central finite differences

    Relative error per entry is |a - n| / max(|a|, |n|, 1e-8). Entries whose
    +-epsilon evaluations flip a ReLU or max-pool decision are counted as
    non-smooth and left out of the comparison. Run it in double precision.
    """
    analytic = compute_gradients(arch, params, mask, batch, onehot_labels, mode, dropout_seed).grads
    x = _check_inputs(arch, params, batch)
    onehot = np.asarray(onehot_labels)
    _, base_pattern = _loss_and_pattern(arch, params, x, onehot, mode, dropout_seed)

    errors = {}
    compared = nonsmooth = 0
    worst = None
    worst_error = -1.0
    for name, grad in analytic.items():
        original = params[name]
        errors[name] = 0.0
        for index in np.ndindex(*original.shape):
            values = {}
            smooth = True
            for sign in (1.0, -1.0):
                shifted = original.copy()
                shifted[index] += sign * epsilon
                trial = dict(params)
                trial[name] = shifted
                values[sign], pattern = _loss_and_pattern(arch, trial, x, onehot, mode, dropout_seed)
                if not _same_pattern(base_pattern, pattern):
                    smooth = False
            if not smooth:
                nonsmooth += 1
                continue
            numeric = (values[1.0] - values[-1.0]) / (2.0 * epsilon)
            exact = float(grad[index])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
            compared += 1
            errors[name] = max(errors[name], error)
            if error > worst_error:
                worst_error = error
                worst = (name, index, exact, numeric)

    report = GradientCheckReport(errors, compared, nonsmooth, worst)
    logger.debug(
        f"gradient check: {compared} entries compared, {nonsmooth} non-smooth, "
        f"max relative error {report.overall_max:.3e}"
    )
    return report
