"""
Forward and backward kernels for the supported layer kinds

Tensors are NHWC. Each ``*_forward`` returns ``(output, cache)`` and the
matching ``*_backward`` consumes that cache.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x):
    batch, height, width, channels = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))  # B, H, W, C, kh, kw
    return windows.transpose(0, 1, 2, 4, 5, 3).reshape(batch * height * width, 9 * channels)


def conv2d_forward(x, weight, bias):
    """3x3 stride-1 cross-correlation with same zero padding; weight is (kh, kw, in, out)."""
    batch, height, width, _ = x.shape
    cols = _im2col(x)
    out = cols @ weight.reshape(-1, weight.shape[-1]) + bias
    return out.reshape(batch, height, width, weight.shape[-1]), (cols, x.shape)


def conv2d_backward(dout, cache, weight, need_input_grad=True):
    cols, x_shape = cache
    batch, height, width, channels = x_shape
    dflat = dout.reshape(-1, dout.shape[-1])
    dweight = (cols.T @ dflat).reshape(weight.shape)
    dbias = dflat.sum(axis=0)
    if not need_input_grad:
        return None, dweight, dbias

    dcols = (dflat @ weight.reshape(-1, weight.shape[-1]).T).reshape(batch, height, width, 3, 3, channels)
    dpadded = np.zeros((batch, height + 2, width + 2, channels), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dpadded[:, i:i + height, j:j + width, :] += dcols[:, :, :, i, j, :]
    return dpadded[:, 1:-1, 1:-1, :], dweight, dbias


def maxpool_forward(x):
    """2x2 stride-2 max pooling; odd trailing rows/columns are dropped. Ties pick the first element."""
    batch, height, width, channels = x.shape
    out_h, out_w = height // 2, width // 2
    windows = (x[:, :out_h * 2, :out_w * 2, :]
               .reshape(batch, out_h, 2, out_w, 2, channels)
               .transpose(0, 1, 3, 5, 2, 4)
               .reshape(batch, out_h, out_w, channels, 4))
    index = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]
    return out, (index, x.shape)


def maxpool_backward(dout, cache):
    index, x_shape = cache
    batch, height, width, channels = x_shape
    out_h, out_w = height // 2, width // 2
    dwindows = np.zeros((batch, out_h, out_w, channels, 4), dtype=dout.dtype)
    np.put_along_axis(dwindows, index[..., None], dout[..., None], axis=-1)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    dx[:, :out_h * 2, :out_w * 2, :] = (dwindows
                                        .reshape(batch, out_h, out_w, channels, 2, 2)
                                        .transpose(0, 1, 4, 2, 5, 3)
                                        .reshape(batch, out_h * 2, out_w * 2, channels))
    return dx


def batchnorm_forward(x, gamma, beta, running_mean, running_var, epsilon, training):
    """
    Per-channel normalization over every axis but the last

    Training mode normalizes with the batch mean and biased batch variance;
    evaluation mode uses the running statistics.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, training, mean, var)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training, _, _ = cache
    axes = tuple(range(dout.ndim - 1))
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    dxhat = dout * gamma
    if not training:
        return dxhat * inv_std, dgamma, dbeta
    count = dout.size // dout.shape[-1]
    dx = (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    return dx, dgamma, dbeta


def relu_forward(x):
    active = x > 0
    return x * active, active


def relu_backward(dout, active):
    return dout * active


def dropout_forward(x, rate, rng):
    """Inverted dropout: drop with probability ``rate``, scale survivors by 1 / (1 - rate)."""
    keep = rng.uniform(x.shape) >= rate
    scale = (keep / (1.0 - rate)).astype(x.dtype)
    return x * scale, scale


def dropout_backward(dout, scale):
    return dout * scale


def dense_forward(x, weight, bias):
    return x @ weight + bias, x


def dense_backward(dout, x, weight, need_input_grad=True):
    dweight = x.T @ dout
    dbias = dout.sum(axis=0)
    dx = dout @ weight.T if need_input_grad else None
    return dx, dweight, dbias


def softmax_rows(logits):
    """Row-wise softmax with max subtraction."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / exps.sum(axis=-1, keepdims=True)
