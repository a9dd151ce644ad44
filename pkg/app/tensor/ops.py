"""Forward and backward passes for the layer set the networks use.

Every op takes Tensors, returns a new Tensor and, when a tape is given and
an input takes gradients, records a vector-Jacobian product on it.
Convolutions loop over kernel offsets and contract channels with
tensordot/einsum; the direct nested-loop definition is the test oracle.
"""
from __future__ import annotations

from typing import Literal, Optional

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .core import Tape, Tensor, requires_grad

Activation = Literal["relu", "sigmoid"]


def _emit(out: np.ndarray, inputs: tuple[Tensor, ...], tape: Optional[Tape], vjp) -> Tensor:
    result = Tensor(out, requires_grad=requires_grad(*inputs))
    if tape is not None and result.requires_grad:
        tape.record(result, inputs, vjp)
    return result


# ---- convolution ---- #

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _tap(xp: np.ndarray, i: int, j: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Input samples under kernel offset (i, j) for every output position."""
    return xp[:, :, i:i + stride * (out_h - 1) + 1:stride, j:j + stride * (out_w - 1) + 1:stride]


def _forward_tap(patch: np.ndarray, w: np.ndarray, groups: int) -> np.ndarray:
    n, c, h, wd = patch.shape
    out_c, group_c = w.shape
    if groups == 1:
        return np.tensordot(w, patch, axes=([1], [1])).transpose(1, 0, 2, 3)
    if group_c == 1 and out_c == c:
        return patch * w[:, 0][None, :, None, None]
    grouped = patch.reshape(n, groups, group_c, h, wd)
    w = w.reshape(groups, out_c // groups, group_c)
    return np.einsum("ngchw,goc->ngohw", grouped, w).reshape(n, out_c, h, wd)


def _weight_tap_grad(grad: np.ndarray, patch: np.ndarray, groups: int, group_c: int) -> np.ndarray:
    n, out_c, h, wd = grad.shape
    c = patch.shape[1]
    if groups == 1:
        return np.tensordot(grad, patch, axes=([0, 2, 3], [0, 2, 3]))
    if group_c == 1 and out_c == c:
        return (grad * patch).sum(axis=(0, 2, 3))[:, None]
    g = grad.reshape(n, groups, out_c // groups, h, wd)
    p = patch.reshape(n, groups, group_c, h, wd)
    return np.einsum("ngohw,ngchw->goc", g, p).reshape(out_c, group_c)


def _input_tap_grad(grad: np.ndarray, w: np.ndarray, groups: int, in_c: int) -> np.ndarray:
    n, out_c, h, wd = grad.shape
    group_c = w.shape[1]
    if groups == 1:
        return np.tensordot(grad, w, axes=([1], [0])).transpose(0, 3, 1, 2)
    if group_c == 1 and out_c == in_c:
        return grad * w[:, 0][None, :, None, None]
    g = grad.reshape(n, groups, out_c // groups, h, wd)
    w = w.reshape(groups, out_c // groups, group_c)
    return np.einsum("ngohw,goc->ngchw", g, w).reshape(n, in_c, h, wd)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0, groups: int = 1,
           tape: Optional[Tape] = None) -> Tensor:
    """2-D cross-correlation over an NCHW input, no bias.

    weight is [out_c, in_c/groups, kh, kw]; groups == in_c == out_c is the
    depthwise case.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d needs NCHW input and 4-D weight, got {x.shape} and {weight.shape}")
    n, in_c, h, w = x.shape
    out_c, group_c, kh, kw = weight.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"conv2d needs stride >= 1, padding >= 0, groups >= 1 "
                         f"(got stride={stride}, padding={padding}, groups={groups})")
    if in_c % groups or out_c % groups or group_c * groups != in_c:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape} "
                         f"with groups={groups}")
    out_h = conv_output_size(h, kh, stride, padding)
    out_w = conv_output_size(w, kw, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"conv2d kernel {kh}x{kw} does not fit input {x.shape} with padding {padding}")

    pad = ((0, 0), (0, 0), (padding, padding), (padding, padding))
    xp = np.pad(x.data, pad) if padding else x.data
    out = np.zeros((n, out_c, out_h, out_w), dtype=np.result_type(x.data, weight.data))
    for i in range(kh):
        for j in range(kw):
            out += _forward_tap(_tap(xp, i, j, stride, out_h, out_w), weight.data[:, :, i, j], groups)

    def vjp(grad):
        grad_w = np.zeros_like(weight.data)
        grad_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = _tap(xp, i, j, stride, out_h, out_w)
                grad_w[:, :, i, j] = _weight_tap_grad(grad, patch, groups, group_c)
                grad_xp[:, :, i:i + stride * (out_h - 1) + 1:stride,
                        j:j + stride * (out_w - 1) + 1:stride] += _input_tap_grad(
                    grad, weight.data[:, :, i, j], groups, in_c)
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + w] if padding else grad_xp
        return grad_x, grad_w

    return _emit(out, (x, weight), tape, vjp)


# ---- normalization ---- #

def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.9,
              eps: float = 1e-5, tape: Optional[Tape] = None) -> Tensor:
    """Per-channel batch normalization of an NCHW tensor.

    Training normalizes with batch statistics and updates the running
    buffers in place (running <- momentum*running + (1-momentum)*batch);
    inference uses the running buffers only.
    """
    c = x.shape[1]
    for name, vec in (("gamma", gamma.data), ("beta", beta.data),
                      ("running_mean", running_mean), ("running_var", running_var)):
        if vec.shape != (c,):
            raise ValueError(f"batchnorm {name} has shape {vec.shape}, input {x.shape} needs ({c},)")
    axes = (0, 2, 3)
    per_channel = x.shape[0] * x.shape[2] * x.shape[3]
    g = gamma.data[None, :, None, None]
    b = beta.data[None, :, None, None]

    if training:
        if per_channel == 1:
            raise ValueError(f"batchnorm in training mode needs more than one value per channel, "
                             f"got input {x.shape}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean, var = running_mean, running_var

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = g * xhat + b

    def vjp(grad):
        grad_gamma = (grad * xhat).sum(axis=axes)
        grad_beta = grad.sum(axis=axes)
        dxhat = grad * g
        if training:
            grad_x = (inv_std[None, :, None, None] / per_channel) * (
                per_channel * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        else:
            grad_x = dxhat * inv_std[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return _emit(out, (x, gamma, beta), tape, vjp)


# ---- elementwise ---- #

def relu(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    mask = x.data > 0
    return _emit(x.data * mask, (x,), tape, lambda grad: (grad * mask,))


def sigmoid(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Logistic function, kept strictly inside (0, 1) at the input's precision."""
    info = np.finfo(x.dtype)
    out = np.clip(expit(x.data), info.tiny, 1.0 - info.epsneg).astype(x.dtype, copy=False)
    return _emit(out, (x,), tape, lambda grad: (grad * out * (1.0 - out),))


def activation(x: Tensor, kind: Activation, tape: Optional[Tape] = None) -> Tensor:
    if kind == "relu":
        return relu(x, tape)
    if kind == "sigmoid":
        return sigmoid(x, tape)
    raise ValueError(f"unknown activation {kind!r}; expected relu or sigmoid")


def add(a: Tensor, b: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Elementwise sum of equal-shaped tensors (the residual connection)."""
    if a.shape != b.shape:
        raise ValueError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return _emit(a.data + b.data, (a, b), tape, lambda grad: (grad, grad))


# ---- pooling and dense ---- #

def global_avgpool(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Mean over each HxW plane: NCHW -> NxC."""
    if x.data.ndim != 4:
        raise ValueError(f"global_avgpool needs an NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(grad):
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), x.shape).astype(x.dtype),)

    return _emit(out, (x,), tape, vjp)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           tape: Optional[Tape] = None) -> Tensor:
    """y = x . weight^T + bias for x of shape NxD and weight OxD."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def vjp(grad):
        grads = [grad @ weight.data, grad.T @ x.data]
        if bias is not None:
            grads.append(grad.sum(axis=0))
        return grads

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out, inputs, tape, vjp)


def flatten(x: Tensor, tape: Optional[Tape] = None) -> Tensor:
    """Collapse an Nx1 output to a length-N vector."""
    shape = x.shape
    return _emit(x.data.reshape(shape[0]), (x,), tape, lambda grad: (grad.reshape(shape),))


# ---- reductions and losses ---- #

def weighted_sum(x: Tensor, weights: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """sum(x * weights) for constant weights; a scalar objective for gradient checks."""
    weights = np.asarray(weights, dtype=x.dtype)
    if weights.shape != x.shape:
        raise ValueError(f"weighted_sum weights {weights.shape} do not match input {x.shape}")
    out = np.asarray((x.data * weights).sum(), dtype=x.dtype)
    return _emit(out, (x,), tape, lambda grad: (grad * weights,))


def _check_targets(pred: Tensor, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=pred.dtype).reshape(-1)
    if pred.data.size == 0:
        raise ValueError("loss needs a non-empty batch")
    if pred.data.size != targets.size:
        raise ValueError(f"loss got {pred.data.size} predictions but {targets.size} targets")
    return targets


def mean_squared_error(pred: Tensor, targets: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    targets = _check_targets(pred, targets)
    diff = pred.data.reshape(-1) - targets
    n = diff.size
    out = np.asarray((diff * diff).mean(), dtype=pred.dtype)
    return _emit(out, (pred,), tape, lambda grad: (((2.0 / n) * grad * diff).reshape(pred.shape),))


def mean_absolute_error(pred: Tensor, targets: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    targets = _check_targets(pred, targets)
    diff = pred.data.reshape(-1) - targets
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)
    return _emit(out, (pred,), tape, lambda grad: (((grad / n) * np.sign(diff)).reshape(pred.shape),))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, tape: Optional[Tape] = None) -> Tensor:
    """Mean negative log-likelihood of integer class labels under softmax(logits)."""
    if logits.data.ndim != 2:
        raise ValueError(f"cross entropy needs NxK logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.size != n:
        raise ValueError(f"cross entropy got {n} rows of logits but {labels.size} labels")
    if n == 0:
        raise ValueError("loss needs a non-empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"cross entropy labels must lie in [0, {k}), got [{labels.min()}, {labels.max()}]")
    log_probs = log_softmax(logits.data, axis=1)
    out = np.asarray(-log_probs[np.arange(n), labels].mean(), dtype=logits.dtype)

    def vjp(grad):
        probs = softmax(logits.data, axis=1)
        probs[np.arange(n), labels] -= 1.0
        return (grad * probs / n,)

    return _emit(out, (logits,), tape, vjp)
