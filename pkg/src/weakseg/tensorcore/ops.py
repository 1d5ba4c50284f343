"""Differentiable operations over Tensors.

Forward semantics are the textbook ones. conv2d accumulates its output in
(channel, kernel-row, kernel-col) order so that it is bit-identical to a
naive six-loop reference at any size; everything else is free to use
whatever vectorization is convenient.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _shape_report(op, **tensors):
    parts = ", ".join(f"{k}={tuple(v)}" for k, v in tensors.items())
    return f"{op}: incompatible shapes ({parts})"


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and b.data.size != 1 and a.data.size != 1:
        raise ValueError(_shape_report("add", a=a.shape, b=b.shape))
    out = Tensor(a.data + b.data, (a, b))

    def _bw():
        a.accumulate_grad(_reduce_to(out.grad, a.data.shape))
        b.accumulate_grad(_reduce_to(out.grad, b.data.shape))

    out._backward = _bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and b.data.size != 1 and a.data.size != 1:
        raise ValueError(_shape_report("sub", a=a.shape, b=b.shape))
    out = Tensor(a.data - b.data, (a, b))

    def _bw():
        a.accumulate_grad(_reduce_to(out.grad, a.data.shape))
        b.accumulate_grad(_reduce_to(-out.grad, b.data.shape))

    out._backward = _bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape and b.data.size != 1 and a.data.size != 1:
        raise ValueError(_shape_report("mul", a=a.shape, b=b.shape))
    out = Tensor(a.data * b.data, (a, b))

    def _bw():
        a.accumulate_grad(_reduce_to(out.grad * b.data, a.data.shape))
        b.accumulate_grad(_reduce_to(out.grad * a.data, b.data.shape))

    out._backward = _bw
    return out


def _reduce_to(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    if np.prod(shape, dtype=int) == 1:
        return np.sum(g).reshape(shape)
    raise ValueError(f"cannot reduce gradient of shape {g.shape} to {shape}")


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data, (x,))

    def _bw():
        x.accumulate_grad(2.0 * x.data * out.grad)

    out._backward = _bw
    return out


def tsum(x: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(np.sum(x.data), (x,))

    def _bw():
        x.accumulate_grad(np.full_like(x.data, float(out.grad)))

    out._backward = _bw
    return out


def tmean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(np.sum(x.data) / n, (x,))

    def _bw():
        x.accumulate_grad(np.full_like(x.data, float(out.grad) / n))

    out._backward = _bw
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = Tensor(x.data.reshape(shape), (x,))

    def _bw():
        x.accumulate_grad(out.grad.reshape(x.data.shape))

    out._backward = _bw
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), (x,))

    def _bw():
        # subgradient at 0 is 0
        x.accumulate_grad((x.data > 0.0) * out.grad)

    out._backward = _bw
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))
    out = Tensor(s, (x,))

    def _bw():
        x.accumulate_grad(s * (1.0 - s) * out.grad)

    out._backward = _bw
    return out


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = Tensor(s, (x,))

    def _bw():
        dot = np.sum(out.grad * s, axis=axis, keepdims=True)
        x.accumulate_grad(s * (out.grad - dot))

    out._backward = _bw
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """2-d cross-correlation, NCHW layout, square stride/padding/dilation."""
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(_shape_report("conv2d", input=x.shape, weight=weight.shape))
    n, c_in, h, w = x.data.shape
    k_out, c_w, kh, kw = weight.data.shape
    if c_in != c_w:
        raise ValueError(_shape_report("conv2d", input=x.shape, weight=weight.shape)
                         + f"; input has {c_in} channels but weight expects {c_w}")
    if bias.data.shape != (k_out,):
        raise ValueError(_shape_report("conv2d", bias=bias.shape) + f"; expected ({k_out},)")
    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"conv2d: output would be {h_out}x{w_out} for input {h}x{w}, "
                         f"kernel {kh}x{kw}, stride {stride}, padding {padding}, dilation {dilation}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_data = np.empty((n, k_out, h_out, w_out))
    out_data[:] = bias.data.reshape(1, -1, 1, 1)
    prod = np.empty_like(out_data)
    # accumulate in (c, i, j) order: matches the six-loop reference bit for bit
    for c in range(c_in):
        xc = xp[:, c]
        for i in range(kh):
            for j in range(kw):
                patch = xc[:, i * dilation:i * dilation + h_out * stride:stride,
                           j * dilation:j * dilation + w_out * stride:stride]
                np.multiply(weight.data[None, :, c, i, j, None, None], patch[:, None], out=prod)
                out_data += prod

    out = Tensor(out_data, (x, weight, bias))

    def _bw():
        g = out.grad
        bias.accumulate_grad(g.sum(axis=(0, 2, 3)))
        wgrad = np.zeros_like(weight.data)
        xpgrad = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i * dilation, i * dilation + h_out * stride, stride)
                cols = slice(j * dilation, j * dilation + w_out * stride, stride)
                patch = xp[:, :, rows, cols]
                wgrad[:, :, i, j] = np.einsum("nkhw,nchw->kc", g, patch)
                xpgrad[:, :, rows, cols] += np.einsum("nkhw,kc->nchw", g, weight.data[:, :, i, j])
        weight.accumulate_grad(wgrad)
        if padding:
            x.accumulate_grad(xpgrad[:, :, padding:-padding, padding:-padding])
        else:
            x.accumulate_grad(xpgrad)

    out._backward = _bw
    return out


def maxpool2d(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling; spatial dims must divide by the kernel."""
    n, c, h, w = x.data.shape
    if h % kernel or w % kernel:
        raise ValueError(f"maxpool2d: {h}x{w} not divisible by kernel {kernel}")
    h_out, w_out = h // kernel, w // kernel
    windows = (x.data.reshape(n, c, h_out, kernel, w_out, kernel)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, h_out, w_out, kernel * kernel))
    idx = windows.argmax(axis=-1)  # first max wins ties: deterministic routing
    out = Tensor(np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0], (x,))

    def _bw():
        gwin = np.zeros((n, c, h_out, w_out, kernel * kernel))
        np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=-1)
        x.accumulate_grad(gwin.reshape(n, c, h_out, w_out, kernel, kernel)
                          .transpose(0, 1, 2, 4, 3, 5)
                          .reshape(n, c, h, w))

    out._backward = _bw
    return out


def global_average_pool(x: Tensor) -> Tensor:
    """Spatial mean of each feature map: [N,C,H,W] -> [N,C]."""
    n, c, h, w = x.data.shape
    out = Tensor(x.data.mean(axis=(2, 3)), (x,))

    def _bw():
        x.accumulate_grad(np.broadcast_to(out.grad[:, :, None, None] / (h * w), x.data.shape).copy())

    out._backward = _bw
    return out


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x [N,K] or [K] against weight [C,K]; bias optional (heads may be bias-free)."""
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ValueError(_shape_report("fully_connected", x=x.shape, weight=weight.shape))
    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor(out_data, parents)

    def _bw():
        g = out.grad
        if x.data.ndim == 1:
            x.accumulate_grad(g @ weight.data)
            weight.accumulate_grad(np.outer(g, x.data))
            if bias is not None:
                bias.accumulate_grad(g)
        else:
            x.accumulate_grad(g @ weight.data)
            weight.accumulate_grad(g.T @ x.data)
            if bias is not None:
                bias.accumulate_grad(g.sum(axis=0))

    out._backward = _bw
    return out
