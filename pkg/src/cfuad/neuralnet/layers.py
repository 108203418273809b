"""Layers with explicit forward/backward passes.

Activations use channels-last layout: conv inputs are ``(B, H, W, C)`` and
dense inputs ``(B, F)``. Each layer caches what its backward pass needs
during the most recent training forward call.
"""

from __future__ import annotations

import numpy as np


def conv_output_size(size: int, kernel: int, pad_total: int, stride: int) -> int:
    """Output length along one axis: ``floor((size - kernel + pad) / stride) + 1``."""
    return (size - kernel + pad_total) // stride + 1


def same_padding(kernel: int) -> tuple[int, int]:
    """(before, after) padding preserving the size at stride 1; extra goes after."""
    total = kernel - 1
    return total // 2, total - total // 2


def glorot_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                   dtype=np.float64) -> np.ndarray:
    """Uniform draws with variance ``2 / (fan_in + fan_out)``."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError("fan_in and fan_out must be >= 1")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(r):
    r = np.asarray(r)
    out = np.empty_like(r, dtype=np.result_type(r, np.float32))
    pos = r >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-r[pos]))
    e = np.exp(r[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def relu(x):
    return np.maximum(x, 0)


class Layer:
    """Base class; parameter-free layers only override forward/backward."""

    kind = "layer"

    def params(self) -> dict[str, np.ndarray]:
        return {}

    def grads(self) -> dict[str, np.ndarray]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def describe(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x, train: bool = False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_ch: int, out_ch: int, kernel=(2, 2), stride: int = 1,
                 padding="same", rng=None, dtype=np.float64):
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel = tuple(kernel)
        fh, fw = self.kernel
        if fh < 1 or fw < 1 or stride < 1:
            raise ValueError("kernel sizes and stride must be >= 1")
        self.stride = stride
        if padding == "same":
            self.pad = (*same_padding(fh), *same_padding(fw))
        elif np.isscalar(padding):
            p = int(padding)
            self.pad = (p, p, p, p)
        else:
            self.pad = tuple(int(p) for p in padding)  # (top, bottom, left, right)
        self.padding = padding
        shape = (out_ch, in_ch, fh, fw)
        if rng is None:
            self.weight = np.zeros(shape, dtype=dtype)
        else:
            self.weight = glorot_uniform(shape, in_ch * fh * fw, out_ch * fh * fw, rng, dtype)
        self.bias = np.zeros(out_ch, dtype=dtype)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._cache = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.d_weight, "bias": self.d_bias}

    def describe(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch,
                "kernel": list(self.kernel), "stride": self.stride, "pad": list(self.pad)}

    def output_shape(self, h: int, w: int) -> tuple[int, int]:
        top, bottom, left, right = self.pad
        fh, fw = self.kernel
        return (conv_output_size(h, fh, top + bottom, self.stride),
                conv_output_size(w, fw, left + right, self.stride))

    def _matrix(self):
        # (fh*fw*in_ch, out_ch), rows ordered (i, j, c) to match the column buffer
        return self.weight.transpose(2, 3, 1, 0).reshape(-1, self.out_ch)

    def forward(self, x, train=False):
        b, h, w, c = x.shape
        if c != self.in_ch:
            raise ValueError(f"expected {self.in_ch} input channels, got {c}")
        top, bottom, left, right = self.pad
        fh, fw = self.kernel
        ho, wo = self.output_shape(h, w)
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {self.kernel} larger than padded input {(h, w)}")
        if any(self.pad):
            xp = np.zeros((b, h + top + bottom, w + left + right, c), dtype=x.dtype)
            xp[:, top:top + h, left:left + w, :] = x
        else:
            xp = x
        s = self.stride
        cols = np.empty((b, ho, wo, fh, fw, c), dtype=x.dtype)
        for i in range(fh):
            for j in range(fw):
                cols[:, :, :, i, j, :] = xp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]
        cols = cols.reshape(b * ho * wo, fh * fw * c)
        y = cols @ self._matrix() + self.bias
        if train:
            self._cache = (cols, xp.shape, (b, h, w, c), (ho, wo))
        return y.reshape(b, ho, wo, self.out_ch)

    def backward(self, dy):
        cols, padded_shape, in_shape, (ho, wo) = self._cache
        b, h, w, c = in_shape
        fh, fw = self.kernel
        top, _, left, _ = self.pad
        s = self.stride
        dy2 = dy.reshape(-1, self.out_ch)
        dmat = cols.T @ dy2
        self.d_weight[...] = dmat.reshape(fh, fw, c, self.out_ch).transpose(3, 2, 0, 1)
        self.d_bias[...] = dy2.sum(axis=0)
        dcols = (dy2 @ self._matrix().T).reshape(b, ho, wo, fh, fw, c)
        dxp = np.zeros(padded_shape, dtype=dy.dtype)
        for i in range(fh):
            for j in range(fw):
                dxp[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :] += dcols[:, :, :, i, j, :]
        return dxp[:, top:top + h, left:left + w, :]


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng=None, dtype=np.float64):
        self.in_features, self.out_features = in_features, out_features
        shape = (out_features, in_features)
        if rng is None:
            self.weight = np.zeros(shape, dtype=dtype)
        else:
            self.weight = glorot_uniform(shape, in_features, out_features, rng, dtype)
        self.bias = np.zeros(out_features, dtype=dtype)
        self.d_weight = np.zeros_like(self.weight)
        self.d_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self.d_weight, "bias": self.d_bias}

    def describe(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_features:
            raise ValueError(f"expected {self.in_features} input features, got {x.shape[-1]}")
        if train:
            self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, dy):
        self.d_weight[...] = dy.T @ self._x
        self.d_bias[...] = dy.sum(axis=0)
        return dy @ self.weight


class BatchNorm(Layer):
    """Batch normalization over the last axis (per channel / per feature)."""

    kind = "batchnorm"

    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float64):
        if eps <= 0:
            raise ValueError("stabilizer eps must be positive")
        self.num_features = num_features
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(num_features, dtype=dtype)
        self.shift = np.zeros(num_features, dtype=dtype)
        self.running_mean = np.zeros(num_features, dtype=dtype)
        self.running_var = np.ones(num_features, dtype=dtype)
        self.d_gamma = np.zeros_like(self.gamma)
        self.d_shift = np.zeros_like(self.shift)
        self._cache = None

    def params(self):
        return {"gamma": self.gamma, "shift": self.shift}

    def grads(self):
        return {"gamma": self.d_gamma, "shift": self.d_shift}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def describe(self):
        return {"kind": self.kind, "features": self.num_features,
                "momentum": self.momentum, "eps": self.eps}

    def forward(self, x, train=False):
        if x.shape[-1] != self.num_features:
            raise ValueError(f"expected {self.num_features} features, got {x.shape[-1]}")
        if not train:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            return (x - self.running_mean) * (self.gamma * inv_std) + self.shift
        axes = tuple(range(x.ndim - 1))
        count = x.size // self.num_features
        mean = x.mean(axis=axes)
        centered = x - mean
        var = np.mean(centered * centered, axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = centered * inv_std
        unbiased = var * count / max(count - 1, 1)
        self.running_mean *= 1 - self.momentum
        self.running_mean += self.momentum * mean
        self.running_var *= 1 - self.momentum
        self.running_var += self.momentum * unbiased
        self._cache = (xhat, inv_std, axes)
        return xhat * self.gamma + self.shift

    def backward(self, dy):
        xhat, inv_std, axes = self._cache
        self.d_gamma[...] = np.sum(dy * xhat, axis=axes)
        self.d_shift[...] = dy.sum(axis=axes)
        dxhat = dy * self.gamma
        return inv_std * (dxhat - dxhat.mean(axis=axes) - xhat * np.mean(dxhat * xhat, axis=axes))


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return relu(x)

    def backward(self, dy):
        return dy * self._mask


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


def bce_loss(a, a_hat, clamp: float = 1e-12) -> float:
    """Binary cross-entropy summed over users and averaged over the batch."""
    a = np.asarray(a, dtype=float)
    p = np.clip(np.asarray(a_hat, dtype=float), clamp, 1.0 - clamp)
    per = -(a * np.log(p) + (1.0 - a) * np.log1p(-p))
    if per.ndim < 2:
        return float(per.sum())
    return float(per.sum(axis=-1).mean())


def bce_with_logits(a, logits) -> tuple[float, np.ndarray]:
    """BCE from logits and its gradient with respect to the logits.

    Uses the log-sum-exp form so the loss stays finite for any finite logit.
    """
    a = np.asarray(a, dtype=logits.dtype)
    b = logits.shape[0] if logits.ndim > 1 else 1
    # -[a log s(r) + (1-a) log(1-s(r))] = softplus(r) - a r
    per = np.logaddexp(0.0, logits) - a * logits
    loss = float(per.sum() / b)
    grad = (sigmoid(logits) - a) / b
    return loss, grad
