"""The activity-detection CNN: three conv blocks, two dense blocks, one logit per user."""

from __future__ import annotations

import numpy as np

from .layers import BatchNorm, Conv2D, Flatten, Layer, Linear, ReLU, bce_with_logits, sigmoid


class Network:
    """Sequential CNN over channel-estimate tensors of shape (N, K, depth).

    ``input_scale`` multiplies the raw tensor before the first layer; it is
    fitted from training data by :func:`fit_input_scale` and stored in
    checkpoints, so inference sees the same scaling.
    """

    def __init__(self, num_antennas: int, num_users: int, depth: int,
                 conv_widths=(128, 64, 32), dense_widths=(500, 500),
                 rng: np.random.Generator | None = None, dtype=np.float64,
                 bn_momentum: float = 0.1, bn_eps: float = 1e-5,
                 input_transform: str = "log"):
        self.input_shape = (num_antennas, num_users, depth)
        self.num_users = num_users
        self.conv_widths = tuple(conv_widths)
        self.dense_widths = tuple(dense_widths)
        self.dtype = np.dtype(dtype)
        self.input_transform = input_transform
        self.input_shift = 0.0
        self.input_scale = 1.0
        kernel = (2, 2) if num_antennas > 1 else (1, 2)

        layers: list[Layer] = []
        ch = depth
        for width in self.conv_widths:
            layers += [Conv2D(ch, width, kernel, 1, "same", rng=rng, dtype=dtype),
                       BatchNorm(width, bn_momentum, bn_eps, dtype), ReLU()]
            ch = width
        layers.append(Flatten())
        features = num_antennas * num_users * ch
        for width in self.dense_widths:
            layers += [Linear(features, width, rng=rng, dtype=dtype),
                       BatchNorm(width, bn_momentum, bn_eps, dtype), ReLU()]
            features = width
        layers.append(Linear(features, num_users, rng=rng, dtype=dtype))
        self.layers = layers

    # -- parameter access -------------------------------------------------
    def named_params(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", p) for i, layer in enumerate(self.layers)
                for name, p in layer.params().items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", g) for i, layer in enumerate(self.layers)
                for name, g in layer.grads().items()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{name}", b) for i, layer in enumerate(self.layers)
                for name, b in layer.buffers().items()]

    def params(self) -> list[np.ndarray]:
        return [p for _, p in self.named_params()]

    def grads(self) -> list[np.ndarray]:
        return [g for _, g in self.named_grads()]

    def describe(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_widths": list(self.conv_widths),
            "dense_widths": list(self.dense_widths),
            "dtype": self.dtype.name,
            "input_transform": self.input_transform,
            "layers": [layer.describe() for layer in self.layers],
        }

    # -- computation ------------------------------------------------------
    def transform_input(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} does not match network {self.input_shape}")
        x = x.astype(self.dtype, copy=False)
        if self.input_transform == "log":
            x = np.log(np.maximum(x, np.finfo(self.dtype).tiny))
        return (x - self.input_shift) * self.input_scale

    def logits(self, x, train: bool = False) -> np.ndarray:
        h = self.transform_input(x)
        for layer in self.layers:
            h = layer.forward(h, train)
        return h

    def backward(self, dlogits) -> None:
        """Back-propagate from the logits, filling every layer's gradients."""
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)

    def loss_and_grad(self, x, a) -> float:
        """Train-phase forward + backward on one mini-batch; returns the batch loss."""
        r = self.logits(x, train=True)
        loss, dr = bce_with_logits(np.asarray(a), r)
        self.backward(dr)
        return loss

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        """Per-user activity probabilities, shape (B, K) (or (K,) for one sample)."""
        x = np.asarray(x)
        single = x.ndim == 3
        if single:
            x = x[None]
        out = np.concatenate([sigmoid(self.logits(x[i:i + batch_size]))
                              for i in range(0, len(x), batch_size)]) if len(x) else \
            np.empty((0, self.num_users), dtype=self.dtype)
        return out[0] if single else out


def fit_input_scale(net: Network, x, max_samples: int = 4096) -> None:
    """Standardize the transformed input to zero mean / unit variance (scalar stats)."""
    net.input_shift, net.input_scale = 0.0, 1.0
    h = net.transform_input(np.asarray(x[:max_samples]))
    std = float(h.std())
    net.input_shift = float(h.mean())
    net.input_scale = 1.0 / std if std > 0 else 1.0
