"""Mini-batch training loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .layers import bce_with_logits
from .network import Network, fit_input_scale
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 10
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


def evaluate_loss(net: Network, x, a, batch_size: int = 1024) -> float:
    """Mean per-sample BCE in inference mode."""
    total = 0.0
    for i in range(0, len(x), batch_size):
        r = net.logits(x[i:i + batch_size])
        loss, _ = bce_with_logits(np.asarray(a[i:i + batch_size]), r)
        total += loss * len(r)
    return total / len(x)


def train(net: Network, x, a, cfg: TrainConfig, rng: np.random.Generator,
          x_val=None, a_val=None, fit_scale: bool = True, keep_best: bool = False):
    """Fit ``net`` with shuffled mini-batch Adam.

    Returns the loss trace as a list of ``(epoch, train_loss, val_loss)``
    rows; ``val_loss`` is NaN when no validation split is given. With
    ``keep_best`` every epoch still runs, but the network ends up holding
    the weights (and BN statistics) of the epoch with the lowest
    validation loss.
    """
    if len(x) == 0:
        raise ValueError("training set is empty")
    if len(x) != len(a):
        raise ValueError("inputs and labels differ in length")
    has_val = x_val is not None and len(x_val) > 0
    if keep_best and not has_val:
        raise ValueError("keep_best needs a validation split")
    if fit_scale:
        fit_input_scale(net, x)
    state_arrays = [arr for _, arr in net.named_params() + net.named_buffers()]
    best_loss, best = np.inf, None
    params, grads = net.params(), net.grads()
    state = AdamState.for_params(params, lr=cfg.learning_rate)
    history = []
    n = len(x)
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        seen, total = 0, 0.0
        for start in range(0, n, cfg.batch_size):
            idx = np.sort(order[start:start + cfg.batch_size])
            if len(idx) < 2 and seen:
                continue  # batch statistics need two samples
            loss = net.loss_and_grad(x[idx], a[idx])
            adam_step(params, grads, state)
            total += loss * len(idx)
            seen += len(idx)
        train_loss = total / seen
        val_loss = evaluate_loss(net, x_val, a_val) if has_val else float("nan")
        history.append((epoch, train_loss, val_loss))
        if keep_best and val_loss < best_loss:
            best_loss, best = val_loss, [arr.copy() for arr in state_arrays]
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, train_loss, val_loss,
                 time.perf_counter() - t0)
    if best is not None:
        for arr, saved in zip(state_arrays, best):
            arr[...] = saved
    return history


def write_loss_csv(history, path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for epoch, tr, va in history:
            fh.write(f"{epoch},{float(tr)!r},{float(va)!r}\n")
