"""Adam optimizer, minibatch training loop and inference helpers."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from ..eigen import canonicalize_rows
from ..errors import InvalidConfigError, InvalidInputError, TrainingError
from .loss import loss as coefficient_loss
from .loss import normalize_output
from .network import Network, backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    noise_sigma: float = 0.0
    # "constant" or "cosine" (decays to lr_min at the last epoch)
    lr_schedule: str = "constant"
    lr_min: float = 0.0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidConfigError("learning_rate must be positive")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be non-negative")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidConfigError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "constant" or self.epochs == 1:
            return self.learning_rate
        frac = epoch / (self.epochs - 1)
        return self.lr_min + 0.5 * (self.learning_rate - self.lr_min) * (1 + np.cos(np.pi * frac))

    def to_dict(self) -> dict:
        return asdict(self)


def adam_step(net: Network, grad: np.ndarray, cfg: TrainConfig, lr: float | None = None) -> None:
    """In-place bias-corrected Adam update of ``net.params``; ``grad`` is overwritten."""
    if not np.all(np.isfinite(grad)):
        raise TrainingError(f"non-finite gradient at optimizer step {net.adam.step}")
    st = net.adam
    lr = cfg.learning_rate if lr is None else lr
    st.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    st.m *= b1
    st.m += (1 - b1) * grad
    st.v *= b2
    np.square(grad, out=grad)
    grad *= 1 - b2
    st.v += grad
    # grad is reused as scratch: params -= lr_t * m / (sqrt(v / c2) + eps)
    c1, c2 = 1 - b1**st.step, 1 - b2**st.step
    np.sqrt(st.v, out=grad)
    grad *= 1 / np.sqrt(c2)
    grad += cfg.epsilon
    np.divide(st.m, grad, out=grad)
    grad *= lr / c1
    net.params -= grad


def augment_noise(x: np.ndarray, sigma_n: float, rng: np.random.Generator) -> np.ndarray:
    """Add relative Gaussian noise to max-normalized spectra and renormalize by the new max."""
    peak = x.max(axis=1, keepdims=True)
    noisy = x + rng.standard_normal(x.shape).astype(x.dtype) * (sigma_n * peak)
    top = noisy.max(axis=1, keepdims=True)
    return noisy / np.where(top > 0, top, 1)


def batch_losses(net: Network, inputs, targets, batch_size: int = 512) -> np.ndarray:
    """Per-sample sign-resolved loss of normalized predictions."""
    out = np.empty(len(inputs))
    for i in range(0, len(inputs), batch_size):
        pre = normalize_output(net.forward(inputs[i:i + batch_size]).astype(np.float64))
        out[i:i + batch_size] = coefficient_loss(np.asarray(targets[i:i + batch_size], float), pre)
    return out


def train(net: Network, train_set, val_set, cfg: TrainConfig, restore_best: bool = True,
          callback=None) -> list[dict]:
    """Minibatch training; returns per-epoch ``{epoch, train_loss, val_loss, lr}`` records.

    ``train_set`` and ``val_set`` are :class:`~excirec.dataset.DataSet`-like
    objects with ``inputs`` and ``targets``. The best-validation parameters
    are kept and, with ``restore_best``, loaded back at the end.
    """
    x, y = train_set.inputs, train_set.targets
    if x.shape[1:] != net.config.input_shape and x.shape[1] != np.prod(net.config.input_shape):
        raise InvalidInputError(f"dataset inputs {x.shape[1:]} do not match network {net.config.input_shape}")
    x = x.reshape(len(x), *net.config.input_shape).astype(net.dtype, copy=False)
    y = y.astype(net.dtype, copy=False)
    xv = val_set.inputs.reshape(len(val_set.inputs), *net.config.input_shape).astype(net.dtype, copy=False)
    yv = val_set.targets
    if y.shape[1] != net.config.output_dim:
        raise InvalidInputError(f"targets of dimension {y.shape[1]} for a network with {net.config.output_dim} outputs")
    rng = np.random.default_rng(cfg.seed)
    history = []
    best = (np.inf, net.params.copy())
    for epoch in range(cfg.epochs):
        t0 = time.time()
        lr = cfg.lr_at(epoch)
        order = rng.permutation(len(x))
        total, count = 0.0, 0
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            xb = x[idx]
            if cfg.noise_sigma > 0:
                xb = augment_noise(xb, cfg.noise_sigma, rng)
            value, grad = backward(net, xb, y[idx])
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            adam_step(net, grad, cfg, lr)
            total += value * len(idx)
            count += len(idx)
        if cfg.noise_sigma > 0:
            xv_eval = augment_noise(xv, cfg.noise_sigma, np.random.default_rng([cfg.seed, 1]))
        else:
            xv_eval = xv
        val = float(batch_losses(net, xv_eval, yv).mean())
        rec = {"epoch": epoch + 1, "train_loss": total / count, "val_loss": val, "lr": lr}
        history.append(rec)
        if val < best[0]:
            best = (val, net.params.copy())
        log.info("epoch %d/%d train %.3e val %.3e (%.1fs)", epoch + 1, cfg.epochs,
                 rec["train_loss"], val, time.time() - t0)
        if callback is not None:
            callback(rec)
    if restore_best:
        net.params[...] = best[1]
    return history


def predict(net: Network, spectrum, target=None):
    """Normalized, sign-canonical coefficients for one spectrum (or a batch).

    Returns ``(coefficients, loss)``; ``loss`` is None without a target.
    """
    x = np.asarray(spectrum, dtype=float)
    single = x.ndim == len(net.config.input_shape)
    xb = x[None] if single else x
    pre = canonicalize_rows(normalize_output(net.forward(xb).astype(np.float64)))
    value = None if target is None else coefficient_loss(np.asarray(target, float), pre)
    if single:
        pre = pre[0]
        if value is not None:
            value = float(np.asarray(value).ravel()[0])
    return pre, value


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            w.writerow([rec["epoch"], repr(rec["train_loss"]), repr(rec["val_loss"])])
