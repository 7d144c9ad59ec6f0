"""Victim convolutional classifier with named internal-layer feature taps.

The network is a 4-conv-block CNN sized for 28x28/32x32 inputs. Five tap
points are exposed: ``input`` (the image itself), ``conv1`` (after the
first pooled block), ``mid`` (after the third block), ``penultimate`` (the
flat feature vector before the class head), and ``logits``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .data import DatasetSplit, split_arrays
from .errors import NumericError, ValidationError

TAP_NAMES = ("input", "conv1", "mid", "penultimate", "logits")


class SmallConvNet(nn.Module):
    """4-block CNN; forward_taps returns activations at every tap point."""

    def __init__(self, in_shape, class_count, channels=(8, 16, 32, 32), fc_width=64):
        super().__init__()
        c, h, w = in_shape
        if h % 4 or w % 4:
            raise ValidationError(f"input height/width must be divisible by 4, got {in_shape}")
        c1, c2, c3, c4 = channels
        self.block1 = nn.Sequential(nn.Conv2d(c, c1, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2))
        self.block2 = nn.Sequential(nn.Conv2d(c1, c2, 3, padding=1), nn.ReLU(), nn.MaxPool2d(2))
        self.block3 = nn.Sequential(nn.Conv2d(c2, c3, 3, padding=1), nn.ReLU())
        self.block4 = nn.Sequential(nn.Conv2d(c3, c4, 3, padding=1), nn.ReLU())
        self.fc = nn.Sequential(nn.Flatten(), nn.Linear(c4 * (h // 4) * (w // 4), fc_width), nn.ReLU())
        self.head = nn.Linear(fc_width, class_count)

    def forward(self, x):
        return self.head(self.fc(self.block4(self.block3(self.block2(self.block1(x))))))

    def forward_taps(self, x):
        b1 = self.block1(x)
        b3 = self.block3(self.block2(b1))
        pen = self.fc(self.block4(b3))
        return {"input": x, "conv1": b1, "mid": b3, "penultimate": pen, "logits": self.head(pen)}


@dataclass
class ClassifierModel:
    """A trained (or hand-built) classifier plus its tap metadata."""

    net: nn.Module
    in_shape: tuple
    class_count: int
    tap_layers: tuple = TAP_NAMES
    arch: dict = field(default_factory=dict)
    train_log: dict = field(default_factory=dict)

    def tap_index(self, k) -> int:
        if isinstance(k, str):
            if k not in self.tap_layers:
                raise ValidationError(f"unknown tap {k!r}; taps are {self.tap_layers}")
            return self.tap_layers.index(k)
        k = int(k)
        if not 0 <= k < len(self.tap_layers):
            raise ValidationError(f"tap index {k} out of range for taps {self.tap_layers}")
        return k

    @classmethod
    def from_module(cls, net, in_shape, class_count, **kw):
        """Wrap an arbitrary logits-producing module (used by tests and toys)."""
        taps = kw.pop("tap_layers", ("input", "logits"))
        return cls(net=net, in_shape=tuple(in_shape), class_count=class_count, tap_layers=taps, **kw)


def _check_shape(model: ClassifierModel, x: np.ndarray):
    if tuple(x.shape) != tuple(model.in_shape):
        raise ValidationError(f"input shape {tuple(x.shape)} does not match model input {model.in_shape}")


def _param_dtype(model: ClassifierModel):
    try:
        return next(model.net.parameters()).dtype
    except StopIteration:
        return torch.float32


def _forward_taps(model: ClassifierModel, batch: torch.Tensor) -> dict:
    if hasattr(model.net, "forward_taps"):
        return model.net.forward_taps(batch)
    return {"input": batch, "logits": model.net(batch)}


def _softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_batch(model: ClassifierModel, xs: np.ndarray):
    """Class decisions and softmax posteriors for a batch of inputs."""
    if xs.ndim != len(model.in_shape) + 1 or tuple(xs.shape[1:]) != tuple(model.in_shape):
        raise ValidationError(f"batch shape {xs.shape} does not match model input {model.in_shape}")
    model.net.eval()
    with torch.no_grad():
        logits = model.net(torch.as_tensor(xs, dtype=_param_dtype(model))).numpy()
    posteriors = _softmax64(logits)
    return posteriors.argmax(axis=1), posteriors


def predict(model: ClassifierModel, x: np.ndarray):
    """Decision and posterior for one input; ties break to the lowest index."""
    _check_shape(model, x)
    labels, posteriors = predict_batch(model, x[None])
    return int(labels[0]), posteriors[0]


def extract_features(model: ClassifierModel, x: np.ndarray, k) -> np.ndarray:
    """Activations at tap ``k``; tap 0 is the identity, the last tap is logits."""
    _check_shape(model, x)
    idx = model.tap_index(k)
    name = model.tap_layers[idx]
    if name == "input":
        return x.copy()
    model.net.eval()
    with torch.no_grad():
        taps = _forward_taps(model, torch.as_tensor(x[None], dtype=_param_dtype(model)))
    return taps[name][0].numpy()


def extract_features_batch(model: ClassifierModel, xs: np.ndarray, k) -> np.ndarray:
    idx = model.tap_index(k)
    name = model.tap_layers[idx]
    if name == "input":
        return xs.copy()
    model.net.eval()
    with torch.no_grad():
        taps = _forward_taps(model, torch.as_tensor(xs, dtype=_param_dtype(model)))
    return taps[name].numpy()


def feature_shape(model: ClassifierModel, k) -> tuple:
    probe = np.zeros(model.in_shape, dtype=np.float32)
    return tuple(extract_features(model, probe, k).shape)


@dataclass(frozen=True)
class CrossEntropyTarget:
    """Cross-entropy of the softmax posterior against a target class."""

    target: int


@dataclass(frozen=True)
class CWMargin:
    """max(max_{i != t} Z_i - Z_t, -kappa) over the logit vector Z."""

    target: int
    kappa: float


def _loss_value(logits: torch.Tensor, loss_spec, class_count: int) -> torch.Tensor:
    if isinstance(loss_spec, CrossEntropyTarget):
        t = int(loss_spec.target)
        if not 0 <= t < class_count:
            raise ValidationError(f"target class {t} out of range 0..{class_count - 1}")
        return nn.functional.cross_entropy(logits, torch.tensor([t]))
    if isinstance(loss_spec, CWMargin):
        t = int(loss_spec.target)
        if not 0 <= t < class_count:
            raise ValidationError(f"target class {t} out of range 0..{class_count - 1}")
        if loss_spec.kappa < 0:
            raise ValidationError("kappa must be >= 0")
        z = logits[0]
        others = torch.cat([z[:t], z[t + 1 :]])
        margin = others.max() - z[t]
        return torch.maximum(margin, torch.tensor(-float(loss_spec.kappa), dtype=z.dtype))
    raise ValidationError(f"unknown loss spec {loss_spec!r}")


def input_gradient(model: ClassifierModel, x: np.ndarray, loss_spec) -> np.ndarray:
    """Gradient of the specified scalar loss with respect to the input pixels."""
    _check_shape(model, x)
    model.net.eval()
    xt = torch.as_tensor(x, dtype=_param_dtype(model))[None].clone().requires_grad_(True)
    logits = model.net(xt)
    loss = _loss_value(logits, loss_spec, model.class_count)
    grad = torch.autograd.grad(loss, xt)[0][0]
    out = grad.detach().numpy()
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise NumericError(f"non-finite input gradient at coordinate {tuple(int(v) for v in bad)}")
    return out


@dataclass
class TrainConfig:
    epochs: int = 3
    batch_size: int = 64
    lr: float = 1e-3
    channels: tuple = (8, 16, 32, 32)
    fc_width: int = 64


def train_classifier(split: DatasetSplit, config: TrainConfig, seed: int) -> ClassifierModel:
    """Train the victim CNN; clean test accuracy lands in the training log."""
    if not split.train:
        raise ValidationError("training split is empty")
    if config.lr <= 0:
        raise ValidationError("learning rate must be positive")

    arrays = split_arrays(split)
    train_x, train_y = arrays["train"]
    test_x, test_y = arrays["test"]
    in_shape = tuple(train_x.shape[1:])

    torch.manual_seed(seed)
    net = SmallConvNet(in_shape, split.class_count, config.channels, config.fc_width)
    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed)

    log: dict = {"epoch_loss": [], "warnings": []}
    if len(np.unique(train_y)) < 2:
        log["warnings"].append("degenerate training split: a single class is present")

    xt = torch.as_tensor(train_x)
    yt = torch.as_tensor(train_y)
    net.train()
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_x))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size])
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(xt[idx]), yt[idx])
            if not torch.isfinite(loss):
                raise NumericError(f"training loss became non-finite in epoch {epoch}")
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        log["epoch_loss"].append(total / len(train_x))

    model = ClassifierModel(
        net=net,
        in_shape=in_shape,
        class_count=split.class_count,
        arch={"channels": list(config.channels), "fc_width": config.fc_width},
        train_log=log,
    )
    if len(test_x):
        preds, _ = predict_batch(model, test_x)
        log["test_accuracy"] = float((preds == test_y).mean())
    return model


def evaluate_accuracy(model: ClassifierModel, xs: np.ndarray, ys: np.ndarray, batch_size=256) -> float:
    hits = 0
    for start in range(0, len(xs), batch_size):
        preds, _ = predict_batch(model, xs[start : start + batch_size])
        hits += int((preds == ys[start : start + batch_size]).sum())
    return hits / max(1, len(xs))


def classifier_state(model: ClassifierModel) -> dict:
    return {
        "in_shape": list(model.in_shape),
        "class_count": model.class_count,
        "arch": model.arch,
        "train_log": model.train_log,
        "state_dict": model.net.state_dict(),
    }


def classifier_from_state(state: dict) -> ClassifierModel:
    arch = state["arch"]
    net = SmallConvNet(
        tuple(state["in_shape"]),
        state["class_count"],
        tuple(arch.get("channels", (8, 16, 32, 32))),
        arch.get("fc_width", 64),
    )
    net.load_state_dict(state["state_dict"])
    net.eval()
    return ClassifierModel(
        net=net,
        in_shape=tuple(state["in_shape"]),
        class_count=state["class_count"],
        arch=arch,
        train_log=state.get("train_log", {}),
    )
