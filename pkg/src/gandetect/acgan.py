"""Class-conditional GAN with an auxiliary classifier head, plus an
unconditional ablation.

The discriminator scores realness P(S=real|x) and, in conditional mode,
a class posterior P(C|x). The generator maps uniform latent codes (and a
class label in conditional mode) to samples. Two architecture presets are
provided: a small convolutional pair for square images and an MLP pair
for flat feature vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CapabilityError, NumericError, ValidationError

COLLAPSE_VARIANCE = 1e-4
COLLAPSE_PATIENCE = 3


def collapse_warnings(variances) -> list:
    """Flag runs of COLLAPSE_PATIENCE consecutive epochs with near-zero
    generator sample variance."""
    out = []
    flat = 0
    for epoch, v in enumerate(variances):
        if v < COLLAPSE_VARIANCE:
            flat += 1
            if flat == COLLAPSE_PATIENCE:
                out.append(
                    f"possible mode collapse: generator sample variance below "
                    f"{COLLAPSE_VARIANCE:g} for {COLLAPSE_PATIENCE} consecutive epochs "
                    f"(last at epoch {epoch})"
                )
        else:
            flat = 0
    return out


def latent_dim_for(data_shape) -> int:
    """Default latent width: 64 for image tensors, 32 for flat features."""
    return 64 if len(data_shape) == 3 else 32


def preset_for(data_shape) -> str:
    if len(data_shape) == 3:
        c, h, w = data_shape
        if h == w and h % 4 == 0:
            return "conv"
    return "mlp"


@dataclass
class GANConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 2e-4
    betas: tuple = (0.5, 0.999)
    latent_dim: int | None = None
    conditional: bool = True
    preset: str | None = None
    g_base_channels: int = 64
    d_base_channels: int = 16
    mlp_hidden: int = 256
    instance_noise: float = 0.0  # stddev of Gaussian jitter on discriminator inputs during training


class ConvGenerator(nn.Module):
    def __init__(self, latent_dim, class_count, out_shape, base_channels=64):
        super().__init__()
        c, h, w = out_shape
        self.class_count = class_count
        self.base = base_channels
        self.h0 = h // 4
        in_dim = latent_dim + (class_count or 0)
        self.fc = nn.Linear(in_dim, base_channels * self.h0 * self.h0)
        # BatchNorm between upsampling stages keeps the generator trainable
        # once the discriminator sharpens; without it the sigmoid saturates
        # and training collapses to a constant sample.
        self.body = nn.Sequential(
            nn.BatchNorm2d(base_channels),
            nn.ReLU(),
            nn.ConvTranspose2d(base_channels, base_channels // 2, 4, stride=2, padding=1),
            nn.BatchNorm2d(base_channels // 2),
            nn.ReLU(),
            nn.ConvTranspose2d(base_channels // 2, base_channels // 4, 4, stride=2, padding=1),
            nn.BatchNorm2d(base_channels // 4),
            nn.ReLU(),
            nn.Conv2d(base_channels // 4, c, 3, padding=1),
            nn.Sigmoid(),
        )

    def forward(self, z, onehot=None):
        if onehot is not None:
            z = torch.cat([z, onehot], dim=1)
        x = self.fc(z).view(-1, self.base, self.h0, self.h0)
        return self.body(x)


class ConvDiscriminator(nn.Module):
    def __init__(self, in_shape, class_count, base_channels=16, feature_width=128):
        super().__init__()
        c, h, w = in_shape
        self.trunk = nn.Sequential(
            nn.Conv2d(c, base_channels, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(base_channels, base_channels * 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Flatten(),
            nn.Linear(base_channels * 2 * (h // 4) * (w // 4), feature_width),
            nn.LeakyReLU(0.2),
        )
        self.real_head = nn.Linear(feature_width, 1)
        self.class_head = nn.Linear(feature_width, class_count) if class_count else None

    def forward(self, x):
        f = self.trunk(x)
        cls = self.class_head(f) if self.class_head is not None else None
        return self.real_head(f).squeeze(1), cls, f


class MLPGenerator(nn.Module):
    def __init__(self, latent_dim, class_count, out_shape, hidden=256):
        super().__init__()
        self.out_shape = tuple(out_shape)
        out_dim = int(np.prod(out_shape))
        in_dim = latent_dim + (class_count or 0)
        self.body = nn.Sequential(
            nn.Linear(in_dim, hidden // 2),
            nn.ReLU(),
            nn.Linear(hidden // 2, hidden),
            nn.ReLU(),
            nn.Linear(hidden, out_dim),
        )

    def forward(self, z, onehot=None):
        if onehot is not None:
            z = torch.cat([z, onehot], dim=1)
        return self.body(z).view(-1, *self.out_shape)


class MLPDiscriminator(nn.Module):
    def __init__(self, in_shape, class_count, hidden=256, feature_width=128):
        super().__init__()
        in_dim = int(np.prod(in_shape))
        self.trunk = nn.Sequential(
            nn.Flatten(),
            nn.Linear(in_dim, hidden),
            nn.LeakyReLU(0.2),
            nn.Linear(hidden, feature_width),
            nn.LeakyReLU(0.2),
        )
        self.real_head = nn.Linear(feature_width, 1)
        self.class_head = nn.Linear(feature_width, class_count) if class_count else None

    def forward(self, x):
        f = self.trunk(x)
        cls = self.class_head(f) if self.class_head is not None else None
        return self.real_head(f).squeeze(1), cls, f


@dataclass
class GANModel:
    generator: nn.Module
    discriminator: nn.Module
    data_shape: tuple
    latent_dim: int
    class_count: int | None  # None marks the unconditional ablation
    preset: str
    modeled_layer: int = 0  # classifier tap index this model was trained on
    arch: dict = field(default_factory=dict)
    train_log: dict = field(default_factory=dict)

    @property
    def conditional(self) -> bool:
        return self.class_count is not None


def _build_nets(data_shape, class_count, latent_dim, preset, config: GANConfig):
    if preset == "conv":
        g = ConvGenerator(latent_dim, class_count, data_shape, config.g_base_channels)
        d = ConvDiscriminator(data_shape, class_count, config.d_base_channels)
    elif preset == "mlp":
        g = MLPGenerator(latent_dim, class_count, data_shape, config.mlp_hidden)
        d = MLPDiscriminator(data_shape, class_count, config.mlp_hidden)
    else:
        raise ValidationError(f"unknown architecture preset {preset!r}")
    return g, d


def _onehot(labels: torch.Tensor, class_count: int) -> torch.Tensor:
    return nn.functional.one_hot(labels, class_count).float()


def sample_latent(latent_dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Latent codes drawn uniformly from [-1, 1]^latent_dim."""
    return rng.uniform(-1.0, 1.0, size=(n, latent_dim)).astype(np.float32)


def train_acgan(xs: np.ndarray, ys: np.ndarray | None, class_count: int | None,
                config: GANConfig, seed: int, modeled_layer: int = 0) -> GANModel:
    """Adversarial training; returns the model with a per-epoch loss log.

    In conditional mode the discriminator's class head is trained on both
    real samples (true labels) and generated samples (their conditioning
    labels), and the generator is rewarded for samples the class head
    assigns to their conditioning label. In unconditional mode no class
    head exists and labels are never consulted.
    """
    if len(xs) == 0:
        raise ValidationError("training set is empty")
    conditional = config.conditional and class_count is not None
    if conditional:
        if ys is None:
            raise ValidationError("conditional training requires labels")
        if len(ys) != len(xs):
            raise ValidationError("labels and samples differ in length")
        if ys.min() < 0 or ys.max() >= class_count:
            raise ValidationError(f"labels outside 0..{class_count - 1}")

    data_shape = tuple(xs.shape[1:])
    preset = config.preset or preset_for(data_shape)
    latent_dim = config.latent_dim or latent_dim_for(data_shape)

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    g, d = _build_nets(data_shape, class_count if conditional else None, latent_dim, preset, config)
    opt_g = torch.optim.Adam(g.parameters(), lr=config.lr, betas=config.betas)
    opt_d = torch.optim.Adam(d.parameters(), lr=config.lr, betas=config.betas)
    bce = nn.functional.binary_cross_entropy_with_logits
    ce = nn.functional.cross_entropy

    xt = torch.as_tensor(xs, dtype=torch.float32)
    yt = torch.as_tensor(ys, dtype=torch.long) if conditional else None

    log = {"epochs": [], "warnings": []}
    for epoch in range(config.epochs):
        order = rng.permutation(len(xs))
        sums = {"d_real": 0.0, "d_class": 0.0, "g_real": 0.0, "g_class": 0.0}
        batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = torch.as_tensor(order[start : start + config.batch_size])
            real = xt[idx]
            b = len(idx)
            z = torch.as_tensor(sample_latent(latent_dim, b, rng))
            if conditional:
                fake_labels = torch.as_tensor(rng.integers(0, class_count, size=b))
                onehot = _onehot(fake_labels, class_count)
            else:
                fake_labels = onehot = None

            fake = g(z, onehot)

            def jitter(t):
                # Instance noise smooths the discriminator around the data;
                # it regularizes both the realness and the class head.
                if config.instance_noise <= 0:
                    return t
                return t + config.instance_noise * torch.randn_like(t)

            opt_d.zero_grad()
            real_logit, real_cls, _ = d(jitter(real))
            fake_logit, fake_cls, _ = d(jitter(fake.detach()))
            d_real = bce(real_logit, torch.ones(b)) + bce(fake_logit, torch.zeros(b))
            d_loss = d_real
            d_class = torch.tensor(0.0)
            if conditional:
                d_class = ce(real_cls, yt[idx]) + ce(fake_cls, fake_labels)
                d_loss = d_loss + d_class
            if not torch.isfinite(d_loss):
                raise NumericError(f"discriminator loss became non-finite in epoch {epoch}")
            d_loss.backward()
            opt_d.step()

            opt_g.zero_grad()
            fake_logit, fake_cls, _ = d(jitter(fake))
            g_real = bce(fake_logit, torch.ones(b))
            g_loss = g_real
            g_class = torch.tensor(0.0)
            if conditional:
                g_class = ce(fake_cls, fake_labels)
                g_loss = g_loss + g_class
            if not torch.isfinite(g_loss):
                raise NumericError(f"generator loss became non-finite in epoch {epoch}")
            g_loss.backward()
            opt_g.step()

            sums["d_real"] += float(d_real.detach())
            sums["d_class"] += float(d_class.detach())
            sums["g_real"] += float(g_real.detach())
            sums["g_class"] += float(g_class.detach())
            batches += 1

        entry = {k: v / batches for k, v in sums.items()}
        with torch.no_grad():
            probe_rng = np.random.default_rng(seed + 1000 + epoch)
            z = torch.as_tensor(sample_latent(latent_dim, 32, probe_rng))
            onehot = None
            if conditional:
                onehot = _onehot(torch.as_tensor(probe_rng.integers(0, class_count, size=32)), class_count)
            probe = g(z, onehot).numpy()
        entry["sample_variance"] = float(probe.var(axis=0).mean())
        log["epochs"].append(entry)

    log["warnings"].extend(collapse_warnings(e["sample_variance"] for e in log["epochs"]))
    g.eval()
    d.eval()
    return GANModel(
        generator=g,
        discriminator=d,
        data_shape=data_shape,
        latent_dim=latent_dim,
        class_count=class_count if conditional else None,
        preset=preset,
        modeled_layer=modeled_layer,
        arch={
            "g_base_channels": config.g_base_channels,
            "d_base_channels": config.d_base_channels,
            "mlp_hidden": config.mlp_hidden,
        },
        train_log=log,
    )


def _check_latent(model: GANModel, z: np.ndarray, batch: bool):
    if not batch and tuple(z.shape) != (model.latent_dim,):
        raise ValidationError(f"latent shape {z.shape} does not match dim {model.latent_dim}")
    if batch and (z.ndim != 2 or z.shape[1] != model.latent_dim):
        raise ValidationError(f"latent batch shape {z.shape} does not match dim {model.latent_dim}")


def _class_onehot(model: GANModel, labels, n: int):
    if not model.conditional:
        if labels is not None:
            raise CapabilityError("unconditional model takes no class label")
        return None
    if labels is None:
        raise ValidationError("conditional model requires a class label")
    lt = torch.as_tensor(np.broadcast_to(np.asarray(labels, dtype=np.int64), (n,)).copy())
    if lt.min() < 0 or lt.max() >= model.class_count:
        raise ValidationError(f"class label outside 0..{model.class_count - 1}")
    return _onehot(lt, model.class_count)


def generate_batch(model: GANModel, zs: np.ndarray, labels=None) -> np.ndarray:
    _check_latent(model, zs, batch=True)
    onehot = _class_onehot(model, labels, len(zs))
    model.generator.eval()
    with torch.no_grad():
        return model.generator(torch.as_tensor(zs, dtype=torch.float32), onehot).numpy()


def generate(model: GANModel, z: np.ndarray, label=None) -> np.ndarray:
    _check_latent(model, z, batch=False)
    return generate_batch(model, z[None], None if label is None else [label])[0]


def discriminate_batch(model: GANModel, xs: np.ndarray):
    """Realness probabilities and, when conditional, class posteriors."""
    if tuple(xs.shape[1:]) != model.data_shape:
        raise ValidationError(f"batch shape {xs.shape} does not match data shape {model.data_shape}")
    model.discriminator.eval()
    with torch.no_grad():
        logit, cls, _ = model.discriminator(torch.as_tensor(xs, dtype=torch.float32))
        realness = torch.sigmoid(logit).numpy().astype(np.float64)
        posterior = None
        if cls is not None:
            posterior = torch.softmax(cls.double(), dim=1).numpy()
    return realness, posterior


def discriminate(model: GANModel, x: np.ndarray):
    realness, posterior = discriminate_batch(model, x[None])
    return float(realness[0]), None if posterior is None else posterior[0]


def discriminator_features(model: GANModel, xs: np.ndarray) -> np.ndarray:
    """Penultimate discriminator activations, one row per sample."""
    if tuple(xs.shape[1:]) != model.data_shape:
        raise ValidationError(f"batch shape {xs.shape} does not match data shape {model.data_shape}")
    model.discriminator.eval()
    with torch.no_grad():
        _, _, f = model.discriminator(torch.as_tensor(xs, dtype=torch.float32))
    return f.numpy()


def gan_state(model: GANModel) -> dict:
    return {
        "data_shape": list(model.data_shape),
        "latent_dim": model.latent_dim,
        "class_count": model.class_count,
        "preset": model.preset,
        "modeled_layer": model.modeled_layer,
        "arch": model.arch,
        "train_log": model.train_log,
        "generator": model.generator.state_dict(),
        "discriminator": model.discriminator.state_dict(),
    }


def gan_from_state(state: dict) -> GANModel:
    data_shape = tuple(state["data_shape"])
    class_count = state["class_count"]
    config = GANConfig(**state.get("arch", {}))
    g, d = _build_nets(data_shape, class_count, state["latent_dim"], state["preset"], config)
    g.load_state_dict(state["generator"])
    d.load_state_dict(state["discriminator"])
    g.eval()
    d.eval()
    return GANModel(
        generator=g,
        discriminator=d,
        data_shape=data_shape,
        latent_dim=state["latent_dim"],
        class_count=class_count,
        preset=state["preset"],
        modeled_layer=state.get("modeled_layer", 0),
        arch=state.get("arch", {}),
        train_log=state.get("train_log", {}),
    )
