"""Latent autoencoder: maps data vectors into the compressed space where
diffusion runs, and back.

Encoder and decoder are MLPs trained on plain mean-squared reconstruction
error. With no hidden layers (the default) both maps are affine, whose
optimum equals the principal-subspace projection; that keeps the training
oracle exact. Hidden layers can be added through the config.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import Tensor
from .errors import ContractError
from .nn import MLP, Module
from .optim import AdamW, cosine_lr


@dataclass
class LatentGrid:
    """Latent layout (h, w, c); diffusion sees the flattened vector."""

    h: int = 4
    w: int = 4
    c: int = 4

    @property
    def dim(self):
        return self.h * self.w * self.c


@dataclass
class AutoencoderConfig:
    input_dim: int = 16 * 16 * 3
    latent: LatentGrid = field(default_factory=LatentGrid)
    hidden: tuple = ()
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-5
    seed: int = 0
    val_fraction: float = 0.0


@dataclass
class TrainingLog:
    """Per-epoch records. Train and validation losses are distinct fields
    and are never aliased."""

    entries: list = field(default_factory=list)

    def add(self, epoch, train_loss, val_loss, lr):
        self.entries.append(
            {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
             "lr": lr}
        )

    def train_losses(self):
        return [e["train_loss"] for e in self.entries]

    def val_losses(self):
        return [e["val_loss"] for e in self.entries]


class Autoencoder(Module):
    def __init__(self, config, rng):
        self.config = config
        d_in, d_lat = config.input_dim, config.latent.dim
        self.encoder = MLP([d_in, *config.hidden, d_lat], rng)
        self.decoder = MLP([d_lat, *config.hidden[::-1], d_in], rng)

    def _check(self, x, want, what):
        if x.shape[-1] != want:
            raise ContractError(
                f"{what} dim {x.shape[-1]} does not match params dim {want}"
            )

    def encode(self, x):
        """Deterministic latent for a [batch, input_dim] tensor."""
        x = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(x))
        self._check(x, self.config.input_dim, "encode input")
        return self.encoder(x)

    def decode(self, z):
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
        self._check(z, self.config.latent.dim, "decode input")
        return self.decoder(z)

    def reconstruct(self, x):
        return self.decode(self.encode(x))


def reconstruction_mse(model, data):
    """Mean squared error per element over a dataset array."""
    x = Tensor(np.atleast_2d(data))
    diff = model.reconstruct(x) - x
    return ad.mean_all(diff * diff).item()


def save_autoencoder(path, model, extra_metadata=None):
    from .checkpoint import save_checkpoint

    cfg = model.config
    meta = {
        "model": "autoencoder",
        "input_dim": str(cfg.input_dim),
        "latent_h": str(cfg.latent.h),
        "latent_w": str(cfg.latent.w),
        "latent_c": str(cfg.latent.c),
        "hidden": ",".join(str(h) for h in cfg.hidden),
    }
    meta.update(extra_metadata or {})
    save_checkpoint(path, meta, model.param_arrays())


def load_autoencoder(path):
    from .checkpoint import load_checkpoint
    from . import rng as _rng

    meta, params = load_checkpoint(path)
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    cfg = AutoencoderConfig(
        input_dim=int(meta["input_dim"]),
        latent=LatentGrid(int(meta["latent_h"]), int(meta["latent_w"]),
                          int(meta["latent_c"])),
        hidden=hidden,
    )
    model = Autoencoder(cfg, _rng.stream(0, "ae-load"))
    model.load_params(params)
    return model, meta


def train_autoencoder(dataset, config):
    """Minimize element-mean squared reconstruction error with AdamW and
    cosine decay. Returns (model, TrainingLog); deterministic per seed."""
    data = np.ascontiguousarray(np.atleast_2d(dataset), dtype=np.float64)
    if data.shape[0] == 0:
        raise ContractError("empty autoencoder dataset")
    n_val = int(round(config.val_fraction * data.shape[0]))
    split = rngmod.stream(config.seed, "ae-split").permutation(data.shape[0])
    val, train = data[split[:n_val]], data[split[n_val:]]
    if train.shape[0] == 0:
        raise ContractError("validation fraction leaves no training rows")

    model = Autoencoder(config, rngmod.stream(config.seed, "ae-init"))
    opt = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay,
                scheduler=f"cosine({config.epochs})")
    log = TrainingLog()
    for epoch in range(1, config.epochs + 1):
        opt.lr = cosine_lr(epoch - 1, config.epochs, config.lr)
        order = rngmod.stream(config.seed, "ae-epoch", epoch).permutation(
            train.shape[0]
        )
        epoch_loss = 0.0
        batches = 0
        for lo in range(0, train.shape[0], config.batch_size):
            xb = Tensor(train[order[lo:lo + config.batch_size]])
            diff = model.reconstruct(xb) - xb
            loss = ad.mean_all(diff * diff)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += loss.item()
            batches += 1
        val_loss = None
        if val.shape[0]:
            xv = Tensor(val)
            dv = model.reconstruct(xv) - xv
            val_loss = ad.mean_all(dv * dv).item()
        log.add(epoch, epoch_loss / batches, val_loss, opt.lr)
    return model, log
