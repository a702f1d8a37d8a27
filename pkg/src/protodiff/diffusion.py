"""Latent-space diffusion: forward noising, noise-prediction training, and
classifier-guided ancestral sampling.

The forward chain q(z_t | z_{t-1}) = N(sqrt(1-beta_t) z_{t-1}, beta_t I)
has the closed-form marginal

    z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps,   abar_t = prod(1 - beta_s)

which is what training and the tests use. The denoiser predicts the
injected noise; the reverse step inverts the marginal around the posterior
mean

    mu = (z_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(1 - beta_t)

with fixed step variance beta_t. Guidance shifts that mean by
w * beta_t * d/dz log C(y | z_t, t) from a classifier trained on noisy
latents; w = 0 reproduces the unguided step bit-for-bit.

Sampling draws every Gaussian from a stream keyed (seed, sample, timestep),
so batches are reproducible regardless of batch splitting or parallelism.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import Tensor
from .errors import BoundsError, ContractError, ShapeError
from .nn import MLP, Module
from .optim import AdamW


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray
    alpha_bar: np.ndarray
    kind: str

    def __post_init__(self):
        if not (self.beta > 0).all() or not (self.beta < 1).all():
            raise ContractError("beta values must lie in (0, 1)")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ContractError("alpha_bar must be strictly decreasing")

    def snr(self):
        return self.alpha_bar / (1.0 - self.alpha_bar)


def build_schedule(T, beta_min=1e-4, beta_max=0.02, kind="linear"):
    if T < 1:
        raise ContractError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_min <= beta_max < 1.0:
        raise ContractError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1 + s) * np.pi / 2.0) ** 2
        beta = np.clip(1.0 - f[1:] / f[:-1], beta_min, 0.999)
    else:
        raise ContractError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(
        T=T, beta=beta, alpha_bar=np.cumprod(1.0 - beta), kind=kind
    )


def forward_diffuse(z0, t, noise, schedule):
    """Closed-form marginal sample z_t; linear in z0 and in the noise."""
    z0 = np.asarray(z0, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if not 0 <= t < schedule.T:
        raise BoundsError(f"timestep {t} outside [0, {schedule.T})")
    if noise.shape != z0.shape:
        raise ShapeError(f"noise shape {noise.shape} vs z0 shape {z0.shape}")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * noise


class _TimeConditionedMLP(Module):
    """MLP over [latent, time-embedding] rows; the embedding table is
    learned."""

    def __init__(self, latent_dim, out_dim, T, hidden, temb_dim, rng,
                 final_zero=False):
        self.temb = Tensor(
            rng.standard_normal((T, temb_dim)) * 0.1, requires_grad=True
        )
        self.net = MLP([latent_dim + temb_dim, *hidden, out_dim], rng,
                       final_zero=final_zero)
        self.latent_dim = latent_dim
        self.hidden_dims = tuple(hidden)

    def forward(self, z, t):
        z = z if isinstance(z, Tensor) else Tensor(np.atleast_2d(z))
        t_idx = np.full(z.shape[0], t, dtype=np.int64) if np.ndim(t) == 0 else np.asarray(t, dtype=np.int64)
        emb = ad.gather_rows(self.temb, t_idx)
        return self.net(ad.concat([z, emb], axis=-1))


class Denoiser(_TimeConditionedMLP):
    def __init__(self, latent_dim, T, hidden=(64, 64), temb_dim=16, rng=None):
        super().__init__(latent_dim, latent_dim, T, hidden, temb_dim, rng,
                         final_zero=True)

    def predict(self, z, t):
        """eps_hat(z_t, t) as a plain array."""
        return self.forward(z, t).data


class GuidanceClassifier(_TimeConditionedMLP):
    """Prototype classifier over noisy latents; logit count equals the
    global prototype count."""

    def __init__(self, latent_dim, n_prototypes, T, hidden=(64,), temb_dim=16,
                 rng=None):
        super().__init__(latent_dim, n_prototypes, T, hidden, temb_dim, rng)
        self.n_prototypes = n_prototypes

    def logits(self, z, t):
        return self.forward(z, t)

    def log_prob(self, z, t, y):
        """log C(y | z_t, t) per row, as a [rows, 1] tensor on the tape."""
        if not 0 <= y < self.n_prototypes:
            raise ContractError(
                f"prototype {y} outside [0, {self.n_prototypes})"
            )
        logp = ad.log_softmax(self.logits(z, t))
        pick = np.zeros((self.n_prototypes, 1))
        pick[y, 0] = 1.0
        return ad.matmul(logp, Tensor(pick))

    def predict_labels(self, z, t):
        return self.logits(z, t).data.argmax(axis=1)


@dataclass
class DiffusionTrainConfig:
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 1e-5
    hidden: tuple = (64, 64)
    temb_dim: int = 16
    seed: int = 0


def train_denoiser(latents, schedule, config):
    """Noise-prediction objective E || eps - eps_hat(z_t, t) ||^2 with t
    uniform and eps standard normal; per-sample sums averaged over the
    batch, so the zero-output init starts at about latent_dim."""
    data = np.ascontiguousarray(np.atleast_2d(latents), dtype=np.float64)
    if data.shape[0] == 0:
        raise ContractError("empty latent dataset")
    d = data.shape[1]
    model = Denoiser(d, schedule.T, hidden=config.hidden,
                     temb_dim=config.temb_dim,
                     rng=rngmod.stream(config.seed, "denoiser-init"))
    opt = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay)
    losses = []
    for step in range(config.steps):
        gen = rngmod.stream(config.seed, "denoiser-step", step)
        idx = gen.integers(0, data.shape[0], config.batch_size)
        t = gen.integers(0, schedule.T, config.batch_size)
        eps = gen.standard_normal((config.batch_size, d))
        ab = schedule.alpha_bar[t][:, None]
        zt = np.sqrt(ab) * data[idx] + np.sqrt(1.0 - ab) * eps
        pred = model.forward(zt, t)
        diff = pred - Tensor(eps)
        loss = ad.sum_all(diff * diff) / config.batch_size
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return model, losses


def train_guidance_classifier(latents, labels, schedule, config):
    """Cross-entropy over noisy latents z_t with t uniform; returns the
    model, the loss trace, and accuracy on the clean latents at t=0."""
    data = np.ascontiguousarray(np.atleast_2d(latents), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ContractError(f"need >= 2 distinct labels, got {classes.size}")
    n_classes = int(labels.max()) + 1
    d = data.shape[1]
    model = GuidanceClassifier(d, n_classes, schedule.T, hidden=config.hidden,
                               temb_dim=config.temb_dim,
                               rng=rngmod.stream(config.seed, "classifier-init"))
    opt = AdamW(model.params(), lr=config.lr, weight_decay=config.weight_decay)
    losses = []
    for step in range(config.steps):
        gen = rngmod.stream(config.seed, "classifier-step", step)
        idx = gen.integers(0, data.shape[0], config.batch_size)
        t = gen.integers(0, schedule.T, config.batch_size)
        eps = gen.standard_normal((config.batch_size, d))
        ab = schedule.alpha_bar[t][:, None]
        zt = np.sqrt(ab) * data[idx] + np.sqrt(1.0 - ab) * eps
        logp = ad.log_softmax(model.logits(Tensor(zt), t))
        onehot = np.zeros((config.batch_size, n_classes))
        onehot[np.arange(config.batch_size), labels[idx]] = 1.0
        loss = ad.sum_all(logp * Tensor(onehot)) * (-1.0 / config.batch_size)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    clean_acc = float(
        (model.predict_labels(data, np.zeros(data.shape[0], dtype=np.int64))
         == labels).mean()
    )
    return model, losses, clean_acc


def classifier_accuracy(model, latents, labels, t):
    t_idx = np.full(len(labels), t, dtype=np.int64)
    return float((model.predict_labels(np.atleast_2d(latents), t_idx)
                  == np.asarray(labels)).mean())


def grad_logprob(z_t, t, y, classifier):
    """d/dz log C(y | z_t, t) for every row of z_t, via the tape.

    `classifier` exposes log_prob(z, t, y) -> Tensor; rows are independent,
    so one backward pass yields each row's gradient.
    """
    z = Tensor(np.atleast_2d(np.asarray(z_t, dtype=np.float64)),
               requires_grad=True)
    ad.sum_all(classifier.log_prob(z, t, y)).backward()
    return z.grad.reshape(np.shape(z_t))


def _posterior_mean(z_t, t, denoiser, schedule):
    beta = schedule.beta[t]
    ab = schedule.alpha_bar[t]
    eps_hat = denoiser.predict(z_t, t)
    return (z_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)


def reverse_step(z_t, t, denoiser, schedule, rng=None, noise=None):
    """One ancestral step: mu + sqrt(beta_t) * xi, deterministic at t=0."""
    z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    if not 0 <= t < schedule.T:
        raise BoundsError(f"timestep {t} outside [0, {schedule.T})")
    mean = _posterior_mean(z_t, t, denoiser, schedule)
    if t == 0:
        return mean
    if noise is None:
        noise = rng.standard_normal(z_t.shape)
    return mean + np.sqrt(schedule.beta[t]) * noise


def guided_reverse_step(z_t, t, y, denoiser, classifier, w, schedule,
                        rng=None, noise=None):
    """reverse_step with the mean shifted by w * beta_t * grad log C(y|z_t,t);
    consumes RNG exactly as the unguided step."""
    if w < 0:
        raise ContractError(f"guidance scale must be >= 0, got {w}")
    z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    if not 0 <= t < schedule.T:
        raise BoundsError(f"timestep {t} outside [0, {schedule.T})")
    mean = _posterior_mean(z_t, t, denoiser, schedule)
    if w != 0.0:
        mean = mean + w * schedule.beta[t] * grad_logprob(z_t, t, y, classifier)
    if t == 0:
        return mean
    if noise is None:
        noise = rng.standard_normal(z_t.shape)
    return mean + np.sqrt(schedule.beta[t]) * noise


@dataclass
class SampleRequest:
    prototype_id: int
    count: int
    guidance_w: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.guidance_w < 0:
            raise ContractError("guidance scale must be >= 0")
        if self.count < 0:
            raise ContractError("count must be >= 0")


@dataclass
class SampleBatch:
    prototype_id: int
    latents: np.ndarray          # count x latent_dim
    decoded: np.ndarray = field(default=None)  # count x input_dim when decoded
    seed: int = 0


def sample(request, denoiser, classifier, schedule, ae=None):
    """Guided ancestral sampling from z_T ~ N(0, I); every sample's noise
    comes from its own (seed, sample, timestep) stream."""
    d = denoiser.latent_dim
    clf_dim = getattr(classifier, "latent_dim", None)
    if clf_dim is not None and clf_dim != d:
        raise ContractError(f"classifier latent dim {clf_dim} vs denoiser {d}")
    if request.guidance_w > 0 and classifier is not None:
        n_protos = getattr(classifier, "n_prototypes", None)
        if n_protos is not None and not 0 <= request.prototype_id < n_protos:
            raise ContractError(
                f"prototype {request.prototype_id} outside [0, {n_protos})"
            )
    if ae is not None and ae.config.latent.dim != d:
        raise ContractError(
            f"autoencoder latent dim {ae.config.latent.dim} vs denoiser {d}"
        )
    n = request.count
    if n == 0:
        empty = np.zeros((0, d))
        decoded = np.zeros((0, ae.config.input_dim)) if ae is not None else None
        return SampleBatch(request.prototype_id, empty, decoded, request.seed)
    z = np.stack([
        rngmod.stream(request.seed, i, schedule.T).standard_normal(d)
        for i in range(n)
    ])
    for t in range(schedule.T - 1, -1, -1):
        noise = None
        if t > 0:
            noise = np.stack([
                rngmod.stream(request.seed, i, t).standard_normal(d)
                for i in range(n)
            ])
        if request.guidance_w > 0 and classifier is not None:
            z = guided_reverse_step(z, t, request.prototype_id, denoiser,
                                    classifier, request.guidance_w, schedule,
                                    noise=noise)
        else:
            z = reverse_step(z, t, denoiser, schedule, noise=noise)
    decoded = ae.decode(z).data if ae is not None else None
    return SampleBatch(request.prototype_id, z, decoded, request.seed)


def _schedule_metadata(schedule):
    return {
        "schedule_T": str(schedule.T),
        "schedule_kind": schedule.kind,
        "schedule_beta_min": repr(float(schedule.beta[0])),
        "schedule_beta_max": repr(float(schedule.beta.max())),
    }


def schedule_from_metadata(meta):
    return build_schedule(
        int(meta["schedule_T"]),
        float(meta["schedule_beta_min"]),
        float(meta["schedule_beta_max"]),
        meta["schedule_kind"],
    )


def save_denoiser(path, model, schedule, extra_metadata=None):
    from .checkpoint import save_checkpoint

    meta = {
        "model": "denoiser",
        "latent_dim": str(model.latent_dim),
        "hidden": ",".join(str(h) for h in model.hidden_dims),
        "temb_dim": str(model.temb.shape[1]),
    }
    meta.update(_schedule_metadata(schedule))
    meta.update(extra_metadata or {})
    save_checkpoint(path, meta, model.param_arrays())


def load_denoiser(path):
    from .checkpoint import load_checkpoint

    meta, params = load_checkpoint(path)
    schedule = schedule_from_metadata(meta)
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    model = Denoiser(int(meta["latent_dim"]), schedule.T, hidden=hidden,
                     temb_dim=int(meta["temb_dim"]),
                     rng=rngmod.stream(0, "denoiser-load"))
    model.load_params(params)
    return model, schedule, meta


def save_classifier(path, model, schedule, extra_metadata=None):
    from .checkpoint import save_checkpoint

    meta = {
        "model": "guidance-classifier",
        "latent_dim": str(model.latent_dim),
        "n_prototypes": str(model.n_prototypes),
        "hidden": ",".join(str(h) for h in model.hidden_dims),
        "temb_dim": str(model.temb.shape[1]),
    }
    meta.update(_schedule_metadata(schedule))
    meta.update(extra_metadata or {})
    save_checkpoint(path, meta, model.param_arrays())


def load_classifier(path):
    from .checkpoint import load_checkpoint

    meta, params = load_checkpoint(path)
    schedule = schedule_from_metadata(meta)
    hidden = tuple(int(h) for h in meta["hidden"].split(",") if h)
    model = GuidanceClassifier(int(meta["latent_dim"]),
                               int(meta["n_prototypes"]), schedule.T,
                               hidden=hidden, temb_dim=int(meta["temb_dim"]),
                               rng=rngmod.stream(0, "classifier-load"))
    model.load_params(params)
    return model, schedule, meta
