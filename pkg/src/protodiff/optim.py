"""AdamW with decoupled weight decay and the cosine decay schedule.

Downstream training defaults follow the shared protocol: lr 1e-4, weight
decay 1e-5, cosine decay. Adam moment constants are the standard
(0.9, 0.999, 1e-8) and are recorded in checkpoint metadata.
"""

import math

import numpy as np

from .errors import ContractError


def cosine_lr(step, total, base_lr):
    """base_lr * 0.5 * (1 + cos(pi * step / total)); steps past `total`
    clamp at the final value."""
    if total <= 0:
        raise ContractError(f"total must be positive, got {total}")
    if step < 0:
        raise ContractError(f"step must be non-negative, got {step}")
    if step > total:
        step = total
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


class AdamW:
    """Decoupled-weight-decay Adam over a name -> Tensor parameter dict.

    `step()` consumes populated grads and leaves them untouched; callers
    reset via `zero_grad()`. The instance carries the full optimizer state:
    first/second moment buffers, step counter, base lr, decay coefficient,
    and the scheduler descriptor used for bookkeeping.
    """

    def __init__(self, params, lr=1e-4, weight_decay=1e-5,
                 betas=(0.9, 0.999), eps=1e-8, scheduler="none"):
        self.params = dict(params)
        self.lr = float(lr)
        self.base_lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.scheduler = scheduler
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no grad")
            g = p.grad
            if self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def hyperparams(self):
        """Hyperparameters as checkpoint metadata strings."""
        return optimizer_metadata(self.base_lr, self.weight_decay,
                                  self.scheduler, self.beta1, self.beta2,
                                  self.eps)


def optimizer_metadata(lr, weight_decay, scheduler="none",
                       beta1=0.9, beta2=0.999, eps=1e-8):
    """Checkpoint metadata for a training run's optimizer settings."""
    return {
        "optimizer": "adamw",
        "lr": repr(float(lr)),
        "weight_decay": repr(float(weight_decay)),
        "beta1": repr(float(beta1)),
        "beta2": repr(float(beta2)),
        "eps": repr(float(eps)),
        "scheduler": str(scheduler),
    }
