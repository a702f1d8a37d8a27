"""Gated-attention multiple-instance learning over slide bags.

A bag is one slide's patch embeddings with a slide-level target. The model
is the three-stage architecture used for the downstream tasks: a 2-layer
patch MLP (layer norm, ReLU, 0.25 dropout), a gated attention network
(Tanh and Sigmoid branches, 0.25 dropout) that scores each patch, and a
linear head on the attention-pooled slide embedding.

Attention pooling must be exactly permutation invariant, so the softmax
normalizer and the weighted sums are accumulated in sorted order (a
canonical order of the same multiset of addends), and all per-patch linear
maps use the row-stable matmul. Training follows the shared protocol:
AdamW (lr 1e-4, wd 1e-5), cosine decay, at most 20 epochs, early stop
after 10 epochs without validation improvement, best-validation weights
returned.

Survival heads output B discrete hazards (sigmoid); the loss is the
discrete-time hazard negative log-likelihood with quantile time bins, and
the risk score is the cumulative hazard -sum_b log(1 - h_b).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import rng as rngmod
from .autodiff import Tensor
from .errors import ContractError
from .nn import Dropout, LayerNorm, Linear, Module
from .optim import AdamW, cosine_lr


@dataclass
class SurvivalRecord:
    duration: float
    event: bool  # True when death/recurrence observed, False when censored

    def __post_init__(self):
        if self.duration < 0:
            raise ContractError(f"duration must be >= 0, got {self.duration}")


@dataclass
class SlideBag:
    slide_id: str
    patient_id: str
    embeddings: np.ndarray  # N_patches x d
    label: int = None
    survival: SurvivalRecord = None

    def __post_init__(self):
        self.embeddings = np.ascontiguousarray(self.embeddings, dtype=np.float64)
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] < 1:
            raise ContractError(
                f"bag {self.slide_id!r} needs >= 1 patch row, got shape "
                f"{self.embeddings.shape}"
            )

    @property
    def n_patches(self):
        return self.embeddings.shape[0]


@dataclass
class AbmilConfig:
    in_dim: int
    n_out: int
    hidden: int = 256  # 256 or 512
    attn_dim: int = 128
    dropout: float = 0.25


def _softmax_canonical(scores):
    """Softmax over a [N, 1] score column with an order-canonical
    normalizer: the exp terms are summed in sorted order, so any patch
    permutation yields bitwise-permuted weights."""
    x = scores.data.reshape(-1)
    e = np.exp(x - x.max())
    w = (e / np.sort(e).sum()).reshape(-1, 1)

    def back(g):
        gf = g.reshape(-1)
        wf = w.reshape(-1)
        s = float((gf * wf).sum())
        return ((wf * (gf - s)).reshape(scores.shape),)

    return Tensor._result(w, (scores,), back)


def _pool_canonical(weights, feats):
    """Attention-weighted patch sum accumulated in sorted order per output
    column; bit-identical under patch permutation."""
    prod = weights.data * feats.data  # [N, h]
    pooled = np.sort(prod, axis=0).sum(axis=0, keepdims=True)

    def back(g):
        gw = (feats.data * g).sum(axis=1, keepdims=True)
        gf = weights.data * g
        return gw, gf

    return Tensor._result(pooled, (weights, feats), back)


class AbmilModel(Module):
    def __init__(self, config, rng):
        self.config = config
        h, a = config.hidden, config.attn_dim
        self.pre1 = Linear(config.in_dim, h, rng, row_stable=True)
        self.pre_norm = LayerNorm(h)
        self.pre2 = Linear(h, h, rng, row_stable=True)
        self.attn_v = Linear(h, a, rng, row_stable=True)  # Tanh branch
        self.attn_u = Linear(h, a, rng, row_stable=True)  # Sigmoid branch
        self.attn_score = Linear(a, 1, rng, row_stable=True)
        self.head = Linear(h, config.n_out, rng)
        self.drop = Dropout(config.dropout)

    def forward(self, bag, training=False, rng=None):
        """Returns (slide embedding [1,h], attention weights [N], logits
        [1,n_out]); weights are a simplex over the bag."""
        if bag.n_patches < 1:
            raise ContractError(f"empty bag {bag.slide_id!r}")
        if bag.embeddings.shape[1] != self.config.in_dim:
            raise ContractError(
                f"bag dim {bag.embeddings.shape[1]} does not match model "
                f"dim {self.config.in_dim}"
            )
        x = Tensor(bag.embeddings)
        feats = ad.relu(self.pre_norm(self.pre1(x)))
        feats = self.drop(feats, rng, training)
        feats = ad.relu(self.pre2(feats))
        gate_v = ad.tanh(self.attn_v(feats))
        gate_u = ad.sigmoid(self.attn_u(feats))
        gated = self.drop(gate_v * gate_u, rng, training)
        scores = self.attn_score(gated)          # [N, 1]
        weights = _softmax_canonical(scores)     # [N, 1]
        slide = _pool_canonical(weights, feats)  # [1, h]
        logits = self.head(slide)
        return slide, weights.data.reshape(-1), logits


def abmil_forward(bag, model, training=False, rng=None):
    return model.forward(bag, training=training, rng=rng)


@dataclass
class TrainConfig:
    epochs: int = 20
    patience: int = 10
    lr: float = 1e-4
    weight_decay: float = 1e-5
    hidden: int = 256
    attn_dim: int = 128
    dropout: float = 0.25
    seed: int = 0
    survival_bins: int = 4


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


def _cross_entropy(logits, label, n_classes):
    logp = ad.log_softmax(logits)
    onehot = np.zeros((1, n_classes))
    onehot[0, label] = 1.0
    return ad.sum_all(logp * Tensor(onehot)) * -1.0


def _train_loop(model, bags, targets, val_bags, val_targets, loss_fn, config):
    """Shared epoch loop: per-bag AdamW steps, cosine decay, early stopping
    on validation loss, best-validation weights restored."""
    opt = AdamW(model.params(), lr=config.lr,
                weight_decay=config.weight_decay,
                scheduler=f"cosine({config.epochs})")
    log = []
    best_val = math.inf
    best_params = model.param_arrays()
    stale = 0
    for epoch in range(1, config.epochs + 1):
        opt.lr = cosine_lr(epoch - 1, config.epochs, config.lr)
        order = rngmod.stream(config.seed, "mil-epoch", epoch).permutation(len(bags))
        drop_rng = rngmod.stream(config.seed, "mil-dropout", epoch)
        total = 0.0
        for i in order:
            _, _, logits = model.forward(bags[i], training=True, rng=drop_rng)
            loss = loss_fn(logits, targets[i])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        train_loss = total / len(bags)
        val_total = 0.0
        for bag, target in zip(val_bags, val_targets):
            _, _, logits = model.forward(bag, training=False)
            val_total += loss_fn(logits, target).item()
        val_loss = val_total / len(val_bags)
        log.append(EpochRecord(epoch, train_loss, val_loss, opt.lr))
        if best_val - val_loss > 1e-12:
            best_val = val_loss
            best_params = model.param_arrays()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_params(best_params)
    return log


def train_subtyping(bags, labels, val_bags, val_labels, config):
    """Cross-entropy slide classification under the shared protocol."""
    labels = [int(x) for x in labels]
    n_classes = max(labels) + 1
    if len(set(labels)) < 2:
        raise ContractError("train split must contain >= 2 classes")
    if not val_bags:
        raise ContractError("validation split is empty")
    model = AbmilModel(
        AbmilConfig(in_dim=bags[0].embeddings.shape[1], n_out=n_classes,
                    hidden=config.hidden, attn_dim=config.attn_dim,
                    dropout=config.dropout),
        rngmod.stream(config.seed, "mil-init"),
    )
    loss_fn = lambda logits, label: _cross_entropy(logits, label, n_classes)
    log = _train_loop(model, bags, labels, val_bags, [int(x) for x in val_labels],
                      loss_fn, config)
    return model, log


def quantile_bins(durations, events, n_bins):
    """Interior quantile boundaries of the observed event durations;
    falls back to all durations when there are no events."""
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    base = durations[events] if events.any() else durations
    qs = np.linspace(0, 1, n_bins + 1)[1:-1]
    return np.quantile(base, qs)


def bin_index(duration, boundaries):
    return int(np.searchsorted(boundaries, duration, side="right"))


def survival_nll(logits, bin_idx, event, n_bins):
    """Discrete-time hazard NLL for one record, from hazard logits.

    With h_b = sigmoid(x_b): an event in bin b contributes
    -log h_b - sum_{b'<b} log(1 - h_b'); a censored record contributes
    only the survival factors through its bin. Written with softplus
    (log h = -softplus(-x), log(1-h) = -softplus(x)) so no probability is
    ever clamped.
    """
    event_mask = np.zeros((1, n_bins))
    surv_mask = np.zeros((1, n_bins))
    if event:
        event_mask[0, bin_idx] = 1.0
        surv_mask[0, :bin_idx] = 1.0
    else:
        surv_mask[0, :bin_idx + 1] = 1.0
    neg = ad.softplus(logits * -1.0)
    pos = ad.softplus(logits)
    return ad.sum_all(neg * Tensor(event_mask)) + ad.sum_all(pos * Tensor(surv_mask))


def risk_from_logits(logits_data):
    """Cumulative hazard -sum_b log(1 - h_b); monotone in every hazard."""
    x = np.asarray(logits_data, dtype=np.float64).reshape(-1)
    return float(np.sum(np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))))


def hazards_from_logits(logits_data):
    x = np.asarray(logits_data, dtype=np.float64).reshape(-1)
    return 1.0 / (1.0 + np.exp(-x))


def train_survival(bags, records, val_bags, val_records, config):
    """Discrete-hazard NLL training; bins come from the train-split event
    durations."""
    if not any(r.event for r in records):
        raise ContractError("train split has zero events")
    if not val_bags:
        raise ContractError("validation split is empty")
    n_bins = config.survival_bins
    boundaries = quantile_bins([r.duration for r in records],
                               [r.event for r in records], n_bins)
    model = AbmilModel(
        AbmilConfig(in_dim=bags[0].embeddings.shape[1], n_out=n_bins,
                    hidden=config.hidden, attn_dim=config.attn_dim,
                    dropout=config.dropout),
        rngmod.stream(config.seed, "mil-init"),
    )

    def loss_fn(logits, record):
        b = bin_index(record.duration, boundaries)
        return survival_nll(logits, b, record.event, n_bins)

    log = _train_loop(model, bags, records, val_bags, val_records, loss_fn,
                      config)
    return model, log, boundaries


def predict_proba(model, bag):
    _, _, logits = model.forward(bag)
    e = np.exp(logits.data - logits.data.max())
    return (e / e.sum()).reshape(-1)


def predict_risk(model, bag):
    _, _, logits = model.forward(bag)
    return risk_from_logits(logits.data)


def stratified_split(patient_ids, labels, ratios=(0.7, 0.1, 0.2), seed=0):
    """Patient-level label-stratified partition into train/val/test item
    index lists.

    Patients (not items) are allocated per class by largest remainder, so
    per-class patient counts match the ratios within one. No patient spans
    splits; items follow their patient. Classes with fewer patients than
    splits allocate by priority train > test > val, with a warning.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ContractError(f"ratios must sum to 1, got {ratios}")
    patient_ids = list(patient_ids)
    labels = list(labels)
    by_patient = {}
    for i, (pid, lab) in enumerate(zip(patient_ids, labels)):
        by_patient.setdefault(pid, {"items": [], "labels": set()})
        by_patient[pid]["items"].append(i)
        by_patient[pid]["labels"].add(lab)
    patient_label = {}
    for pid, info in by_patient.items():
        if len(info["labels"]) > 1:
            warnings.warn(f"patient {pid!r} has mixed labels; using the first")
        patient_label[pid] = labels[info["items"][0]]
    classes = sorted(set(patient_label.values()))
    # remainder ties and scarce classes resolve train > test > val
    priority = (0, 2, 1)
    buckets = ([], [], [])
    for cls in classes:
        pids = sorted(p for p, l in patient_label.items() if l == cls)
        if len(pids) < 3:
            warnings.warn(
                f"class {cls!r} has only {len(pids)} patients; assigning by "
                "priority train > test > val"
            )
        order = rngmod.stream(seed, "split", str(cls)).permutation(len(pids))
        pids = [pids[i] for i in order]
        quotas = [len(pids) * r for r in ratios]
        alloc = [int(math.floor(q)) for q in quotas]
        remainder = len(pids) - sum(alloc)
        fracs = sorted(
            range(3),
            key=lambda s: (-(quotas[s] - alloc[s]), priority.index(s)),
        )
        for s in fracs[:remainder]:
            alloc[s] += 1
        pos = 0
        for split_idx in (0, 1, 2):
            for pid in pids[pos:pos + alloc[split_idx]]:
                buckets[split_idx].extend(by_patient[pid]["items"])
            pos += alloc[split_idx]
    train, val, test = (sorted(b) for b in buckets)
    return train, val, test


def save_abmil(path, model, extra_metadata=None):
    from .checkpoint import save_checkpoint

    cfg = model.config
    meta = {
        "model": "abmil",
        "in_dim": str(cfg.in_dim),
        "n_out": str(cfg.n_out),
        "hidden": str(cfg.hidden),
        "attn_dim": str(cfg.attn_dim),
        "dropout": repr(cfg.dropout),
    }
    meta.update(extra_metadata or {})
    save_checkpoint(path, meta, model.param_arrays())


def load_abmil(path):
    from .checkpoint import load_checkpoint

    meta, params = load_checkpoint(path)
    cfg = AbmilConfig(
        in_dim=int(meta["in_dim"]),
        n_out=int(meta["n_out"]),
        hidden=int(meta["hidden"]),
        attn_dim=int(meta["attn_dim"]),
        dropout=float(meta["dropout"]),
    )
    model = AbmilModel(cfg, rngmod.stream(0, "abmil-load"))
    model.load_params(params)
    return model, meta
