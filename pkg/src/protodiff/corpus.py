"""Corpus assembly and fidelity scoring.

Builds balanced per-prototype sample manifests (synthetic, and hybrid
synthetic+real), with sampling delegated to a pluggable sampler so manifest
arithmetic is testable without generating anything. Fidelity between two
feature distributions is scored with the Frechet distance between fitted
Gaussians; the feature space is configurable rather than tied to any fixed
backbone network.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ContractError, NumericError
from .prototypes import assign_prototypes

SOURCE_SYNTHETIC = "synthetic"
SOURCE_REAL = "real"


@dataclass
class CorpusManifest:
    """Entry list plus provenance; counts are derivable and validated."""

    entries: list  # dicts: {"ref": str, "prototype": int, "source": str}
    seeds: dict = field(default_factory=dict)
    deficits: dict = field(default_factory=dict)  # prototype -> shortfall

    def __len__(self):
        return len(self.entries)

    def counts(self):
        out = {}
        for e in self.entries:
            out[e["prototype"]] = out.get(e["prototype"], 0) + 1
        return out

    def by_source(self, source):
        return [e for e in self.entries if e["source"] == source]

    def validate(self, n_prototypes=None):
        total = sum(self.counts().values())
        if total != len(self.entries):
            raise ContractError("manifest counts do not sum to entry count")
        if n_prototypes is not None:
            bad = [e for e in self.entries
                   if not 0 <= e["prototype"] < n_prototypes]
            if bad:
                raise ContractError(
                    f"{len(bad)} entries reference invalid prototypes"
                )

    def to_json(self):
        payload = {"entries": self.entries, "seeds": self.seeds}
        if self.deficits:
            payload["deficits"] = {str(k): v for k, v in self.deficits.items()}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        payload = json.loads(text)
        return cls(
            entries=payload["entries"],
            seeds=payload.get("seeds", {}),
            deficits={int(k): v for k, v in payload.get("deficits", {}).items()},
        )


def ref_only_sampler(prototype, count, seed):
    """Sampler that mints refs without generating anything; used for
    manifest arithmetic and dry runs."""
    return [f"syn/{prototype}/{i}" for i in range(count)]


def build_synthetic_corpus(table, n_per, sampler, seed):
    """Exactly n_per samples for every prototype in the global table;
    total = n_per * prototype count. Deterministic per seed."""
    if n_per < 1:
        raise ContractError(f"n_per must be >= 1, got {n_per}")
    entries = []
    for p in range(table.total):
        refs = sampler(p, n_per, rngmod.derive_seed(seed, "synthetic", p))
        if len(refs) != n_per:
            raise ContractError(
                f"sampler returned {len(refs)} refs for prototype {p}, "
                f"expected {n_per}"
            )
        entries.extend(
            {"ref": r, "prototype": p, "source": SOURCE_SYNTHETIC} for r in refs
        )
    manifest = CorpusManifest(
        entries=entries,
        seeds={"seed": seed, "n_per": n_per, "mode": SOURCE_SYNTHETIC},
    )
    manifest.validate(table.total)
    return manifest


def real_pools_from_collections(collections, table):
    """Per-prototype ref pools from real cohort embeddings: each row is
    assigned to its cohort's nearest centroid, mapped to the global index."""
    pools = {p: [] for p in range(table.total)}
    offsets = {}
    for gidx, (cohort, local) in enumerate(table.ids):
        if cohort not in offsets:
            offsets[cohort] = gidx
    for col in collections:
        if col.cohort_id not in offsets:
            raise ContractError(f"cohort {col.cohort_id!r} not in prototype table")
        base = offsets[col.cohort_id]
        k = sum(1 for c, _ in table.ids if c == col.cohort_id)
        cents = table.centroids[base:base + k]
        labels = assign_prototypes(col, cents)
        for row, lab in enumerate(labels):
            pools[base + int(lab)].append(col.patch_refs[row])
    return pools


def build_hybrid_corpus(synthetic, real_pools, n_per_real, seed):
    """Synthetic entries plus n_per_real uniformly-sampled real refs per
    prototype; short pools contribute everything they have, with a warning
    and a recorded deficit."""
    entries = list(synthetic.entries)
    deficits = {}
    if n_per_real > 0:
        for p in sorted(real_pools):
            pool = real_pools[p]
            if len(pool) < n_per_real:
                warnings.warn(
                    f"prototype {p}: real pool has {len(pool)} refs, "
                    f"wanted {n_per_real}; taking all"
                )
                deficits[p] = n_per_real - len(pool)
                chosen = list(pool)
            else:
                gen = rngmod.stream(seed, "real", p)
                idx = gen.permutation(len(pool))[:n_per_real]
                chosen = [pool[i] for i in idx]
            entries.extend(
                {"ref": r, "prototype": p, "source": SOURCE_REAL} for r in chosen
            )
    seeds = dict(synthetic.seeds)
    seeds.update({"real_seed": seed, "n_per_real": n_per_real, "mode": "hybrid"})
    return CorpusManifest(entries=entries, seeds=seeds, deficits=deficits)


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self):
        return self.mean.shape[0]


def feature_stats(features):
    """Sample mean and unbiased covariance of a rows-by-dim feature array."""
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[0] < 2:
        raise ContractError(f"feature stats need >= 2 rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    return FeatureStats(mean=mean, cov=cov)


def _psd_sqrt(mat, tol):
    sym = 0.5 * (mat + mat.T)
    eigval, eigvec = np.linalg.eigh(sym)
    if eigval.min() < -tol:
        raise NumericError(
            f"matrix not PSD within tolerance: min eigenvalue {eigval.min():.3e}"
        )
    eigval = np.clip(eigval, 0.0, None)
    return (eigvec * np.sqrt(eigval)) @ eigvec.T


def fid(stats_a, stats_b, tol=1e-8):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross-term square root is taken through the symmetrized product
    sqrt(S_a) S_b sqrt(S_a); eigenvalues in [-tol, 0) clamp to zero and
    anything lower is a numeric error.
    """
    if stats_a.dim != stats_b.dim:
        raise ContractError(f"stat dims differ: {stats_a.dim} vs {stats_b.dim}")
    for s in (stats_a, stats_b):
        if np.abs(s.cov - s.cov.T).max() > tol:
            raise NumericError("covariance not symmetric within tolerance")
    root_a = _psd_sqrt(stats_a.cov, tol)
    inner = root_a @ stats_b.cov @ root_a
    eigval = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    if eigval.min() < -tol:
        raise NumericError(
            f"cross term not PSD within tolerance: {eigval.min():.3e}"
        )
    cross = np.sqrt(np.clip(eigval, 0.0, None)).sum()
    diff = stats_a.mean - stats_b.mean
    return float(diff @ diff + np.trace(stats_a.cov) + np.trace(stats_b.cov)
                 - 2.0 * cross)
