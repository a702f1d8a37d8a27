"""Per-cohort prototype discovery.

Patch embeddings are uniformly subsampled per cohort, clustered with
multi-restart k-means (k-means++ seeding, Lloyd refinement, empty clusters
reseeded from the farthest point), and the cluster count is picked from the
within-cluster-sum-of-squares curve by an automated elbow rule. Per-cohort
centroid sets merge into one global prototype table that conditions
generation downstream.
"""

import io
import os
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .backend import kernels as K
from .errors import BoundsError, ContractError, ShapeError


def _thread_count():
    """PROTODIFF_THREADS caps within-module parallelism (default 1)."""
    try:
        return max(1, int(os.environ.get("PROTODIFF_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class EmbeddingCollection:
    """A cohort's patch embeddings plus opaque per-row provenance refs."""

    cohort_id: str
    data: np.ndarray  # rows x dim, float64
    patch_refs: list

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ContractError(
                f"embedding collection needs >= 1 row, got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ContractError(f"non-finite embeddings in cohort {self.cohort_id!r}")
        if len(self.patch_refs) != self.data.shape[0]:
            raise ContractError(
                f"{len(self.patch_refs)} patch refs for {self.data.shape[0]} rows"
            )

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def dim(self):
        return self.data.shape[1]


@dataclass
class PrototypeSet:
    cohort_id: str
    centroids: np.ndarray  # k x dim
    wcss: float
    seed: int
    member_counts: np.ndarray  # k, from the clustering subsample

    @property
    def k(self):
        return self.centroids.shape[0]

    def recompute_wcss(self, points):
        _, dists = K.sqdist_assign(
            np.ascontiguousarray(points, dtype=np.float64), self.centroids
        )
        return float(dists.sum())


@dataclass
class WcssCurve:
    entries: list  # ordered (k, wcss) pairs

    def ks(self):
        return [k for k, _ in self.entries]

    def values(self):
        return [w for _, w in self.entries]


@dataclass
class ElbowResult:
    k: int
    distinct: bool  # False when the curve shows no distinct elbow


@dataclass
class GlobalPrototypeTable:
    """Union of per-cohort prototype sets with stable global indices."""

    centroids: np.ndarray  # total x dim
    ids: list  # global index -> (cohort_id, local_index)
    member_counts: np.ndarray = field(default=None)

    @property
    def total(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]

    def global_index(self, cohort_id, local_index):
        return self.ids.index((cohort_id, local_index))


def subsample_uniform(collection, m, seed):
    """m distinct rows drawn uniformly without replacement; deterministic
    for a given seed; patch refs follow their rows."""
    n = collection.rows
    if not 1 <= m <= n:
        raise BoundsError(f"subsample size {m} outside [1, {n}]")
    order = rngmod.stream(seed, "subsample", collection.cohort_id).permutation(n)[:m]
    return EmbeddingCollection(
        cohort_id=collection.cohort_id,
        data=collection.data[order].copy(),
        patch_refs=[collection.patch_refs[i] for i in order],
    )


def _kmeanspp_init(points, k, gen):
    n = points.shape[0]
    cents = np.empty((k, points.shape[1]))
    first = int(gen.integers(n))
    cents[0] = points[first]
    sq = ((points - cents[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        total = sq.sum()
        if total <= 0.0:
            idx = int(gen.integers(n))  # all points coincide with a centroid
        else:
            idx = int(np.searchsorted(np.cumsum(sq), gen.random() * total))
            idx = min(idx, n - 1)
        cents[c] = points[idx]
        sq = np.minimum(sq, ((points - cents[c]) ** 2).sum(axis=1))
    return cents


def _lloyd(points, cents, max_iter, tol):
    """Refine centroids in place; returns (cents, labels, wcss, history).

    history holds the WCSS measured at each assignment step and is
    non-increasing: the update step can only lower the objective, and empty
    clusters reseeded at the farthest point strictly lower it.
    """
    cents = np.ascontiguousarray(cents, dtype=np.float64).copy()
    k = cents.shape[0]
    history = []
    prev = np.inf
    labels = None
    for _ in range(max_iter):
        labels, dists = K.sqdist_assign(points, cents)
        wcss = float(dists.sum())
        history.append(wcss)
        sums, counts = K.centroid_update(points, labels, k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            taken = set()
            order = np.argsort(dists)[::-1]
            pos = 0
            for c in empties:
                while pos < len(order) and int(order[pos]) in taken:
                    pos += 1
                idx = int(order[pos])
                taken.add(idx)
                cents[c] = points[idx]
            nonempty = counts > 0
            cents[nonempty] = sums[nonempty] / counts[nonempty, None]
        else:
            cents = np.ascontiguousarray(sums / counts[:, None])
        if prev - wcss <= tol:
            break
        prev = wcss
    labels, dists = K.sqdist_assign(points, cents)
    wcss = float(dists.sum())
    history.append(wcss)
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return cents, labels, wcss, history


def kmeans(points, k, seed, restarts=32, max_iter=100, tol=1e-10,
           extra_inits=(), collect_history=None):
    """Best-of-restarts k-means; restart streams are keyed by a
    data-independent counter so row order cannot change which stream a
    restart uses."""
    if isinstance(points, EmbeddingCollection):
        cohort_id, data = points.cohort_id, points.data
    else:
        cohort_id, data = "", np.ascontiguousarray(points, dtype=np.float64)
    n = data.shape[0]
    if k == 0:
        raise ContractError("k must be >= 1")
    if k > n:
        raise BoundsError(f"k={k} exceeds {n} rows")
    if tol <= 0:
        raise ContractError(f"tol must be positive, got {tol}")
    best = None
    inits = [("pp", r) for r in range(restarts)] + [
        ("extra", i) for i in range(len(extra_inits))
    ]

    def one_restart(spec):
        kind, r = spec
        if kind == "pp":
            init = _kmeanspp_init(data, k, rngmod.stream(seed, "restart", r))
        else:
            init = extra_inits[r]
        return _lloyd(data, init, max_iter, tol)

    threads = _thread_count()
    if threads > 1 and len(inits) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_restart, inits))
    else:
        results = [one_restart(spec) for spec in inits]
    # merge deterministically by restart index, so threading never changes
    # the winner
    for cents, labels, wcss, history in results:
        if collect_history is not None:
            collect_history.append(history)
        if best is None or wcss < best[2]:
            best = (cents, labels, wcss)
    cents, labels, wcss = best
    counts = np.bincount(labels, minlength=k).astype(np.int64)
    return PrototypeSet(
        cohort_id=cohort_id,
        centroids=cents,
        wcss=wcss,
        seed=seed,
        member_counts=counts,
    )


def wcss_curve(points, k_min, k_max, seed, restarts=32, max_iter=100, tol=1e-10):
    """One k-means result per k over [k_min, k_max]. Each k seeds one extra
    restart with the previous k's centroids plus a centroid at the point
    farthest from its assignment, which forces a non-increasing curve."""
    data = points.data if isinstance(points, EmbeddingCollection) else np.asarray(points)
    if not 1 <= k_min < k_max <= data.shape[0]:
        raise BoundsError(
            f"k range [{k_min}, {k_max}] invalid for {data.shape[0]} rows"
        )
    entries = []
    prev_cents = None
    for k in range(k_min, k_max + 1):
        extra = ()
        if prev_cents is not None:
            dd = np.ascontiguousarray(data, dtype=np.float64)
            _, dists = K.sqdist_assign(dd, prev_cents)
            far = dd[int(np.argmax(dists))]
            extra = (np.vstack([prev_cents, far[None, :]]),)
        result = kmeans(points, k, seed, restarts=restarts, max_iter=max_iter,
                        tol=tol, extra_inits=extra)
        entries.append((k, result.wcss))
        prev_cents = result.centroids
    return WcssCurve(entries=entries)


def select_elbow(curve, flat_tol=1e-6):
    """k maximizing the discrete second difference of the range-normalized
    curve. Exactly linear (or flat) curves carry no distinct elbow and fall
    back to the smallest k; ties break toward smaller k."""
    entries = curve.entries
    if len(entries) < 3:
        raise ContractError(f"elbow selection needs >= 3 entries, got {len(entries)}")
    ks = np.array([k for k, _ in entries], dtype=np.float64)
    ys = np.array([w for _, w in entries], dtype=np.float64)
    span = ys.max() - ys.min()
    if span <= 0.0:
        return ElbowResult(k=int(ks[0]), distinct=False)
    y = (ys - ys.min()) / span
    x = (ks - ks[0]) / (ks[-1] - ks[0])
    d2 = np.empty(len(entries) - 2)
    for i in range(1, len(entries) - 1):
        dl = (y[i] - y[i - 1]) / (x[i] - x[i - 1])
        dr = (y[i + 1] - y[i]) / (x[i + 1] - x[i])
        d2[i - 1] = dr - dl  # convex kink => positive jump in slope
    top = d2.max()
    if top <= flat_tol:
        return ElbowResult(k=int(ks[0]), distinct=False)
    # equal-curvature knees (within round-off) resolve to the smaller k
    best_i = int(np.argmax(d2 >= top - 1e-9 * max(1.0, abs(top)))) + 1
    return ElbowResult(k=int(ks[best_i]), distinct=True)


def assign_prototypes(collection, protos):
    """Nearest-centroid label per row (squared Euclidean, ties to the
    lowest index)."""
    cents = protos.centroids if hasattr(protos, "centroids") else protos
    data = collection.data if isinstance(collection, EmbeddingCollection) else collection
    data = np.ascontiguousarray(data, dtype=np.float64)
    if data.shape[1] != cents.shape[1]:
        raise ShapeError(
            f"embedding dim {data.shape[1]} vs centroid dim {cents.shape[1]}"
        )
    labels, _ = K.sqdist_assign(data, np.ascontiguousarray(cents, dtype=np.float64))
    return labels


def prototype_histogram(labels, k):
    """Per-prototype member counts, e.g. one slide's prototype distribution."""
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=k)


def merge_prototype_sets(sets):
    """Concatenate per-cohort centroid sets under (cohort_id, local_index)
    global ids."""
    if not sets:
        raise ContractError("no prototype sets to merge")
    seen = set()
    dims = {s.centroids.shape[1] for s in sets}
    if len(dims) != 1:
        raise ShapeError(f"mixed centroid dims {sorted(dims)}")
    ids = []
    blocks = []
    counts = []
    for s in sets:
        if s.cohort_id in seen:
            raise ContractError(f"duplicate cohort id {s.cohort_id!r}")
        seen.add(s.cohort_id)
        blocks.append(s.centroids)
        counts.append(s.member_counts)
        ids.extend((s.cohort_id, j) for j in range(s.k))
    return GlobalPrototypeTable(
        centroids=np.ascontiguousarray(np.vstack(blocks)),
        ids=ids,
        member_counts=np.concatenate(counts),
    )


def write_wcss_csv(fileobj, curve):
    fileobj.write("k,wcss\n")
    for k, w in curve.entries:
        fileobj.write(f"{k},{w!r}\n")


def wcss_csv_text(curve):
    buf = io.StringIO()
    write_wcss_csv(buf, curve)
    return buf.getvalue()
