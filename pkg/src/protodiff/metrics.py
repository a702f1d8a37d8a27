"""Evaluation metrics and paired significance tests.

AUROC uses the Mann-Whitney formulation with midranks (ties count one
half). The concordance index follows Harrell's convention: a pair is
comparable when the earlier time carries an event (or at equal times when
exactly one record has an event), and tied risks score one half. The
Wilcoxon signed-rank test drops zero differences, midranks tied absolute
differences, and computes the exact two-sided p-value from the signed-rank
distribution for up to 25 nonzero differences (normal approximation with
tie correction above that). DeLong's test compares two correlated AUCs
through placement-value structural components.

For survival tasks the DeLong comparison is applied to the binary
event-vs-censored discrimination of the risk scores; reports label it
"DeLong (event discrimination)" since the test is defined for AUCs, not
c-indices.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError


def _midranks(values):
    """1-based ranks with ties averaged."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j < len(values) and values[order[j]] == values[order[i]]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def auroc(scores, labels):
    """Mann-Whitney AUROC; ties contribute one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    m = int(labels.sum())
    n = len(labels) - m
    if m == 0 or n == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    ranks = _midranks(scores)
    u = ranks[labels].sum() - m * (m + 1) / 2.0
    return u / (m * n)


def auroc_macro_ovr(score_matrix, labels):
    """Unweighted one-vs-rest mean over the classes present in `labels`."""
    score_matrix = np.atleast_2d(np.asarray(score_matrix, dtype=np.float64))
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise UndefinedMetricError("macro AUROC needs >= 2 classes")
    return float(np.mean([
        auroc(score_matrix[:, int(c)], labels == c) for c in classes
    ]))


def macro_f1(predictions, labels, num_classes=None):
    """Unweighted mean of per-class F1; zero-denominator classes count 0."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ContractError("empty input")
    if num_classes is None:
        num_classes = int(max(predictions.max(), labels.max())) + 1
    scores = []
    for c in range(num_classes):
        tp = int(((predictions == c) & (labels == c)).sum())
        fp = int(((predictions == c) & (labels != c)).sum())
        fn = int(((predictions != c) & (labels == c)).sum())
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def c_index(risks, durations, events):
    """Harrell's concordance over comparable pairs; 0.5 per risk tie."""
    risks = np.asarray(risks, dtype=np.float64)
    durations = np.asarray(durations, dtype=np.float64)
    events = np.asarray(events, dtype=bool)
    concordant = 0.0
    comparable = 0
    n = len(risks)
    for i in range(n):
        for j in range(i + 1, n):
            if durations[i] == durations[j]:
                if events[i] == events[j]:
                    continue
                hi = i if events[i] else j  # the event record must rank riskier
            elif durations[i] < durations[j]:
                if not events[i]:
                    continue
                hi = i
            else:
                if not events[j]:
                    continue
                hi = j
            lo = j if hi == i else i
            comparable += 1
            if risks[hi] > risks[lo]:
                concordant += 1.0
            elif risks[hi] == risks[lo]:
                concordant += 0.5
    if comparable == 0:
        raise UndefinedMetricError("no comparable pairs")
    return concordant / comparable


def _signed_rank_statistic(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"length mismatch: {a.shape} vs {b.shape}")
    diffs = a - b
    diffs = diffs[diffs != 0.0]
    if diffs.size == 0:
        raise ContractError("degenerate input: all differences are zero")
    ranks = _midranks(np.abs(diffs))
    w_plus = ranks[diffs > 0].sum()
    return diffs, ranks, w_plus


def _exact_two_sided_p(ranks, w_plus):
    """P(|T| >= |t_obs|) for T = W+ - W- under random signs, by dynamic
    programming over the doubled (integer) rank weights. Equivalent to full
    enumeration of the 2^n sign assignments."""
    weights = np.rint(2.0 * ranks).astype(np.int64)
    total = int(weights.sum())  # 2S, S = full rank sum
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    top = 0
    for w in weights:
        top += w
        # 0/1 knapsack step; the RHS makes a temporary, so no aliasing
        counts[w:top + 1] = counts[w:top + 1] + counts[0:top + 1 - w]
    # index v counts assignments with 2*W+ == v; T = 2W+ - S, so 2T = 2v - total
    support = 2.0 * np.arange(total + 1) - total
    t_obs = abs(4.0 * w_plus - total)  # observed |2T|
    mass = counts[np.abs(support) >= t_obs - 1e-9].sum()
    return mass / 2.0 ** len(weights)


def _approx_two_sided_p(diffs, ranks, w_plus):
    n = len(diffs)
    mu = n * (n + 1) / 4.0
    tie_term = 0.0
    _, tie_counts = np.unique(np.abs(diffs), return_counts=True)
    for t in tie_counts:
        tie_term += t ** 3 - t
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    if sigma2 <= 0:
        return 1.0
    # continuity correction: W+ is discrete with unit (or half-unit) steps
    dev = max(abs(w_plus - mu) - 0.5, 0.0)
    z = dev / math.sqrt(sigma2)
    return math.erfc(z / math.sqrt(2.0))


def wilcoxon_signed_rank(a, b, exact_limit=25):
    """Two-sided paired test; returns (W+, p). Exact for up to
    `exact_limit` nonzero differences, normal approximation with tie
    correction beyond."""
    diffs, ranks, w_plus = _signed_rank_statistic(a, b)
    if len(diffs) <= exact_limit:
        p = _exact_two_sided_p(ranks, w_plus)
    else:
        p = _approx_two_sided_p(diffs, ranks, w_plus)
    return float(w_plus), float(min(1.0, p))


def _placement_components(scores, labels):
    pos = scores[labels]
    neg = scores[~labels]
    m, n = len(pos), len(neg)
    tx = _midranks(pos)
    ty = _midranks(neg)
    tz = _midranks(scores)
    v01 = (tz[labels] - tx) / n
    v10 = 1.0 - (tz[~labels] - ty) / m
    auc = (tz[labels].sum() - m * (m + 1) / 2.0) / (m * n)
    return v01, v10, auc


def delong_test(scores_a, scores_b, labels):
    """Paired DeLong comparison of two AUCs on the same cases.

    Returns (auc_a, auc_b, z, p). A zero-variance difference gives p = 1
    when the AUCs agree (z = 0) and p = 0 otherwise.
    """
    scores_a = np.asarray(scores_a, dtype=np.float64)
    scores_b = np.asarray(scores_b, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    if scores_a.shape != scores_b.shape or scores_a.shape != labels.shape:
        raise ContractError("scores and labels must have equal lengths")
    m = int(labels.sum())
    n = len(labels) - m
    if m == 0 or n == 0:
        raise UndefinedMetricError("DeLong needs both classes present")
    va_01, va_10, auc_a = _placement_components(scores_a, labels)
    vb_01, vb_10, auc_b = _placement_components(scores_b, labels)
    v01 = np.vstack([va_01, vb_01])
    v10 = np.vstack([va_10, vb_10])
    if m > 1 and n > 1:
        s = np.cov(v01) / m + np.cov(v10) / n
    else:
        s = np.zeros((2, 2))
    var_diff = s[0, 0] + s[1, 1] - 2.0 * s[0, 1]
    if var_diff <= 0.0:
        if auc_a == auc_b:
            return float(auc_a), float(auc_b), 0.0, 1.0
        return float(auc_a), float(auc_b), math.copysign(math.inf, auc_a - auc_b), 0.0
    z = (auc_a - auc_b) / math.sqrt(var_diff)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return float(auc_a), float(auc_b), float(z), float(p)


@dataclass
class MetricReport:
    task: str
    metric: str
    value: float
    sample_count: int
    comparisons: list = field(default_factory=list)  # {baseline, test, p_value}
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric in ("auroc", "macro_f1", "c_index"):
            if not 0.0 <= self.value <= 1.0:
                raise ContractError(
                    f"{self.metric} value {self.value} outside [0, 1]"
                )
        for comp in self.comparisons:
            if not 0.0 <= comp["p_value"] <= 1.0:
                raise ContractError(f"p-value {comp['p_value']} outside [0, 1]")

    def add_comparison(self, baseline, test, p_value):
        if not 0.0 <= p_value <= 1.0:
            raise ContractError(f"p-value {p_value} outside [0, 1]")
        self.comparisons.append(
            {"baseline": baseline, "test": test, "p_value": p_value}
        )

    def to_json(self):
        return json.dumps(
            {
                "task": self.task,
                "metric": self.metric,
                "value": self.value,
                "sample_count": self.sample_count,
                "comparisons": self.comparisons,
                "notes": self.notes,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def format_table(reports):
    """Aligned plain-text table, one row per (task, metric)."""
    headers = ["task", "metric", "value", "n", "comparisons"]
    rows = []
    for r in reports:
        comp = "; ".join(
            f"{c['baseline']}: p={c['p_value']:.4g} ({c['test']})"
            for c in r.comparisons
        ) or "-"
        rows.append([r.task, r.metric, f"{r.value:.4f}", str(r.sample_count), comp])
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(row))))
    return "\n".join(lines)
