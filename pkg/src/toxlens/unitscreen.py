"""Hidden-unit / substructure association screening.

For every (hidden unit, pattern) pair, the activations of the unit over a
molecule set are split by pattern presence and compared with a two-sided
Mann-Whitney rank test. The p-values are Bonferroni-adjusted over the full
family of tests (all units of all hidden layers times all patterns, the
most conservative reading). Patterns matching fewer molecules than a
support threshold are dropped up front.

The report also summarizes, per layer, which patterns become significant
there for the first time and how large (in atoms) those patterns are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .densenet import DenseNet, _midranks
from .fingerprint import FingerprintConfig, feature_matrix
from .patterns import Pattern, match_pattern

__all__ = [
    "mann_whitney_u",
    "presence_calls",
    "PresenceResult",
    "screen",
    "screen_activations",
    "Association",
    "ScreeningReport",
]

_erfc = np.vectorize(math.erfc)

# Exact enumeration is used up to this combined sample size (tie-free only).
EXACT_LIMIT = 12


def _exact_counts(m: int, n: int) -> np.ndarray:
    """Null distribution of U as counts over u = 0..m*n.

    Recurrence: N(u; m, n) = N(u - n; m-1, n) + N(u; m, n-1).
    """
    table = {}

    def count(u, mm, nn):
        if u < 0 or u > mm * nn:
            return 0
        if mm == 0 or nn == 0:
            return 1 if u == 0 else 0
        key = (u, mm, nn)
        if key not in table:
            table[key] = count(u - nn, mm - 1, nn) + count(u, mm, nn - 1)
        return table[key]

    return np.array([count(u, m, n) for u in range(m * n + 1)], dtype=np.float64)


def exact_two_sided_p(u: float, n1: int, n2: int) -> float:
    """Exact two-sided p from the enumerated null distribution of U."""
    counts = _exact_counts(n1, n2)
    total = counts.sum()
    u_low = int(round(min(u, n1 * n2 - u)))
    p = 2.0 * counts[: u_low + 1].sum() / total
    return min(p, 1.0)


def _tie_term(combined: np.ndarray) -> float:
    """Sum of t^3 - t over tie groups of the combined sample."""
    _, counts = np.unique(combined, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def approx_two_sided_p(u: float, n1: int, n2: int, tie_term: float) -> float:
    """Normal approximation with tie-corrected variance and continuity
    correction."""
    n = n1 + n2
    mu = n1 * n2 / 2.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return 1.0
    z = (abs(u - mu) - 0.5) / math.sqrt(var)
    if z < 0:
        z = 0.0
    return min(math.erfc(z / math.sqrt(2.0)), 1.0)


def mann_whitney_u(a, b) -> tuple[float, float]:
    """Two-sample Mann-Whitney test.

    Args:
        a, b: The two samples (non-empty).

    Returns:
        ``(U, p)`` where U is the statistic of group ``a`` (rank-sum form,
        midrank ties) and p is two-sided: exact by enumeration when the
        combined size is at most 12 and there are no ties, otherwise the
        tie-corrected normal approximation with continuity correction.

    Raises:
        ValueError: If either sample is empty.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be non-empty")
    n1, n2 = a.size, b.size
    combined = np.concatenate([a, b])
    ranks = _midranks(combined)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    tie_free = len(np.unique(combined)) == combined.size
    if tie_free and n1 + n2 <= EXACT_LIMIT:
        return u, exact_two_sided_p(u, n1, n2)
    return u, approx_two_sided_p(u, n1, n2, _tie_term(combined))


# ---------------------------------------------------------------------------
# presence calls
# ---------------------------------------------------------------------------


@dataclass
class PresenceResult:
    """Binary pattern-by-molecule matrix after support filtering."""

    matrix: np.ndarray                      # (n_kept, n_molecules) uint8
    pattern_ids: list[str]
    patterns: list[Pattern]
    dropped: list[tuple[str, int]]          # (pattern id, support)


def presence_calls(patterns, molecules, min_support: int = 20,
                   pattern_ids=None) -> PresenceResult:
    """Match every pattern against every molecule.

    Patterns present in fewer than ``min_support`` molecules are dropped
    and reported in ``dropped``.
    """
    patterns = list(patterns)
    if pattern_ids is None:
        pattern_ids = [p.source or f"pattern{i}" for i, p in enumerate(patterns)]
    pattern_ids = list(pattern_ids)
    molecules = list(molecules)

    rows, kept_ids, kept_patterns, dropped = [], [], [], []
    for pid, pattern in zip(pattern_ids, patterns):
        row = np.array(
            [1 if match_pattern(pattern, g) else 0 for g in molecules],
            dtype=np.uint8)
        support = int(row.sum())
        if support < min_support:
            dropped.append((pid, support))
        else:
            rows.append(row)
            kept_ids.append(pid)
            kept_patterns.append(pattern)
    matrix = np.stack(rows) if rows else \
        np.zeros((0, len(molecules)), dtype=np.uint8)
    return PresenceResult(matrix=matrix, pattern_ids=kept_ids,
                          patterns=kept_patterns, dropped=dropped)


# ---------------------------------------------------------------------------
# screening
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Association:
    layer: int
    unit: int
    pattern_id: str
    u_stat: float
    p_raw: float
    p_adjusted: float
    direction: str          # "present_higher" | "absent_higher"


@dataclass
class LayerDiscovery:
    layer: int
    first_discovered: int
    mean_pattern_size: float | None
    se_pattern_size: float | None


@dataclass
class ScreeningReport:
    associations: list[Association]
    n_tests: int
    alpha: float
    skipped_patterns: list[tuple[str, str]] = field(default_factory=list)
    dropped_patterns: list[tuple[str, int]] = field(default_factory=list)
    discovery: list[LayerDiscovery] = field(default_factory=list)
    first_layer: dict[str, int] = field(default_factory=dict)


def screen(net: DenseNet, molecules, patterns, fp_config=None,
           alpha: float = 0.05, min_support: int = 20,
           pattern_ids=None) -> ScreeningReport:
    """Correlate the net's hidden units with pattern presence calls.

    Fingerprints the molecules, runs them through the network, and tests
    every (unit, pattern) pair across all hidden layers.
    """
    if fp_config is None:
        fp_config = FingerprintConfig()
    _, x = feature_matrix(molecules, fp_config)
    _, activations = net.forward(x)
    presence = presence_calls(patterns, molecules, min_support=min_support,
                              pattern_ids=pattern_ids)
    sizes = {pid: p.n_nodes for pid, p in zip(presence.pattern_ids,
                                              presence.patterns)}
    report = screen_activations(activations, presence.matrix,
                                presence.pattern_ids, sizes, alpha=alpha)
    report.dropped_patterns = presence.dropped
    return report


def screen_activations(activations, presence, pattern_ids, pattern_sizes,
                       alpha: float = 0.05) -> ScreeningReport:
    """Core screening over precomputed activations.

    Args:
        activations: List (one per hidden layer) of ``(n_molecules,
            n_units)`` arrays.
        presence: ``(n_patterns, n_molecules)`` binary matrix.
        pattern_ids: Pattern identifiers, one per presence row.
        pattern_sizes: Map id -> number of atoms in the pattern.
        alpha: Family-wise significance level on adjusted p-values.

    Returns:
        ScreeningReport with the significant associations, the layer
        discovery summary, and patterns skipped for having a single class.
    """
    activations = [np.asarray(a, dtype=np.float64) for a in activations]
    presence = np.asarray(presence)
    n_molecules = presence.shape[1] if presence.size else \
        (activations[0].shape[0] if activations else 0)
    for a in activations:
        if a.shape[0] != n_molecules:
            raise ValueError("activation rows must match molecule count")

    usable = []
    skipped: list[tuple[str, str]] = []
    for j, pid in enumerate(pattern_ids):
        n1 = int(presence[j].sum())
        if n1 == 0 or n1 == n_molecules:
            skipped.append((pid, "single-class presence call"))
        else:
            usable.append(j)

    total_units = sum(a.shape[1] for a in activations)
    n_tests = total_units * len(usable)
    report = ScreeningReport(associations=[], n_tests=n_tests, alpha=alpha,
                             skipped_patterns=skipped)
    if n_tests == 0:
        return report

    pres = presence[usable].astype(np.float64)
    ids = [pattern_ids[j] for j in usable]
    n1 = pres.sum(axis=1)                       # per pattern
    n0 = n_molecules - n1
    mu = n1 * n0 / 2.0

    small = n_molecules <= EXACT_LIMIT
    significant: list[Association] = []
    first_layer: dict[str, int] = {}

    for layer_idx, acts in enumerate(activations, start=1):
        n_units = acts.shape[1]
        if small:
            p_mat = np.empty((len(usable), n_units))
            u_mat = np.empty((len(usable), n_units))
            for jj in range(len(usable)):
                row = pres[jj].astype(bool)
                for unit in range(n_units):
                    u, p = mann_whitney_u(acts[row, unit], acts[~row, unit])
                    u_mat[jj, unit] = u
                    p_mat[jj, unit] = p
        else:
            ranks = np.empty_like(acts)
            ties = np.empty(n_units)
            for unit in range(n_units):
                ranks[:, unit] = _midranks(acts[:, unit])
                ties[unit] = _tie_term(acts[:, unit])
            rank_sums = pres @ ranks                    # (patterns, units)
            u_mat = rank_sums - (n1 * (n1 + 1) / 2.0)[:, None]
            n = n_molecules
            var = (n1 * n0 / 12.0)[:, None] * \
                ((n + 1) - ties[None, :] / (n * (n - 1)))
            with np.errstate(divide="ignore", invalid="ignore"):
                z = (np.abs(u_mat - mu[:, None]) - 0.5) / np.sqrt(var)
            z = np.where(var <= 0, np.nan, np.maximum(z, 0.0))
            p_mat = np.where(np.isnan(z), 1.0, _erfc(z / math.sqrt(2.0)))
            p_mat = np.minimum(p_mat.astype(np.float64), 1.0)

        p_adj = np.minimum(p_mat * n_tests, 1.0)
        hits = np.argwhere(p_adj <= alpha)
        for jj, unit in hits:
            pid = ids[jj]
            direction = "present_higher" if u_mat[jj, unit] > mu[jj] \
                else "absent_higher"
            significant.append(Association(
                layer=layer_idx, unit=int(unit), pattern_id=pid,
                u_stat=float(u_mat[jj, unit]), p_raw=float(p_mat[jj, unit]),
                p_adjusted=float(p_adj[jj, unit]), direction=direction))
            if pid not in first_layer or layer_idx < first_layer[pid]:
                first_layer[pid] = layer_idx

    report.associations = significant
    report.first_layer = first_layer
    report.discovery = _discovery_summary(first_layer, pattern_sizes,
                                          len(activations))
    return report


def _discovery_summary(first_layer, pattern_sizes, n_layers):
    out = []
    for layer in range(1, n_layers + 1):
        pids = [pid for pid, l in first_layer.items() if l == layer]
        sizes = [pattern_sizes[pid] for pid in pids if pid in pattern_sizes]
        if sizes:
            mean = float(np.mean(sizes))
            se = float(np.std(sizes, ddof=1) / math.sqrt(len(sizes))) \
                if len(sizes) > 1 else None
        else:
            mean = None
            se = None
        out.append(LayerDiscovery(layer=layer, first_discovered=len(pids),
                                  mean_pattern_size=mean, se_pattern_size=se))
    return out
