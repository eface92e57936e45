"""Spatial structure analysis: subarray recovery and feature correlation.

Two procedures live here. The first reverse engineers subarray boundaries
from a single-sided hammer scan: a row's flip signature counts how many of
its neighbors it can disturb, which drops from two to one at subarray edges
because the blast radius does not cross the sense amplifier stripe. Boundary
candidates are clustered, the cluster count is chosen by silhouette score,
and surviving boundaries are validated with in-DRAM row copies, which only
work between rows of the same subarray.

The second scores candidate address features (bank bits, row bits, subarray
membership, distance to a subarray edge) by how well each one alone predicts
a row's flip threshold class, using a majority-vote predictor and macro F1.
A feature that beats the cutoff is flagged as physically meaningful.
"""

from __future__ import annotations

import csv
import random
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from .oracle import HC_NONE
from .profile import HAMMER_GRID, snap_to_grid


@dataclass
class SubarrayLayout:
    """Ground-truth subarray geometry: per-bank ascending start rows."""

    geometry: object
    starts: list          # starts[bank] = [0, s1, s2, ...]

    def __post_init__(self):
        rows = self.geometry.rows_per_bank
        for bank_starts in self.starts:
            if not bank_starts or bank_starts[0] != 0:
                raise ValueError("each bank's subarray list must start at row 0")
            if list(bank_starts) != sorted(set(bank_starts)):
                raise ValueError("subarray starts must be strictly ascending")
            if bank_starts[-1] >= rows:
                raise ValueError("subarray start beyond the bank")

    @classmethod
    def uniform(cls, geometry, subarray_rows: int) -> "SubarrayLayout":
        starts = list(range(0, geometry.rows_per_bank, subarray_rows))
        return cls(geometry, [list(starts) for _ in range(geometry.total_banks)])

    @classmethod
    def from_sizes(cls, geometry, sizes) -> "SubarrayLayout":
        """Cycle through `sizes` until the bank is full; same layout per bank."""
        rows = geometry.rows_per_bank
        starts = [0]
        i = 0
        while starts[-1] + sizes[i % len(sizes)] < rows:
            starts.append(starts[-1] + sizes[i % len(sizes)])
            i += 1
        return cls(geometry, [list(starts) for _ in range(geometry.total_banks)])

    def subarray_of(self, bank: int, row: int) -> int:
        starts = self.starts[bank]
        return int(np.searchsorted(starts, row, side="right")) - 1

    def boundaries(self, bank: int) -> list:
        """Internal boundary rows: the start row of every subarray but the first."""
        return list(self.starts[bank][1:])

    def subarray_span(self, bank: int, row: int):
        starts = self.starts[bank]
        i = self.subarray_of(bank, row)
        lo = starts[i]
        hi = (starts[i + 1] - 1) if i + 1 < len(starts) else self.geometry.rows_per_bank - 1
        return lo, hi

    def signature(self, bank: int, row: int) -> int:
        lo, hi = self.subarray_span(bank, row)
        return (1 if row > lo else 0) + (1 if row < hi else 0)


def single_sided_scan(layout: SubarrayLayout, rng: random.Random = None,
                      miss_rate: float = 0.0) -> np.ndarray:
    """Flip-signature map a single-sided hammer sweep would produce.

    Each row is hammered far beyond any threshold and the flipped neighbors
    are counted. `miss_rate` models victims that fail to flip during the
    scan, losing one count each with that probability.
    """
    geom = layout.geometry
    sig = np.zeros((geom.total_banks, geom.rows_per_bank), dtype=np.int8)
    for bank in range(geom.total_banks):
        for row in range(geom.rows_per_bank):
            s = layout.signature(bank, row)
            if miss_rate > 0.0 and rng is not None:
                s = sum(1 for _ in range(s) if rng.random() >= miss_rate)
            sig[bank, row] = s
    return sig


def _contiguity_boundaries(candidates) -> list:
    """Group adjacent candidate rows; each run marks one boundary."""
    runs = []
    for r in candidates:
        if runs and r == runs[-1][-1] + 1:
            runs[-1].append(r)
        else:
            runs.append([r])
    return sorted(max(run) for run in runs)


def recover_boundaries(signature_row: np.ndarray, klo: int = 2,
                       khi: int = 24):
    """Estimate internal subarray boundaries of one bank from its signatures.

    Candidate rows (signature below 2, bank edges excluded) are clustered on
    standardized (row address, signature); the cluster count with the best
    silhouette wins. Each cluster's highest row is reported as a boundary,
    matching the convention that a boundary row starts a new subarray.

    Returns (boundaries, curve) where curve is the [(k, silhouette)] sweep;
    the curve is empty when too few candidates exist to cluster and the
    boundaries fall back to simple contiguity grouping.
    """
    n = len(signature_row)
    cand = [r for r in range(1, n - 1) if signature_row[r] < 2]
    if not cand:
        return [], []
    if len(cand) < 4:
        return _contiguity_boundaries(cand), []

    X = np.column_stack([np.array(cand, dtype=float),
                         signature_row[cand].astype(float)])
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    X = (X - mean) / std

    best = None
    curve = []
    khi = min(khi, len(cand) - 1)
    for k in range(klo, khi + 1):
        km = KMeans(n_clusters=k, n_init=4, random_state=0)
        labels = km.fit_predict(X)
        if len(set(labels)) < 2:
            continue
        score = silhouette_score(X, labels)
        curve.append((k, float(score)))
        if best is None or score > best[0] + 1e-12:
            best = (score, labels)
    if best is None:
        return _contiguity_boundaries(cand), curve

    labels = best[1]
    bounds = []
    for lab in sorted(set(labels)):
        members = [cand[i] for i in range(len(cand)) if labels[i] == lab]
        bounds.append(max(members))
    return sorted(bounds), curve


def rowclone_validate(layout: SubarrayLayout, bank: int, boundaries,
                      rng: random.Random, reliability: float = 0.9,
                      attempts: int = 3) -> list:
    """Filter candidate boundaries with in-DRAM copy probes.

    A copy between the rows on either side of a true boundary always fails;
    within a subarray it succeeds with `reliability` per attempt. Boundaries
    whose probe ever succeeds are discarded as false positives.
    """
    kept = []
    for b in boundaries:
        if b <= 0 or b >= layout.geometry.rows_per_bank:
            continue
        same = layout.subarray_of(bank, b - 1) == layout.subarray_of(bank, b)
        copied = False
        for _ in range(attempts):
            if same and rng.random() < reliability:
                copied = True
                break
        if not copied:
            kept.append(b)
    return kept


def reverse_engineer(scan: np.ndarray, layout: SubarrayLayout = None,
                     rng: random.Random = None, klo: int = 2, khi: int = 24,
                     validate: bool = True, reliability: float = 0.9,
                     attempts: int = 3):
    """Full recovery pipeline over all banks.

    Returns (boundaries_by_bank, curves_by_bank). Validation requires the
    ground-truth layout (it stands in for the actual copy hardware).
    """
    bounds_by_bank = {}
    curves_by_bank = {}
    rng = rng or random.Random(0)
    for bank in range(scan.shape[0]):
        bounds, curve = recover_boundaries(scan[bank], klo, khi)
        if validate and layout is not None:
            bounds = rowclone_validate(layout, bank, bounds, rng,
                                       reliability, attempts)
        bounds_by_bank[bank] = bounds
        curves_by_bank[bank] = curve
    return bounds_by_bank, curves_by_bank


# ---------------------------------------------------------------------------
# feature correlation

def hc_classes(profile) -> np.ndarray:
    """Discrete threshold class per row: grid index, or 14 for never-flips."""
    h = profile.hcfirst[0].ravel()
    classes = np.empty(h.shape, dtype=np.int64)
    finite = h < HC_NONE
    snapped = snap_to_grid(h[finite])
    grid = np.array(HAMMER_GRID)
    classes[finite] = np.searchsorted(grid, snapped)
    classes[~finite] = len(HAMMER_GRID)
    return classes


def spatial_features(profile, layout: SubarrayLayout = None) -> dict:
    """Candidate one-bit address features, name -> 0/1 array per row."""
    geom = profile.geometry
    banks, rows = geom.total_banks, geom.rows_per_bank
    bank_idx = np.repeat(np.arange(banks), rows)
    row_idx = np.tile(np.arange(rows), banks)
    feats = {}
    for bit in range(max(1, banks.bit_length() - 1)):
        feats[f"bank_bit_{bit}"] = (bank_idx >> bit) & 1
    for bit in range(geom.row_bits):
        feats[f"row_bit_{bit}"] = (row_idx >> bit) & 1
    if layout is not None:
        sub = np.array([layout.subarray_of(b, r)
                        for b in range(banks) for r in range(rows)])
        for bit in range(max(1, int(sub.max()).bit_length())):
            feats[f"subarray_bit_{bit}"] = (sub >> bit) & 1
        dist = np.empty(banks * rows, dtype=np.int64)
        i = 0
        for b in range(banks):
            for r in range(rows):
                lo, hi = layout.subarray_span(b, r)
                dist[i] = min(r - lo, hi - r)
                i += 1
        for bit in range(3):
            feats[f"edge_distance_bit_{bit}"] = (dist >> bit) & 1
    return feats


def feature_f1(feature: np.ndarray, classes: np.ndarray) -> float:
    """Macro F1 of predicting the class from this single bit by majority vote."""
    nclasses = int(classes.max()) + 1
    pred_for = {}
    for v in (0, 1):
        members = classes[feature == v]
        if members.size:
            pred_for[v] = int(np.bincount(members).argmax())
    preds = np.array([pred_for.get(int(v), -1) for v in feature])
    scores = []
    for c in np.unique(classes):
        tp = int(np.sum((preds == c) & (classes == c)))
        fp = int(np.sum((preds == c) & (classes != c)))
        fn = int(np.sum((preds != c) & (classes == c)))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class FeatureScore:
    name: str
    f1: float
    correlated: bool


def analyze_features(profile, layout: SubarrayLayout = None,
                     threshold: float = 0.7) -> list:
    classes = hc_classes(profile)
    scores = [FeatureScore(name, feature_f1(bits, classes), False)
              for name, bits in spatial_features(profile, layout).items()]
    for s in scores:
        s.correlated = s.f1 >= threshold
    scores.sort(key=lambda s: (-s.f1, s.name))
    return scores


# ---------------------------------------------------------------------------
# reports

def write_boundary_report(path, boundaries_by_bank: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bank", "boundary_row"])
        for bank in sorted(boundaries_by_bank):
            for row in boundaries_by_bank[bank]:
                w.writerow([bank, row])


def write_feature_report(path, scores) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["feature", "f1", "correlated"])
        for s in scores:
            w.writerow([s.name, f"{s.f1:.4f}", int(s.correlated)])


def write_silhouette_report(path, curves_by_bank: dict) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bank", "k", "silhouette"])
        for bank in sorted(curves_by_bank):
            for k, score in curves_by_bank[bank]:
                w.writerow([bank, k, f"{score:.6f}"])
