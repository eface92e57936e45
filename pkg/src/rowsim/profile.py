"""Per-row vulnerability profiles: generation from templates, scaling, binning.

A profile stores, for every (bank, row): the minimum hammer count that flips
the row at each aggressor on-time bucket, the bit error rate at the deepest
tested count, the worst-case data pattern, and a vulnerability bin id.

Templates describe a module family by the min/avg/max of its observed
threshold distribution plus error-rate texture knobs. Per-row thresholds are
drawn from a lognormal fitted to those three statistics, truncated to
[min, max] and snapped to the tested hammer-count grid. A configurable
fraction of rows never flips at any tested count; the min/avg/max statistics
describe the rows that do flip.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .device import DeviceGeometry
from .oracle import HC_NONE, DATA_PATTERNS

K = 1024
# Tested hammer counts. The first 13 form the error-rate sweep; the deepest
# point is where worst-case pattern search and BER-at-max happen.
HAMMER_GRID = tuple(k * K for k in (1, 2, 4, 8, 12, 16, 24, 32, 40, 48, 56, 64, 96, 128))
BER_SWEEP_GRID = HAMMER_GRID[:13]
WCDP_HAMMERS = HAMMER_GRID[13]

_GRID_ARR = np.array(HAMMER_GRID, dtype=np.int64)


def snap_to_grid(values: np.ndarray) -> np.ndarray:
    """Nearest tested count for each value; sentinel entries pass through."""
    v = np.asarray(values)
    finite = v < HC_NONE
    mids = (_GRID_ARR[:-1] + _GRID_ARR[1:]) / 2.0
    idx = np.searchsorted(mids, v[finite])
    out = v.astype(np.int64).copy()
    out[finite] = _GRID_ARR[idx]
    return out


@dataclass(frozen=True)
class ProfileTemplate:
    name: str
    hcfirst_min: int
    hcfirst_avg: float
    hcfirst_max: int
    ber_mean: float = 0.017
    ber_cv: float = 6.0           # percent, across rows
    ber_period: float | None = None      # fraction of a bank, row-position ripple
    chunk_elevation: tuple[tuple[float, float], float] | None = None
    taggon_reduction: tuple[float, float] = (0.8, 0.6)
    nonflip_fraction: float = 0.0  # rows with no flips at any tested count

    def __post_init__(self):
        if not (0 < self.hcfirst_min <= self.hcfirst_avg <= self.hcfirst_max):
            raise ValueError("need hcfirst_min <= hcfirst_avg <= hcfirst_max")
        if self.hcfirst_min < HAMMER_GRID[0] or self.hcfirst_max > HAMMER_GRID[-1]:
            raise ValueError("template extremes must lie on the tested grid range")
        if int(self.hcfirst_min) not in HAMMER_GRID or int(self.hcfirst_max) not in HAMMER_GRID:
            raise ValueError("template min/max must be tested grid points")
        if not 0 <= self.nonflip_fraction < 1:
            raise ValueError("nonflip_fraction in [0, 1)")
        if not (0 < self.ber_mean <= 1 and self.ber_cv >= 0):
            raise ValueError("bad BER parameters")
        f1, f2 = self.taggon_reduction
        if not (0 < f2 <= f1 <= 1):
            raise ValueError("on-time reduction factors must be in (0,1], non-increasing")


# Presets for the module families used throughout. Extremes follow the
# characterized parts; never-flip fractions and BER texture are calibrated so
# the strong family keeps most rows above the deepest tested count.
TEMPLATES = {
    "S0": ProfileTemplate("S0", 32 * K, 57.0 * K, 128 * K, ber_cv=5.8,
                          ber_period=0.25, nonflip_fraction=0.80),
    "M0": ProfileTemplate("M0", 8 * K, 24.5 * K, 40 * K, ber_cv=7.0),
    "M1": ProfileTemplate("M1", 40 * K, 64.5 * K, 96 * K, ber_cv=8.08,
                          chunk_elevation=((0.03, 0.12), 1.21)),
    "H1": ProfileTemplate("H1", 12 * K, 54.0 * K, 128 * K, ber_cv=6.5,
                          nonflip_fraction=0.20),
}


def _phi(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def fit_hcfirst_distribution(template: ProfileTemplate):
    """Discrete distribution over grid points in [min, max] with mean == avg.

    Lognormal truncated to the template range, integrated over nearest-point
    cells, location parameter found by bisection. Returns (points, probs).
    """
    lo, hi, avg = template.hcfirst_min, template.hcfirst_max, template.hcfirst_avg
    pts = [g for g in HAMMER_GRID if lo <= g <= hi]
    if len(pts) == 1:
        return pts, [1.0]
    edges = [float(lo)] + [(pts[i] + pts[i + 1]) / 2.0 for i in range(len(pts) - 1)] + [float(hi)]
    lo_l, hi_l = math.log(lo), math.log(hi)
    sigma = (hi_l - lo_l) / 4.0
    log_edges = [math.log(e) for e in edges]

    def probs_for(mu):
        z = [_phi((le - mu) / sigma) for le in log_edges]
        den = z[-1] - z[0]
        if den <= 0:
            # all mass outside the truncation window; it piles at the near edge
            out = [0.0] * len(pts)
            out[0 if mu < (lo_l + hi_l) / 2 else -1] = 1.0
            return out
        return [(z[i + 1] - z[i]) / den for i in range(len(pts))]

    a, b = lo_l - 8 * sigma, hi_l + 8 * sigma
    for _ in range(200):
        mid = (a + b) / 2
        p = probs_for(mid)
        if sum(g * q for g, q in zip(pts, p)) < avg:
            a = mid
        else:
            b = mid
    return pts, probs_for((a + b) / 2)


class VulnerabilityProfile:
    """Arrays of per-row vulnerability data for one device."""

    def __init__(self, geometry: DeviceGeometry, hcfirst: np.ndarray, ber: np.ndarray,
                 wcdp: np.ndarray, template: str = "", seed: int = 0):
        assert hcfirst.shape == (3, geometry.total_banks, geometry.rows_per_bank)
        self.geometry = geometry
        self.hcfirst = hcfirst
        self.ber = ber
        self.wcdp = wcdp
        self.bin = np.zeros((geometry.total_banks, geometry.rows_per_bank), dtype=np.uint8)
        self.template = template
        self.seed = seed
        self.bin_table = None
        self._flat = None

    @property
    def hcfirst_flat(self):
        # plain lists for the oracle's scalar hot path
        if self._flat is None:
            self._flat = [self.hcfirst[b].ravel().tolist() for b in range(3)]
        return self._flat

    def finite_mask(self) -> np.ndarray:
        return self.hcfirst[0] < HC_NONE

    @property
    def min_hcfirst(self) -> int:
        vals = self.hcfirst[0][self.finite_mask()]
        if vals.size == 0:
            raise ValueError("profile has no flipping rows")
        return int(vals.min())

    def effective_hcfirst(self) -> np.ndarray:
        """Per-row threshold an activation of that row must respect.

        An activation disturbs both neighbors, and the flip check uses the
        coarsest on-time bucket a victim has seen, so the value that bounds
        what row r's activations may reach is the minimum of the longest
        on-time thresholds across r and both its neighbors.
        """
        h2 = self.hcfirst[2]
        left = np.concatenate([h2[:, :1], h2[:, :-1]], axis=1)
        right = np.concatenate([h2[:, 1:], h2[:, -1:]], axis=1)
        return np.minimum(np.minimum(left, right), h2)

    @property
    def baseline_threshold(self) -> int:
        """Worst-case single threshold: global minimum over rows and buckets."""
        vals = self.hcfirst[2][self.hcfirst[2] < HC_NONE]
        if vals.size == 0:
            raise ValueError("profile has no flipping rows")
        return int(vals.min())


def generate_profile(template: ProfileTemplate, geometry: DeviceGeometry,
                     seed: int = 0) -> VulnerabilityProfile:
    banks, rows = geometry.total_banks, geometry.rows_per_bank
    n = banks * rows
    if n < 2:
        raise ValueError("geometry too small to realize template min and max")
    rng = np.random.default_rng(seed)

    pts, probs = fit_hcfirst_distribution(template)
    p = np.array(probs)
    p /= p.sum()
    h0 = rng.choice(np.array(pts, dtype=np.int64), size=n, p=p)
    if template.nonflip_fraction > 0:
        h0[rng.random(n) < template.nonflip_fraction] = HC_NONE
    # pin the extremes so they are present exactly, away from bank edges so
    # the weakest row always has two neighbors to attack through
    h0[1] = template.hcfirst_min
    h0[min(4, n - 1)] = template.hcfirst_max
    h0 = h0.reshape(banks, rows)

    f1, f2 = template.taggon_reduction
    finite = h0 < HC_NONE
    h1 = h0.copy()
    h2 = h0.copy()
    h1[finite] = np.minimum(snap_to_grid(h0[finite] * f1), h0[finite])
    h2[finite] = np.minimum(snap_to_grid(h0[finite] * f2), h1[finite])
    hcfirst = np.stack([h0, h1, h2]).astype(np.int64)

    ber = _generate_ber(template, banks, rows, rng)
    ber[~finite] = 0.0

    wcdp = rng.integers(0, len(DATA_PATTERNS), size=(banks, rows)).astype(np.int8)
    wcdp[~finite] = 0  # no flips anywhere: pattern search falls back to the first entry

    return VulnerabilityProfile(geometry, hcfirst, ber, wcdp,
                                template=template.name, seed=seed)


def _generate_ber(template: ProfileTemplate, banks: int, rows: int,
                  rng: np.random.Generator) -> np.ndarray:
    cv_t = template.ber_cv / 100.0
    pos = (np.arange(rows) + 0.5) / rows
    shape = np.ones(rows)
    if template.ber_period:
        # ripple across row position; amplitude takes about half the CV budget
        amp = min(0.9, cv_t * math.sqrt(2.0) * 0.5)
        shape = shape * (1.0 - amp * np.cos(2 * math.pi * pos / template.ber_period))
    if template.chunk_elevation:
        (lo, hi), mult = template.chunk_elevation
        shape = shape.copy()
        shape[(pos >= lo) & (pos < hi)] *= mult
    cv_s = shape.std() / shape.mean() if shape.mean() > 0 else 0.0
    if cv_s < cv_t:
        cv_n = math.sqrt((1 + cv_t ** 2) / (1 + cv_s ** 2) - 1)
        sig = math.sqrt(math.log(1 + cv_n ** 2))
        noise = np.exp(rng.normal(-sig * sig / 2, sig, size=(banks, rows)))
    else:
        noise = np.ones((banks, rows))
    ber = template.ber_mean * shape[None, :] * noise
    return np.clip(ber, 1e-9, 1.0)


def scale_profile(profile: VulnerabilityProfile, target_worst: int) -> VulnerabilityProfile:
    """Rescale thresholds so the weakest flipping row sits at target_worst.

    Every finite value is multiplied by the same factor and floored, which
    preserves relative ordering. Sentinel rows stay sentinel. Scaled values
    leave the tested grid; that is fine, they parameterize what-if studies
    rather than measurements. Bins must be reassigned afterwards.
    """
    if target_worst < 1:
        raise ValueError("target_worst must be >= 1")
    factor = target_worst / profile.min_hcfirst
    finite = profile.hcfirst < HC_NONE
    scaled = profile.hcfirst.copy()
    scaled[finite] = np.maximum(np.floor(profile.hcfirst[finite] * factor), 1).astype(np.int64)
    out = VulnerabilityProfile(profile.geometry, scaled, profile.ber.copy(),
                               profile.wcdp.copy(), template=profile.template,
                               seed=profile.seed)
    return out


@dataclass(frozen=True)
class BinTable:
    """Ascending bin thresholds; a row's bin id indexes into them."""
    thresholds: tuple

    def __post_init__(self):
        if not 1 <= len(self.thresholds) <= 16:
            raise ValueError("bin count must fit a 4-bit id")
        if list(self.thresholds) != sorted(set(self.thresholds)):
            raise ValueError("thresholds must be strictly ascending")

    @property
    def count(self) -> int:
        return len(self.thresholds)

    def threshold_for(self, bin_id: int) -> int:
        return self.thresholds[bin_id]


def assign_bins(profile: VulnerabilityProfile, bin_count: int) -> BinTable:
    """Cluster rows into vulnerability bins and store ids in the profile.

    Binning runs on each row's protective threshold (see effective_hcfirst),
    so a bin's threshold is safe to apply to activations of any row in it.
    Each bin's threshold is the minimum value among its rows.
    """
    if not 1 <= bin_count <= 16:
        raise ValueError("bin_count must be in [1, 16]")
    eff = profile.effective_hcfirst().ravel()
    distinct = np.unique(eff)
    if len(distinct) <= bin_count:
        edges = distinct
    else:
        srt = np.sort(eff)
        cuts = [srt[(len(srt) * i) // bin_count] for i in range(bin_count)]
        edges = np.unique(np.array(cuts, dtype=np.int64))
    ids = np.searchsorted(edges, eff, side="right") - 1
    profile.bin[:, :] = ids.reshape(profile.bin.shape).astype(np.uint8)
    table = BinTable(tuple(int(e) for e in edges))
    profile.bin_table = table
    return table


@dataclass
class ProfileStats:
    hcfirst_cv: float
    hcfirst_cv_per_bank: list
    ber_cv: float
    ber_cv_per_bank: list
    hist: dict
    ber_by_position: np.ndarray
    nonflip_fraction: float


def _cv(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    if values.size == 0 or values.mean() == 0:
        return 0.0
    return 100.0 * values.std() / values.mean()


def profile_stats(profile: VulnerabilityProfile) -> ProfileStats:
    """Variation summaries over flipping rows, grid histogram, position series."""
    finite = profile.finite_mask()
    h = profile.hcfirst[0]
    hist = {int(g): int(np.count_nonzero(h == g)) for g in HAMMER_GRID}
    hist["none"] = int(np.count_nonzero(~finite))
    hv = h[finite].astype(float)
    bv = profile.ber[finite]
    per_bank_h, per_bank_b = [], []
    for b in range(profile.geometry.total_banks):
        m = finite[b]
        per_bank_h.append(_cv(h[b][m].astype(float)) if m.any() else 0.0)
        per_bank_b.append(_cv(profile.ber[b][m]) if m.any() else 0.0)
    counts = finite.sum(axis=0)
    sums = np.where(finite, profile.ber, 0.0).sum(axis=0)
    col = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    positive = col[col > 0]
    norm = col / positive.min() if positive.size else col
    return ProfileStats(
        hcfirst_cv=_cv(hv),
        hcfirst_cv_per_bank=per_bank_h,
        ber_cv=_cv(bv),
        ber_cv_per_bank=per_bank_b,
        hist=hist,
        ber_by_position=norm,
        nonflip_fraction=float(np.count_nonzero(~finite)) / finite.size,
    )


def save_profile(profile: VulnerabilityProfile, csv_path: str, header_path: str = None) -> None:
    """Columnar CSV plus a JSON sidecar with geometry/template/bin metadata."""
    g = profile.geometry
    header_path = header_path or csv_path + ".json"
    with open(csv_path, "w") as f:
        f.write("bank,row,hcfirst_36ns,hcfirst_500ns,hcfirst_2us,ber,wcdp,bin\n")
        for b in range(g.total_banks):
            h0, h1, h2 = profile.hcfirst[0][b], profile.hcfirst[1][b], profile.hcfirst[2][b]
            ber, wc, bi = profile.ber[b], profile.wcdp[b], profile.bin[b]
            for r in range(g.rows_per_bank):
                v0 = h0[r] if h0[r] < HC_NONE else "none"
                v1 = h1[r] if h1[r] < HC_NONE else "none"
                v2 = h2[r] if h2[r] < HC_NONE else "none"
                f.write(f"{b},{r},{v0},{v1},{v2},{ber[r]:.9g},"
                        f"{DATA_PATTERNS[wc[r]].name},{bi[r]}\n")
    meta = {
        "template": profile.template,
        "seed": profile.seed,
        "geometry": {
            "channels": g.channels, "ranks_per_channel": g.ranks_per_channel,
            "bank_groups": g.bank_groups, "banks_per_group": g.banks_per_group,
            "rows_per_bank": g.rows_per_bank, "columns_per_row": g.columns_per_row,
            "row_size_bytes": g.row_size_bytes,
        },
        "bin_thresholds": list(profile.bin_table.thresholds) if profile.bin_table else None,
    }
    with open(header_path, "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def load_profile(csv_path: str, header_path: str = None) -> VulnerabilityProfile:
    from .oracle import PATTERN_INDEX
    header_path = header_path or csv_path + ".json"
    with open(header_path) as f:
        meta = json.load(f)
    g = DeviceGeometry(**meta["geometry"])
    banks, rows = g.total_banks, g.rows_per_bank
    hc = np.full((3, banks, rows), HC_NONE, dtype=np.int64)
    ber = np.zeros((banks, rows))
    wcdp = np.zeros((banks, rows), dtype=np.int8)
    bins = np.zeros((banks, rows), dtype=np.uint8)
    with open(csv_path) as f:
        next(f)
        for line in f:
            parts = line.rstrip("\n").split(",")
            b, r = int(parts[0]), int(parts[1])
            for k in range(3):
                if parts[2 + k] != "none":
                    hc[k, b, r] = int(parts[2 + k])
            ber[b, r] = float(parts[5])
            wcdp[b, r] = PATTERN_INDEX[parts[6]]
            bins[b, r] = int(parts[7])
    prof = VulnerabilityProfile(g, hc, ber, wcdp, template=meta.get("template", ""),
                                seed=meta.get("seed", 0))
    prof.bin[:, :] = bins
    if meta.get("bin_thresholds"):
        prof.bin_table = BinTable(tuple(meta["bin_thresholds"]))
    return prof
