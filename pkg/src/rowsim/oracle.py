"""Ground-truth bitflip bookkeeping.

Every activation of row N exposes rows N-1 and N+1. Each potential victim
keeps two counters, one per neighboring aggressor, accumulated since the
victim was last refreshed. The effective hammer count is the larger of the
two sides: alternating N-1/N+1 activations N times each counts as N, not 2N,
and a single-sided stream of N counts as N as well, which errs on the safe
side for single-sided activity.

A victim also remembers the coarsest aggressor on-time bucket it has seen
since its last refresh, since longer on-times flip rows at lower counts. The
flip check compares the effective count against the victim's threshold for
that bucket. Rows whose threshold is the no-flip sentinel never flip.
"""

from __future__ import annotations

from dataclasses import dataclass

# Sentinel for "no bitflips observed at or below the deepest tested count".
HC_NONE = 1 << 40

# Aggressor on-time buckets (ns). The first equals minimum tRAS, i.e. plain
# hammering; the other two are pressing with the row held open.
TAGGON_BUCKETS_NS = (36.0, 500.0, 2000.0)


def taggon_bucket(on_time_ns: float) -> int:
    if on_time_ns <= TAGGON_BUCKETS_NS[0]:
        return 0
    if on_time_ns <= TAGGON_BUCKETS_NS[1]:
        return 1
    return 2


@dataclass(frozen=True)
class DataPattern:
    name: str
    aggressor_byte: int
    victim_byte: int


# Checkered patterns keep the same byte in aggressor and victim rows; the
# stripe pairs invert. Order matters: WCDP ties resolve to the earliest entry.
DATA_PATTERNS = (
    DataPattern("RS", 0xFF, 0x00),
    DataPattern("RSI", 0x00, 0xFF),
    DataPattern("CS", 0xAA, 0xAA),
    DataPattern("CSI", 0x55, 0x55),
    DataPattern("CB", 0xAA, 0x55),
    DataPattern("CBI", 0x55, 0xAA),
)

PATTERN_INDEX = {p.name: i for i, p in enumerate(DATA_PATTERNS)}


@dataclass(frozen=True)
class FlipRecord:
    cycle: int
    bank: int
    row: int
    effective_hammers: int
    bucket: int
    hcfirst: int


class DisturbanceState:
    """Per-(bank,row) victim counters for one device."""

    def __init__(self, geometry):
        self.geometry = geometry
        n = geometry.total_banks * geometry.rows_per_bank
        self.rows_per_bank = geometry.rows_per_bank
        self.a_left = [0] * n
        self.a_right = [0] * n
        self.bucket = [0] * n
        self.last_refresh = [0] * n
        self.total_recorded = 0   # every activation ever fed in, for audits

    def _idx(self, bank: int, row: int) -> int:
        return bank * self.rows_per_bank + row

    def record_activation(self, bank: int, row: int, on_time_ns: float = 36.0,
                          count: int = 1) -> None:
        """Credit `count` activations of (bank,row) to its neighbors."""
        if count <= 0:
            return
        self.total_recorded += count
        b = taggon_bucket(on_time_ns)
        base = bank * self.rows_per_bank
        if row > 0:
            i = base + row - 1
            self.a_right[i] += count
            if b > self.bucket[i]:
                self.bucket[i] = b
        if row + 1 < self.rows_per_bank:
            i = base + row + 1
            self.a_left[i] += count
            if b > self.bucket[i]:
                self.bucket[i] = b

    def update_on_time(self, bank: int, row: int, on_time_ns: float) -> None:
        """Upgrade neighbor buckets after the row's actual on-time is known.

        Used by schedulers that record the activation when it issues and only
        learn the open duration at precharge time.
        """
        b = taggon_bucket(on_time_ns)
        if b == 0:
            return
        base = bank * self.rows_per_bank
        for r in (row - 1, row + 1):
            if 0 <= r < self.rows_per_bank:
                i = base + r
                if b > self.bucket[i]:
                    self.bucket[i] = b

    def effective_hammers(self, bank: int, row: int) -> int:
        i = self._idx(bank, row)
        l, r = self.a_left[i], self.a_right[i]
        return l if l >= r else r

    def observed_bucket(self, bank: int, row: int) -> int:
        return self.bucket[self._idx(bank, row)]

    def check_flip(self, profile, bank: int, row: int) -> bool:
        """True if the victim's accumulated exposure reaches its threshold."""
        i = self._idx(bank, row)
        l, r = self.a_left[i], self.a_right[i]
        eff = l if l >= r else r
        hc = profile.hcfirst_flat[self.bucket[i]][i]
        return hc < HC_NONE and eff >= hc

    def refresh_row(self, bank: int, row: int, cycle: int = 0) -> None:
        i = self._idx(bank, row)
        self.a_left[i] = 0
        self.a_right[i] = 0
        self.bucket[i] = 0
        self.last_refresh[i] = cycle

    def reset(self) -> None:
        n = len(self.a_left)
        self.a_left = [0] * n
        self.a_right = [0] * n
        self.bucket = [0] * n
        self.last_refresh = [0] * n
        self.total_recorded = 0


def write_flip_log(path, records) -> None:
    """CSV export of flip records, stable field order."""
    with open(path, "w") as f:
        f.write("cycle,bank,row,effective_hammers,bucket,hcfirst\n")
        for r in records:
            f.write(f"{r.cycle},{r.bank},{r.row},{r.effective_hammers},"
                    f"{r.bucket},{r.hcfirst}\n")
