"""Read-disturbance mitigations operating on the activation stream.

Every defense sees each activation before it issues and answers with
(allowed, actions, physical_row). Actions are preventive work the memory
controller performs: neighbor refreshes, throttles, row relocations, and
bookkeeping traffic. Defenses that relocate rows own the logical-to-physical
remap table, so they also resolve addresses.

Trigger arithmetic is conservative throughout. Counters are compared before
the activation is allowed to land, so a row never exceeds ceil(T/2) - 1
issued activations per counting segment, and any victim's refresh window
spans at most two segments. Relocations refresh the neighbors of both rows
involved, because the copy activations would otherwise leak exposure that no
counter tracks. Together with count-never-undercounts tracker structures this
keeps every victim strictly below its flip threshold.

The threshold argument is a callable so that per-row adaptive tables can be
plugged in; the baseline configuration passes a constant.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field

from .oracle import HC_NONE


@dataclass(frozen=True)
class RefreshRows:
    bank: int
    rows: tuple
    cost_cycles: int = 0
    fallback: bool = False


@dataclass(frozen=True)
class ThrottleRow:
    bank: int
    row: int
    release_cycle: int
    cost_cycles: int = 0


@dataclass(frozen=True)
class SwapRows:
    bank: int
    row_a: int
    row_b: int
    implied_acts: tuple      # ((row, count), ...) activations the copy performs
    refresh_rows: tuple
    cost_cycles: int = 0


@dataclass(frozen=True)
class MigrateRow:
    bank: int
    src: int
    dst: int
    implied_acts: tuple
    refresh_rows: tuple
    cost_cycles: int = 0


@dataclass(frozen=True)
class CostEvent:
    kind: str
    cycles: int


def _half_up(threshold: int) -> int:
    return (threshold + 1) // 2


class Defense:
    name = "none"
    deterministic = True
    epoch_divisor = 1  # epochs per tREFW

    def __init__(self, geometry, timing):
        self.geometry = geometry
        self.timing = timing
        self.row_op_cycles = timing.cycles(timing.tRAS + timing.tRP)
        self.epoch_cycles = max(1, timing.cycles(timing.tREFW) // self.epoch_divisor)

    def translate(self, bank: int, row: int) -> int:
        return row

    def on_activation(self, bank, row, cycle, threshold_for):
        return True, (), row

    def epoch_reset(self, cycle: int) -> None:
        pass

    def _neighbors(self, row: int) -> tuple:
        rows = self.geometry.rows_per_bank
        return tuple(r for r in (row - 1, row + 1) if 0 <= r < rows)


_M64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


class Para(Defense):
    """Probabilistic neighbor refresh on every activation.

    The per-activation probability comes from requiring that T consecutive
    activations all escape refresh with probability at most the failure
    target: (1 - p) ** T <= target, so p = 1 - target ** (1 / T).

    Randomness is a counter-based stream per (bank, row) rather than one
    shared generator, so the k-th activation of a row sees the same draw no
    matter how the banks interleave. That keeps runs reproducible under
    scheduling shifts, and it makes the refresh count monotone in the
    threshold table: raising a row's threshold can only turn refreshes off.
    """

    name = "para"
    deterministic = False

    def __init__(self, geometry, timing, seed=0, target_failure_prob=1e-4):
        super().__init__(geometry, timing)
        if not 0 < target_failure_prob < 1:
            raise ValueError("target_failure_prob must be in (0, 1)")
        self.target = target_failure_prob
        self._seed = _mix64(seed)
        self._draws = {}
        self._p_cache = {}

    def probability_for(self, threshold: int) -> float:
        if threshold >= HC_NONE:
            return 0.0
        p = self._p_cache.get(threshold)
        if p is None:
            p = 1.0 - self.target ** (1.0 / threshold)
            self._p_cache[threshold] = (p, int(p * (1 << 64)))
            return p
        return p[0]

    def on_activation(self, bank, row, cycle, threshold_for):
        threshold = threshold_for(bank, row)
        if threshold >= HC_NONE:
            return True, (), row
        self.probability_for(threshold)
        p_scaled = self._p_cache[threshold][1]
        key = bank * self.geometry.rows_per_bank + row
        k = self._draws.get(key, 0) + 1
        self._draws[key] = k
        if _mix64(_mix64(self._seed ^ key) ^ k) < p_scaled:
            rows = self._neighbors(row)
            return True, (RefreshRows(bank, rows, len(rows) * self.row_op_cycles),), row
        return True, (), row


class _CountingBloom:
    def __init__(self, counters: int, hashes: int, rng: random.Random):
        self.m = counters
        self.salts = [(rng.randrange(1, 1 << 31) * 2 + 1, rng.randrange(1 << 31))
                      for _ in range(hashes)]
        self.counts = [0] * counters

    def _slots(self, key: int):
        m = self.m
        return [((key * a + b) >> 7) % m for a, b in self.salts]

    def add(self, key: int) -> None:
        for s in self._slots(key):
            self.counts[s] += 1

    def estimate(self, key: int) -> int:
        return min(self.counts[s] for s in self._slots(key))

    def clear(self) -> None:
        self.counts = [0] * self.m


class BlockHammer(Defense):
    """Blacklist-and-throttle using two counting Bloom filters.

    Filter lifetimes overlap: each filter counts for two epochs (an epoch is
    half a refresh window) and the two start one epoch apart, so any window
    is covered by at most two filter lifetimes. An activation is allowed only
    while both filters sit below the blacklist point n_bl = ceil(T/2); a
    blacklisted row is throttled to the end of the epoch. Estimates never
    undercount, which keeps the bound sound under hash collisions.
    """

    name = "blockhammer"
    epoch_divisor = 2

    def __init__(self, geometry, timing, seed=0, counters=4096, hashes=4):
        super().__init__(geometry, timing)
        rng = random.Random(seed)
        self.filters = [_CountingBloom(counters, hashes, rng),
                        _CountingBloom(counters, hashes, rng)]
        self.epoch_idx = 0

    def _key(self, bank: int, row: int) -> int:
        return bank * self.geometry.rows_per_bank + row

    def on_activation(self, bank, row, cycle, threshold_for):
        threshold = threshold_for(bank, row)
        if threshold >= HC_NONE:
            # nothing to protect, but keep counting for when thresholds differ
            key = self._key(bank, row)
            for f in self.filters:
                f.add(key)
            return True, (), row
        n_bl = _half_up(threshold)
        key = self._key(bank, row)
        if any(f.estimate(key) + 1 >= n_bl for f in self.filters):
            release = ((cycle // self.epoch_cycles) + 1) * self.epoch_cycles
            return False, (ThrottleRow(bank, row, release),), row
        for f in self.filters:
            f.add(key)
        return True, (), row

    def epoch_reset(self, cycle: int) -> None:
        self.epoch_idx += 1
        self.filters[self.epoch_idx % 2].clear()


class Hydra(Defense):
    """Two-level row tracking: shared group counters, then per-row counts.

    A group counter filters cold regions; once it crosses its gamma the rows
    of that group are tracked individually, initialized to gamma since the
    group count cannot attribute its activations. Per-row counts live in a
    table in DRAM; a small cache fronts it and every cache miss costs one
    DRAM read plus one write, surfaced as cost events. A row reaching
    ceil(T/2) gets its neighbors refreshed and its count reset.

    Gamma is a quarter of the smallest threshold among the group's rows, so
    the group stage can never swallow enough activations to endanger any row
    it covers. With a single global threshold this is the classic uniform
    gamma; with a per-row table, groups of strong rows stay in the cheap
    group stage longer, and rows whose threshold is infinite skip per-row
    tracking entirely since no trigger can ever involve them. The instance
    caches group gammas, so it assumes one stable threshold source over its
    lifetime.
    """

    name = "hydra"

    def __init__(self, geometry, timing, baseline_threshold, seed=0,
                 group_size=128, rcc_entries=4096):
        super().__init__(geometry, timing)
        self.baseline_threshold = baseline_threshold
        self.group_size = group_size
        self.groups_per_bank = math.ceil(geometry.rows_per_bank / group_size)
        self.gct = [0] * (geometry.total_banks * self.groups_per_bank)
        self._gamma = {}         # group index -> gamma, or None for no finite row
        self.rct = {}            # (bank,row) -> count beyond gamma, minus resets
        self.rcc = {}            # LRU over rct entries
        self.rcc_entries = rcc_entries
        self.rcc_misses = 0
        self.rcc_hits = 0

    def _group_gamma(self, bank, group, threshold_for):
        gi = bank * self.groups_per_bank + group
        if gi in self._gamma:
            return self._gamma[gi]
        lo = group * self.group_size
        hi = min(lo + self.group_size, self.geometry.rows_per_bank)
        worst = min(threshold_for(bank, r) for r in range(lo, hi))
        gamma = max(1, math.ceil(worst / 4)) if worst < HC_NONE else None
        self._gamma[gi] = gamma
        return gamma

    def on_activation(self, bank, row, cycle, threshold_for):
        gamma = self._group_gamma(bank, row // self.group_size, threshold_for)
        if gamma is None:
            return True, (), row
        gi = bank * self.groups_per_bank + row // self.group_size
        if self.gct[gi] < gamma:
            self.gct[gi] += 1
            return True, (), row
        threshold = threshold_for(bank, row)
        if threshold >= HC_NONE:
            return True, (), row
        key = (bank, row)
        actions = []
        if key in self.rcc:
            self.rcc.pop(key)
            self.rcc[key] = True
            self.rcc_hits += 1
        else:
            self.rcc_misses += 1
            actions.append(CostEvent("hydra_transfer", 2 * self.row_op_cycles))
            if len(self.rcc) >= self.rcc_entries:
                self.rcc.pop(next(iter(self.rcc)))
            self.rcc[key] = True
        count = gamma + self.rct.get(key, 0)
        if count + 1 >= _half_up(threshold):
            rows = self._neighbors(row)
            actions.append(RefreshRows(bank, rows, len(rows) * self.row_op_cycles))
            self.rct[key] = -gamma   # effective count back to zero
        self.rct[key] = self.rct.get(key, 0) + 1
        return True, tuple(actions), row

    def epoch_reset(self, cycle: int) -> None:
        self.gct = [0] * len(self.gct)
        self.rct.clear()
        self.rcc.clear()


class _MisraGries:
    """Heavy-hitter counts that never overcount and undercount boundedly."""

    def __init__(self, entries: int):
        self.entries = entries
        self.counts = {}

    def increment(self, key) -> None:
        d = self.counts
        if key in d:
            d[key] += 1
        elif len(d) < self.entries:
            d[key] = 1
        else:
            dead = []
            for k in d:
                d[k] -= 1
                if d[k] == 0:
                    dead.append(k)
            for k in dead:
                del d[k]

    def estimate(self, key) -> int:
        return self.counts.get(key, 0)

    def reset(self, key) -> None:
        self.counts.pop(key, None)

    def clear(self) -> None:
        self.counts.clear()


class _Remapper:
    """Sparse logical<->physical permutation per bank; identity by default."""

    def __init__(self):
        self.log2phys = {}
        self.phys2log = {}

    def translate(self, bank: int, row: int) -> int:
        return self.log2phys.get((bank, row), row)

    def logical_at(self, bank: int, phys: int) -> int:
        return self.phys2log.get((bank, phys), phys)

    def swap(self, bank: int, pa: int, pb: int) -> None:
        la = self.logical_at(bank, pa)
        lb = self.logical_at(bank, pb)
        for logical, phys in ((la, pb), (lb, pa)):
            if logical == phys:
                self.log2phys.pop((bank, logical), None)
                self.phys2log.pop((bank, phys), None)
            else:
                self.log2phys[(bank, logical)] = phys
                self.phys2log[(bank, phys)] = logical


class _RelocatingDefense(Defense):
    """Shared machinery for defenses that move hot rows elsewhere."""

    def __init__(self, geometry, timing, seed=0, tracker_entries=4096):
        super().__init__(geometry, timing)
        self.tracker = _MisraGries(tracker_entries)
        self.remap = _Remapper()
        self.rng = random.Random(seed)
        self.relocations = 0
        self.fallback_refreshes = 0

    def translate(self, bank: int, row: int) -> int:
        return self.remap.translate(bank, row)

    def _pick_destination(self, bank: int, phys: int):
        raise NotImplementedError

    def _relocate_action(self, bank, src, dst):
        refresh = tuple(sorted(set(self._neighbors(src) + self._neighbors(dst))))
        cost = (2 + len(refresh)) * self.row_op_cycles
        return refresh, cost

    def on_activation(self, bank, row, cycle, threshold_for):
        phys = self.remap.translate(bank, row)
        actions = []
        # a relocation can land on another hot row; bound the chase and fall
        # back to a plain neighbor refresh if it will not settle
        attempts = 0
        while True:
            threshold = threshold_for(bank, phys)
            if threshold >= HC_NONE:
                break
            if self.tracker.estimate((bank, phys)) + 1 < _half_up(threshold):
                break
            dst = self._pick_destination(bank, phys) if attempts < 4 else None
            attempts += 1
            if dst is None:
                rows = self._neighbors(phys)
                actions.append(RefreshRows(bank, rows, len(rows) * self.row_op_cycles,
                                           fallback=True))
                self.fallback_refreshes += 1
                self.tracker.reset((bank, phys))
                break
            refresh, cost = self._relocate_action(bank, phys, dst)
            actions.append(self._make_action(bank, phys, dst, refresh, cost))
            self.remap.swap(bank, phys, dst)
            self.tracker.reset((bank, phys))
            self.relocations += 1
            phys = self.remap.translate(bank, row)
        self.tracker.increment((bank, phys))
        return True, tuple(actions), phys

    def epoch_reset(self, cycle: int) -> None:
        self.tracker.clear()


class Rrs(_RelocatingDefense):
    """Random row swap at ceil(T/2) estimated activations.

    Swap partners are drawn uniformly and not reused within a refresh window,
    so a hot row's contents never revisit a physical location whose neighbors
    already absorbed exposure this window.
    """

    name = "rrs"

    def __init__(self, geometry, timing, seed=0, tracker_entries=4096):
        super().__init__(geometry, timing, seed, tracker_entries)
        self.used_rows = set()
        self._make_action = lambda bank, src, dst, refresh, cost: SwapRows(
            bank, src, dst, ((src, 2), (dst, 2)), refresh, cost)

    def _pick_destination(self, bank, phys):
        rows = self.geometry.rows_per_bank
        for _ in range(64):
            dst = self.rng.randrange(rows)
            if dst != phys and (bank, dst) not in self.used_rows:
                self.used_rows.add((bank, dst))
                self.used_rows.add((bank, phys))
                return dst
        return None

    def epoch_reset(self, cycle: int) -> None:
        super().epoch_reset(cycle)
        self.used_rows.clear()


class Aqua(_RelocatingDefense):
    """Quarantine migration at ceil(T/2); refresh fallback when full.

    The top fraction of each bank is reserved as the quarantine region.
    Slots are handed out in order and not reused, so once the region fills
    the defense degrades to neighbor refreshes, which it logs.
    """

    name = "aqua"

    def __init__(self, geometry, timing, seed=0, tracker_entries=4096,
                 quarantine_fraction=1 / 16):
        super().__init__(geometry, timing, seed, tracker_entries)
        rows = geometry.rows_per_bank
        self.quarantine_size = max(1, int(rows * quarantine_fraction))
        self.quarantine_base = rows - self.quarantine_size
        self.next_slot = [0] * geometry.total_banks
        self._make_action = lambda bank, src, dst, refresh, cost: MigrateRow(
            bank, src, dst, ((src, 2), (dst, 2)), refresh, cost)

    def _pick_destination(self, bank, phys):
        slot = self.next_slot[bank]
        while slot < self.quarantine_size:
            dst = self.quarantine_base + slot
            slot += 1
            if dst != phys:
                self.next_slot[bank] = slot
                return dst
        self.next_slot[bank] = slot
        return None


def build_defense(name: str, geometry, timing, seed=0, baseline_threshold=None,
                  **params) -> Defense:
    name = name.lower()
    if name == "para":
        return Para(geometry, timing, seed=seed, **params)
    if name == "blockhammer":
        return BlockHammer(geometry, timing, seed=seed, **params)
    if name == "hydra":
        if baseline_threshold is None:
            raise ValueError("hydra needs baseline_threshold for its group counters")
        return Hydra(geometry, timing, baseline_threshold, seed=seed, **params)
    if name == "rrs":
        return Rrs(geometry, timing, seed=seed, **params)
    if name == "aqua":
        return Aqua(geometry, timing, seed=seed, **params)
    raise ValueError(f"unknown defense {name!r}")
