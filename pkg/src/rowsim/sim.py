"""Trace-driven memory system simulation with pluggable mitigations.

The model is deliberately small: per-bank queues served with an open-row
FR-FCFS policy (row hits first, capped so misses cannot starve), closed-loop
cores that keep a fixed number of requests in flight, staggered per-row auto
refresh, and an optional defense consulted before every activation. Timing
is tracked at DRAM command granularity for the quantities that matter here:
activation counts, row open times, and the extra cycles preventive work adds
to a bank.

Every activation lands in the disturbance oracle, whether it came from the
trace or from a relocation copy, so the flip log at the end is the ground
truth for whether a configuration held. The oracle's own activation total is
reconciled against the report's breakdown at the end of every run.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from dataclasses import dataclass, field

from .device import TimingParams
from .oracle import DisturbanceState, FlipRecord
from .defenses import CostEvent, MigrateRow, RefreshRows, SwapRows, ThrottleRow


@dataclass
class CoreTrace:
    """Ordered requests of one core: (bank, row, is_write, gap_cycles).

    The gap is think time between this request's completion and the next
    issue slot it frees, modeling non-memory work.
    """

    core_id: int
    requests: list
    kind: str = "custom"


@dataclass
class SimConfig:
    timing: TimingParams = None
    outstanding: int = 4      # in-flight requests per core
    queue_depth: int = 64     # per-bank queue capacity
    column_cap: int = 16      # row hits served before a miss must progress
    burst_cycles: int = 4
    max_cycles: int = None    # safety stop; default derived from tREFW

    def __post_init__(self):
        if self.timing is None:
            self.timing = TimingParams.desk_scale()
        if self.column_cap < 1:
            raise ValueError("column_cap must be >= 1")
        if self.max_cycles is None:
            self.max_cycles = 64 * self.timing.cycles(self.timing.tREFW)


@dataclass
class SimReport:
    defense: str
    seed: int
    cycles: int
    core_cycles: list
    requests_done: int
    acts_trace: int
    acts_preventive: int
    acts_refresh: int
    preventive_counts: dict
    extra_cycles: dict
    throttled_requests: int
    flips: list
    truncated: bool = False
    svard_lookups: int = 0
    svard_metadata_bits: int = 0
    weighted_speedup: float = None
    harmonic_speedup: float = None
    max_slowdown: float = None

    @property
    def acts_total(self) -> int:
        return self.acts_trace + self.acts_preventive + self.acts_refresh

    def attach_metrics(self, alone_cycles) -> "SimReport":
        self.weighted_speedup = weighted_speedup(alone_cycles, self.core_cycles)
        self.harmonic_speedup = harmonic_speedup(alone_cycles, self.core_cycles)
        self.max_slowdown = max_slowdown(alone_cycles, self.core_cycles)
        return self

    def to_dict(self) -> dict:
        return {
            "defense": self.defense,
            "seed": self.seed,
            "cycles": self.cycles,
            "core_cycles": list(self.core_cycles),
            "requests_done": self.requests_done,
            "acts": {
                "trace": self.acts_trace,
                "preventive": self.acts_preventive,
                "refresh": self.acts_refresh,
                "total": self.acts_total,
            },
            "preventive_counts": dict(sorted(self.preventive_counts.items())),
            "extra_cycles": dict(sorted(self.extra_cycles.items())),
            "throttled_requests": self.throttled_requests,
            "flips": [
                {"cycle": f.cycle, "bank": f.bank, "row": f.row,
                 "effective_hammers": f.effective_hammers,
                 "bucket": f.bucket, "hcfirst": f.hcfirst}
                for f in self.flips
            ],
            "truncated": self.truncated,
            "svard": {"lookups": self.svard_lookups,
                      "metadata_bits": self.svard_metadata_bits},
            "metrics": {
                "weighted_speedup": self.weighted_speedup,
                "harmonic_speedup": self.harmonic_speedup,
                "max_slowdown": self.max_slowdown,
            },
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


_ARRIVE, _BANK, _DONE, _REFRESH, _EPOCH = 0, 1, 2, 3, 4


def run(profile, traces, defense=None, config: SimConfig = None,
        seed: int = 0) -> SimReport:
    """Simulate the traces against the profile; defense may be None.

    `defense` is a ThresholdedDefense (a mitigation bound to its threshold
    source); None runs the memory system with no mitigation at all.
    """
    cfg = config or SimConfig()
    t = cfg.timing
    geom = profile.geometry
    nbanks = geom.total_banks
    rows = geom.rows_per_bank
    state = DisturbanceState(geom)

    read_cost = t.cycles(t.tCL) + cfg.burst_cycles
    write_cost = t.cycles(t.tCWL) + cfg.burst_cycles
    trcd = t.cycles(t.tRCD)
    trp = t.cycles(t.tRP)
    tras = t.cycles(t.tRAS)
    trfc = t.cycles(t.tRFC)
    trefi = t.cycles(t.tREFI)
    tras_ns = t.tRAS

    queues = [[] for _ in range(nbanks)]
    bank_open = [-1] * nbanks
    bank_open_at = [0] * nbanks
    bank_free = [0] * nbanks
    bank_hits = [0] * nbanks
    bank_wake = [-1] * nbanks     # cycle of the pending bank event, -1 if none

    ncores = len(traces)
    core_idx = [0] * ncores
    core_out = [0] * ncores
    core_done_at = [0] * ncores
    remaining = sum(len(tr.requests) for tr in traces)
    completed = 0

    heap = []
    seq = 0

    def push(cycle, kind, a=0, b=0, c=0, d=0):
        nonlocal seq
        heapq.heappush(heap, (cycle, seq, kind, a, b, c, d))
        seq += 1

    def wake_bank(bank, cycle):
        if bank_wake[bank] < 0 or cycle < bank_wake[bank]:
            bank_wake[bank] = cycle
            push(cycle, _BANK, bank)

    def issue_from(core, cycle):
        tr = traces[core].requests
        while core_out[core] < cfg.outstanding and core_idx[core] < len(tr):
            bank, row, write, gap = tr[core_idx[core]]
            core_idx[core] += 1
            core_out[core] += 1
            push(cycle + gap, _ARRIVE, bank, core, row, int(write))

    flips = []
    flip_seen = set()
    preventive_counts = {}
    extra_cycles = {}
    acts_trace = 0
    acts_preventive = 0
    throttled = 0
    hcflat = profile.hcfirst_flat  # force the cache before the hot loop

    def bump(table, key, amount=1):
        table[key] = table.get(key, 0) + amount

    def refresh_one(bank, row, cycle):
        state.refresh_row(bank, row, cycle)
        flip_seen.discard((bank, row))

    def check_victims(bank, row, cycle):
        for v in (row - 1, row + 1):
            if 0 <= v < rows and (bank, v) not in flip_seen:
                if state.check_flip(profile, bank, v):
                    flip_seen.add((bank, v))
                    bkt = state.observed_bucket(bank, v)
                    flips.append(FlipRecord(
                        cycle, bank, v, state.effective_hammers(bank, v),
                        bkt, hcflat[bkt][bank * rows + v]))

    def close_row(bank, cycle):
        """Precharge the open row; returns the first cycle the bank is usable."""
        if bank_open[bank] < 0:
            return cycle
        pre_at = max(cycle, bank_open_at[bank] + tras)
        state.update_on_time(bank, bank_open[bank],
                            t.ns(pre_at - bank_open_at[bank]))
        check_victims(bank, bank_open[bank], pre_at)
        bank_open[bank] = -1
        return pre_at + trp

    def apply_actions(bank, actions, cycle):
        nonlocal acts_preventive
        cost = 0
        for a in actions:
            if isinstance(a, RefreshRows):
                for r in a.rows:
                    refresh_one(bank, r, cycle)
                kind = "fallback_refresh" if a.fallback else "refresh"
                bump(preventive_counts, kind)
                bump(extra_cycles, kind, a.cost_cycles)
                cost += a.cost_cycles
            elif isinstance(a, (SwapRows, MigrateRow)):
                for r, n in a.implied_acts:
                    state.record_activation(bank, r, tras_ns, n)
                    acts_preventive += n
                for r in a.refresh_rows:
                    refresh_one(bank, r, cycle)
                for r, _ in a.implied_acts:
                    check_victims(bank, r, cycle)
                kind = "swap" if isinstance(a, SwapRows) else "migrate"
                bump(preventive_counts, kind)
                bump(extra_cycles, kind, a.cost_cycles)
                cost += a.cost_cycles
            elif isinstance(a, CostEvent):
                bump(extra_cycles, a.kind, a.cycles)
                bump(preventive_counts, a.kind)
                cost += a.cycles
            elif isinstance(a, ThrottleRow):
                cost += a.cost_cycles
        return cost

    def serve_bank(bank, cycle):
        nonlocal acts_trace, throttled
        bank_wake[bank] = -1
        if bank_free[bank] > cycle:
            wake_bank(bank, bank_free[bank])
            return
        q = queues[bank]
        while q:
            pick = None
            if bank_open[bank] >= 0 and bank_hits[bank] < cfg.column_cap:
                opened = bank_open[bank]
                for i, (_, core, row, write) in enumerate(q):
                    phys = defense.translate(bank, row) if defense else row
                    if phys == opened:
                        pick = i
                        break
            if pick is not None:
                _, core, row, write = q.pop(pick)
                bank_hits[bank] += 1
                done_at = cycle + (write_cost if write else read_cost)
            else:
                _, core, row, write = q[0]
                if defense is not None:
                    allowed, actions, phys = defense.on_activation(bank, row, cycle)
                    if not allowed:
                        q.pop(0)
                        throttled += 1
                        bump(preventive_counts, "throttle")
                        release = cycle + 1
                        for a in actions:
                            if isinstance(a, ThrottleRow):
                                release = max(release, a.release_cycle)
                        bump(extra_cycles, "throttle_stall", release - cycle)
                        push(release, _ARRIVE, bank, core, row, write)
                        continue
                else:
                    actions, phys = (), row
                q.pop(0)
                usable = close_row(bank, cycle)
                if defense is not None:
                    usable += apply_actions(bank, actions, cycle)
                state.record_activation(bank, phys, tras_ns)
                acts_trace += 1
                check_victims(bank, phys, usable)
                bank_open[bank] = phys
                bank_open_at[bank] = usable
                bank_hits[bank] = 1
                done_at = usable + trcd + (write_cost if write else read_cost)
            bank_free[bank] = done_at
            push(done_at, _DONE, core)
            if q:
                wake_bank(bank, done_at)
            return
        # queue emptied by throttling alone

    # refresh: every tick closes the banks and refreshes the next row stripe
    ticks = t.refresh_ticks_per_window
    rows_per_tick = math.ceil(rows / ticks)
    refresh_ptr = 0

    def refresh_tick(cycle):
        nonlocal refresh_ptr
        for bank in range(nbanks):
            usable = close_row(bank, cycle)
            for k in range(rows_per_tick):
                refresh_one(bank, (refresh_ptr + k) % rows, cycle)
            bank_free[bank] = max(bank_free[bank], usable, cycle) + trfc
            if queues[bank]:
                wake_bank(bank, bank_free[bank])
        refresh_ptr = (refresh_ptr + rows_per_tick) % rows

    for core in range(ncores):
        issue_from(core, 0)
    push(trefi, _REFRESH)
    if defense is not None:
        push(defense.defense.epoch_cycles, _EPOCH)

    truncated = False
    now = 0
    while heap:
        cycle, _, kind, a, b, c, d = heapq.heappop(heap)
        now = cycle
        if cycle > cfg.max_cycles:
            truncated = True
            break
        if kind == _ARRIVE:
            if len(queues[a]) >= cfg.queue_depth:
                push(max(cycle + 1, bank_free[a]), _ARRIVE, a, b, c, d)
            else:
                queues[a].append((seq, b, c, d))
                wake_bank(a, max(cycle, bank_free[a]))
        elif kind == _BANK:
            serve_bank(a, cycle)
        elif kind == _DONE:
            core_out[a] -= 1
            completed += 1
            core_done_at[a] = cycle
            issue_from(a, cycle)
        elif kind == _REFRESH:
            refresh_tick(cycle)
            if completed < remaining:
                push(cycle + trefi, _REFRESH)
        elif kind == _EPOCH:
            defense.epoch_reset(cycle)
            if completed < remaining:
                push(cycle + defense.defense.epoch_cycles, _EPOCH)
        if completed >= remaining:
            break

    assert state.total_recorded == acts_trace + acts_preventive, \
        "oracle saw a different activation count than the books say"

    lookups = 0
    meta_bits = 0
    if defense is not None and defense.svard is not None:
        lookups = defense.svard.stats.lookups
        meta_bits = defense.svard.stats.metadata_bits_read

    return SimReport(
        defense=defense.name if defense is not None else "none",
        seed=seed,
        cycles=now,
        core_cycles=list(core_done_at),
        requests_done=completed,
        acts_trace=acts_trace,
        acts_preventive=acts_preventive,
        acts_refresh=0,
        preventive_counts=preventive_counts,
        extra_cycles=extra_cycles,
        throttled_requests=throttled,
        flips=flips,
        truncated=truncated,
        svard_lookups=lookups,
        svard_metadata_bits=meta_bits,
    )


def weighted_speedup(alone_cycles, shared_cycles) -> float:
    return sum(a / s for a, s in zip(alone_cycles, shared_cycles))


def harmonic_speedup(alone_cycles, shared_cycles) -> float:
    return len(alone_cycles) / sum(s / a for a, s in zip(alone_cycles, shared_cycles))


def max_slowdown(alone_cycles, shared_cycles) -> float:
    return max(s / a for a, s in zip(alone_cycles, shared_cycles))


# ---------------------------------------------------------------------------
# workload generators

def _usable_rows(geometry, margin_fraction=1 / 16):
    """Row range that keeps clear of the relocation region at the top."""
    top = geometry.rows_per_bank - int(geometry.rows_per_bank * margin_fraction)
    return 1, top - 1


def gen_benign(geometry, rng: random.Random, n_requests: int,
               core_id: int = 0, banks=None, locality: float = 0.9,
               hot_rows: int = 2, hot_fraction: float = 0.15,
               write_fraction: float = 0.3, gap_max: int = 8) -> CoreTrace:
    """Streaming accesses with row-buffer locality plus a small hot set.

    The hot rows model frequently revisited structures (locks, counters);
    they are what gives rate-based defenses something to react to under
    ordinary traffic. locality <= 0 degenerates to uniform single accesses
    with no hot set and no gaps, handy as a null traffic model.
    """
    if banks is None:
        banks = range(geometry.total_banks)
    banks = list(banks)
    lo, hi = _usable_rows(geometry)
    reqs = []
    if locality <= 0:
        for _ in range(n_requests):
            reqs.append((rng.choice(banks), rng.randrange(lo, hi), False, 0))
        return CoreTrace(core_id, reqs, "benign")

    hot = [(rng.choice(banks), rng.randrange(lo, hi)) for _ in range(hot_rows)]
    bank = rng.choice(banks)
    row = rng.randrange(lo, hi)
    while len(reqs) < n_requests:
        if hot and rng.random() < hot_fraction:
            hb, hr = hot[rng.randrange(len(hot))]
            reqs.append((hb, hr, rng.random() < write_fraction,
                         rng.randrange(gap_max + 1)))
            continue
        burst = rng.randint(4, 16)
        for _ in range(min(burst, n_requests - len(reqs))):
            reqs.append((bank, row, rng.random() < write_fraction,
                         rng.randrange(gap_max + 1)))
        if rng.random() < locality:
            row = min(hi - 1, row + rng.randint(1, 4))
        else:
            bank = rng.choice(banks)
            row = rng.randrange(lo, hi)
    return CoreTrace(core_id, reqs, "benign")


def gen_attack_doublesided(geometry, victim_bank: int, victim_row: int,
                           hammers: int, core_id: int = 0) -> CoreTrace:
    """Alternating activations of the victim's two neighbors.

    Drive attack traces with outstanding=1. A hammering loop is serialized
    by its own data dependencies; with a wider issue window the scheduler
    sees several same-row requests at once and merges them into row hits,
    which quietly de-fangs the pattern.
    """
    if not 1 <= victim_row < geometry.rows_per_bank - 1:
        raise ValueError("victim must have two neighbors")
    reqs = []
    for _ in range(hammers):
        reqs.append((victim_bank, victim_row - 1, False, 0))
        reqs.append((victim_bank, victim_row + 1, False, 0))
    return CoreTrace(core_id, reqs, "attack_doublesided")


def gen_hydra_adversarial(geometry, rng: random.Random, n_requests: int,
                          tracked_rows: int, core_id: int = 0,
                          bank: int = 0) -> CoreTrace:
    """Round-robin over more rows than the per-row cache can hold.

    Every access misses the cache once the set exceeds its capacity, which
    maximizes the defense's bookkeeping traffic while each individual row
    stays far below any trigger.
    """
    lo, hi = _usable_rows(geometry)
    stride = 3  # keep the set's members from disturbing each other's victims
    span = hi - lo
    count = max(1, min(tracked_rows, span // stride))
    rows = [lo + i * stride for i in range(count)]
    rng.shuffle(rows)
    reqs = [(bank, rows[i % len(rows)], False, 0) for i in range(n_requests)]
    return CoreTrace(core_id, reqs, "hydra_adversarial")


def gen_rrs_adversarial(geometry, rng: random.Random, n_requests: int,
                        bank: int, target_row: int, decoys: int = 64,
                        core_id: int = 0) -> CoreTrace:
    """Hammer one row while rotating decoys dilute the frequency tracker.

    Serialized like the double-sided pattern: drive with outstanding=1.
    """
    lo, hi = _usable_rows(geometry)
    decoy_rows = []
    while len(decoy_rows) < decoys:
        r = rng.randrange(lo, hi)
        if abs(r - target_row) > 4:
            decoy_rows.append(r)
    reqs = []
    for i in range(n_requests):
        if i % 2 == 0:
            reqs.append((bank, target_row, False, 0))
        else:
            reqs.append((bank, decoy_rows[(i // 2) % decoys], False, 0))
    return CoreTrace(core_id, reqs, "rrs_adversarial")


def gen_trace(kind: str, geometry, rng: random.Random, **kw) -> CoreTrace:
    if kind == "benign":
        return gen_benign(geometry, rng, **kw)
    if kind == "attack_doublesided":
        return gen_attack_doublesided(geometry, **kw)
    if kind == "hydra_adversarial":
        return gen_hydra_adversarial(geometry, rng, **kw)
    if kind == "rrs_adversarial":
        return gen_rrs_adversarial(geometry, rng, **kw)
    raise ValueError(f"unknown workload kind {kind!r}")
