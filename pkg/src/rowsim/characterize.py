"""Read-disturbance characterization: hammer streams and recovery sweeps.

The double-sided loop follows the standard shape: activate the row above the
victim, hold it open for the configured on-time, precharge, wait tRP, then
the row below, and repeat. One hammer means one activation of each aggressor.

Recovery per victim runs worst-case-pattern search first (all six patterns at
the deepest tested count), then an ascending sweep of the tested grid with
that pattern. Rows that never show a nonzero error rate get the no-flip
sentinel. Every measurement starts by rewriting the victim row, which also
restores its charge, so each measurement is its own exposure window.

Above a configurable replay limit the aggressor activations are credited to
the disturbance state arithmetically instead of replaying one command per
hammer; the command-level path is exercised at small counts where streams
are checkable by eye.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .device import Command, DramDevice
from .oracle import (DATA_PATTERNS, HC_NONE, TAGGON_BUCKETS_NS, DisturbanceState,
                     taggon_bucket)
from .profile import BER_SWEEP_GRID, WCDP_HAMMERS


@dataclass
class HammerTestConfig:
    taggon_values_ns: tuple = TAGGON_BUCKETS_NS
    banks_under_test: tuple | None = None
    iterations: int = 10
    replay_limit: int = 256
    store_curves: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def hammer_doublesided(device: DramDevice, bank: int, victim: int, hc: int,
                       taggon_ns: float, state: DisturbanceState = None) -> list:
    """Issue hc double-sided hammer iterations; returns the command stream.

    Raises if the victim sits at a bank edge, where only one aggressor
    exists and the pattern is undefined.
    """
    rows = device.geometry.rows_per_bank
    if not 0 < victim < rows - 1:
        raise ValueError(f"victim {victim} has no double-sided aggressors")
    if hc < 0:
        raise ValueError("hammer count must be non-negative")
    t = device.timing
    open_cycles = max(t.cycles(taggon_ns), t.cycles(t.tRAS))
    trp = t.cycles(t.tRP)
    b = device.banks[bank]
    cycle = max(b.busy_until, b.pre_cycle + trp, 0)
    commands = []
    for _ in range(hc):
        for aggressor in (victim + 1, victim - 1):
            act = Command("ACT", cycle, bank, aggressor)
            pre = Command("PRE", cycle + open_cycles, bank, aggressor)
            for cmd in (act, pre):
                events = device.issue_command(cmd)
                if state is not None:
                    for ev in events:
                        if hasattr(ev, "on_time_ns"):
                            state.record_activation(bank, ev.row, ev.on_time_ns)
                commands.append(cmd)
            cycle += open_cycles + trp
    return commands


def measure_ber(profile, bank: int, victim: int, pattern_idx: int, hc: int,
                taggon_ns: float, state: DisturbanceState = None,
                device: DramDevice = None,
                config: HammerTestConfig = None) -> float:
    """Initialize the victim, hammer it hc times, return the bit error rate.

    The victim row is written with the pattern's victim byte and both
    aggressors with the complementary aggressor byte before hammering; the
    write restores the victim's charge, so exposure counts from zero.
    """
    config = config or HammerTestConfig()
    if state is None:
        state = DisturbanceState(profile.geometry)
    state.refresh_row(bank, victim)
    if device is not None and hc <= config.replay_limit:
        hammer_doublesided(device, bank, victim, hc, taggon_ns, state=state)
    else:
        state.record_activation(bank, victim + 1, taggon_ns, count=hc)
        state.record_activation(bank, victim - 1, taggon_ns, count=hc)
    if not state.check_flip(profile, bank, victim):
        return 0.0
    eff = state.effective_hammers(bank, victim)
    bucket = state.observed_bucket(bank, victim)
    threshold = int(profile.hcfirst[bucket][bank, victim])
    ber_deep = float(profile.ber[bank, victim])
    span = WCDP_HAMMERS - threshold
    ramp = 1.0 if span <= 0 else min(1.0, 0.25 + 0.75 * (eff - threshold) / span)
    factor = 1.0 if pattern_idx == int(profile.wcdp[bank, victim]) else 0.5
    return ber_deep * ramp * factor


def find_wcdp(profile, bank: int, victim: int, taggon_ns: float,
              state=None, device=None, config=None):
    """Worst-case data pattern at the deepest count; first index wins ties."""
    best_idx, best_ber = 0, 0.0
    for idx in range(len(DATA_PATTERNS)):
        ber = measure_ber(profile, bank, victim, idx, WCDP_HAMMERS, taggon_ns,
                          state=state, device=device, config=config)
        if ber > best_ber:
            best_idx, best_ber = idx, ber
    return best_idx, best_ber


def find_hcfirst(profile, bank: int, victim: int, taggon_ns: float,
                 state=None, device=None, config=None):
    """Smallest tested count with a nonzero error rate, else the sentinel.

    Returns (hcfirst, wcdp_idx, sweep_curve). The ascending sweep uses the
    worst-case pattern; the deepest point is covered by the pattern search
    itself. Repeats per the config and keeps the smallest count seen.
    """
    config = config or HammerTestConfig()
    wcdp_idx, ber_deep = find_wcdp(profile, bank, victim, taggon_ns,
                                   state=state, device=device, config=config)
    best = HC_NONE
    curve = [0.0] * len(BER_SWEEP_GRID)
    for _ in range(config.iterations):
        found = None
        for i, hc in enumerate(BER_SWEEP_GRID):
            ber = measure_ber(profile, bank, victim, wcdp_idx, hc, taggon_ns,
                              state=state, device=device, config=config)
            if ber > curve[i]:
                curve[i] = ber
            if ber > 0 and found is None:
                found = hc
        if found is None and ber_deep > 0:
            found = WCDP_HAMMERS
        if found is not None and found < best:
            best = found
    return best, wcdp_idx, curve


@dataclass
class CharacterizationDataset:
    """Recovered per-row values; -1 marks rows the loop did not test."""
    geometry: object
    wcdp: np.ndarray
    hcfirst: np.ndarray          # (3, banks, rows)
    ber_deep: np.ndarray
    curves: np.ndarray | None    # (3, banks, rows, len(sweep))
    config: HammerTestConfig = field(default_factory=HammerTestConfig)


def test_loop(profile, config: HammerTestConfig = None,
              device: DramDevice = None) -> CharacterizationDataset:
    """Full characterization: on-times x banks x interior victims.

    Victims are measured independently, so the output does not depend on
    iteration order. Bank-edge rows are skipped.
    """
    config = config or HammerTestConfig()
    g = profile.geometry
    banks = config.banks_under_test or tuple(range(g.total_banks))
    rows = g.rows_per_bank
    wcdp = np.full((g.total_banks, rows), -1, dtype=np.int8)
    hcf = np.full((3, g.total_banks, rows), -1, dtype=np.int64)
    ber_deep = np.zeros((g.total_banks, rows))
    curves = (np.zeros((3, g.total_banks, rows, len(BER_SWEEP_GRID)))
              if config.store_curves else None)
    state = DisturbanceState(g)
    for taggon in config.taggon_values_ns:
        bucket = taggon_bucket(taggon)
        for bank in banks:
            for victim in range(1, rows - 1):
                hc, wc, curve = find_hcfirst(profile, bank, victim, taggon,
                                             state=state, device=device, config=config)
                hcf[bucket, bank, victim] = hc
                if bucket == 0:
                    wcdp[bank, victim] = wc
                    ber_deep[bank, victim] = measure_ber(
                        profile, bank, victim, wc, WCDP_HAMMERS, taggon,
                        state=state, device=device, config=config)
                if curves is not None:
                    curves[bucket, bank, victim] = curve
    return CharacterizationDataset(g, wcdp, hcf, ber_deep, curves, config)


def save_characterization(dataset: CharacterizationDataset, csv_path: str,
                          sweep_path: str = None) -> None:
    """Recovered values in the profile CSV schema, plus raw sweep tuples."""
    g = dataset.geometry
    with open(csv_path, "w") as f:
        f.write("bank,row,hcfirst_36ns,hcfirst_500ns,hcfirst_2us,ber,wcdp,bin\n")
        for b in range(g.total_banks):
            for r in range(g.rows_per_bank):
                if dataset.wcdp[b, r] < 0:
                    continue
                vals = []
                for k in range(3):
                    v = dataset.hcfirst[k, b, r]
                    vals.append("none" if v >= HC_NONE or v < 0 else str(int(v)))
                f.write(f"{b},{r},{','.join(vals)},{dataset.ber_deep[b, r]:.9g},"
                        f"{DATA_PATTERNS[dataset.wcdp[b, r]].name},0\n")
    if sweep_path and dataset.curves is not None:
        # minimum-on-time sweep flattened to global row ids, for plotting
        with open(sweep_path, "w") as f:
            f.write("row,hc,ber\n")
            for b in range(g.total_banks):
                for r in range(g.rows_per_bank):
                    if dataset.wcdp[b, r] < 0:
                        continue
                    row_id = b * g.rows_per_bank + r
                    for i, hc in enumerate(BER_SWEEP_GRID):
                        f.write(f"{row_id},{hc},"
                                f"{dataset.curves[0, b, r, i]:.9g}\n")
