"""DDR4-style device model: geometry, timing, command legality, refresh.

The device tracks per-bank state (open row, last ACT/PRE cycles) and checks
command timing against the configured parameters. It does not move data.
Activations and precharges emit events that downstream consumers (the
disturbance bookkeeping, defenses) subscribe to; the precharge event carries
the aggressor row on-time, i.e. how long the row stayed open.

All timing parameters are nanoseconds. Cycle conversion uses the configured
clock period and rounds up, so a parameter is never honored short.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class TimingViolation(Exception):
    """A command was issued earlier than the timing parameters allow."""


class ProtocolError(Exception):
    """A command is illegal in the current bank state regardless of timing."""


@dataclass(frozen=True)
class DeviceGeometry:
    channels: int = 1
    ranks_per_channel: int = 1
    bank_groups: int = 4
    banks_per_group: int = 4
    rows_per_bank: int = 128 * 1024
    columns_per_row: int = 128
    row_size_bytes: int = 8192

    def __post_init__(self):
        for name in ("channels", "ranks_per_channel", "bank_groups",
                     "banks_per_group", "rows_per_bank", "columns_per_row"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.rows_per_bank & (self.rows_per_bank - 1):
            raise ValueError("rows_per_bank must be a power of two")

    @property
    def total_banks(self) -> int:
        return (self.channels * self.ranks_per_channel
                * self.bank_groups * self.banks_per_group)

    @property
    def row_bits(self) -> int:
        return self.rows_per_bank.bit_length() - 1

    @classmethod
    def desk_scale(cls, banks: int = 4, rows_per_bank: int = 8192) -> "DeviceGeometry":
        """Small geometry for fast experiments: `banks` total banks in 2 groups."""
        if banks % 2:
            return cls(bank_groups=banks, banks_per_group=1, rows_per_bank=rows_per_bank)
        return cls(bank_groups=2, banks_per_group=banks // 2, rows_per_bank=rows_per_bank)


@dataclass(frozen=True)
class TimingParams:
    clock_period_ns: float = 0.5
    tRCD: float = 14.0
    tRAS: float = 36.0
    tRP: float = 14.0
    tCL: float = 14.0
    tCWL: float = 11.0
    tRFC: float = 350.0
    tREFI: float = 7812.5
    tREFW: float = 64_000_000.0

    def __post_init__(self):
        vals = (self.clock_period_ns, self.tRCD, self.tRAS, self.tRP, self.tCL,
                self.tCWL, self.tRFC, self.tREFI, self.tREFW)
        if any(v <= 0 for v in vals):
            raise ValueError("timing parameters must be positive")
        if self.tRAS < self.tRCD:
            raise ValueError("tRAS must cover tRCD")
        if self.tREFW < self.tREFI:
            raise ValueError("tREFW must span at least one tREFI")

    def cycles(self, ns: float) -> int:
        return int(math.ceil(ns / self.clock_period_ns - 1e-9))

    def ns(self, cycles: int) -> float:
        return cycles * self.clock_period_ns

    @property
    def refresh_ticks_per_window(self) -> int:
        return max(1, int(round(self.tREFW / self.tREFI)))

    @classmethod
    def desk_scale(cls, tREFW: float = 4_000_000.0, ticks: int = 1024) -> "TimingParams":
        """Shrunk refresh window so refresh churn shows up in short runs."""
        return cls(tREFI=tREFW / ticks, tREFW=tREFW)


@dataclass(frozen=True)
class Command:
    kind: str  # ACT | PRE | RD | WR | REF
    cycle: int
    bank: int = 0
    row: int = 0
    column: int = 0


@dataclass(frozen=True)
class Activation:
    bank: int
    row: int
    cycle: int


@dataclass(frozen=True)
class AggressorOnTime:
    bank: int
    row: int
    on_time_ns: float
    cycle: int


@dataclass
class BankState:
    open_row: int = -1
    act_cycle: int = -1
    pre_cycle: int = -1_000_000
    busy_until: int = 0
    # per-row ACT counts since the row's last refresh, for diagnostics
    act_counts: dict = field(default_factory=dict)


class DramDevice:
    """Checks command legality and emits activation/on-time events.

    issue_command raises on violations rather than silently fixing them up,
    so test harnesses that construct streams by hand find out immediately.
    """

    def __init__(self, geometry: DeviceGeometry = None, timing: TimingParams = None):
        self.geometry = geometry or DeviceGeometry()
        self.timing = timing or TimingParams()
        self.banks = [BankState() for _ in range(self.geometry.total_banks)]
        self.refresh_ptr = 0
        self.last_ref_cycle = -1
        t = self.timing
        self._tRCD = t.cycles(t.tRCD)
        self._tRAS = t.cycles(t.tRAS)
        self._tRP = t.cycles(t.tRP)
        self._tRFC = t.cycles(t.tRFC)
        rows = self.geometry.rows_per_bank
        ticks = t.refresh_ticks_per_window
        self.rows_per_ref_tick = max(1, math.ceil(rows / ticks))

    def _bank(self, idx: int) -> BankState:
        if not 0 <= idx < len(self.banks):
            raise ProtocolError(f"bank {idx} out of range")
        return self.banks[idx]

    def issue_command(self, cmd: Command) -> list:
        """Apply one command; returns the events it produced."""
        b = self._bank(cmd.bank)
        events = []
        if cmd.kind == "ACT":
            if b.open_row >= 0:
                raise ProtocolError(f"ACT on bank {cmd.bank} with row {b.open_row} open")
            if not 0 <= cmd.row < self.geometry.rows_per_bank:
                raise ProtocolError(f"row {cmd.row} out of range")
            earliest = max(b.pre_cycle + self._tRP, b.busy_until)
            if cmd.cycle < earliest:
                raise TimingViolation(f"ACT at {cmd.cycle}, earliest {earliest} (tRP/tRFC)")
            b.open_row = cmd.row
            b.act_cycle = cmd.cycle
            b.act_counts[cmd.row] = b.act_counts.get(cmd.row, 0) + 1
            events.append(Activation(cmd.bank, cmd.row, cmd.cycle))
        elif cmd.kind == "PRE":
            if b.open_row < 0:
                raise ProtocolError(f"PRE on closed bank {cmd.bank}")
            if cmd.cycle < b.act_cycle + self._tRAS:
                raise TimingViolation(
                    f"PRE at {cmd.cycle}, tRAS requires {b.act_cycle + self._tRAS}")
            on_ns = self.timing.ns(cmd.cycle - b.act_cycle)
            events.append(AggressorOnTime(cmd.bank, b.open_row, on_ns, cmd.cycle))
            b.pre_cycle = cmd.cycle
            b.open_row = -1
        elif cmd.kind in ("RD", "WR"):
            if b.open_row < 0:
                raise ProtocolError(f"{cmd.kind} on closed bank {cmd.bank}")
            if cmd.cycle < b.act_cycle + self._tRCD:
                raise TimingViolation(
                    f"{cmd.kind} at {cmd.cycle}, tRCD requires {b.act_cycle + self._tRCD}")
        elif cmd.kind == "REF":
            for i, bk in enumerate(self.banks):
                if bk.open_row >= 0:
                    raise ProtocolError(f"REF with bank {i} open")
            for bk in self.banks:
                bk.busy_until = max(bk.busy_until, cmd.cycle + self._tRFC)
            self.last_ref_cycle = cmd.cycle
        else:
            raise ProtocolError(f"unknown command {cmd.kind!r}")
        return events

    def refresh_tick(self, cycle: int) -> list:
        """One periodic refresh command; returns the row indices it refreshed.

        Rows advance round-robin so that every row is covered once per tREFW.
        The same row range applies to every bank. Callers reset per-row
        disturbance state for the returned rows.
        """
        self.issue_command(Command("REF", cycle))
        rows = self.geometry.rows_per_bank
        start = self.refresh_ptr
        refreshed = [(start + i) % rows for i in range(self.rows_per_ref_tick)]
        self.refresh_ptr = (start + self.rows_per_ref_tick) % rows
        for b in self.banks:
            for r in refreshed:
                b.act_counts.pop(r, None)
        return refreshed

    def open_row(self, bank: int) -> int:
        return self._bank(bank).open_row
