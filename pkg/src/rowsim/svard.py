"""Per-row adaptive trigger thresholds for activation-count defenses.

A vulnerability profile rarely shows one uniform flip threshold; most rows
tolerate far more hammering than the device's worst row. Defenses that key
every trigger off the single worst-case value therefore do a lot of
unnecessary preventive work. This module carves the profiled per-row
thresholds into a small number of bins and serves each activation the
threshold of its row's bin, so strong rows trigger later while weak rows
keep the conservative value.

Safety argument: a trigger threshold chosen for row r must protect r's
victims, which are r's neighbors. Bin assignment therefore runs over the
neighborhood minimum of the profiled values (see
VulnerabilityProfile.effective_hcfirst), taken from the slowest on-time
bucket, so the value looked up for an aggressor is a lower bound on what
any of its victims can absorb.

Two storage variants are modeled. A controller-side table holds all bin ids
in SRAM and answers immediately. The in-DRAM variant stores bin ids in spare
metadata bits of the row itself and fetches them on first touch, which the
model counts as metadata traffic.
"""

from __future__ import annotations

from dataclasses import dataclass

from .oracle import HC_NONE

STORAGE_MODES = ("controller_table", "in_dram_metadata")
BIN_ID_BITS = 4


@dataclass
class SvardStats:
    lookups: int = 0
    metadata_fetches: int = 0
    metadata_bits_read: int = 0


class Svard:
    """Bin-table threshold provider built from an assigned profile."""

    def __init__(self, profile, storage="controller_table"):
        if storage not in STORAGE_MODES:
            raise ValueError(f"storage must be one of {STORAGE_MODES}")
        if profile.bin_table is None:
            raise ValueError("profile has no bin assignment; run assign_bins first")
        self.storage = storage
        self.bin_table = profile.bin_table
        self.geometry = profile.geometry
        rows = profile.geometry.rows_per_bank
        thresholds = self.bin_table.thresholds
        flat = profile.bin.reshape(-1)
        self._threshold_by_row = [int(thresholds[b]) for b in flat.tolist()]
        self._rows = rows
        self._fetched = bytearray(len(self._threshold_by_row))
        self.stats = SvardStats()

    def lookup(self, bank: int, row: int) -> int:
        i = bank * self._rows + row
        self.stats.lookups += 1
        if self.storage == "in_dram_metadata" and not self._fetched[i]:
            self._fetched[i] = 1
            self.stats.metadata_fetches += 1
            self.stats.metadata_bits_read += BIN_ID_BITS
        return self._threshold_by_row[i]

    @property
    def table_bits(self) -> int:
        """Controller-side storage footprint of the bin id table."""
        return len(self._threshold_by_row) * BIN_ID_BITS


class ThresholdedDefense:
    """A defense bound to a threshold source, ready for the simulator."""

    def __init__(self, defense, threshold_for, svard=None):
        self.defense = defense
        self.threshold_for = threshold_for
        self.svard = svard

    @property
    def name(self):
        return self.defense.name

    def translate(self, bank, row):
        return self.defense.translate(bank, row)

    def on_activation(self, bank, row, cycle):
        return self.defense.on_activation(bank, row, cycle, self.threshold_for)

    def epoch_reset(self, cycle):
        self.defense.epoch_reset(cycle)


def attach(defense, svard: Svard) -> ThresholdedDefense:
    """Route the defense's trigger threshold through the bin table."""
    return ThresholdedDefense(defense, svard.lookup, svard)


def fixed(defense, threshold: int) -> ThresholdedDefense:
    """Bind a single global threshold, the conventional configuration."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")

    def constant(bank, row, _t=int(threshold)):
        return _t

    return ThresholdedDefense(defense, constant)
