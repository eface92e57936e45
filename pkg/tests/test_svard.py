"""Bin-table threshold serving and its storage accounting."""

import numpy as np

from rowsim.defenses import Rrs
from rowsim.device import DeviceGeometry, TimingParams
from rowsim.oracle import HC_NONE
from rowsim.profile import VulnerabilityProfile, assign_bins
from rowsim.svard import BIN_ID_BITS, Svard, ThresholdedDefense, attach, fixed

GEOM = DeviceGeometry(bank_groups=2, banks_per_group=1, rows_per_bank=64)
TIMING = TimingParams()


def _profile(seed=0):
    rng = np.random.default_rng(seed)
    choices = np.array([24, 40, 64, 96, HC_NONE], dtype=np.int64)
    h = rng.choice(choices, size=(GEOM.total_banks, GEOM.rows_per_bank),
                   p=[0.3, 0.25, 0.2, 0.15, 0.1])
    h[0, 1] = 24
    return VulnerabilityProfile(GEOM, np.stack([h, h, h]),
                                np.zeros(h.shape), np.zeros(h.shape, dtype=np.int64))


def test_lookup_serves_the_bin_threshold_and_respects_the_profile():
    p = _profile()
    table = assign_bins(p, 8)
    sv = Svard(p)
    eff = p.effective_hcfirst()
    for bank in range(GEOM.total_banks):
        for row in range(GEOM.rows_per_bank):
            t = sv.lookup(bank, row)
            assert t == table.thresholds[p.bin[bank, row]]
            # a bin threshold may only understate what the row tolerates
            assert t <= eff[bank, row]


def test_requires_a_bin_assignment_and_a_known_storage_mode():
    p = _profile()
    try:
        Svard(p)
        assert False
    except ValueError as e:
        assert "bin" in str(e)
    assign_bins(p, 4)
    try:
        Svard(p, storage="sram")
        assert False
    except ValueError:
        pass


def test_controller_table_answers_without_metadata_traffic():
    p = _profile()
    assign_bins(p, 8)
    sv = Svard(p)
    for _ in range(5):
        sv.lookup(0, 3)
    assert sv.stats.lookups == 5
    assert sv.stats.metadata_fetches == 0
    assert sv.stats.metadata_bits_read == 0


def test_in_dram_metadata_fetches_each_row_once():
    p = _profile()
    assign_bins(p, 8)
    sv = Svard(p, storage="in_dram_metadata")
    for _ in range(3):
        sv.lookup(0, 5)
    sv.lookup(0, 6)
    sv.lookup(1, 5)   # same row index in another bank is a distinct fetch
    assert sv.stats.lookups == 5
    assert sv.stats.metadata_fetches == 3
    assert sv.stats.metadata_bits_read == 3 * BIN_ID_BITS


def test_table_bits_covers_every_row():
    p = _profile()
    assign_bins(p, 8)
    sv = Svard(p)
    assert sv.table_bits == GEOM.total_banks * GEOM.rows_per_bank * BIN_ID_BITS


def test_fixed_binds_a_constant_threshold():
    d = Rrs(GEOM, TIMING, seed=0)
    td = fixed(d, 64)
    assert isinstance(td, ThresholdedDefense)
    assert td.svard is None
    assert td.threshold_for(0, 0) == 64
    assert td.threshold_for(1, 63) == 64
    for bad in (0, -5):
        try:
            fixed(d, bad)
            assert False
        except ValueError:
            pass


def test_thresholded_defense_delegates_to_the_wrapped_defense():
    p = _profile()
    assign_bins(p, 8)
    sv = Svard(p)
    d = Rrs(GEOM, TIMING, seed=4)
    td = attach(d, sv)
    assert td.name == "rrs"
    assert td.svard is sv
    row = 10
    for i in range(200):
        allowed, _, _ = td.on_activation(0, row, i)
        assert allowed
    assert d.relocations > 0
    assert td.translate(0, row) == d.translate(0, row) != row
    td.epoch_reset(0)
    assert not d.used_rows and not d.tracker.counts
