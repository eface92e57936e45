"""Disturbance bookkeeping: neighbor counters, on-time buckets, flip checks."""

import numpy as np

from rowsim.device import DeviceGeometry
from rowsim.oracle import (DATA_PATTERNS, HC_NONE, TAGGON_BUCKETS_NS,
                           DisturbanceState, FlipRecord, taggon_bucket,
                           write_flip_log)
from rowsim.profile import VulnerabilityProfile


def test_taggon_bucket_edges():
    assert taggon_bucket(1.0) == 0
    assert taggon_bucket(36.0) == 0
    assert taggon_bucket(36.001) == 1
    assert taggon_bucket(500.0) == 1
    assert taggon_bucket(500.5) == 2
    assert taggon_bucket(2000.0) == 2
    assert taggon_bucket(1e9) == 2
    assert TAGGON_BUCKETS_NS == (36.0, 500.0, 2000.0)


def test_data_patterns_cover_both_phases():
    names = [p.name for p in DATA_PATTERNS]
    assert names == ["RS", "RSI", "CS", "CSI", "CB", "CBI"]
    for p in DATA_PATTERNS:
        assert 0 <= p.aggressor_byte <= 0xFF
        assert 0 <= p.victim_byte <= 0xFF


def _geom(rows=64, banks=2):
    return DeviceGeometry.desk_scale(banks=banks, rows_per_bank=rows)


def _profile_with(geometry, hc_value):
    """Uniform threshold across all rows and buckets."""
    banks, rows = geometry.total_banks, geometry.rows_per_bank
    hc = np.full((3, banks, rows), hc_value, dtype=np.int64)
    ber = np.zeros((banks, rows))
    wcdp = np.zeros((banks, rows), dtype=np.int8)
    return VulnerabilityProfile(geometry, hc, ber, wcdp)


def test_activation_credits_both_neighbors():
    state = DisturbanceState(_geom())
    state.record_activation(0, 10)
    assert state.effective_hammers(0, 9) == 1
    assert state.effective_hammers(0, 11) == 1
    assert state.effective_hammers(0, 10) == 0
    assert state.effective_hammers(1, 9) == 0


def test_edge_rows_have_one_neighbor_and_no_wraparound():
    state = DisturbanceState(_geom(rows=64))
    state.record_activation(0, 0)
    state.record_activation(0, 63)
    assert state.effective_hammers(0, 1) == 1
    assert state.effective_hammers(0, 62) == 1
    assert state.effective_hammers(0, 63) == 0
    assert state.effective_hammers(0, 0) == 0


def test_alternating_double_sided_counts_once_per_pair():
    # N activations of each aggressor give the victim an effective count of
    # N, not 2N; a single-sided stream of N also gives N
    state = DisturbanceState(_geom())
    for _ in range(50):
        state.record_activation(0, 9)
        state.record_activation(0, 11)
    assert state.effective_hammers(0, 10) == 50

    single = DisturbanceState(_geom())
    single.record_activation(0, 9, count=50)
    assert single.effective_hammers(0, 10) == 50


def test_unbalanced_sides_take_the_larger():
    state = DisturbanceState(_geom())
    state.record_activation(0, 9, count=30)
    state.record_activation(0, 11, count=7)
    assert state.effective_hammers(0, 10) == 30


def test_bucket_is_sticky_until_refresh():
    state = DisturbanceState(_geom())
    state.record_activation(0, 9, on_time_ns=36.0)
    assert state.observed_bucket(0, 10) == 0
    state.record_activation(0, 9, on_time_ns=2000.0)
    assert state.observed_bucket(0, 10) == 2
    state.record_activation(0, 9, on_time_ns=36.0)
    assert state.observed_bucket(0, 10) == 2
    state.refresh_row(0, 10)
    assert state.observed_bucket(0, 10) == 0
    assert state.effective_hammers(0, 10) == 0


def test_update_on_time_only_upgrades():
    state = DisturbanceState(_geom())
    state.record_activation(0, 9, on_time_ns=600.0)
    assert state.observed_bucket(0, 10) == 2
    state.update_on_time(0, 9, 36.0)
    assert state.observed_bucket(0, 10) == 2
    state.update_on_time(0, 9, 2000.0)
    assert state.observed_bucket(0, 8) == 2


def test_zero_or_negative_count_is_a_no_op():
    state = DisturbanceState(_geom())
    state.record_activation(0, 9, count=0)
    state.record_activation(0, 9, count=-3)
    assert state.effective_hammers(0, 10) == 0
    assert state.total_recorded == 0


def test_check_flip_uses_observed_bucket_threshold():
    g = _geom()
    profile = _profile_with(g, 100)
    profile.hcfirst[2][:, :] = 60
    state = DisturbanceState(g)
    state.record_activation(0, 9, count=70)
    assert not state.check_flip(profile, 0, 10)  # bucket 0 threshold is 100
    state.record_activation(0, 9, on_time_ns=2000.0)
    assert state.check_flip(profile, 0, 10)       # 71 >= 60 at bucket 2


def test_sentinel_threshold_never_flips():
    g = _geom()
    profile = _profile_with(g, HC_NONE)
    state = DisturbanceState(g)
    state.record_activation(0, 9, count=10**9)
    assert not state.check_flip(profile, 0, 10)


def test_total_recorded_audits_every_activation():
    state = DisturbanceState(_geom())
    state.record_activation(0, 9, count=5)
    state.record_activation(0, 0, count=2)    # edge row still counts
    state.record_activation(1, 20)
    assert state.total_recorded == 8
    state.reset()
    assert state.total_recorded == 0
    assert state.effective_hammers(0, 10) == 0


def test_write_flip_log_schema(tmp_path):
    path = tmp_path / "flips.csv"
    write_flip_log(path, [FlipRecord(123, 0, 10, 64, 2, 60)])
    lines = path.read_text().splitlines()
    assert lines[0] == "cycle,bank,row,effective_hammers,bucket,hcfirst"
    assert lines[1] == "123,0,10,64,2,60"
