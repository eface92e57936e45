"""Read-disturbance simulation and analysis toolkit.

Models a DRAM device at command granularity, generates per-row vulnerability
profiles from published module families, verifies defenses against a
built-in bitflip oracle, and analyzes spatial structure in the profiles.
"""

from .device import (DeviceGeometry, TimingParams, DramDevice, Command,
                     Activation, AggressorOnTime, TimingViolation, ProtocolError)
from .oracle import (HC_NONE, TAGGON_BUCKETS_NS, DATA_PATTERNS, taggon_bucket,
                     DataPattern, DisturbanceState, FlipRecord, write_flip_log)
from .profile import (K, HAMMER_GRID, BER_SWEEP_GRID, WCDP_HAMMERS,
                      ProfileTemplate, TEMPLATES, VulnerabilityProfile,
                      generate_profile, scale_profile, BinTable, assign_bins,
                      profile_stats, save_profile, load_profile, snap_to_grid)
from .characterize import (HammerTestConfig, hammer_doublesided, measure_ber,
                           find_wcdp, find_hcfirst, CharacterizationDataset,
                           test_loop, save_characterization)
from .defenses import (Defense, Para, BlockHammer, Hydra, Rrs, Aqua,
                       build_defense, RefreshRows, ThrottleRow, SwapRows,
                       MigrateRow, CostEvent)
from .svard import Svard, ThresholdedDefense, attach, fixed
from .sim import (CoreTrace, SimConfig, SimReport, run, gen_trace, gen_benign,
                  gen_attack_doublesided, gen_hydra_adversarial,
                  gen_rrs_adversarial, weighted_speedup, harmonic_speedup,
                  max_slowdown)
from .analysis import (SubarrayLayout, single_sided_scan, recover_boundaries,
                       rowclone_validate, reverse_engineer, hc_classes,
                       spatial_features, feature_f1, analyze_features,
                       FeatureScore)

__version__ = "0.1.0"
