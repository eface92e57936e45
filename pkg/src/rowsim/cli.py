"""Command line front end.

Subcommands:
  profile       generate a vulnerability profile from a named template
  characterize  run the hammer-test loop against a stored profile
  simulate      trace-driven run with a chosen defense and threshold mode
  analyze       subarray recovery and spatial-feature correlation
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys

from . import analysis, defenses, profile as prof, sim, svard
from .characterize import HammerTestConfig, save_characterization, test_loop
from .device import DeviceGeometry, DramDevice, TimingParams
from .oracle import write_flip_log


def _load_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _geometry_from(cfg: dict, rows_override=None) -> DeviceGeometry:
    g = dict(cfg.get("geometry", {}))
    if rows_override:
        g["rows_per_bank"] = rows_override
    return DeviceGeometry(**g)


def _timing_from(cfg: dict) -> TimingParams:
    t = cfg.get("timing", {})
    return TimingParams(**t)


# config keys for defense parameters, mapped to constructor arguments
_DEFENSE_PARAM_KEYS = {
    "cbf_counters": "counters",
    "cbf_hashes": "hashes",
    "group_size": "group_size",
    "rcc_entries": "rcc_entries",
    "tracker_entries": "tracker_entries",
    "quarantine_fraction": "quarantine_fraction",
    "target_failure_prob": "target_failure_prob",
}


def _defense_params(cfg: dict) -> dict:
    block = cfg.get("defense", {})
    out = {}
    for key, arg in _DEFENSE_PARAM_KEYS.items():
        if key in block:
            out[arg] = block[key]
    return out


def _ensure_parent(path):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)


def _cmd_profile(args) -> int:
    cfg = _load_config(args.config)
    geometry = _geometry_from(cfg, args.rows_per_bank)
    template = prof.TEMPLATES[args.template]
    p = prof.generate_profile(template, geometry, seed=args.seed)
    if args.hcfirst_scale:
        p = prof.scale_profile(p, args.hcfirst_scale)
    prof.assign_bins(p, args.bins)
    _ensure_parent(args.out)
    prof.save_profile(p, args.out)
    stats = prof.profile_stats(p)
    print(f"wrote {args.out}: template {args.template}, "
          f"CV {stats.hcfirst_cv:.1f}%, "
          f"never-flip fraction {stats.nonflip_fraction:.3f}")
    return 0


def _cmd_characterize(args) -> int:
    cfg = _load_config(args.config)
    p = prof.load_profile(args.profile)
    device = DramDevice(p.geometry, _timing_from(cfg))
    config = HammerTestConfig(iterations=args.iterations,
                              banks_under_test=args.banks)
    dataset = test_loop(p, config, device)
    _ensure_parent(args.out)
    if args.sweep_out:
        _ensure_parent(args.sweep_out)
    save_characterization(dataset, args.out, args.sweep_out)
    tested = dataset.wcdp >= 0
    import numpy as np
    match = np.sum((dataset.hcfirst[0] == p.hcfirst[0]) & tested)
    print(f"wrote {args.out}: {int(tested.sum())} rows tested, "
          f"{int(match)} match stored thresholds at minimum on-time")
    return 0


def _build_thresholded(p, args, cfg, timing):
    params = _defense_params(cfg)
    defense = defenses.build_defense(
        args.defense, p.geometry, timing, seed=args.seed,
        baseline_threshold=p.baseline_threshold, **params)
    if args.svard == "off":
        return svard.fixed(defense, p.baseline_threshold)
    if p.bin_table is None:
        prof.assign_bins(p, args.bins)
    storage = "controller_table" if args.svard == "table" else "in_dram_metadata"
    return svard.attach(defense, svard.Svard(p, storage=storage))


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    p = prof.load_profile(args.profile)
    timing = _timing_from(cfg) if "timing" in cfg else TimingParams.desk_scale()
    if args.hcfirst_scale:
        p = prof.scale_profile(p, args.hcfirst_scale)
        prof.assign_bins(p, args.bins)

    wl = cfg.get("workload", {})
    kind = args.workload or wl.get("kind", "benign")
    cores = wl.get("cores", 8) if kind == "benign" else 1
    n = args.requests or wl.get("requests", 20000)
    rng = random.Random(args.seed)
    geometry = p.geometry
    traces = []
    if kind == "benign":
        for core in range(cores):
            traces.append(sim.gen_benign(geometry, rng, n, core_id=core))
    elif kind == "attack_doublesided":
        victim = wl.get("victim_row", geometry.rows_per_bank // 2)
        traces.append(sim.gen_attack_doublesided(
            geometry, wl.get("victim_bank", 0), victim, n // 2))
    elif kind == "hydra_adversarial":
        traces.append(sim.gen_hydra_adversarial(
            geometry, rng, n, tracked_rows=2 * cfg.get(
                "defense", {}).get("rcc_entries", 4096)))
    elif kind == "rrs_adversarial":
        traces.append(sim.gen_rrs_adversarial(
            geometry, rng, n, bank=0,
            target_row=wl.get("target_row", geometry.rows_per_bank // 2)))
    else:
        print(f"unknown workload kind {kind!r}", file=sys.stderr)
        return 2

    sim_block = dict(cfg.get("sim", {}))
    if kind != "benign":
        # hammer loops are dependency-serialized; a wider window would let the
        # scheduler merge the pattern into row hits
        sim_block.setdefault("outstanding", 1)
    sim_cfg = sim.SimConfig(timing=timing, **sim_block)
    thresholded = None
    if args.defense and args.defense != "none":
        thresholded = _build_thresholded(p, args, cfg, timing)
    report = sim.run(p, traces, thresholded, sim_cfg, seed=args.seed)

    if args.metrics:
        alone = []
        for tr in traces:
            solo = sim.run(p, [sim.CoreTrace(0, tr.requests, tr.kind)],
                           None, sim_cfg, seed=args.seed)
            alone.append(solo.core_cycles[0])
        report.attach_metrics(alone)

    _ensure_parent(args.out)
    report.to_json(args.out)
    if args.flip_log:
        _ensure_parent(args.flip_log)
        write_flip_log(args.flip_log, report.flips)
    if args.summary_csv:
        _ensure_parent(args.summary_csv)
        new = not os.path.exists(args.summary_csv)
        with open(args.summary_csv, "a") as f:
            if new:
                f.write("defense,svard,template,hcfirst_scale,seed,cycles,"
                        "acts_total,preventive,flips,weighted_speedup\n")
            preventive = sum(report.preventive_counts.values())
            ws = ("" if report.weighted_speedup is None
                  else f"{report.weighted_speedup:.4f}")
            f.write(f"{report.defense},{args.svard},{p.template},"
                    f"{args.hcfirst_scale or ''},{args.seed},{report.cycles},"
                    f"{report.acts_total},{preventive},{len(report.flips)},{ws}\n")
    print(f"wrote {args.out}: {report.requests_done} requests, "
          f"{report.acts_total} activations, {len(report.flips)} bitflips")
    return 0 if not report.flips else 1


def _cmd_analyze(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    manifest = {"dataset": args.dataset, "outputs": {},
                "parameters": {"klo": args.klo, "khi": args.khi,
                               "f1_threshold": args.f1_threshold,
                               "seed": args.seed}}
    profile_csv = os.path.join(args.dataset, "profile.csv")
    layout_json = os.path.join(args.dataset, "layout.json")
    rng = random.Random(args.seed)

    p = prof.load_profile(profile_csv) if os.path.exists(profile_csv) else None
    layout = None
    if os.path.exists(layout_json) and p is not None:
        with open(layout_json) as f:
            layout = analysis.SubarrayLayout(p.geometry, json.load(f)["starts"])

    if layout is not None:
        scan = analysis.single_sided_scan(layout)
        bounds, curves = analysis.reverse_engineer(
            scan, layout, rng, klo=args.klo, khi=args.khi)
        bpath = os.path.join(args.out, "boundaries.csv")
        spath = os.path.join(args.out, "silhouette.csv")
        analysis.write_boundary_report(bpath, bounds)
        analysis.write_silhouette_report(spath, curves)
        manifest["outputs"]["boundaries"] = "boundaries.csv"
        manifest["outputs"]["silhouette"] = "silhouette.csv"

    if p is not None:
        scores = analysis.analyze_features(p, layout, threshold=args.f1_threshold)
        fpath = os.path.join(args.out, "features.csv")
        analysis.write_feature_report(fpath, scores)
        manifest["outputs"]["features"] = "features.csv"

    with open(os.path.join(args.out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"wrote {args.out}/manifest.json "
          f"({len(manifest['outputs'])} output files)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rowsim",
                                 description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p1 = sub.add_parser("profile", help="generate a vulnerability profile")
    p1.add_argument("--config", default=None)
    p1.add_argument("--template", choices=sorted(prof.TEMPLATES), required=True)
    p1.add_argument("--seed", type=int, default=0)
    p1.add_argument("--rows-per-bank", type=int, default=None)
    p1.add_argument("--bins", type=int, default=8)
    p1.add_argument("--hcfirst-scale", type=int, default=None)
    p1.add_argument("--out", required=True)
    p1.set_defaults(func=_cmd_profile)

    p2 = sub.add_parser("characterize", help="hammer-test a profiled device")
    p2.add_argument("--config", default=None)
    p2.add_argument("--profile", required=True)
    p2.add_argument("--iterations", type=int, default=1)
    p2.add_argument("--banks", type=int, nargs="*", default=None)
    p2.add_argument("--out", required=True)
    p2.add_argument("--sweep-out", default=None)
    p2.set_defaults(func=_cmd_characterize)

    p3 = sub.add_parser("simulate", help="run traces under a defense")
    p3.add_argument("--config", default=None)
    p3.add_argument("--profile", required=True)
    p3.add_argument("--defense", default="none",
                    choices=["none", "para", "blockhammer", "hydra", "rrs", "aqua"])
    p3.add_argument("--svard", choices=["off", "table", "indram"], default="off")
    p3.add_argument("--hcfirst-scale", type=int, default=None)
    p3.add_argument("--bins", type=int, default=8)
    p3.add_argument("--seed", type=int, default=0)
    p3.add_argument("--workload", default=None)
    p3.add_argument("--requests", type=int, default=None)
    p3.add_argument("--metrics", action="store_true",
                    help="also run each trace solo and attach speedup metrics")
    p3.add_argument("--out", required=True)
    p3.add_argument("--flip-log", default=None)
    p3.add_argument("--summary-csv", default=None)
    p3.set_defaults(func=_cmd_simulate)

    p4 = sub.add_parser("analyze", help="subarray recovery and F1 analysis")
    p4.add_argument("--dataset", required=True)
    p4.add_argument("--klo", type=int, default=2)
    p4.add_argument("--khi", type=int, default=24)
    p4.add_argument("--f1-threshold", type=float, default=0.7)
    p4.add_argument("--seed", type=int, default=0)
    p4.add_argument("--out", default="analysis_out")
    p4.set_defaults(func=_cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
