"""Command-line entry point: run, calibrate, sweep, report, dump-layout, dump-gains."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .channel import compute_large_scale
from .config import ConfigError, RunConfig, SimConfig, digest, load_config
from .engine import CalibrationError, UnderRunError, calibrate_ru, run_many
from .metrics import format_table, gain_rows, pool, summarize, write_report_csv
from .scenario import ScenarioKind, build_layout, drop_ue, write_layout_csv

log = logging.getLogger("compsim")

EXIT_OK, EXIT_CONFIG, EXIT_RUN, EXIT_CALIBRATION, EXIT_PARTIAL = 0, 1, 2, 3, 4

TRANSFER_COLUMNS = ("seed", "ue_id", "arrival_tti", "completion_tti", "upt_bps",
                    "serving_cluster", "scheme")


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _provenance(sim: SimConfig, seed=None):
    lines = [f"config_digest={digest(sim)}"]
    if seed is not None:
        lines.append(f"seed={seed}")
    return lines


def transfers_csv(results, header_lines) -> str:
    out = io.StringIO()
    for line in header_lines:
        out.write(f"# {line}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TRANSFER_COLUMNS)
    for res in results:
        for ue, arr, comp, u, cl, scheme in res.transfers:
            w.writerow([res.summary.seed, ue, arr, comp, repr(float(u)), cl, scheme])
    return out.getvalue()


def read_transfers_csv(path):
    """UPT samples and seeds from a per-transfer CSV, skipping '#' header lines."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    return rows


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# calibration with an on-disk cache

def calibration_key(sim: SimConfig, target_ru: float, rc: RunConfig) -> str:
    base = cfgmod.sim_to_dict(sim.with_(scheme="baseline", lambda_per_s=0.0, log_schedule=False))
    return digest({"sim": base, "target_ru": target_ru,
                   "calibration": cfgmod.asdict(rc.calibration),
                   "seeds": list(rc.seeds[:rc.calibration.n_seeds])})


def calibrated_lambda(sim: SimConfig, target_ru: float, rc: RunConfig, out_dir) -> dict:
    """Calibration record for (sim, target); reused from disk when inputs are unchanged."""
    key = calibration_key(sim, target_ru, rc)
    path = Path(out_dir) / "calibration" / (
        f"{sim.scenario.value}_ntx{sim.n_tx}_ru{target_ru:g}_{key}.json")
    if path.exists():
        rec = json.loads(path.read_text())
        log.info("calibration cache hit: %s", path)
        rec["cached"] = True
        return rec
    seeds = rc.seeds[:rc.calibration.n_seeds]
    cal = calibrate_ru(sim, target_ru, rc.calibration.tolerance, seeds,
                       max_expansions=rc.calibration.max_expansions,
                       max_iterations=rc.calibration.max_iterations, workers=rc.workers)
    rec = {"scenario": sim.scenario.value, "n_tx": sim.n_tx, "target_ru": target_ru,
           "lambda": cal.lambda_per_s, "achieved_ru": cal.achieved_ru, "seeds": list(seeds),
           "tolerance": rc.calibration.tolerance, "history": [list(h) for h in cal.history],
           "key": key, "config_digest": digest(sim.with_(lambda_per_s=0.0))}
    atomic_write(path, _json(rec))
    rec["cached"] = False
    return rec


# ---------------------------------------------------------------------------
# commands

def _load(args) -> RunConfig:
    overrides = list(args.override or [])
    if args.scale:
        overrides.append(f"scale={args.scale}")
    if args.out:
        overrides.append(f"output_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seeds=[{args.seed}]")
    return load_config(args.config, overrides)


def cmd_run(args) -> int:
    rc = _load(args)
    sim = rc.sim
    out = Path(rc.output_dir)
    if sim.lambda_per_s <= 0:
        if rc.target_ru is None:
            raise ConfigError(["lambda_per_s: set an arrival rate or a target_ru"])
        rec = calibrated_lambda(sim, rc.target_ru, rc, out)
        sim = sim.with_(lambda_per_s=rec["lambda"])
    results = run_many(sim, rc.seeds, rc.workers)
    tag = f"{sim.scenario.value}_ntx{sim.n_tx}_{sim.scheme.value}"
    for res in results:
        s = res.summary
        s.target_ru = rc.target_ru
        atomic_write(out / f"transfers_{tag}_seed{s.seed}.csv",
                     transfers_csv([res], _provenance(sim, s.seed)))
        rec = s.record()
        rec["config_digest"] = res.config_digest
        atomic_write(out / f"summary_{tag}_seed{s.seed}.json", _json(rec))
    pooled = pool([r.summary for r in results])
    rec = pooled.record()
    rec.update(seed=None, seeds=list(rc.seeds), n_seeds=len(results), target_ru=rc.target_ru,
               config_digest=digest(sim))
    atomic_write(out / f"summary_{tag}.json", _json(rec))
    atomic_write(out / "effective_config.yaml",
                 cfgmod.yaml.safe_dump(cfgmod.run_to_dict(rc), sort_keys=True))
    print(f"{tag}: mean {pooled.mean_upt / 1e6:.2f} Mbps, edge {pooled.edge_upt / 1e6:.2f} Mbps, "
          f"RU {pooled.achieved_ru:.3f}, {pooled.n_samples} transfers")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    rc = _load(args)
    target = args.target if args.target is not None else rc.target_ru
    if target is None:
        raise ConfigError(["target_ru: required for calibration"])
    if not 0 < target <= 0.7:
        raise ConfigError([f"target_ru: must lie in (0, 0.7], got {target}"])
    rec = calibrated_lambda(rc.sim, target, rc, rc.output_dir)
    print(f"{rec['scenario']} n_tx={rec['n_tx']} target RU {target:g}: lambda "
          f"{rec['lambda']:.4g}/s, achieved RU {rec['achieved_ru']:.4f}"
          + (" (cached)" if rec["cached"] else ""))
    return EXIT_OK


def _cell_configs(rc: RunConfig, overrides):
    if not rc.sweep_cells:
        return [rc.sim]
    sims = []
    for scenario, n_tx in rc.sweep_cells:
        if scenario == rc.sim.scenario.value:
            sims.append(rc.sim.with_(n_tx=n_tx))
            continue
        raw = cfgmod.apply_overrides(cfgmod.load_preset(scenario), overrides)
        raw.update(scenario=scenario, n_tx=n_tx, scale=rc.sim.scale)
        raw.pop("sweep", None)
        sims.append(cfgmod.build_run_config(raw).sim)
    return sims


def cmd_sweep(args) -> int:
    rc = _load(args)
    out = Path(rc.output_dir)
    overrides = [o for o in (args.override or []) if not o.startswith("sweep.")]
    failures = []
    for sim in _cell_configs(rc, overrides):
        for target in rc.ru_targets:
            try:
                rec = calibrated_lambda(sim, target, rc, out)
            except (CalibrationError, UnderRunError) as e:
                failures.append(f"{sim.scenario.value} n_tx={sim.n_tx} RU {target}: {e}")
                log.error("calibration failed: %s", e)
                continue
            for scheme in rc.schemes:
                cell = sim.with_(scheme=scheme, lambda_per_s=rec["lambda"])
                name = f"{cell.scenario.value}_ntx{cell.n_tx}_ru{target:g}_{scheme}"
                try:
                    results = run_many(cell, rc.seeds, rc.workers)
                except UnderRunError as e:
                    failures.append(f"{name}: {e}")
                    log.error("run failed: %s", e)
                    continue
                header = _provenance(cell) + [f"seeds={','.join(map(str, rc.seeds))}"]
                atomic_write(out / "cells" / f"{name}.csv", transfers_csv(results, header))
                atomic_write(out / "cells" / f"{name}.json", _json({
                    "scenario": cell.scenario.value, "scheme": scheme, "n_tx": cell.n_tx,
                    "target_ru": target, "lambda": rec["lambda"], "seeds": list(rc.seeds),
                    "busy_trp_ttis": int(sum(r.summary.busy_trp_ttis for r in results)),
                    "trp_ttis": int(sum(r.summary.trp_ttis for r in results)),
                    "config_digest": digest(cell)}))
                log.info("cell %s done", name)
    text = build_report(out)
    print(text, end="")
    for f in failures:
        print(f"FAILED {f}", file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def build_report(out_dir) -> str:
    """Recompute the gain table from the per-cell CSV/JSON files in `out_dir`."""
    out = Path(out_dir)
    cells = {}
    digests = []
    for meta_path in sorted((out / "cells").glob("*.json")):
        meta = json.loads(meta_path.read_text())
        rows = read_transfers_csv(meta_path.with_suffix(".csv"))
        samples = np.array([float(r["upt_bps"]) for r in rows])
        s = summarize(samples, meta["scenario"], meta["scheme"], meta["n_tx"],
                      meta["busy_trp_ttis"], meta["trp_ttis"], target_ru=meta["target_ru"],
                      lambda_per_s=meta["lambda"], n_seeds=len(meta["seeds"]))
        cells[(meta["scenario"], meta["n_tx"], meta["target_ru"], meta["scheme"])] = s
        digests.append(f"{meta_path.stem}={meta['config_digest']}")
    if not cells:
        raise FileNotFoundError(f"no sweep cells under {out / 'cells'}")
    rows = gain_rows(cells)
    buf = io.StringIO()
    write_report_csv(rows, buf, header_lines=digests)
    atomic_write(out / "report.csv", buf.getvalue())
    table = format_table(rows)
    atomic_write(out / "report.txt", table)
    return table


def cmd_report(args) -> int:
    out = args.out or load_config(args.config, args.override or []).output_dir
    print(build_report(out), end="")
    return EXIT_OK


def cmd_dump_layout(args) -> int:
    rc = _load(args)
    sim = rc.sim
    layout = build_layout(sim.scenario, sim.scale, sim.n_tx, sim.layout)
    path = Path(rc.output_dir) / f"layout_{sim.scenario.value}_{sim.scale}.csv"
    buf = io.StringIO()
    tmp = Path(tempfile.mkdtemp()) / "layout.csv"
    write_layout_csv(layout, tmp, _provenance(sim))
    buf.write(tmp.read_text())
    tmp.unlink()
    tmp.parent.rmdir()
    atomic_write(path, buf.getvalue())
    print(path)
    return EXIT_OK


def cmd_dump_gains(args) -> int:
    """Large-scale gain table between every TRP and a few randomly dropped UEs."""
    rc = _load(args)
    sim = rc.sim
    seed = rc.seeds[0]
    layout = build_layout(sim.scenario, sim.scale, sim.n_tx, sim.layout)
    buf = io.StringIO()
    for line in _provenance(sim, seed):
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ue_id", "ue_x", "ue_y", "trp_id", "distance_m", "los", "pathloss_db",
                "shadowing_db", "antenna_gain_db", "gain_db"])
    for uid in range(args.n_ues):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, uid)))
        pos = drop_ue(sim.scenario, rng, layout.area)
        for t in layout.trps:
            ls = compute_large_scale(sim.scenario, t, pos, rng, sim.channel)
            w.writerow([uid, f"{pos[0]:.3f}", f"{pos[1]:.3f}", t.id, f"{ls.distance_m:.3f}",
                        int(ls.los), f"{ls.pathloss_db:.4f}", f"{ls.shadowing_db:.4f}",
                        f"{ls.antenna_gain_db:.4f}", f"{ls.gain_db:.4f}"])
    path = Path(rc.output_dir) / f"gains_{sim.scenario.value}_seed{seed}.csv"
    atomic_write(path, buf.getvalue())
    print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="inh4",
                        help="config file, or preset name (inh4, du4, inh30, du30)")
    common.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
    common.add_argument("--out", help="output directory")
    common.add_argument("--scale", choices=("full", "desk"))
    common.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted config key override, repeatable (e.g. engine.measure_ttis=5000)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="compsim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate one scheme over the seeds"
                   ).set_defaults(func=cmd_run)
    c = sub.add_parser("calibrate", parents=[common], help="find the arrival rate for a target RU")
    c.add_argument("--target", type=float)
    c.set_defaults(func=cmd_calibrate)
    sub.add_parser("sweep", parents=[common], help="schemes x RU targets gain table"
                   ).set_defaults(func=cmd_sweep)
    sub.add_parser("report", parents=[common], help="rebuild the gain table from sweep outputs"
                   ).set_defaults(func=cmd_report)
    sub.add_parser("dump-layout", parents=[common], help="write TRP layout CSV"
                   ).set_defaults(func=cmd_dump_layout)
    g = sub.add_parser("dump-gains", parents=[common], help="write per-link large-scale gains CSV")
    g.add_argument("--n-ues", type=int, default=20)
    g.set_defaults(func=cmd_dump_gains)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print("configuration error:", file=sys.stderr)
        for p in e.problems:
            print(f"  {p}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (UnderRunError, FileNotFoundError) as e:
        print(f"run failed: {e}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
