"""Command-line interface: ``glonet {train,generate,benchmark,refine,analyze,validate}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, config as configmod, network, records
from .adjoint import efficiency
from .baselines import boundary_optimize
from .config import ConfigError, RunConfig
from .rcwa import OperatingCondition
from .trainer import TrainingError, generate_ensemble, train

log = logging.getLogger("glonet")


class CliError(Exception):
    pass


def _load_config(args) -> RunConfig:
    cfg = configmod.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = dataclasses.replace(cfg, training=dataclasses.replace(cfg.training, threads=args.threads))
    if args.out is not None:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _threads(cfg: RunConfig) -> int:
    return cfg.training.threads


def cmd_train(cfg: RunConfig, args) -> int:
    out = _out_dir(cfg)
    (out / "config.json").write_text(cfg.dumps())

    def report(state, record):
        if record.iteration == 1 or record.iteration % 25 == 0:
            log.info("iter %d  mean eff %.4f  max eff %.4f  mean|n| %.3f",
                     record.iteration, record.mean_eff, record.max_eff, record.mean_abs_n)

    params, history, table = train(cfg.training, cfg.network, cfg.solver, out_dir=out, callback=report)
    header = cfg.header()
    history.write_csv(out / "history.csv", header)
    history.write_timing(out / "timing.csv", header)
    table.save_csv(out / "effmax.csv", header)
    print(f"trained {len(history)} iterations; checkpoint {out / 'checkpoint.npz'}")
    return 0


def _in_training_range(cfg: RunConfig, cond: OperatingCondition) -> bool:
    lo, hi = cfg.training.wavelength_range
    alo, ahi = cfg.training.angle_range
    return lo <= cond.wavelength <= hi and alo <= cond.angle <= ahi


def cmd_generate(cfg: RunConfig, args) -> int:
    params = network.load_checkpoint(args.checkpoint)
    cond = OperatingCondition(args.wavelength, args.angle)
    extrapolated = not _in_training_range(cfg, cond)
    if extrapolated:
        log.warning("(%g nm, %g deg) lies outside the trained range; results are extrapolated", cond.wavelength, cond.angle)
    rng = np.random.default_rng(cfg.seed)
    ens = generate_ensemble(params, cond, args.count, rng, cfg.solver)
    recs = [
        records.DeviceRecord(f"glonet_{k:04d}", d, cond.wavelength, cond.angle, float(e), "glonet", cfg.seed,
                             checkpoint=str(args.checkpoint), config_hash=cfg.hash(), extrapolated=extrapolated)
        for k, (d, e) in enumerate(zip(ens.devices, ens.efficiencies))
    ]
    lib = records.write_library(_out_dir(cfg) / "library", recs, cfg.header())
    if recs:
        print(f"generated {len(recs)} devices at ({cond.wavelength:g} nm, {cond.angle:g} deg); "
              f"best efficiency {ens.efficiencies[0]:.4f}; library {lib}")
    else:
        print(f"generated 0 devices; library {lib}")
    return 0


def cmd_benchmark(cfg: RunConfig, args) -> int:
    spec = cfg.benchmark
    wavelengths, angles = spec.wavelengths, spec.angles
    if args.full_grid:
        log.warning("full grid: %d cells x %d devices; this takes a long time",
                    len(analysis.FULL_WAVELENGTHS) * len(analysis.FULL_ANGLES), args.count or spec.count)
        wavelengths, angles = analysis.FULL_WAVELENGTHS, analysis.FULL_ANGLES
    count = args.count or spec.count
    grid = analysis.run_benchmark(
        args.method, wavelengths, angles, count, topo=cfg.topology, settings=cfg.solver,
        checkpoint=args.checkpoint, seed=cfg.seed, refine_iterations=spec.refine_iterations,
        segments=cfg.network.segments, threads=_threads(cfg),
    )
    out = _out_dir(cfg)
    header = cfg.header()
    grid.write_csv(out / "grid.csv", header)
    provenance = "baseline" if args.method == "baseline" else ("glonet" if args.method == "glonet" else "boundary-refined")
    recs = [
        records.DeviceRecord(grid.device_ids[i][j], grid.devices[i, j], c.wavelength, c.angle, float(grid.best_eff[i, j]),
                             provenance, cfg.seed, checkpoint=None if args.checkpoint is None else str(args.checkpoint),
                             config_hash=cfg.hash())
        for i, j, c in grid.cells()
    ]
    records.write_library(out / "library", recs, header)
    print(f"{args.method}: {grid.best_eff.size} cells, mean best efficiency {grid.best_eff.mean():.4f}; {out / 'grid.csv'}")
    return 0


def cmd_refine(cfg: RunConfig, args) -> int:
    path = Path(args.device)
    device = records.read_device(path)
    bad = np.flatnonzero(np.abs(device) != 1.0)
    if bad.size:
        raise CliError(f"{path}: component {bad[0]} = {device[bad[0]]!r} is not binary (+-1)")
    wavelength, angle = args.wavelength, args.angle
    if path.suffix == ".json" and (wavelength is None or angle is None):
        rec = records.read_record(path)
        wavelength = rec.wavelength if wavelength is None else wavelength
        angle = rec.angle if angle is None else angle
    if wavelength is None or angle is None:
        raise CliError("--wavelength and --angle are required for a plain device file")
    cond = OperatingCondition(wavelength, angle)
    before = efficiency(device, cond, cfg.solver)
    refined = boundary_optimize(device, cond, args.iterations, cfg.solver)
    after = efficiency(refined, cond, cfg.solver)
    rec = records.DeviceRecord(f"refined_{path.stem}", refined, wavelength, angle, after, "boundary-refined", cfg.seed,
                               config_hash=cfg.hash())
    records.write_library(_out_dir(cfg) / "refined", [rec], cfg.header())
    print(f"efficiency {before:.4f} -> {after:.4f} (gain {after - before:+.4f})")
    return 0


def _read_grid(path) -> analysis.BenchmarkGrid:
    rows = [line.split(",") for line in Path(path).read_text().splitlines()
            if line and not line.startswith("#") and not line.startswith("lambda_nm")]
    lam = sorted({float(r[0]) for r in rows})
    ang = sorted({float(r[1]) for r in rows})
    eff = np.full((len(lam), len(ang)), np.nan)
    ids = [["" for _ in ang] for _ in lam]
    for r in rows:
        i, j = lam.index(float(r[0])), ang.index(float(r[1]))
        eff[i, j] = float(r[2])
        ids[i][j] = r[3]
    if np.isnan(eff).any():
        raise CliError(f"{path}: grid is incomplete")
    return analysis.BenchmarkGrid("file", np.array(lam), np.array(ang), eff, np.ones(eff.shape, int), ids,
                                  np.zeros(eff.shape + (0,)))


def cmd_analyze(cfg: RunConfig, args) -> int:
    if not (args.compare or args.library or args.basis):
        raise CliError("analyze needs at least one of --compare, --library or --basis")
    out = _out_dir(cfg)
    header = cfg.header()
    if args.compare:
        a, b = (_read_grid(p) for p in args.compare)
        cmp = analysis.compare_grids(a, b)
        print(f"cells where second >= first: {cmp.higher_fraction:.3f}; "
              f"within {cmp.tolerance:g}: {cmp.within_fraction:.3f}; mean delta {cmp.deltas.mean():+.4f}")
    if args.library:
        effs = [r.efficiency for lib in args.library for r in records.read_library(lib)]
        hist = analysis.efficiency_histogram(effs, cfg.benchmark.bin_width)
        hist.write_csv(out / "hist.csv", header)
        best = "n/a" if hist.max_efficiency is None else f"{hist.max_efficiency:.4f}"
        print(f"histogram of {len(effs)} devices; max efficiency {best}; {out / 'hist.csv'}")
    if args.basis:
        basis = records.read_library(args.basis)
        model = analysis.pca_fit(np.stack([r.device for r in basis]))
        rows = [(r.device_id, *analysis.pca_project(model, r.device), r.efficiency, -1) for r in basis]
        if args.checkpoint:
            if args.wavelength is None or args.angle is None:
                raise CliError("--wavelength and --angle are required to project checkpoints")
            cond = OperatingCondition(args.wavelength, args.angle)
            for ck in args.checkpoint:
                iteration = network.checkpoint_meta(ck).get("extra", {}).get("iteration", -1)
                ens = generate_ensemble(network.load_checkpoint(ck), cond, args.count,
                                        np.random.default_rng(cfg.seed), cfg.solver)
                xy = analysis.pca_project(model, ens.devices)
                for k in range(len(ens.devices)):
                    rows.append((f"it{iteration}_{k:04d}", xy[k, 0], xy[k, 1], ens.efficiencies[k], iteration))
                print(f"iteration {iteration}: mean efficiency {ens.efficiencies.mean():.4f}, "
                      f"scatter variance {analysis.scatter_variance(xy):.4f}")
        analysis.write_pca_csv(out / "pca.csv", rows, header)
        print(f"PCA basis from {len(basis)} devices; variances {model.variances[0]:.3f}, {model.variances[1]:.3f}")
    return 0


def cmd_validate(cfg: RunConfig, args) -> int:
    from .oracles import run_battery

    results = run_battery(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="worker threads for simulations (1 = deterministic)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="glonet", description="Conditional GLOnet metagrating optimizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train the conditional generator")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="sample devices from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--wavelength", type=float, required=True)
    p.add_argument("--angle", type=float, required=True)
    p.add_argument("--count", type=int, default=500)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("benchmark", parents=[common], help="best-of-K efficiency over a wavelength/angle grid")
    p.add_argument("--method", choices=analysis.METHODS, default="baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--count", type=int)
    p.add_argument("--full-grid", action="store_true", help="15 x 9 grid instead of the configured one")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("refine", parents=[common], help="boundary-refine one binary device")
    p.add_argument("--device", required=True, help="device record JSON or text file of +-1 values")
    p.add_argument("--wavelength", type=float)
    p.add_argument("--angle", type=float)
    p.add_argument("--iterations", type=int, default=10)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("analyze", parents=[common], help="histograms, PCA projections and grid comparisons")
    p.add_argument("--library", action="append", help="device library directory (repeatable)")
    p.add_argument("--basis", help="device library used to fit the PCA basis")
    p.add_argument("--checkpoint", action="append", help="generator checkpoint to project (repeatable)")
    p.add_argument("--wavelength", type=float)
    p.add_argument("--angle", type=float)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--compare", nargs=2, metavar=("GRID_A", "GRID_B"))
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", parents=[common], help="run the physics and gradient oracle battery")
    p.add_argument("--quick", action="store_true", help="fewer energy-conservation samples")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        return args.func(cfg, args)
    except (ConfigError, CliError, network.CheckpointError, FileNotFoundError, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
