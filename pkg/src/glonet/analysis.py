"""Benchmark grids, method comparison, PCA of device sets and efficiency histograms."""

from __future__ import annotations

import dataclasses
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import network
from .adjoint import efficiency
from .baselines import TopoOptConfig, boundary_optimize, random_grayscale_init, topology_optimize
from .rcwa import OperatingCondition, RcwaSettings
from .trainer import generate_ensemble

log = logging.getLogger(__name__)

METHODS = ("baseline", "glonet", "glonet+boundary")
DESK_WAVELENGTHS = (700.0, 900.0, 1100.0)
DESK_ANGLES = (50.0, 60.0, 70.0)
FULL_WAVELENGTHS = tuple(float(v) for v in range(600, 1301, 50))
FULL_ANGLES = tuple(float(v) for v in range(40, 81, 5))


# -- benchmark grid -------------------------------------------------------------------


@dataclasses.dataclass
class BenchmarkGrid:
    """Per-cell best device over ``counts[i, j]`` attempts at (wavelengths[i], angles[j])."""

    method: str
    wavelengths: np.ndarray
    angles: np.ndarray
    best_eff: np.ndarray
    counts: np.ndarray
    device_ids: list[list[str]]
    devices: np.ndarray  # (L, A, N) best device per cell

    def __post_init__(self):
        shape = (len(self.wavelengths), len(self.angles))
        if self.best_eff.shape != shape or self.counts.shape != shape:
            raise ValueError(f"grid arrays must have shape {shape}")
        if np.any(self.best_eff < 0) or np.any(self.best_eff > 1):
            raise ValueError("cell efficiencies must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.best_eff.shape

    def cells(self):
        for i, lam in enumerate(self.wavelengths):
            for j, theta in enumerate(self.angles):
                yield i, j, OperatingCondition(float(lam), float(theta))

    def write_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            fh.write("lambda_nm,theta_deg,best_eff,device_id\n")
            for i, j, cond in self.cells():
                fh.write(f"{float(cond.wavelength)!r},{float(cond.angle)!r},{float(self.best_eff[i, j])!r},{self.device_ids[i][j]}\n")


def _cell_glonet(params, condition, count, rng, settings, refine_iterations):
    ens = generate_ensemble(params, condition, count, rng, settings)
    if refine_iterations is None or count == 0:
        return float(ens.efficiencies[0]), ens.devices[0]
    best_eff, best = -1.0, None
    for device in ens.devices:
        refined = boundary_optimize(device, condition, refine_iterations, settings)
        eff = efficiency(refined, condition, settings)
        if eff > best_eff:
            best_eff, best = eff, refined
    return best_eff, best


def run_benchmark(method: str, wavelengths: Sequence[float] = DESK_WAVELENGTHS, angles: Sequence[float] = DESK_ANGLES,
                  count: int = 20, *, topo: TopoOptConfig = TopoOptConfig(), settings: RcwaSettings = RcwaSettings(),
                  checkpoint=None, params: network.GeneratorParameters | None = None, seed: int = 0,
                  refine_iterations: int = 10, segments: int = 256, threads: int = 1) -> BenchmarkGrid:
    """Best-of-``count`` efficiency for every (wavelength, angle) cell.

    ``baseline`` runs independent topology optimizations from random grayscale
    starts. ``glonet`` samples the generator; ``glonet+boundary`` additionally
    boundary-refines every sample. The glonet methods need ``params`` or a
    loadable ``checkpoint``, which is checked before any simulation. Every cell
    draws from its own seed stream, so results do not depend on ``threads``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if method != "baseline" and params is None:
        if checkpoint is None:
            raise FileNotFoundError(f"method {method!r} needs a trained checkpoint")
        path = Path(checkpoint)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        params = network.load_checkpoint(path)
    if params is not None:
        segments = params.architecture.segments

    lam = np.asarray(wavelengths, dtype=float)
    ang = np.asarray(angles, dtype=float)
    if len(lam) * len(ang) > 50 and count > 100:
        warnings.warn(f"benchmark of {len(lam) * len(ang)} cells x {count} devices will take many hours", stacklevel=2)
    streams = np.random.SeedSequence(seed).spawn(len(lam) * len(ang))
    jobs = [(i, j, OperatingCondition(float(lam[i]), float(ang[j]))) for i in range(len(lam)) for j in range(len(ang))]

    def run(job):
        i, j, cond = job
        rng = np.random.default_rng(streams[i * len(ang) + j])
        if method == "baseline":
            best_eff, best = -1.0, None
            for _ in range(count):
                trace = topology_optimize(random_grayscale_init(rng, segments), cond, topo, settings)
                if trace.best_binary_efficiency > best_eff:
                    best_eff, best = trace.best_binary_efficiency, trace.best_binary
            return best_eff, best
        refine = refine_iterations if method == "glonet+boundary" else None
        return _cell_glonet(params, cond, count, rng, settings, refine)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    best_eff = np.zeros((len(lam), len(ang)))
    devices = np.zeros((len(lam), len(ang), segments))
    ids = [["" for _ in ang] for _ in lam]
    for (i, j, cond), (eff, device) in zip(jobs, results):
        best_eff[i, j] = eff
        devices[i, j] = device
        ids[i][j] = f"{method}_{cond.wavelength:g}_{cond.angle:g}"
        log.info("%s cell (%g nm, %g deg): best %.4f", method, cond.wavelength, cond.angle, eff)
    return BenchmarkGrid(method, lam, ang, best_eff, np.full((len(lam), len(ang)), count), ids, devices)


@dataclasses.dataclass(frozen=True)
class GridComparison:
    higher_fraction: float  # cells where b >= a
    within_fraction: float  # cells where b >= a - tolerance
    deltas: np.ndarray  # b - a per cell
    tolerance: float = 0.05


def compare_grids(a: BenchmarkGrid, b: BenchmarkGrid, tolerance: float = 0.05) -> GridComparison:
    if a.shape != b.shape:
        raise ValueError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if not (np.allclose(a.wavelengths, b.wavelengths) and np.allclose(a.angles, b.angles)):
        raise ValueError("grids cover different conditions")
    deltas = b.best_eff - a.best_eff
    return GridComparison(float(np.mean(deltas >= 0)), float(np.mean(deltas >= -tolerance)), deltas, tolerance)


# -- PCA ------------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    axes: np.ndarray  # (2, N), orthonormal rows
    variances: np.ndarray  # (2,), descending


def pca_fit(devices) -> PcaModel:
    """Top two principal axes of a device set via SVD of the centered data."""
    x = np.asarray(devices, dtype=float)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("pca_fit needs at least 3 devices as a 2D array")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(x).max()):
        raise ValueError("device set has zero variance")
    axes = vt[:2].copy()
    if axes.shape[0] < 2:
        raise ValueError("need at least two components")
    for k in range(2):
        lead = np.flatnonzero(np.abs(axes[k]) > 1e-12)
        if lead.size and axes[k, lead[0]] < 0:
            axes[k] = -axes[k]
    variances = s[:2] ** 2 / (x.shape[0] - 1)
    return PcaModel(mean, axes, variances)


def pca_project(model: PcaModel, devices) -> np.ndarray:
    """(x, y) coordinates of one device, or an (K, 2) array for a stack."""
    d = np.asarray(devices, dtype=float)
    if d.shape[-1] != model.mean.size:
        raise ValueError(f"device length {d.shape[-1]} does not match model length {model.mean.size}")
    return (d - model.mean) @ model.axes.T


def scatter_variance(points) -> float:
    """Total variance (trace of the covariance) of a 2D point cloud."""
    p = np.asarray(points, dtype=float)
    return float(np.var(p, axis=0, ddof=1).sum()) if len(p) > 1 else 0.0


# -- histograms -----------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    max_efficiency: float | None
    mean_efficiency: float | None

    def write_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            fh.write("bin_lo,bin_hi,count\n")
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                fh.write(f"{lo:.6g},{hi:.6g},{int(c)}\n")


def efficiency_histogram(efficiencies, width: float = 0.05) -> Histogram:
    if not 0 < width <= 1:
        raise ValueError("bin width must lie in (0, 1]")
    e = np.asarray(efficiencies, dtype=float).ravel()
    if e.size and (not np.all(np.isfinite(e)) or e.min() < 0 or e.max() > 1):
        bad = np.flatnonzero(~((e >= 0) & (e <= 1)))[0]
        raise ValueError(f"efficiency {e[bad]!r} at position {bad} is outside [0, 1]")
    bins = int(np.ceil(1.0 / width - 1e-9))
    edges = np.minimum(np.arange(bins + 1) * width, 1.0)
    counts, _ = np.histogram(e, bins=edges)
    if e.size:
        return Histogram(edges, counts, float(e.max()), float(e.mean()))
    return Histogram(edges, counts, None, None)


def write_pca_csv(path, rows, header: str = ""):
    """rows: iterable of (device_id, x, y, eff, iteration)."""
    with open(path, "w", newline="") as fh:
        fh.write(header)
        fh.write("device_id,x,y,eff,iteration\n")
        for device_id, x, y, eff, it in rows:
            fh.write(f"{device_id},{float(x)!r},{float(y)!r},{float(eff)!r},{int(it)}\n")
