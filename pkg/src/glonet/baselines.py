"""Single-device local optimizers: adjoint topology optimization and boundary refinement."""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from .adjoint import efficiency, evaluate
from .network import gaussian_filter, gaussian_kernel
from .rcwa import OperatingCondition, RcwaSettings, SolverError

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class TopoOptConfig:
    """Gradient ascent with a binarizing relaxation that strengthens every iteration.

    Each step moves the device by ``step`` (in normalized index units) along
    g / max|g|, then relaxes it toward tanh(projection_beta * n) / tanh(projection_beta)
    with weight ``step * projection_rate * k / iterations`` at iteration k.
    """

    iterations: int = 200
    step: float = 0.05
    projection_rate: float = 1.0
    projection_beta: float = 8.0
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.step < 0:
            raise ValueError("step must be >= 0")
        if self.projection_rate < 0 or not self.projection_beta > 0:
            raise ValueError("projection parameters must be non-negative")


@dataclasses.dataclass
class OptimizationTrace:
    efficiencies: np.ndarray  # grayscale device, per iteration
    binary_efficiencies: np.ndarray  # sign(device), per iteration
    best_binary_efficiencies: np.ndarray  # running maximum of the above
    initial: np.ndarray
    final: np.ndarray
    best_binary: np.ndarray
    skipped: list[int] = dataclasses.field(default_factory=list)

    @property
    def best_binary_efficiency(self) -> float:
        return float(self.best_binary_efficiencies[-1])

    def write_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            fh.write("iteration,efficiency\n")
            for i, e in enumerate(self.efficiencies, start=1):
                fh.write(f"{i},{float(e)!r}\n")


def random_grayscale_init(rng: np.random.Generator, segments: int = 256, sigma: float = 2.0) -> np.ndarray:
    """Uniform noise in [-0.5, 0.5], smoothed with the generator's Gaussian kernel."""
    return gaussian_filter(rng.uniform(-0.5, 0.5, size=segments), gaussian_kernel(sigma))


def _sign(device):
    return np.where(device >= 0, 1.0, -1.0)


def topology_optimize(init, condition: OperatingCondition, config: TopoOptConfig = TopoOptConfig(),
                      settings: RcwaSettings = RcwaSettings()) -> OptimizationTrace:
    device = np.clip(np.asarray(init, dtype=float), -1.0, 1.0)
    start = device.copy()
    k = config.iterations
    effs = np.full(k, np.nan)
    bin_effs = np.full(k, np.nan)
    best_effs = np.zeros(k)
    best = _sign(device)
    best_eff = -np.inf
    skipped = []
    target = np.tanh(config.projection_beta)
    for it in range(k):
        try:
            result = evaluate(device, condition, settings)
            binary = _sign(device)
            bin_eff = efficiency(binary, condition, settings)
        except SolverError as exc:
            log.warning("iteration %d skipped: %s", it, exc)
            skipped.append(it)
            best_effs[it] = best_eff if np.isfinite(best_eff) else 0.0
            continue
        effs[it] = result.efficiency
        bin_effs[it] = bin_eff
        if bin_eff > best_eff:
            best_eff, best = bin_eff, binary
        best_effs[it] = best_eff

        scale = np.max(np.abs(result.gradient))
        if config.step == 0 or scale == 0:
            continue
        device = np.clip(device + config.step * result.gradient / scale, -1.0, 1.0)
        weight = min(1.0, config.step * config.projection_rate * (it + 1) / k)
        device = device + weight * (np.tanh(config.projection_beta * device) / target - device)
    return OptimizationTrace(effs, bin_effs, best_effs, start, device, best, skipped)


def is_binary(device) -> bool:
    return bool(np.all(np.abs(np.asarray(device)) == 1.0))


def boundary_segments(device) -> np.ndarray:
    """Indices of segments touching a material change, with periodic wrap."""
    d = np.asarray(device)
    edge = d != np.roll(d, -1)
    return np.flatnonzero(edge | np.roll(edge, 1))


def boundary_optimize(device, condition: OperatingCondition, iterations: int = 10,
                      settings: RcwaSettings = RcwaSettings(), max_trials: int = 8) -> np.ndarray:
    """Refine a binary device by single-segment flips at silicon/air boundaries.

    Each iteration ranks boundary segments whose gradient favours a flip
    (air with g > 0, silicon with g < 0) by |g| and tries up to
    ``max_trials`` of them, keeping every flip that does not lower the
    efficiency.
    """
    device = np.asarray(device, dtype=float)
    bad = np.flatnonzero(np.abs(device) != 1.0)
    if bad.size:
        raise ValueError(f"device component {bad[0]} = {device[bad[0]]!r} is not binary (+-1)")
    device = device.copy()
    for _ in range(iterations):
        result = evaluate(device, condition, settings)
        current = result.efficiency
        g = result.gradient
        candidates = [i for i in boundary_segments(device) if g[i] * device[i] < 0]
        candidates.sort(key=lambda i: -abs(g[i]))
        changed = False
        for i in candidates[:max_trials]:
            trial = device.copy()
            trial[i] = -trial[i]
            eff = efficiency(trial, condition, settings)
            if eff >= current:
                device, current, changed = trial, eff, True
        if not changed:
            break
    return device
