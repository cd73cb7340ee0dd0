"""GLOnet training: batches of generated devices scored by adjoint gradients."""

from __future__ import annotations

import dataclasses
import logging
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import network
from .adjoint import efficiency, evaluate_batch
from .network import Architecture, GeneratorParameters
from .rcwa import OperatingCondition, RcwaSettings

log = logging.getLogger(__name__)


UNIFORM_SPREAD = 0.05  # max - min of n below which a device counts as uniform


class TrainingError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 20
    sigma: float = 0.3
    beta: float = 0.005
    beta_ramp: float = 1.0  # fraction of the run over which beta rises linearly from 0
    learning_rate: float = 1e-3
    lr_decay: float = 1.0  # learning rate at the last iteration, as a fraction of the initial one
    beta1: float = 0.9
    beta2: float = 0.999
    iterations: int = 300
    wavelength_range: tuple[float, float] = (600.0, 1300.0)
    angle_range: tuple[float, float] = (40.0, 80.0)
    seed: int = 0
    checkpoint_every: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "wavelength_range", tuple(float(v) for v in self.wavelength_range))
        object.__setattr__(self, "angle_range", tuple(float(v) for v in self.angle_range))
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0 <= self.beta_ramp <= 1:
            raise ValueError("beta_ramp must lie in [0, 1]")
        for name in ("wavelength_range", "angle_range"):
            lo, hi = getattr(self, name)
            if len(getattr(self, name)) != 2 or lo > hi:
                raise ValueError(f"{name} must be an ordered pair, got {getattr(self, name)}")

    def beta_at(self, iteration: int) -> float:
        """Binarization weight at a 0-based iteration index."""
        ramp = self.beta_ramp * self.iterations
        if ramp <= 0:
            return self.beta
        return self.beta * min(1.0, iteration / ramp)

    def learning_rate_at(self, iteration: int) -> float:
        """Exponential decay from ``learning_rate`` to ``learning_rate * lr_decay``."""
        if self.iterations <= 1:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (iteration / (self.iterations - 1))


# -- Eff_max table -----------------------------------------------------------------


class EffMaxTable:
    """Best efficiency seen so far, binned on a wavelength x angle grid.

    Bins are centred on the benchmark grid points (50 nm, 5 degrees by default).
    """

    def __init__(self, wavelength_centers=np.arange(600.0, 1301.0, 50.0), angle_centers=np.arange(40.0, 81.0, 5.0)):
        self.wavelength_centers = np.asarray(wavelength_centers, dtype=float)
        self.angle_centers = np.asarray(angle_centers, dtype=float)
        self.values = np.zeros((self.wavelength_centers.size, self.angle_centers.size))

    @staticmethod
    def _bin(value, centers, name):
        step = centers[1] - centers[0] if centers.size > 1 else 1.0
        idx = int(np.floor((value - centers[0]) / step + 0.5))
        if not 0 <= idx < centers.size:
            raise ValueError(f"{name} {value} is outside the table range [{centers[0] - step / 2}, {centers[-1] + step / 2})")
        return idx

    def cell(self, condition: OperatingCondition) -> tuple[int, int]:
        return (
            self._bin(condition.wavelength, self.wavelength_centers, "wavelength"),
            self._bin(condition.angle, self.angle_centers, "angle"),
        )

    def get(self, condition: OperatingCondition) -> float:
        return float(self.values[self.cell(condition)])

    def copy(self) -> "EffMaxTable":
        other = EffMaxTable(self.wavelength_centers, self.angle_centers)
        other.values = self.values.copy()
        return other

    def save_csv(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(header)
            fh.write("lambda_nm,theta_deg,effmax\n")
            for i, lam in enumerate(self.wavelength_centers):
                for j, th in enumerate(self.angle_centers):
                    fh.write(f"{lam:g},{th:g},{float(self.values[i, j])!r}\n")


def update_effmax(table: EffMaxTable, condition: OperatingCondition, eff: float) -> EffMaxTable:
    """Raise the condition's cell to ``eff`` if it beats the stored value."""
    if not 0.0 <= eff <= 1.0:
        raise ValueError(f"efficiency {eff} outside [0, 1]")
    cell = table.cell(condition)
    table.values[cell] = max(table.values[cell], eff)
    return table


# -- loss ---------------------------------------------------------------------------


def bias_weight(eff: float, effmax: float, sigma: float) -> float:
    """exp((Eff - Eff_max) / sigma), with the exponent clamped at 0."""
    return float(np.exp(min(eff - effmax, 0.0) / sigma))


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input to the loss")


def device_loss(n, eff, g, effmax, sigma, beta, batch_size) -> float:
    """Contribution of one device to L, with Eff and g held fixed."""
    n = np.asarray(n, dtype=float)
    _check_finite(n, eff, g, effmax)
    w = bias_weight(eff, effmax, sigma)
    a = np.abs(n)
    return -(w * float(n @ g) + beta * float(a @ (2.0 - a))) / batch_size


def device_loss_gradient(n, eff, g, effmax, sigma, beta, batch_size) -> np.ndarray:
    """dL/dn for one device, Eff and g treated as constants."""
    n = np.asarray(n, dtype=float)
    g = np.asarray(g, dtype=float)
    _check_finite(n, eff, g, effmax)
    w = bias_weight(eff, effmax, sigma)
    return -(w * g + 2.0 * beta * (np.sign(n) - n)) / batch_size


# -- optimizer ------------------------------------------------------------------------


class Adam:
    def __init__(self, params: GeneratorParameters, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = params.zeros_like()
        self.v = params.zeros_like()

    def step(self, grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, value in self.params.tensors.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            value -= self.lr * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
        self.params.version += 1


# -- training loop --------------------------------------------------------------------


@dataclasses.dataclass
class HistoryRecord:
    iteration: int
    mean_eff: float
    max_eff: float
    loss: float
    mean_abs_n: float
    seconds: float
    evaluated: int


HISTORY_COLUMNS = ("iteration", "mean_eff", "max_eff", "loss", "mean_abs_n")


@dataclasses.dataclass
class TrainingHistory:
    records: list[HistoryRecord] = dataclasses.field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path, header: str = ""):
        """Deterministic columns only; wall-clock goes to ``write_timing``."""
        with open(path, "w", newline="") as fh:
            fh.write(header)
            fh.write(",".join(HISTORY_COLUMNS) + "\n")
            for r in self.records:
                fh.write(f"{r.iteration},{float(r.mean_eff)!r},{float(r.max_eff)!r},{float(r.loss)!r},{float(r.mean_abs_n)!r}\n")

    def write_timing(self, path, header: str = ""):
        with open(path, "w", newline="") as fh:
            fh.write(header)
            fh.write("iteration,seconds\n")
            for r in self.records:
                fh.write(f"{r.iteration},{r.seconds:.6f}\n")


@dataclasses.dataclass
class TrainerState:
    params: GeneratorParameters
    optimizer: Adam
    table: EffMaxTable
    rng: np.random.Generator
    iteration: int = 0
    uniform_warned: bool = False


def sample_batch(batch_size: int, config: TrainingConfig, rng: np.random.Generator, segments: int = 256):
    """List of (z, condition) pairs."""
    z = rng.uniform(-1.0, 1.0, size=(batch_size, segments))
    lam = rng.uniform(*config.wavelength_range, size=batch_size)
    theta = rng.uniform(*config.angle_range, size=batch_size)
    return [(z[m], OperatingCondition(float(lam[m]), float(theta[m]))) for m in range(batch_size)]


def new_state(config: TrainingConfig, architecture: Architecture = Architecture(), params: GeneratorParameters | None = None,
              table: EffMaxTable | None = None) -> TrainerState:
    params = params if params is not None else network.init_weights(config.seed, architecture)
    return TrainerState(
        params=params,
        optimizer=Adam(params, config.learning_rate, config.beta1, config.beta2),
        table=table if table is not None else EffMaxTable(),
        rng=np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0]),
    )


def train_step(state: TrainerState, config: TrainingConfig, settings: RcwaSettings = RcwaSettings()) -> HistoryRecord:
    """One iteration: sample, generate, simulate, backpropagate, update."""
    start = time.perf_counter()
    params = state.params
    batch = sample_batch(config.batch_size, config, state.rng, params.architecture.segments)
    z = np.stack([b[0] for b in batch])
    conditions = [b[1] for b in batch]
    devices, cache = network.forward(params, z, [c.wavelength for c in conditions], [c.angle for c in conditions])

    results = evaluate_batch(list(devices), conditions, settings, threads=config.threads)
    ok = [m for m, r in enumerate(results) if not isinstance(r, Exception)]
    for m, r in enumerate(results):
        if isinstance(r, Exception):
            log.warning("skipping device %d at %s: %s", m, conditions[m], r)
    if not ok:
        raise TrainingError(f"all {len(results)} devices failed to simulate at iteration {state.iteration}")

    beta = config.beta_at(state.iteration)
    survivors = len(ok)
    grad_n = np.zeros_like(devices)
    loss = 0.0
    effmax = [state.table.get(conditions[m]) for m in ok]
    for m, emax in zip(ok, effmax):
        r = results[m]
        grad_n[m] = device_loss_gradient(devices[m], r.efficiency, r.gradient, emax, config.sigma, beta, survivors)
        loss += device_loss(devices[m], r.efficiency, r.gradient, emax, config.sigma, beta, survivors)
    for m in ok:
        update_effmax(state.table, conditions[m], float(np.clip(results[m].efficiency, 0.0, 1.0)))

    grads = network.backward(params, cache, grad_n)
    state.optimizer.lr = config.learning_rate_at(state.iteration)
    state.optimizer.step(grads)

    effs = np.array([results[m].efficiency for m in ok])
    # a uniform slab has zero efficiency and zero gradient, so training cannot leave it
    if not state.uniform_warned and np.all(np.ptp(devices, axis=1) < UNIFORM_SPREAD):
        log.warning("iteration %d: every generated device is uniform; training is stuck", state.iteration + 1)
        state.uniform_warned = True
    record = HistoryRecord(
        iteration=state.iteration + 1,
        mean_eff=float(effs.mean()),
        max_eff=float(effs.max()),
        loss=float(loss),
        mean_abs_n=float(np.abs(devices[ok]).mean()),
        seconds=time.perf_counter() - start,
        evaluated=survivors,
    )
    state.iteration += 1
    return record


def train(config: TrainingConfig, architecture: Architecture = Architecture(), settings: RcwaSettings = RcwaSettings(),
          out_dir=None, callback: Callable[[TrainerState, HistoryRecord], None] | None = None,
          header: str = ""):
    """Run ``config.iterations`` steps; returns (params, history, table).

    With ``out_dir`` set, checkpoints are written before the first step, every
    ``checkpoint_every`` iterations and at the end.
    """
    state = new_state(config, architecture)
    history = TrainingHistory()
    failures = 0
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        network.save_checkpoint(state.params, out / "checkpoint_00000.npz", {"iteration": 0})
    while state.iteration < config.iterations:
        try:
            record = train_step(state, config, settings)
        except TrainingError as exc:
            failures += 1
            log.warning("%s (%d consecutive)", exc, failures)
            if failures >= 3:
                raise
            state.iteration += 1
            continue
        failures = 0
        history.records.append(record)
        if callback is not None:
            callback(state, record)
        if out is not None and config.checkpoint_every and state.iteration % config.checkpoint_every == 0:
            network.save_checkpoint(state.params, out / f"checkpoint_{state.iteration:05d}.npz", {"iteration": state.iteration})
    if out is not None:
        network.save_checkpoint(state.params, out / "checkpoint.npz", {"iteration": state.iteration})
    return state.params, history, state.table


# -- generation -----------------------------------------------------------------------


@dataclasses.dataclass
class Ensemble:
    """Binary devices sorted by descending efficiency, with their raw generator outputs."""

    condition: OperatingCondition
    devices: np.ndarray
    efficiencies: np.ndarray
    continuous: np.ndarray


def binarize(device) -> np.ndarray:
    return np.where(np.asarray(device) >= 0, 1.0, -1.0)


def generate_ensemble(params: GeneratorParameters, condition: OperatingCondition, count: int, rng: np.random.Generator,
                      settings: RcwaSettings = RcwaSettings()) -> Ensemble:
    n = params.architecture.segments
    if count == 0:
        empty = np.zeros((0, n))
        return Ensemble(condition, empty, np.zeros(0), empty)
    z = rng.uniform(-1.0, 1.0, size=(count, n))
    raw, _ = network.forward(params, z, condition.wavelength, condition.angle)
    devices = binarize(raw)
    effs = np.array([efficiency(d, condition, settings) for d in devices])
    order = np.argsort(-effs, kind="stable")
    return Ensemble(condition, devices[order], effs[order], raw[order])
