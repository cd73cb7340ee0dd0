"""Run configuration: one JSON document validated up front, with a stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Any

from .baselines import TopoOptConfig
from .network import Architecture
from .rcwa import MaterialConfig, RcwaSettings
from .trainer import TrainingConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class BenchmarkSpec:
    wavelengths: tuple[float, ...] = (700.0, 900.0, 1100.0)
    angles: tuple[float, ...] = (50.0, 60.0, 70.0)
    count: int = 20
    refine_iterations: int = 10
    bin_width: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(v) for v in self.wavelengths))
        object.__setattr__(self, "angles", tuple(float(v) for v in self.angles))
        if not self.wavelengths or not self.angles:
            raise ValueError("benchmark grid needs at least one wavelength and one angle")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 0 < self.bin_width <= 1:
            raise ValueError("bin_width must lie in (0, 1]")


@dataclasses.dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    output_dir: str = "runs"
    solver: RcwaSettings = RcwaSettings()
    network: Architecture = Architecture()
    training: TrainingConfig = TrainingConfig()
    topology: TopoOptConfig = TopoOptConfig()
    benchmark: BenchmarkSpec = BenchmarkSpec()

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self, seed=seed,
            training=dataclasses.replace(self.training, seed=seed),
            topology=dataclasses.replace(self.topology, seed=seed),
        )

    def to_dict(self) -> dict[str, Any]:
        solver = dataclasses.asdict(self.solver)
        materials = solver.pop("materials")
        solver.pop("polarization")
        training = dataclasses.asdict(self.training)
        topology = dataclasses.asdict(self.topology)
        for section in (training, topology):
            section.pop("seed")
        return _plain({
            "schema_version": SCHEMA_VERSION,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "solver": solver,
            "materials": materials,
            "network": self.network.to_dict(),
            "training": training,
            "topology": topology,
            "benchmark": dataclasses.asdict(self.benchmark),
        })

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        """First 16 hex digits of the SHA-256 of the canonical JSON.

        ``output_dir`` is left out: where results go does not change them.
        """
        data = self.to_dict()
        data.pop("output_dir")
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def header(self) -> str:
        """Comment line opening every output file."""
        return f"# config_hash={self.hash()} seed={self.seed}\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _section(cls, data, name, skip=()):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    allowed = {f.name for f in dataclasses.fields(cls)} - set(skip)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    return data


def _build(cls, data, name, **extra):
    try:
        return cls(**data, **extra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid '{name}' section: {exc}") from exc


def from_dict(data: dict[str, Any]) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    top = {"schema_version", "seed", "output_dir", "solver", "materials", "network", "training", "topology", "benchmark"}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
    seed = data.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        raise ConfigError("output_dir must be a string")

    materials = _build(MaterialConfig, _section(MaterialConfig, data.get("materials", {}), "materials"), "materials")
    solver_data = _section(RcwaSettings, data.get("solver", {}), "solver", skip=("materials", "polarization"))
    solver = _build(RcwaSettings, solver_data, "solver", materials=materials)
    network = _build(Architecture, _section(Architecture, data.get("network", {}), "network"), "network")
    training = _build(TrainingConfig, _section(TrainingConfig, data.get("training", {}), "training", skip=("seed",)),
                      "training", seed=seed)
    topology = _build(TopoOptConfig, _section(TopoOptConfig, data.get("topology", {}), "topology", skip=("seed",)),
                      "topology", seed=seed)
    benchmark = _build(BenchmarkSpec, _section(BenchmarkSpec, data.get("benchmark", {}), "benchmark"), "benchmark")
    return RunConfig(seed, output_dir, solver, network, training, topology, benchmark)


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return from_dict(data)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        return loads(path.read_text())
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
