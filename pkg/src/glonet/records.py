"""Device records and the on-disk device library (one JSON file per device plus index.csv)."""

from __future__ import annotations

import dataclasses
import datetime as dt
import json
from pathlib import Path

import numpy as np

from .adjoint import efficiency
from .rcwa import OperatingCondition, RcwaSettings

PROVENANCES = ("glonet", "baseline", "boundary-refined")


@dataclasses.dataclass
class DeviceRecord:
    device_id: str
    device: np.ndarray
    wavelength: float
    angle: float
    efficiency: float
    provenance: str
    seed: int
    checkpoint: str | None = None
    config_hash: str | None = None
    extrapolated: bool = False
    created: str = dataclasses.field(default_factory=lambda: dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"))

    def __post_init__(self):
        self.device = np.asarray(self.device, dtype=float)
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @property
    def condition(self) -> OperatingCondition:
        return OperatingCondition(self.wavelength, self.angle)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["device"] = self.device.tolist()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "DeviceRecord":
        return cls(**data)

    def verify(self, settings: RcwaSettings = RcwaSettings(), tol: float = 1e-10) -> bool:
        return abs(efficiency(self.device, self.condition, settings) - self.efficiency) <= tol


def write_library(directory, records, header: str = "") -> Path:
    """Write one ``<device_id>.json`` per record and an ``index.csv`` summary."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "index.csv", "w", newline="") as fh:
        fh.write(header)
        fh.write("device_id,lambda_nm,theta_deg,efficiency,provenance,extrapolated\n")
        for rec in records:
            (directory / f"{rec.device_id}.json").write_text(json.dumps(rec.to_dict()) + "\n")
            fh.write(f"{rec.device_id},{float(rec.wavelength)!r},{float(rec.angle)!r},{float(rec.efficiency)!r},{rec.provenance},{int(rec.extrapolated)}\n")
    return directory


def read_library(directory) -> list[DeviceRecord]:
    directory = Path(directory)
    index = directory / "index.csv"
    if not index.is_file():
        raise FileNotFoundError(f"no index.csv in {directory}")
    ids = []
    for line in index.read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("device_id,"):
            continue
        ids.append(line.split(",", 1)[0])
    return [read_record(directory / f"{i}.json") for i in ids]


def read_record(path) -> DeviceRecord:
    return DeviceRecord.from_dict(json.loads(Path(path).read_text()))


def read_device(path) -> np.ndarray:
    """Device vector from a record JSON, a bare JSON list, or whitespace/comma separated text."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        return np.asarray(data["device"] if isinstance(data, dict) else data, dtype=float)
    return np.asarray([float(t) for t in text.replace(",", " ").split() if not t.startswith("#")], dtype=float)
