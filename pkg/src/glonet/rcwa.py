"""Rigorous coupled-wave analysis of a single-layer 1D grating in TM polarization.

The grating period is split into ``N`` equal segments, each with its own
refractive index. The layer sits on a SiO2 substrate with air above. Fields
are expanded in ``2F + 1`` Fourier harmonics; the magnetic field ``Hy`` and
the tangential electric field ``Ex`` are matched at both interfaces through
scattering matrices.

Normalization used throughout: lengths are multiplied by ``k0 = 2 pi / lambda``,
``h = eta0 * Hy`` and all permittivities are relative. In a homogeneous medium a
harmonic with amplitude ``a`` travelling along ``+z`` carries ``Ex = (kz / eps) a``.
"""

from __future__ import annotations

import dataclasses
import functools
from typing import Literal

import numpy as np
from scipy import linalg


class SolverError(RuntimeError):
    """Raised when the modal solve cannot produce a trustworthy result."""


@dataclasses.dataclass(frozen=True)
class MaterialConfig:
    n_si: float = 3.45
    n_sio2: float = 1.45
    n_air: float = 1.0

    def __post_init__(self):
        for name in ("n_si", "n_sio2", "n_air"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 1.0:
                raise ValueError(f"{name} must be a real index >= 1, got {value!r}")


@dataclasses.dataclass(frozen=True)
class OperatingCondition:
    """Target wavelength (nm) and deflection angle (degrees)."""

    wavelength: float
    angle: float


@dataclasses.dataclass(frozen=True)
class RcwaSettings:
    fourier_half_order: int = 14
    thickness: float = 325.0
    materials: MaterialConfig = MaterialConfig()
    polarization: Literal["TM"] = "TM"

    def __post_init__(self):
        if int(self.fourier_half_order) < 1:
            raise ValueError("fourier_half_order must be >= 1")
        if not self.thickness > 0:
            raise ValueError("thickness must be positive")
        if self.polarization != "TM":
            raise ValueError("only TM polarization is supported")

    @property
    def num_orders(self) -> int:
        return 2 * self.fourier_half_order + 1


@dataclasses.dataclass(frozen=True)
class Source:
    """Incident plane wave.

    ``side`` is the half-space the wave comes from and ``order`` the harmonic
    index it occupies. The default is normal incidence from the substrate.
    """

    side: Literal["substrate", "air"] = "substrate"
    order: int = 0
    amplitude: complex = 1.0

    def __post_init__(self):
        if self.side not in ("substrate", "air"):
            raise ValueError(f"unknown source side {self.side!r}")


NORMAL_INCIDENCE = Source()


@dataclasses.dataclass(frozen=True)
class GratingGeometry:
    period: float
    thickness: float
    device: np.ndarray

    def __post_init__(self):
        if not self.period > 0 or not self.thickness > 0:
            raise ValueError("period and thickness must be positive")
        if np.ndim(self.device) != 1 or len(self.device) < 2:
            raise ValueError("device must be a vector with at least 2 segments")

    @property
    def segments(self) -> int:
        return len(self.device)

    @classmethod
    def for_condition(cls, device, condition: OperatingCondition, thickness: float):
        return cls(grating_period(condition.wavelength, condition.angle), thickness, np.asarray(device, float))


def grating_period(wavelength: float, angle: float) -> float:
    """Period that sends the +1 transmitted order into air at ``angle`` degrees."""
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength!r}")
    if not 0.0 < angle < 90.0:
        raise ValueError(f"deflection angle must lie in (0, 90) degrees, got {angle!r}")
    return wavelength / np.sin(np.deg2rad(angle))


def validate_device(device) -> np.ndarray:
    device = np.asarray(device, dtype=float)
    if device.ndim != 1 or device.size < 2:
        raise ValueError("device must be a 1D vector with at least 2 segments")
    if not np.all(np.isfinite(device)):
        raise ValueError("device contains non-finite values")
    bad = np.flatnonzero(np.abs(device) > 1.0)
    if bad.size:
        raise ValueError(f"device component {bad[0]} = {device[bad[0]]!r} is outside [-1, 1]")
    return device


def segment_index(device, materials: MaterialConfig = MaterialConfig()) -> np.ndarray:
    """Refractive index per segment, linear between air (-1) and silicon (+1)."""
    device = np.asarray(device, dtype=float)
    return materials.n_air + 0.5 * (device + 1.0) * (materials.n_si - materials.n_air)


def index_profile(device, materials: MaterialConfig = MaterialConfig()) -> np.ndarray:
    """Per-segment relative permittivity (index squared)."""
    return segment_index(device, materials) ** 2


def permittivity_slope(device, materials: MaterialConfig = MaterialConfig()) -> np.ndarray:
    """d(eps)/d(device value) for each segment."""
    return segment_index(device, materials) * (materials.n_si - materials.n_air)


# -- Fourier factorization ---------------------------------------------------


@functools.lru_cache(maxsize=32)
def _segment_harmonics(segments: int, half_order: int) -> np.ndarray:
    """Fourier coefficients c_i(k) of each segment's indicator, k = -2F..2F.

    Shape (segments, 4F + 1). Row i is the indicator of segment i, which spans
    [i, i + 1) / N of the period.
    """
    k = np.arange(-2 * half_order, 2 * half_order + 1)
    centers = (np.arange(segments) + 0.5) / segments
    envelope = np.sinc(k / segments) / segments
    table = envelope[None, :] * np.exp(-2j * np.pi * np.outer(centers, k))
    table.setflags(write=False)
    return table


def fourier_series(values, half_order: int) -> np.ndarray:
    """Coefficients k = -2F..2F of a piecewise-constant profile sampled per segment."""
    values = np.asarray(values, dtype=float)
    return values @ _segment_harmonics(values.size, half_order)


def toeplitz_matrix(coefficients: np.ndarray) -> np.ndarray:
    """Convolution matrix T[p, q] = coefficients[p - q] for coefficients indexed -2F..2F."""
    size = (coefficients.size + 1) // 2
    center = size - 1
    return linalg.toeplitz(coefficients[center:center + size], coefficients[center::-1])


def _longitudinal(eps: float, kx: np.ndarray) -> np.ndarray:
    """kz = sqrt(eps - kx^2), taken on the outgoing / decaying branch."""
    kz2 = eps - kx**2
    return np.where(kz2 >= 0, np.sqrt(np.abs(kz2)) + 0j, 1j * np.sqrt(np.abs(kz2)))


# -- scattering matrices ------------------------------------------------------


def interface_smatrix(w_left, v_left, w_right, v_right):
    """S-matrix of the interface between two modal bases.

    Maps incoming amplitudes [left forward; right backward] to outgoing
    amplitudes [left backward; right forward].
    """
    lhs = np.block([[w_left, -w_right], [-v_left, -v_right]])
    rhs = np.block([[-w_left, w_right], [-v_left, -v_right]])
    s = linalg.solve(lhs, rhs)
    n = w_left.shape[0]
    return s[:n, :n], s[:n, n:], s[n:, :n], s[n:, n:]


def redheffer_star(a, b):
    """Cascade two S-matrices, ``a`` on the left (substrate side) of ``b``."""
    a11, a12, a21, a22 = a
    b11, b12, b21, b22 = b
    eye = np.eye(a11.shape[0])
    left = linalg.solve((eye - b11 @ a22).T, a12.T).T
    right = linalg.solve(eye - a22 @ b11, a21)
    s11 = a11 + left @ b11 @ a21
    s12 = left @ b12
    s21 = b21 @ right
    s22 = b22 + b21 @ linalg.solve(eye - a22 @ b11, a22 @ b12)
    return s11, s12, s21, s22


def propagation_smatrix(phase: np.ndarray):
    n = phase.size
    zero = np.zeros((n, n), dtype=complex)
    x = np.diag(phase)
    return zero, x, x, zero


# -- the solve ----------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class LayerModes:
    """Eigen-decomposition of the grating layer, shared by every excitation."""

    orders: np.ndarray
    kx: np.ndarray
    eps_matrix: np.ndarray
    inv_eps_matrix: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    v: np.ndarray
    q_substrate: np.ndarray
    q_air: np.ndarray
    thickness: float  # normalized, k0 * d
    s_substrate: tuple
    s_air: tuple
    s_right: tuple
    s_total: tuple

    @property
    def phase(self) -> np.ndarray:
        return np.exp(1j * self.gamma * self.thickness)

    def position(self, order: int) -> int:
        f = (self.orders.size - 1) // 2
        if abs(order) > f:
            raise SolverError(f"order {order} is not retained (half order F = {f})")
        return order + f


@dataclasses.dataclass(frozen=True)
class DiffractionSolution:
    """Result of one RCWA solve.

    ``substrate_amplitudes`` and ``air_amplitudes`` are the outgoing ``Hy``
    harmonics on each side; efficiencies are power fractions of the incident
    wave. ``forward`` and ``backward`` are the layer mode amplitudes, referenced
    at the bottom and at the top of the layer respectively.
    """

    condition: OperatingCondition
    settings: RcwaSettings
    source: Source
    device: np.ndarray
    modes: LayerModes
    substrate_amplitudes: np.ndarray
    air_amplitudes: np.ndarray
    substrate_efficiency: np.ndarray
    air_efficiency: np.ndarray
    substrate_propagating: np.ndarray
    air_propagating: np.ndarray
    forward: np.ndarray
    backward: np.ndarray

    @property
    def orders(self) -> np.ndarray:
        return self.modes.orders

    @property
    def reflected_amplitudes(self):
        return self.substrate_amplitudes if self.source.side == "substrate" else self.air_amplitudes

    @property
    def transmitted_amplitudes(self):
        return self.air_amplitudes if self.source.side == "substrate" else self.substrate_amplitudes

    @property
    def reflected_efficiency(self):
        return self.substrate_efficiency if self.source.side == "substrate" else self.air_efficiency

    @property
    def transmitted_efficiency(self):
        return self.air_efficiency if self.source.side == "substrate" else self.substrate_efficiency

    def total_efficiency(self) -> float:
        return float(np.sum(self.substrate_efficiency) + np.sum(self.air_efficiency))

    def mode_profiles(self, z: np.ndarray):
        """Forward and backward modal envelopes at normalized depths ``z`` (0 = substrate side)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))[:, None]
        gamma = self.modes.gamma[None, :]
        fwd = np.exp(1j * gamma * z) * self.forward[None, :]
        bwd = np.exp(1j * gamma * (self.modes.thickness - z)) * self.backward[None, :]
        return fwd, bwd

    def harmonics(self, z):
        """Fourier vectors of h, Dx (= eps Ex) and Ez at depths ``z`` in nm.

        Each returned array has shape (len(z), 2F + 1).
        """
        k0 = 2 * np.pi / self.condition.wavelength
        fwd, bwd = self.mode_profiles(k0 * np.atleast_1d(z))
        m = self.modes
        h = (fwd + bwd) @ m.w.T
        dx = (fwd - bwd) @ (m.w * m.gamma[None, :]).T
        ez = -h @ linalg.solve(m.eps_matrix, np.diag(m.kx)).T
        return h, dx, ez

    def layer_fields(self, x, z):
        """Hy (normalized), Ex and Ez on the grid ``x`` (fraction of period) by ``z`` (nm).

        Ex is recovered as Dx / eps(x), using the continuity of Dx across the
        vertical material boundaries.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        h, dx, ez = self.harmonics(z)
        basis = np.exp(2j * np.pi * np.outer(self.orders, x))
        eps = index_profile(self.device, self.settings.materials)
        eps_x = eps[np.minimum((np.mod(x, 1.0) * self.device.size).astype(int), self.device.size - 1)]
        return h @ basis, (dx @ basis) / eps_x[None, :], ez @ basis


def layer_modes(device, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings()) -> LayerModes:
    """Fourier factorization, eigen-decomposition and interface S-matrices."""
    device = validate_device(device)
    materials = settings.materials
    f = int(settings.fourier_half_order)
    period = grating_period(condition.wavelength, condition.angle)
    orders = np.arange(-f, f + 1)
    kx = orders * condition.wavelength / period
    eye = np.eye(orders.size)

    eps = index_profile(device, materials)
    eps_matrix = toeplitz_matrix(fourier_series(eps, f))
    inv_eps_matrix = toeplitz_matrix(fourier_series(1.0 / eps, f))

    # Inverse rule: Ex = [[1/eps]] Dx and Ez = [[eps]]^-1 (dHy/dx).
    b = eye - kx[:, None] * linalg.solve(eps_matrix, np.diag(kx))
    b = 0.5 * (b + b.conj().T)
    p = 0.5 * (inv_eps_matrix + inv_eps_matrix.conj().T)
    try:
        gamma2, w = linalg.eigh(b, p)
    except linalg.LinAlgError as exc:
        raise SolverError(
            f"layer eigen-solve failed: cond(B)={np.linalg.cond(b):.3e}, cond([[1/eps]])={np.linalg.cond(p):.3e}"
        ) from exc
    gamma = np.where(gamma2 >= 0, np.sqrt(np.abs(gamma2)) + 0j, 1j * np.sqrt(np.abs(gamma2)))
    if np.any(np.abs(gamma) < 1e-12):
        raise SolverError("a layer mode sits exactly at cutoff; perturb the wavelength or period")
    v = p @ w * gamma[None, :]

    eps_sub = materials.n_sio2**2
    eps_air = materials.n_air**2
    q_sub = _longitudinal(eps_sub, kx) / eps_sub
    q_air = _longitudinal(eps_air, kx) / eps_air
    if np.any(np.abs(q_sub) < 1e-12) or np.any(np.abs(q_air) < 1e-12):
        raise SolverError("a diffraction order is exactly at grazing incidence (Rayleigh anomaly)")
    thickness = 2 * np.pi / condition.wavelength * settings.thickness

    s_sub = interface_smatrix(eye, np.diag(q_sub), w, v)
    s_air = interface_smatrix(w, v, eye, np.diag(q_air))
    s_right = redheffer_star(propagation_smatrix(np.exp(1j * gamma * thickness)), s_air)
    s_total = redheffer_star(s_sub, s_right)
    for block in s_total:
        if not np.all(np.isfinite(block)):
            raise SolverError(
                f"non-finite scattering matrix: cond(W)={np.linalg.cond(w):.3e}, cond(B)={np.linalg.cond(b):.3e}"
            )
    return LayerModes(
        orders=orders, kx=kx, eps_matrix=eps_matrix, inv_eps_matrix=inv_eps_matrix,
        w=w, gamma=gamma, v=v, q_substrate=q_sub, q_air=q_air, thickness=thickness,
        s_substrate=s_sub, s_air=s_air, s_right=s_right, s_total=s_total,
    )


def excite(modes: LayerModes, condition, settings, device, source: Source = NORMAL_INCIDENCE) -> DiffractionSolution:
    """Solve for one incident plane wave on a precomputed layer."""
    n = modes.orders.size
    j = modes.position(source.order)
    q_in = modes.q_substrate if source.side == "substrate" else modes.q_air
    if q_in[j].real <= 0:
        raise SolverError(f"source order {source.order} is evanescent on the {source.side} side")
    a_sub = np.zeros(n, dtype=complex)
    a_air = np.zeros(n, dtype=complex)
    (a_sub if source.side == "substrate" else a_air)[j] = source.amplitude

    s11, s12, s21, s22 = modes.s_substrate
    r11, r12, _, _ = modes.s_right
    eye = np.eye(n)
    forward = linalg.solve(eye - s22 @ r11, s21 @ a_sub + s22 @ (r12 @ a_air))
    down = r11 @ forward + r12 @ a_air
    t11, t12, t21, t22 = modes.s_air
    up = modes.phase * forward
    backward = t11 @ up + t12 @ a_air
    sub_out = s11 @ a_sub + s12 @ down
    air_out = t21 @ up + t22 @ a_air

    incident_power = q_in[j].real * abs(source.amplitude) ** 2
    sub_eff = np.where(modes.q_substrate.real > 0, modes.q_substrate.real * np.abs(sub_out) ** 2, 0.0) / incident_power
    air_eff = np.where(modes.q_air.real > 0, modes.q_air.real * np.abs(air_out) ** 2, 0.0) / incident_power
    return DiffractionSolution(
        condition=condition, settings=settings, source=source, device=np.asarray(device, float), modes=modes,
        substrate_amplitudes=sub_out, air_amplitudes=air_out,
        substrate_efficiency=sub_eff, air_efficiency=air_eff,
        substrate_propagating=modes.q_substrate.real > 0, air_propagating=modes.q_air.real > 0,
        forward=forward, backward=backward,
    )


def simulate(device, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings(),
             source: Source = NORMAL_INCIDENCE) -> DiffractionSolution:
    """Full diffraction solution of ``device`` at ``condition``."""
    device = validate_device(device)
    modes = layer_modes(device, condition, settings)
    if source.side == "substrate" and source.order == 0:
        modes.position(1)  # the deflection target must be representable
    return excite(modes, condition, settings, device, source)


def deflection_efficiency(solution: DiffractionSolution, order: int = 1) -> float:
    """Fraction of incident power carried into air by the given order (default +1)."""
    j = solution.modes.position(order)
    if not solution.air_propagating[j]:
        raise SolverError(f"order {order} is evanescent in air")
    return float(solution.air_efficiency[j])
