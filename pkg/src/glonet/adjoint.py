"""Deflection efficiency and its gradient from one forward and one adjoint solve.

The adjoint excitation is a plane wave entering from air in order ``-m``,
i.e. travelling against the target transmitted order ``+m``. Both excitations
share one layer eigen-decomposition. The gradient with respect to each segment
permittivity is the overlap of the forward and adjoint fields over that
segment, integrated through the layer thickness:

    dt/d eps_i = i * Int_seg [ Dx_adj Dx_fwd / eps_i^2 + Ez_adj Ez_fwd ] dx dz

The x-integral is evaluated in Fourier space against the segment indicator,
and the z-integral analytically over the modal exponentials, so the result is
the exact derivative of the truncated RCWA model.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np
from scipy import linalg

from .rcwa import (
    NORMAL_INCIDENCE,
    OperatingCondition,
    RcwaSettings,
    Source,
    SolverError,
    _segment_harmonics,
    deflection_efficiency,
    excite,
    index_profile,
    layer_modes,
    permittivity_slope,
    validate_device,
)

# Scale between the overlap formula and the finite-difference gradient. The
# field normalization above already makes the formula exact, so a least-squares
# fit (see ``calibrate_scale``) returns 1 to ~1e-9.
GRADIENT_SCALE = 1.0


@dataclasses.dataclass(frozen=True)
class EvaluationResult:
    efficiency: float
    gradient: np.ndarray


def _pair_integrals(gamma: np.ndarray, thickness: float):
    """Int_0^d of products of modal exponentials.

    Returns (same, cross): ``same[a, b]`` integrates exp(i(g_a + g_b) z) and
    ``cross[a, b]`` integrates exp(i g_a z) exp(i g_b (d - z)).
    """
    d = thickness
    ga = gamma[:, None]
    gb = gamma[None, :]
    total = ga + gb
    same = (np.exp(1j * total * d) - 1.0) / (1j * total)
    delta = ga - gb
    phase_a = np.exp(1j * ga * d)
    phase_b = np.exp(1j * gb * d)
    small = np.abs(delta * d) < 1e-4
    safe = np.where(small, 1.0, delta)
    cross = np.where(
        small,
        phase_b * d * (1 + 0.5j * delta * d - (delta * d) ** 2 / 6),
        (phase_a - phase_b) / (1j * safe),
    )
    return same, cross


def _diagonal_sums(matrix: np.ndarray) -> np.ndarray:
    """s[k] = sum of matrix[p, q] over p - q = k, for k = -(n-1)..(n-1)."""
    n = matrix.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :] + n - 1).ravel()
    flat = matrix.ravel()
    return np.bincount(idx, flat.real, 2 * n - 1) + 1j * np.bincount(idx, flat.imag, 2 * n - 1)


def _overlap(fwd, adj, modes) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment overlaps of Dx and Ez between adjoint and forward fields."""
    same, cross = _pair_integrals(modes.gamma, modes.thickness)
    direct = np.outer(adj.forward, fwd.forward) + np.outer(adj.backward, fwd.backward)
    mixed = np.outer(adj.forward, fwd.backward) + np.outer(adj.backward, fwd.forward)
    z_dx = direct * same - mixed * cross
    z_ez = direct * same + mixed * cross

    wg = modes.w * modes.gamma[None, :]
    we = linalg.solve(modes.eps_matrix, modes.kx[:, None] * modes.w)
    # Rows reversed: the adjoint field enters as its order-mirrored reciprocal twin.
    g_dx = wg[::-1] @ z_dx @ wg.T
    g_ez = we[::-1] @ z_ez @ we.T

    table = _segment_harmonics(fwd.device.size, (modes.orders.size - 1) // 2)
    return table @ _diagonal_sums(g_dx), table @ _diagonal_sums(g_ez)


def evaluate(device, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings(),
             order: int = 1) -> EvaluationResult:
    """Efficiency into air order ``order`` and its gradient with respect to the device vector."""
    device = validate_device(device)
    modes = layer_modes(device, condition, settings)
    j = modes.position(order)
    modes.position(-order)
    fwd = excite(modes, condition, settings, device, NORMAL_INCIDENCE)
    eff = deflection_efficiency(fwd, order)

    q_out = modes.q_air[j]
    adj_src = Source("air", -order, -1.0 / (2.0 * modes.q_air[modes.position(-order)]))
    adj = excite(modes, condition, settings, device, adj_src)

    over_dx, over_ez = _overlap(fwd, adj, modes)
    eps = index_profile(device, settings.materials)
    dt_deps = 1j * (over_dx / eps**2 + over_ez)
    weight = q_out.real / modes.q_substrate[modes.position(0)].real
    deff_deps = 2.0 * weight * np.real(np.conj(fwd.air_amplitudes[j]) * dt_deps)
    grad = GRADIENT_SCALE * deff_deps * permittivity_slope(device, settings.materials)
    if not np.all(np.isfinite(grad)):
        raise SolverError("non-finite adjoint gradient")
    return EvaluationResult(eff, grad)


def evaluate_batch(devices: Sequence, conditions: Sequence[OperatingCondition],
                   settings: RcwaSettings = RcwaSettings(), threads: int = 1) -> list:
    """Evaluate many (device, condition) pairs.

    Results come back in input order. A failed item is returned as the
    exception instance instead of raising, so callers can skip it.
    """
    def one(pair):
        try:
            return evaluate(pair[0], pair[1], settings)
        except (SolverError, np.linalg.LinAlgError, ValueError) as exc:
            return exc

    pairs = list(zip(devices, conditions))
    if threads <= 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, pairs))


def efficiency(device, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings(), order: int = 1) -> float:
    """Forward-only efficiency, one solve."""
    modes = layer_modes(validate_device(device), condition, settings)
    modes.position(order)
    return deflection_efficiency(excite(modes, condition, settings, device), order)


def finite_difference_gradient(device, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings(),
                               h: float = 1e-3, order: int = 1) -> np.ndarray:
    """Central differences of the efficiency, one-sided where a component sits within h of +-1."""
    if not 0 < h <= 1e-2:
        raise ValueError("step h must lie in (0, 1e-2]")
    device = validate_device(device)
    grad = np.empty(device.size)
    for i in range(device.size):
        up = device.copy()
        down = device.copy()
        up[i] = min(device[i] + h, 1.0)
        down[i] = max(device[i] - h, -1.0)
        grad[i] = (efficiency(up, condition, settings, order) - efficiency(down, condition, settings, order)) / (up[i] - down[i])
    return grad


def calibrate_scale(devices: Sequence, condition: OperatingCondition, settings: RcwaSettings = RcwaSettings(),
                    h: float = 1e-3) -> float:
    """Least-squares factor C minimizing |C * g_overlap - g_fd| over the reference devices."""
    num = 0.0
    den = 0.0
    for device in devices:
        g = evaluate(device, condition, settings).gradient / GRADIENT_SCALE
        fd = finite_difference_gradient(device, condition, settings, h)
        num += float(g @ fd)
        den += float(g @ g)
    return num / den
