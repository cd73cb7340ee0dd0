"""Independent physics and numerics checks used by ``glonet validate``.

Each check returns a ``CheckResult``; none of them depend on the RCWA
internals beyond the public solve functions.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import network
from .adjoint import evaluate, finite_difference_gradient
from .rcwa import MaterialConfig, OperatingCondition, RcwaSettings, Source, simulate
from .trainer import device_loss, device_loss_gradient


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail} ({self.seconds:.1f}s)"


def thin_film_transmission(wavelength: float, thickness: float, n_film: float, n_in: float, n_out: float) -> float:
    """Normal-incidence power transmission of one film via the characteristic matrix."""
    delta = 2 * np.pi * n_film * thickness / wavelength
    m = np.array([[np.cos(delta), 1j * np.sin(delta) / n_film], [1j * n_film * np.sin(delta), np.cos(delta)]])
    b, c = m @ np.array([1.0, n_out])
    t = 2 * n_in / (n_in * b + c)
    return float(n_out / n_in * abs(t) ** 2)


def fresnel_transmission(n_in: float, n_out: float) -> float:
    return 4 * n_in * n_out / (n_in + n_out) ** 2


def _timed(name, fn) -> CheckResult:
    start = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


SLAB_CASES = (
    (900.0, 325.0, 3.45),
    (600.0, 325.0, 3.45),
    (1300.0, 200.0, 2.0),
    (750.0, 500.0, 3.0),
    (1100.0, 100.0, 1.5),
)


def check_homogeneous_slab(tol: float = 1e-8, cases=SLAB_CASES, segments: int = 256):
    worst = 0.0
    for lam, d, n_si in cases:
        settings = RcwaSettings(thickness=d, materials=MaterialConfig(n_si=n_si))
        sol = simulate(np.ones(segments), OperatingCondition(lam, 60.0), settings)
        t0 = sol.transmitted_efficiency[sol.modes.position(0)]
        ref = thin_film_transmission(lam, d, n_si, settings.materials.n_sio2, settings.materials.n_air)
        worst = max(worst, abs(t0 - ref))
    return worst < tol, f"max |T0 - T_thin_film| = {worst:.2e} over {len(cases)} slabs"


def check_bare_interface(tol: float = 1e-8, segments: int = 256):
    sol = simulate(-np.ones(segments), OperatingCondition(900.0, 60.0))
    m = sol.settings.materials
    t0 = sol.transmitted_efficiency[sol.modes.position(0)]
    err = abs(t0 - fresnel_transmission(m.n_sio2, m.n_air))
    return err < tol, f"|T0 - Fresnel| = {err:.2e}"


def check_energy(count: int = 100, tol: float = 1e-8, seed: int = 0, segments: int = 256):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        device = rng.choice([-1.0, 1.0], size=segments)
        cond = OperatingCondition(rng.uniform(600, 1300), rng.uniform(40, 80))
        worst = max(worst, abs(simulate(device, cond).total_efficiency() - 1.0))
    return worst < tol, f"max |sum(eff) - 1| = {worst:.2e} over {count} binary devices"


def check_translation(tol: float = 1e-10, seed: int = 1, segments: int = 256, shifts=(1, 17, 128)):
    rng = np.random.default_rng(seed)
    device = rng.choice([-1.0, 1.0], size=segments)
    cond = OperatingCondition(900.0, 60.0)
    base = simulate(device, cond)
    worst = 0.0
    for k in shifts:
        sol = simulate(np.roll(device, k), cond)
        worst = max(worst, np.abs(sol.air_efficiency - base.air_efficiency).max(),
                    np.abs(sol.substrate_efficiency - base.substrate_efficiency).max())
    return worst < tol, f"max order-efficiency change under shifts {shifts} = {worst:.2e}"


def check_reciprocity(tol: float = 1e-6, seed: int = 2, segments: int = 256):
    rng = np.random.default_rng(seed)
    device = rng.choice([-1.0, 1.0], size=segments)
    cond = OperatingCondition(900.0, 60.0)
    fwd = simulate(device, cond)
    rev = simulate(device, cond, source=Source("air", -1))
    a = fwd.air_efficiency[fwd.modes.position(1)]
    b = rev.substrate_efficiency[rev.modes.position(0)]
    return abs(a - b) < tol, f"|Eff(sub 0 -> air +1) - Eff(air -1 -> sub 0)| = {abs(a - b):.2e}"


def check_adjoint_gradient(tol: float = 1e-2, seed: int = 3, segments: int = 256):
    rng = np.random.default_rng(seed)
    device = np.clip(rng.normal(0.0, 0.4, size=segments), -0.95, 0.95)
    cond = OperatingCondition(900.0, 60.0)
    g = evaluate(device, cond).gradient
    fd = finite_difference_gradient(device, cond, h=1e-3)
    rel = np.linalg.norm(g - fd) / np.linalg.norm(fd)
    big = np.abs(fd) > 0.01 * np.abs(fd).max()
    signs = bool(np.all(np.sign(g[big]) == np.sign(fd[big])))
    return rel < tol and signs, f"relative L2 error {rel:.2e}, signs agree on {big.sum()} large components: {signs}"


def network_gradcheck(seed: int = 0, tol: float = 1e-4, eps: float = 1e-6):
    """Reverse-mode vs central differences on a small generator with every layer type."""
    arch = network.Architecture(segments=16, fc_channels=3, fc_length=4, deconv_channels=(2, 2), kernel=3,
                                filter_sigma=1.0, filter_truncate=2.0, activation_gain=1.5)
    params = network.init_weights(seed, arch)
    rng = np.random.default_rng(seed)
    for name in params.tensors:
        params.tensors[name] = params.tensors[name] + 0.3 * rng.standard_normal(params.tensors[name].shape)
    z = rng.uniform(-1, 1, size=(3, arch.segments))
    lam = np.array([700.0, 900.0, 1200.0])
    ang = np.array([45.0, 60.0, 75.0])
    weights = rng.standard_normal((3, arch.segments))

    def objective():
        out, _ = network.forward(params, z, lam, ang)
        return float(np.sum(weights * out))

    out, cache = network.forward(params, z, lam, ang)
    grads = network.backward(params, cache, weights)
    worst = 0.0
    for name, tensor in params.tensors.items():
        numeric = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = objective()
            flat[i] = keep - eps
            down = objective()
            flat[i] = keep
            numeric.reshape(-1)[i] = (up - down) / (2 * eps)
        err = np.linalg.norm(grads[name] - numeric) / max(np.linalg.norm(numeric), 1e-12)
        worst = max(worst, err)
    return worst < tol, f"max per-tensor relative error {worst:.2e}"


def check_loss_gradient(tol: float = 1e-10, seed: int = 4, segments: int = 32):
    rng = np.random.default_rng(seed)
    n = rng.uniform(-0.9, 0.9, size=segments)
    g = rng.normal(size=segments)
    args = (0.4, g, 0.7, 0.5, 0.3, 5)
    analytic = device_loss_gradient(n, *args)
    # L is quadratic in each n_i away from 0, so central differences are exact up to rounding.
    h = 1e-4
    numeric = np.array([
        (device_loss(n + h * e, *args) - device_loss(n - h * e, *args)) / (2 * h) for e in np.eye(segments)
    ])
    err = np.abs(analytic - numeric).max()
    return err < tol, f"max |dL/dn - FD| = {err:.2e}"


def run_battery(quick: bool = False) -> list[CheckResult]:
    checks = [
        ("homogeneous slab vs thin film", check_homogeneous_slab),
        ("bare interface vs Fresnel", check_bare_interface),
        ("energy conservation", (lambda: check_energy(20)) if quick else check_energy),
        ("translation invariance", check_translation),
        ("reciprocity", check_reciprocity),
        ("adjoint vs finite differences", check_adjoint_gradient),
        ("network gradcheck", network_gradcheck),
        ("loss gradient", check_loss_gradient),
    ]
    return [_timed(name, fn) for name, fn in checks]
