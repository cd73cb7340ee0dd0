import numpy as np
import pytest

from glonet import baselines
from glonet.adjoint import efficiency
from glonet.baselines import (
    TopoOptConfig,
    boundary_optimize,
    boundary_segments,
    is_binary,
    random_grayscale_init,
    topology_optimize,
)
from glonet.rcwa import OperatingCondition, RcwaSettings, SolverError

FAST = RcwaSettings(fourier_half_order=8)
COND = OperatingCondition(900.0, 60.0)


def random_binary(seed, n=64, block=4):
    rng = np.random.default_rng(seed)
    return np.repeat(rng.choice([-1.0, 1.0], n // block), block)


def test_grayscale_init_is_bounded_seeded_and_centred():
    a = random_grayscale_init(np.random.default_rng(0))
    b = random_grayscale_init(np.random.default_rng(1))
    assert a.shape == (256,) and np.all(np.abs(a) <= 1)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, random_grayscale_init(np.random.default_rng(0)))
    draws = np.stack([random_grayscale_init(np.random.default_rng(s), segments=16) for s in range(10_000)])
    assert abs(draws.mean()) < 0.02


def test_config_validation():
    with pytest.raises(ValueError):
        TopoOptConfig(iterations=0)
    with pytest.raises(ValueError):
        TopoOptConfig(step=-0.1)


def test_zero_step_leaves_device_and_trace_constant():
    init = random_grayscale_init(np.random.default_rng(2), segments=64)
    trace = topology_optimize(init, COND, TopoOptConfig(iterations=4, step=0.0), FAST)
    np.testing.assert_array_equal(trace.final, init)
    assert np.all(trace.efficiencies == trace.efficiencies[0])


def test_trace_best_is_monotone_and_covers_first_binary():
    init = random_grayscale_init(np.random.default_rng(3), segments=64)
    trace = topology_optimize(init, COND, TopoOptConfig(iterations=15), FAST)
    assert np.all(np.diff(trace.best_binary_efficiencies) >= 0)
    assert trace.best_binary_efficiency >= efficiency(np.where(init >= 0, 1.0, -1.0), COND, FAST)
    assert is_binary(trace.best_binary)
    assert efficiency(trace.best_binary, COND, FAST) == pytest.approx(trace.best_binary_efficiency, abs=1e-12)


def test_topology_optimization_improves_efficiency():
    init = random_grayscale_init(np.random.default_rng(4), segments=64)
    trace = topology_optimize(init, COND, TopoOptConfig(iterations=30), FAST)
    assert trace.efficiencies[-1] > trace.efficiencies[0]
    assert np.mean(np.abs(trace.final)) > np.mean(np.abs(trace.initial))


def test_identical_inputs_give_identical_traces():
    init = random_grayscale_init(np.random.default_rng(5), segments=64)
    a = topology_optimize(init, COND, TopoOptConfig(iterations=5), FAST)
    b = topology_optimize(init, COND, TopoOptConfig(iterations=5), FAST)
    np.testing.assert_array_equal(a.efficiencies, b.efficiencies)
    np.testing.assert_array_equal(a.final, b.final)


def test_solver_failure_skips_iteration(monkeypatch):
    real = baselines.evaluate
    calls = []

    def flaky(device, condition, settings):
        calls.append(1)
        if len(calls) == 2:
            raise SolverError("synthetic")
        return real(device, condition, settings)

    monkeypatch.setattr(baselines, "evaluate", flaky)
    init = random_grayscale_init(np.random.default_rng(6), segments=64)
    trace = topology_optimize(init, COND, TopoOptConfig(iterations=4), FAST)
    assert trace.skipped == [1]
    assert np.isnan(trace.efficiencies[1])
    assert np.all(np.diff(trace.best_binary_efficiencies) >= 0)


def test_trace_csv(tmp_path):
    trace = topology_optimize(np.zeros(64), COND, TopoOptConfig(iterations=3), FAST)
    trace.write_csv(tmp_path / "t.csv", "# config_hash=x seed=0\n")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[1] == "iteration,efficiency" and len(lines) == 5


def test_boundary_segments_wrap_around():
    np.testing.assert_array_equal(boundary_segments(np.array([1.0, 1, -1, -1, -1, 1])), [1, 2, 4, 5])
    np.testing.assert_array_equal(boundary_segments(np.array([-1.0, 1, 1, 1, 1, 1])), [0, 1, 5])
    assert boundary_segments(np.ones(8)).size == 0


def test_boundary_optimize_rejects_grayscale_naming_the_component():
    d = np.ones(64)
    d[17] = 0.4
    with pytest.raises(ValueError, match="component 17"):
        boundary_optimize(d, COND, settings=FAST)


def test_uniform_device_returned_unchanged():
    for value in (1.0, -1.0):
        out = boundary_optimize(np.full(64, value), COND, settings=FAST)
        np.testing.assert_array_equal(out, value)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_boundary_optimize_never_lowers_efficiency(seed):
    device = random_binary(seed)
    out = boundary_optimize(device, COND, iterations=3, settings=FAST)
    assert is_binary(out)
    assert efficiency(out, COND, FAST) >= efficiency(device, COND, FAST)


def test_flip_local_optimum_is_fixed_point():
    device = random_binary(7)
    converged = boundary_optimize(device, COND, iterations=200, settings=FAST, max_trials=64)
    again = boundary_optimize(converged, COND, iterations=5, settings=FAST, max_trials=64)
    np.testing.assert_array_equal(again, converged)
