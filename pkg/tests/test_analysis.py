import numpy as np
import pytest
from hypothesis import given, settings as hsettings, strategies as st

from glonet.analysis import (
    BenchmarkGrid,
    compare_grids,
    efficiency_histogram,
    pca_fit,
    pca_project,
    run_benchmark,
    scatter_variance,
    write_pca_csv,
)
from glonet.baselines import TopoOptConfig, random_grayscale_init, topology_optimize
from glonet.network import Architecture, init_weights, save_checkpoint
from glonet.rcwa import OperatingCondition, RcwaSettings

FAST = RcwaSettings(fourier_half_order=8)
SMALL_ARCH = Architecture(segments=64, fc_channels=16, fc_length=16, deconv_channels=(8, 4))


def grid(values, lam=(700.0, 900.0), ang=(50.0, 60.0)):
    values = np.asarray(values, dtype=float)
    ids = [["x"] * len(ang) for _ in lam]
    return BenchmarkGrid("baseline", np.array(lam), np.array(ang), values, np.ones(values.shape, int), ids,
                         np.zeros(values.shape + (4,)))


# -- grids ----------------------------------------------------------------------------------


def test_identical_grids_compare_as_all_higher():
    a = grid([[0.2, 0.5], [0.7, 0.1]])
    cmp = compare_grids(a, a)
    assert cmp.higher_fraction == 1.0 and cmp.within_fraction == 1.0
    assert not cmp.deltas.any()


def test_uniform_improvement_and_tolerance():
    a = grid([[0.2, 0.5], [0.7, 0.1]])
    assert compare_grids(a, grid(a.best_eff + 0.01)).higher_fraction == 1.0
    b = grid([[0.17, 0.5], [0.6, 0.1]])
    cmp = compare_grids(a, b)
    assert cmp.higher_fraction == 0.5
    assert cmp.within_fraction == 0.75
    np.testing.assert_allclose(cmp.deltas, [[-0.03, 0.0], [-0.1, 0.0]])


def test_grid_shape_mismatch_rejected():
    with pytest.raises(ValueError, match="shapes differ"):
        compare_grids(grid([[0.1, 0.2], [0.3, 0.4]]), grid([[0.1], [0.2]], ang=(50.0,)))
    with pytest.raises(ValueError):
        grid([[0.1, 1.2], [0.3, 0.4]])


def test_grid_csv(tmp_path):
    grid([[0.2, 0.5], [0.7, 0.1]]).write_csv(tmp_path / "g.csv", "# config_hash=x seed=0\n")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[1] == "lambda_nm,theta_deg,best_eff,device_id"
    assert lines[2:] == ["700.0,50.0,0.2,x", "700.0,60.0,0.5,x", "900.0,50.0,0.7,x", "900.0,60.0,0.1,x"]


def test_single_cell_baseline_equals_one_topology_run():
    topo = TopoOptConfig(iterations=5)
    g = run_benchmark("baseline", [900.0], [60.0], 1, topo=topo, settings=FAST, seed=4, segments=64)
    rng = np.random.default_rng(np.random.SeedSequence(4).spawn(1)[0])
    trace = topology_optimize(random_grayscale_init(rng, 64), OperatingCondition(900.0, 60.0), topo, FAST)
    assert g.best_eff[0, 0] == trace.best_binary_efficiency
    np.testing.assert_array_equal(g.devices[0, 0], trace.best_binary)


def test_benchmark_results_do_not_depend_on_threads():
    topo = TopoOptConfig(iterations=3)
    a = run_benchmark("baseline", [700.0, 900.0], [50.0], 2, topo=topo, settings=FAST, segments=64)
    b = run_benchmark("baseline", [700.0, 900.0], [50.0], 2, topo=topo, settings=FAST, segments=64, threads=2)
    np.testing.assert_array_equal(a.best_eff, b.best_eff)


def test_missing_checkpoint_fails_before_simulation(tmp_path):
    with pytest.raises(FileNotFoundError, match="checkpoint not found"):
        run_benchmark("glonet", checkpoint=tmp_path / "missing.npz")
    with pytest.raises(FileNotFoundError):
        run_benchmark("glonet+boundary")
    with pytest.raises(ValueError):
        run_benchmark("random")


def test_boundary_refined_grid_dominates_plain_glonet(tmp_path):
    path = save_checkpoint(init_weights(1, SMALL_ARCH), tmp_path / "ck.npz")
    kw = dict(wavelengths=[900.0], angles=[60.0, 70.0], count=3, settings=FAST, checkpoint=path, seed=2)
    plain = run_benchmark("glonet", **kw)
    refined = run_benchmark("glonet+boundary", refine_iterations=2, **kw)
    assert np.all(refined.best_eff >= plain.best_eff)
    assert np.all(np.abs(refined.devices) == 1)


# -- PCA ------------------------------------------------------------------------------------


def test_pca_recovers_known_axis():
    rng = np.random.default_rng(0)
    axis = rng.normal(size=32)
    axis /= np.linalg.norm(axis)
    data = 0.3 + np.outer(rng.normal(scale=3.0, size=50), axis) + 0.01 * rng.normal(size=(50, 32))
    model = pca_fit(data)
    assert abs(model.axes[0] @ axis) > 0.999
    assert model.variances[0] >= model.variances[1] >= 0
    np.testing.assert_allclose(model.axes @ model.axes.T, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(pca_project(model, data.mean(axis=0)), [0, 0], atol=1e-12)


def test_pca_projection_is_linear_in_the_axes():
    model = pca_fit(np.random.default_rng(1).choice([-1.0, 1.0], (20, 16)))
    np.testing.assert_allclose(pca_project(model, model.mean + model.axes[0]), [1, 0], atol=1e-12)
    point = model.mean + 0.7 * model.axes[0] - 2.5 * model.axes[1]
    np.testing.assert_allclose(pca_project(model, point), [0.7, -2.5], atol=1e-12)


def test_pca_sign_convention_is_deterministic():
    data = np.random.default_rng(2).choice([-1.0, 1.0], (10, 16))
    for k, axis in enumerate(pca_fit(data).axes):
        assert axis[np.flatnonzero(np.abs(axis) > 1e-12)[0]] > 0, k
    a, b = pca_fit(data), pca_fit(-data)
    np.testing.assert_allclose(np.abs(a.axes), np.abs(b.axes), atol=1e-12)


def test_pca_errors():
    with pytest.raises(ValueError):
        pca_fit(np.ones((2, 8)))
    with pytest.raises(ValueError, match="zero variance"):
        pca_fit(np.ones((5, 8)))
    model = pca_fit(np.random.default_rng(3).normal(size=(5, 8)))
    with pytest.raises(ValueError, match="does not match"):
        pca_project(model, np.zeros(9))


@hsettings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_projection_norm_bounded_by_centered_norm(seed):
    rng = np.random.default_rng(seed)
    model = pca_fit(rng.choice([-1.0, 1.0], (8, 12)))
    device = rng.uniform(-1, 1, 12)
    assert np.linalg.norm(pca_project(model, device)) <= np.linalg.norm(device - model.mean) + 1e-12


def test_scatter_variance():
    assert scatter_variance([[0, 0]]) == 0.0
    assert scatter_variance([[0, 0], [2, 0]]) == pytest.approx(2.0)
    assert scatter_variance([[1, 1], [1, 1], [1, 1]]) == 0.0


def test_pca_csv(tmp_path):
    write_pca_csv(tmp_path / "p.csv", [("d0", 0.5, -1.0, 0.25, 1)], "# h\n")
    assert (tmp_path / "p.csv").read_text().splitlines() == ["# h", "device_id,x,y,eff,iteration", "d0,0.5,-1.0,0.25,1"]


# -- histograms -----------------------------------------------------------------------------


def test_empty_histogram():
    h = efficiency_histogram([])
    assert h.counts.sum() == 0 and h.counts.size == 20
    assert h.max_efficiency is None and h.mean_efficiency is None


def test_constant_values_land_in_one_bin():
    h = efficiency_histogram([0.5] * 7, width=0.1)
    assert h.counts.size == 10
    assert h.counts[5] == 7 and h.counts.sum() == 7
    assert h.max_efficiency == 0.5


def test_edges_cover_unit_interval():
    h = efficiency_histogram([0.0, 1.0], width=0.3)
    assert h.edges[0] == 0.0 and h.edges[-1] == 1.0
    assert h.counts[0] == 1 and h.counts[-1] == 1


@hsettings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), max_size=500), st.sampled_from([0.01, 0.05, 0.1, 0.25, 1.0]))
def test_histogram_conserves_counts(values, width):
    assert efficiency_histogram(values, width).counts.sum() == len(values)


def test_histogram_rejects_out_of_range_naming_position():
    with pytest.raises(ValueError, match="position 2"):
        efficiency_histogram([0.1, 0.2, 1.5])
    with pytest.raises(ValueError):
        efficiency_histogram([np.nan])
    with pytest.raises(ValueError):
        efficiency_histogram([0.1], width=0)


def test_histogram_csv(tmp_path):
    efficiency_histogram([0.1, 0.12, 0.9], 0.5).write_csv(tmp_path / "h.csv", "# h\n")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["# h", "bin_lo,bin_hi,count", "0,0.5,2", "0.5,1,1"]
