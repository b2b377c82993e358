import numpy as np
import pytest

from kvdot import fem
from kvdot.errors import ConfigurationError
from kvdot.experiment import (
    DEFAULT_PATTERN, ExperimentConfig, NoiseModel, a_true, add_noise, compute_errors,
    exact_data, example1_theta, flux_pattern, measurement_patterns, permutation_measurements,
    q_true, run_ladder, synthesize_truth,
)
from kvdot.fem import BoundaryDatum, ProblemSpec
from kvdot.mesh import NodalField, build_mesh, prolongate
from kvdot.objective import CoefficientPair, MeasurementSet, misfit
from kvdot.optimizer import ReconConfig


# ---------------------------------------------------------------- truth

def test_truth_values():
    assert q_true(-0.75, 0) == 2 and q_true(0, 0) == 1 and q_true(0.75, 0) == 3
    assert a_true(0, -0.5) == 3 and a_true(0, 0.5) == 5


def test_truth_tie_breaks():
    assert q_true(-0.5, 0.3) == 2
    assert q_true(0.5, 0.3) == 1
    assert a_true(0.2, 0.0) == 3


def test_synthesize_truth(mesh8):
    truth = synthesize_truth(mesh8)
    assert set(np.unique(truth.q)) == {1.0, 2.0, 3.0}
    assert set(np.unique(truth.a)) == {3.0, 5.0}
    x, y = mesh8.nodes.T
    np.testing.assert_array_equal(truth.q, q_true(x, y))
    assert truth.pattern == DEFAULT_PATTERN


def test_truth_needs_tau_divisible_by_four():
    with pytest.raises(ConfigurationError):
        synthesize_truth(build_mesh(6))


# ---------------------------------------------------------------- data

def test_default_flux_pattern(mesh8):
    j = flux_pattern(mesh8, DEFAULT_PATTERN)
    mid = mesh8.nodes[mesh8.boundary_edges[mesh8.edges("gamma")]].mean(axis=1)
    bottom = mid[:, 1] == -1.0
    np.testing.assert_array_equal(j.values[bottom & (mid[:, 0] > 0)], -1.0)
    np.testing.assert_array_equal(j.values[bottom & (mid[:, 0] < 0)], 1.0)
    left = ~bottom
    np.testing.assert_array_equal(j.values[left & (mid[:, 1] < 0)], -2.0)
    np.testing.assert_array_equal(j.values[left & (mid[:, 1] > 0)], 3.0)


def test_zero_pattern_gives_zero_data(mesh8):
    spec = ProblemSpec(source=0.0, j0=0.0)
    truth = synthesize_truth(mesh8, (0, 0, 0, 0))
    j, g = exact_data(mesh8, truth, spec)
    np.testing.assert_array_equal(g.values, 0.0)
    np.testing.assert_array_equal(j.values, 0.0)


def test_data_depend_on_pattern(mesh8, spec):
    truth = synthesize_truth(mesh8)
    _, g1 = exact_data(mesh8, truth, spec, (-1, 1, -2, 3))
    _, g2 = exact_data(mesh8, truth, spec, (1, -1, -2, 3))
    diff = BoundaryDatum("node", g1.values - g2.values)
    assert fem.boundary_l2_norm(mesh8, diff) > 1e-3


def test_exact_data_is_trace(mesh8, spec):
    truth = synthesize_truth(mesh8)
    j, g = exact_data(mesh8, truth, spec)
    u = fem.solve_neumann(mesh8, truth.q, truth.a, spec, j)
    np.testing.assert_array_equal(g.values, u[mesh8.gamma_nodes])


def test_refined_data_mesh(mesh8, spec):
    truth = synthesize_truth(mesh8)
    _, g1 = exact_data(mesh8, truth, spec)
    _, g2 = exact_data(mesh8, truth, spec, data_mesh_factor=2)
    assert g2.values.shape == g1.values.shape
    gap = np.abs(g1.values - g2.values).max()
    assert 0 < gap < 0.1


# ---------------------------------------------------------------- noise

def _data(mesh, spec):
    return exact_data(mesh, synthesize_truth(mesh), spec)


def test_zero_noise(mesh8, spec):
    j, g = _data(mesh8, spec)
    jd, gd, delta = add_noise(mesh8, j, g, 0.0, np.random.default_rng(0))
    assert delta == 0.0
    np.testing.assert_array_equal(jd.values, j.values)
    np.testing.assert_array_equal(gd.values, g.values)


@pytest.mark.parametrize("theta", [0.01, 0.1, 1.0])
def test_noise_bound(mesh8, spec, theta):
    j, g = _data(mesh8, spec)
    for seed in range(5):
        jd, gd, delta = add_noise(mesh8, j, g, theta, np.random.default_rng(seed))
        assert 0 < delta <= 4 * theta
        assert np.abs(jd.values - j.values).max() < theta
        assert np.abs(gd.values - g.values).max() < theta


def test_noise_level_example1_tau64(spec):
    mesh = build_mesh(64)
    meas = permutation_measurements(mesh, synthesize_truth(mesh), spec, "single",
                                    NoiseModel("example1", 0))
    assert meas.delta == pytest.approx(4.3377e-3, rel=0.5)


def test_noise_reproducible(mesh8, spec):
    truth = synthesize_truth(mesh8)
    m1 = permutation_measurements(mesh8, truth, spec, "six", NoiseModel(0.1, 7))
    m2 = permutation_measurements(mesh8, truth, spec, "six", NoiseModel(0.1, 7))
    m3 = permutation_measurements(mesh8, truth, spec, "six", NoiseModel(0.1, 8))
    assert m1.delta == m2.delta != m3.delta
    for (j1, g1), (j2, g2) in zip(m1.pairs, m2.pairs):
        np.testing.assert_array_equal(j1.values, j2.values)
        np.testing.assert_array_equal(g1.values, g2.values)


def test_noise_model():
    mesh = build_mesh(16)
    assert NoiseModel("example1").amplitude(mesh) == example1_theta(mesh)
    rho = 1e-3 * np.sqrt(mesh.h)
    assert example1_theta(mesh) == pytest.approx(mesh.h * np.sqrt(10 * rho))
    assert NoiseModel(0.05).amplitude(mesh) == 0.05
    with pytest.raises(ConfigurationError):
        NoiseModel(-0.1).amplitude(mesh)


def test_delta_decreases_across_levels(spec):
    deltas = [permutation_measurements(build_mesh(t), synthesize_truth(build_mesh(t)), spec,
                                       "single", NoiseModel("example1", 0)).delta
              for t in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(deltas, deltas[1:]))


# ---------------------------------------------------------------- measurement sets

def test_measurement_modes():
    assert measurement_patterns("single") == [(-1.0, 1.0, -2.0, 3.0)]
    six = measurement_patterns("six")
    assert len(six) == 6 and len(set(six)) == 6
    assert all(p[3] == 3.0 for p in six)
    assert sorted(p[:3] for p in six) == sorted(
        [(-1.0, 1.0, -2.0), (-1.0, -2.0, 1.0), (1.0, -1.0, -2.0),
         (1.0, -2.0, -1.0), (-2.0, -1.0, 1.0), (-2.0, 1.0, -1.0)])
    sixteen = measurement_patterns("sixteen")
    assert len(sixteen) == 16 and len(set(sixteen)) == 16
    assert len(measurement_patterns("sixteen", 24)) == 24
    with pytest.raises(ConfigurationError):
        measurement_patterns("twelve")
    with pytest.raises(ConfigurationError):
        measurement_patterns("sixteen", 25)


def test_measurement_set_counts(mesh8, spec):
    truth = synthesize_truth(mesh8)
    assert permutation_measurements(mesh8, truth, spec, "single").count == 1
    assert permutation_measurements(mesh8, truth, spec, "six").count == 6
    assert permutation_measurements(mesh8, truth, spec, "sixteen").count == 16


def test_six_mode_consistent_at_truth(mesh16, spec):
    truth = synthesize_truth(mesh16)
    meas = permutation_measurements(mesh16, truth, spec, "six")
    J, cache = misfit(mesh16, truth.pair, spec, meas)
    assert J <= 1e-15
    for pair in meas.pairs:
        assert misfit(mesh16, truth.pair, spec, MeasurementSet((pair,)))[0] <= 1e-15


# ---------------------------------------------------------------- errors

def test_errors_vanish_at_truth(mesh16, spec):
    truth = synthesize_truth(mesh16)
    meas = permutation_measurements(mesh16, truth, spec, "single")
    rep = compute_errors(mesh16, truth.pair, truth, spec, meas)
    for value in (rep.E_qa, rep.E_N, rep.E_M, rep.E_D):
        assert 0 <= value <= 1e-9
    assert rep.delta == 0.0
    # against the discontinuous truth the interpolant is off by a linear ramp
    # on one column of cells per interface: ||ramp||^2 = jump^2 * w * 2 / 3
    w = 2 / 16
    expected = np.sqrt((1 + 4) * w * 2 / 3) + np.sqrt(4 * w * 2 / 3)
    assert rep.E_qa_exact == pytest.approx(expected, rel=1e-12)


def test_errors_positive_away_from_truth(mesh8, spec):
    truth = synthesize_truth(mesh8)
    meas = permutation_measurements(mesh8, truth, spec, "single", NoiseModel(0.05, 0))
    rep = compute_errors(mesh8, CoefficientPair.constant(mesh8, 1.5, 4.0), truth, spec, meas)
    assert min(rep.E_qa, rep.E_N, rep.E_M, rep.E_D) > 0
    assert rep.delta == meas.delta
    assert rep.E_qa > 1.0


# ---------------------------------------------------------------- ladder

def test_experiment_config_validation():
    with pytest.raises(ConfigurationError):
        ExperimentConfig(tau_levels=(4, 12))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(tau_levels=(2, 4))
    with pytest.raises(ConfigurationError):
        ExperimentConfig(tau_levels=())


def test_ladder_warm_start():
    config = ExperimentConfig(tau_levels=(4, 8), recon=ReconConfig(max_iters=10))
    results = run_ladder(config)
    assert [r.mesh.tau for r in results] == [4, 8]
    coarse = results[0].state.pair
    np.testing.assert_array_equal(results[1].initial.q, prolongate(NodalField(coarse.q, 4), 8).values)
    np.testing.assert_array_equal(results[1].initial.a, prolongate(NodalField(coarse.a, 4), 8).values)
    for r in results:
        assert r.initial.within(ProblemSpec().bounds)
        assert r.state.pair.within(ProblemSpec().bounds)
        assert r.report.tau == r.mesh.tau
        assert r.report.iterations == r.state.iteration


def test_ladder_partial_results():
    config = ExperimentConfig(tau_levels=(4, 8), recon=ReconConfig(max_iters=2))

    def fail_on_fine_level(state):
        if state.pair.q.size == 81:
            raise ValueError("injected")

    with pytest.raises(ValueError) as info:
        run_ladder(config, callback=fail_on_fine_level)
    assert [r.mesh.tau for r in info.value.partial_results] == [4]
