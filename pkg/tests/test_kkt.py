import json
import math

import numpy as np
import pytest

import marginleak as ml
from kkt_constructions import (
    construction_suite,
    margin_values,
    opposite_pair_network,
    shared_pattern_network,
    single_point_network,
    verify_stationarity,
)


def identity_1d_network():
    # relu(x) - relu(-x) = x
    return ml.NetworkParams.from_neurons([([1.0], 0.0, 1.0), ([-1.0], 0.0, -1.0)])


class TestMargin:
    def test_min_absolute_output(self):
        net = identity_1d_network()
        data = ml.LabeledDataset(np.array([[1.0], [-2.0], [1.5]]), np.array([1.0, -1.0, 1.0]))
        m, idx = ml.margin(net, data)
        assert m == 1.0
        assert idx == (0,)

    def test_single_point(self):
        net = identity_1d_network()
        data = ml.LabeledDataset(np.array([[-0.3]]), np.array([-1.0]))
        m, idx = ml.margin(net, data)
        assert m == pytest.approx(0.3)
        assert idx == (0,)

    def test_all_zero_outputs_degenerate(self):
        net = ml.NetworkParams(np.ones((2, 1)), np.zeros(2), np.zeros(2))
        data = ml.LabeledDataset(np.array([[1.0]]), np.array([1.0]))
        with pytest.raises(ml.DegenerateNetworkError):
            ml.margin(net, data)

    def test_matches_trace_min_margin(self, symmetric_pair_run):
        data, _, net, trace = symmetric_pair_run
        m, _ = ml.margin(net, data)
        assert m == pytest.approx(abs(trace.final().min_margin), rel=1e-12)


class TestEstimateLambdas:
    def test_recovers_constructed_duals(self):
        net, data, lam, m = opposite_pair_network([1.0], k_pos=2, k_neg=2)
        assert verify_stationarity(net, data, lam) < 1e-12
        report = ml.estimate_lambdas(net, data)
        assert report.stationarity_residual < 1e-8
        np.testing.assert_allclose(report.lambdas, lam, atol=1e-6)

    def test_exact_feasibility_gives_zero_residual(self):
        net, data, lam, m = single_point_network([0.8, -0.4], 1.0, [1.2])
        report = ml.estimate_lambdas(net, data)
        assert report.stationarity_residual < 1e-12

    def test_empty_support_reports_residual_one(self):
        # The closest point to the margin is misclassified, so no point is
        # within the slack band around +m.
        net = identity_1d_network()
        data = ml.LabeledDataset(np.array([[1.0]]), np.array([-1.0]))
        report = ml.estimate_lambdas(net, data)
        assert report.support_indices == ()
        assert report.stationarity_residual == 1.0
        np.testing.assert_array_equal(report.lambdas, 0.0)

    def test_complementary_slackness(self, symmetric_pair_run):
        data, _, net, _ = symmetric_pair_run
        slack = 0.1
        report = ml.estimate_lambdas(net, data, support_slack=slack)
        z = np.abs(data.labels * ml.forward_batch(net, data.points))
        for i in range(data.size):
            assert report.lambdas[i] * (z[i] - report.margin) <= slack * report.margin * report.lambdas[i] + 1e-12

    def test_scaling_behavior(self):
        net, data, lam, m = shared_pattern_network(
            np.random.default_rng(0).normal(size=(3, 40)), [1.0, 0.7]
        )
        base = ml.estimate_lambdas(net, data)
        scaled = ml.estimate_lambdas(net.scaled(2.0), data)
        assert scaled.margin == pytest.approx(4.0 * base.margin, rel=1e-9)
        assert scaled.support_indices == base.support_indices
        np.testing.assert_allclose(scaled.lambdas, base.lambdas, rtol=1e-6)

    def test_sigma_primes_strict_convention(self):
        net, data, _, _ = single_point_network([1.0], 1.0, [1.0])
        report = ml.estimate_lambdas(net, data)
        pre = data.points @ net.weights.T + net.biases
        np.testing.assert_array_equal(report.sigma_primes, (pre > 0).astype(np.int8))

    def test_trained_pair_close_to_stationary(self, symmetric_pair_run):
        data, _, net, _ = symmetric_pair_run
        report = ml.estimate_lambdas(net, data)
        assert report.stationarity_residual < 1e-2
        # The limit duals for the symmetric pair are 1/sqrt(2) each.
        np.testing.assert_allclose(report.lambdas, 1.0 / math.sqrt(2.0), atol=5e-3)


class TestConstructionSuite:
    def test_twenty_networks_verify_and_recover(self):
        for net, data, lam, m in construction_suite(20, seed=3):
            assert verify_stationarity(net, data, lam) < 1e-12
            np.testing.assert_allclose(margin_values(net, data), m, rtol=1e-9)
            report = ml.estimate_lambdas(net, data)
            assert report.stationarity_residual < 1e-8
            assert np.max(np.abs(report.lambdas - lam)) < 1e-6


class TestDiagnosticBounds:
    def test_zero_duals_trivially_respect_upper_bound(self):
        net = identity_1d_network()
        data = ml.LabeledDataset(np.array([[1.0], [2.0]]), np.array([-1.0, -1.0]))
        report = ml.estimate_lambdas(net, data)  # both misclassified: empty support
        diag = ml.diagnostic_bounds(report, net, data)
        np.testing.assert_array_equal(diag.pos_sums, 0.0)
        np.testing.assert_array_equal(diag.neg_sums, 0.0)
        assert diag.upper_bound_ok

    def test_near_orthogonal_construction_satisfies_both_bounds(self):
        rng = np.random.default_rng(11)
        net, data, lam, m = shared_pattern_network(
            rng.normal(size=(5, 2000)), rng.uniform(0.5, 1.5, 4)
        )
        report = ml.estimate_lambdas(net, data)
        diag = ml.diagnostic_bounds(report, net, data)
        assert diag.bound_denominator_positive
        assert diag.upper_bound_ok
        assert diag.lower_bound_ok
        # Direct evaluation of both sides.
        assert np.max(diag.pos_sums) <= diag.upper_bound * (1 + 1e-9)
        for i in report.support_indices:
            assert diag.pos_sums[i] >= diag.lower_bound * (1 - 1e-9)

    def test_single_point_delta_flagged_undefined(self):
        net, data, _, _ = single_point_network([1.0], 1.0, [1.0])
        report = ml.estimate_lambdas(net, data)
        diag = ml.diagnostic_bounds(report, net, data)
        assert not diag.delta_defined
        assert diag.max_abs_inner == 0.0

    def test_margin_lower_check_on_trained_run(self, symmetric_pair_run):
        data, cfg, net, _ = symmetric_pair_run
        report = ml.estimate_lambdas(net, data)
        diag = ml.diagnostic_bounds(report, net, data, loss_kind=cfg.loss_kind)
        assert diag.loss_value < 1.0 / (2.0 * math.e)
        assert report.margin > 1.0 / math.e
        assert diag.margin_lower_ok

    def test_correlated_data_flags_vacuous_bounds(self):
        net = identity_1d_network()
        points = np.array([[1.0], [1.0], [1.0], [-1.0]])
        data = ml.LabeledDataset(points, np.array([1.0, 1.0, 1.0, -1.0]))
        report = ml.estimate_lambdas(net, data)
        diag = ml.diagnostic_bounds(report, net, data)
        assert not diag.bound_denominator_positive
        assert diag.upper_bound == math.inf


class TestReportFile:
    def test_versioned_document(self, tmp_path):
        net, data, _, _ = opposite_pair_network([1.0])
        report = ml.analyze(net, data)
        path = tmp_path / "report.json"
        ml.write_report(report, path)
        doc = json.loads(path.read_text())
        assert doc["format_version"] == 1
        assert doc["margin"] == report.margin
        assert doc["support_indices"] == [0, 1]
        assert "diagnostics" in doc
        assert doc["diagnostics"]["margin_lower_ok"] == report.diagnostics.margin_lower_ok
