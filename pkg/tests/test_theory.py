import numpy as np
import pytest

from calibre.core import GroundTruthModel, seeded_rng
from calibre.theory import (
    ScalingGrid,
    TheoryExperiment,
    bound_scaling_check,
    expected_noisy_mean,
    make_theory_model,
    mean_error_mc,
    verify_theory,
)


def test_closed_form_examples():
    two = GroundTruthModel([[1.0, 0.0], [-1.0, 0.0]], np.eye(2), [50, 50])
    np.testing.assert_allclose(expected_noisy_mean(two, 0.2, 0), [0.8, 0.0], rtol=1e-15)
    rng = np.random.default_rng(0)
    model = GroundTruthModel(rng.normal(size=(4, 3)), np.eye(3), [40, 30, 20, 10])
    for k in range(4):
        np.testing.assert_array_equal(expected_noisy_mean(model, 0.0, k), model.means[k])
    same = GroundTruthModel(np.tile([1.5, -2.0, 0.5], (4, 1)), np.eye(3), [40, 30, 20, 10])
    np.testing.assert_allclose(expected_noisy_mean(same, 0.6, 3), same.means[3], rtol=1e-14)


def test_closed_form_weights_sum_to_one():
    model = GroundTruthModel(np.eye(4), np.eye(4), [7, 5, 3, 1])
    for k in range(4):
        # with unit-vector means the output coordinates are the weights
        assert expected_noisy_mean(model, 0.35, k).sum() == pytest.approx(1.0, rel=1e-15)


def test_noiseless_variance_matches():
    model = GroundTruthModel([[0.0, 0.0], [3.0, 0.0]], np.eye(2), [10_000, 10_000])
    exp = TheoryExperiment(model, 0.0, q=1, trials=200, head_classes=[0])
    res = mean_error_mc(exp, seeded_rng(0, "t"))
    mse, se = res.vanilla()
    assert abs(mse[1] - 2 / 10_000) <= 3 * se[1]


def test_mc_mean_matches_closed_form():
    model = GroundTruthModel([[1.0, 0.0], [-0.5, 1.0], [0.0, -1.0]], np.eye(2), [800, 400, 200])
    exp = TheoryExperiment(model, 0.3, q=1, trials=300, head_classes=[0])
    est, se = mean_error_mc(exp, seeded_rng(1, "t")).mean_estimate()
    for k in range(3):
        assert np.all(np.abs(est[k] - expected_noisy_mean(model, 0.3, k)) <= 3 * se[k])


def test_delta_q_and_donors():
    model = GroundTruthModel([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0], [0.0, 2.0]], np.eye(2), [9, 9, 9, 1])
    exp = TheoryExperiment(model, 0.1, q=2, head_classes=[0, 1, 2])
    assert exp.tail_classes == [3]
    assert exp.donors == {3: [0, 2]}
    assert exp.delta_q == pytest.approx(np.sqrt(5.0))
    with pytest.raises(ValueError):
        TheoryExperiment(model, 0.1, q=4, head_classes=[0, 1, 2])
    with pytest.raises(ValueError):
        TheoryExperiment(model, 0.1, q=1, estimator="median")


def test_weighted_estimator_runs():
    model = make_theory_model(4, 30, 300)
    exp = TheoryExperiment(model, 0.1, q=2, trials=20, head_classes=[0, 1], estimator="weighted")
    res = mean_error_mc(exp, seeded_rng(0, "w"))
    assert res.calibrated_sq.shape == (20, 4)
    np.testing.assert_array_equal(res.calibrated_sq[:, :2], res.vanilla_sq[:, :2])


def test_calibration_helps_when_donors_agree():
    model = GroundTruthModel(np.zeros((4, 4)), np.eye(4), [2000, 2000, 2000, 20])
    exp = TheoryExperiment(model, 0.2, q=3, tau_calib=1.0, trials=100, head_classes=[0, 1, 2])
    res = mean_error_mc(exp, seeded_rng(2, "regime"))
    assert exp.delta_q == 0.0
    assert res.calibrated()[0][3] < res.vanilla()[0][3]


def _tail_mse(m, n_tail, trials=400, seed=0):
    model = make_theory_model(m, n_tail, 10 * n_tail)
    exp = TheoryExperiment(model, 0.0, q=1, trials=trials, head_classes=[0, 1])
    res = mean_error_mc(exp, seeded_rng(seed, f"mse/{m}/{n_tail}"))
    return res.vanilla_sq[:, exp.tail_classes].mean()


def test_noiseless_scaling_laws():
    for n in (50, 100, 200):
        assert _tail_mse(8, n) * n / 8 == pytest.approx(1.0, rel=0.1)
    assert _tail_mse(16, 100) / _tail_mse(8, 100) == pytest.approx(2.0, rel=0.1)


def test_make_theory_model_layout():
    model = make_theory_model(2, 10, 100, n_head_classes=2, n_tail_classes=2, separation=2.0)
    np.testing.assert_array_equal(model.means, [[2, 0], [0, 2], [-2, 0], [0, -2]])
    np.testing.assert_array_equal(model.counts, [100, 100, 10, 10])


def test_scaling_grid_needs_points():
    with pytest.raises(ValueError):
        bound_scaling_check(ScalingGrid(etas=(0.0, 0.1, 0.2)), seeded_rng(0, "s"))


def test_verify_theory_report_shape():
    report = verify_theory(
        {
            "closed_form": {"trials": 100},
            "scaling": {"trials": 20, "n_tails": [50, 100, 200, 400]},
            "regime": {"trials": 50},
        }
    )
    assert set(report) == {"seed", "closed_form", "scaling", "regime", "pass"}
    assert len(report["scaling"]["cells"]) == 16
    assert {"intercept", "eta2", "m_over_n"} == set(report["scaling"]["coefficients"])
    for row in report["closed_form"]["rows"]:
        assert {"expected", "mc_mean", "mc_se", "pass"} <= set(row)
    assert isinstance(report["pass"], bool)
