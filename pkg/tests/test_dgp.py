import numpy as np
import pytest

from conftest import noiseless
from swcrt.correlation import CorrelationSpec
from swcrt.design import TreatmentStructure, build_design
from swcrt.dgp import PRESET_NAMES, ScenarioSpec, preset, simulate_trial, true_estimand
from swcrt.errors import DimensionMismatch, IndexOutOfRange, UndefinedEstimand, ValidationError

PHI = tuple(range(5, 15))
DELTA = (0, 0, 0.5, 1, 2, 4, 6, 6, 6)
XI = (6, 3, 1, 0.5, 0.1, 0, 0, 0)


class TestTrueEstimand:
    def test_etate(self):
        assert true_estimand(TreatmentStructure.exposure(DELTA)) == pytest.approx(17 / 6, abs=1e-15)

    def test_ctate(self):
        assert true_estimand(TreatmentStructure.calendar(XI)) == pytest.approx(1.325, abs=1e-15)

    def test_immediate(self):
        assert true_estimand(TreatmentStructure.immediate(6)) == 6

    def test_interval(self):
        assert true_estimand(TreatmentStructure.exposure(DELTA), (3, 4)) == 0.75
        assert true_estimand(TreatmentStructure.calendar(XI), (2, 3)) == 4.5

    def test_bad_interval(self):
        with pytest.raises(IndexOutOfRange):
            true_estimand(TreatmentStructure.calendar(XI), (1, 3))
        with pytest.raises(IndexOutOfRange):
            true_estimand(TreatmentStructure.exposure(DELTA), (5, 10))

    def test_undefined(self):
        with pytest.raises(UndefinedEstimand):
            true_estimand(TreatmentStructure.exposure(DELTA), estimand="CTATE")


class TestPresets:
    def test_names(self):
        for name in PRESET_NAMES:
            sc = preset(name)
            assert sc.design.I == 18 and sc.design.J == 10 and sc.design.K == 30
            assert sc.period_effects == tuple(float(v) for v in PHI)
        assert preset("sim2-exposure").structure.delta == DELTA
        assert preset("sim3-calendar").structure.xi == XI

    def test_unknown(self):
        with pytest.raises(ValidationError):
            preset("sim4")


class TestSimulateTrial:
    def test_shapes_and_means(self):
        data = simulate_trial(preset("sim1-immediate"), 3)
        assert data.outcomes.shape == (18, 10, 30)
        np.testing.assert_array_equal(data.means, data.outcomes.mean(axis=2))
        assert data.within.df == 18 * 10 * 29

    def test_noiseless_recovery(self):
        sc = noiseless("sim1-immediate")
        means = simulate_trial(sc).means
        q = sc.design.sequences[:, None]
        j = np.arange(1, 11)[None, :]
        expected = np.array(PHI)[None, :] + 6.0 * (j > q)
        assert np.abs(means - expected).max() < 1e-8

    def test_calendar_final_period_has_no_effect(self):
        means = simulate_trial(noiseless("sim3-calendar")).means
        assert means[0, 9] == pytest.approx(14.0, abs=1e-8)

    def test_reproducible(self):
        a = simulate_trial(preset("sim2-exposure"), 5).outcomes
        b = simulate_trial(preset("sim2-exposure"), 5).outcomes
        np.testing.assert_array_equal(a, b)
        c = simulate_trial(preset("sim2-exposure"), 6).outcomes
        assert not np.array_equal(a, c)

    def test_seed_changes_data(self):
        a = simulate_trial(preset("sim1-immediate", seed=1)).outcomes
        b = simulate_trial(preset("sim1-immediate", seed=2)).outcomes
        assert not np.array_equal(a, b)

    def test_constant_effect_collapse(self):
        d = build_design(18, 10, 30)
        corr = CorrelationSpec("exchangeable", 1 / 9, 1.0)
        a = ScenarioSpec(d, TreatmentStructure.exposure([2.5] * 9), PHI, corr, 99)
        b = ScenarioSpec(d, TreatmentStructure.immediate(2.5), PHI, corr, 99)
        np.testing.assert_array_equal(simulate_trial(a, 4).outcomes, simulate_trial(b, 4).outcomes)

    def test_independence_has_no_cluster_effect(self, rng):
        d = build_design(3, 4, 400)
        sc = ScenarioSpec(d, TreatmentStructure.immediate(0), (0,) * 4, CorrelationSpec("independence", 5.0, 1.0), 3)
        means = simulate_trial(sc).means
        # cell means have variance 1/400 only
        assert means.std() < 0.1

    def test_nested_variance(self):
        d = build_design(3, 4, 2)
        corr = CorrelationSpec("nested-exchangeable", 0.0, 1e-12, 1.0)
        sc = ScenarioSpec(d, TreatmentStructure.immediate(0), (0,) * 4, corr, 3)
        data = simulate_trial(sc).outcomes
        # cluster-period shock shared by the individuals of a cell
        np.testing.assert_allclose(data[..., 0], data[..., 1], atol=1e-5)
        assert data.std() > 0.1

    def test_validation(self):
        d = build_design(3, 4, 1)
        corr = CorrelationSpec("exchangeable", 0.1, 1.0)
        with pytest.raises(DimensionMismatch):
            ScenarioSpec(d, TreatmentStructure.immediate(1), (0, 0, 0), corr)
        with pytest.raises(DimensionMismatch):
            ScenarioSpec(d, TreatmentStructure.exposure([1, 2]), (0,) * 4, corr)
        with pytest.raises(ValidationError):
            ScenarioSpec(d, TreatmentStructure.immediate(1), (0,) * 4, corr, seed=-1)
        with pytest.raises(ValidationError):
            simulate_trial(ScenarioSpec(d, TreatmentStructure.immediate(1), (0,) * 4, corr), -1)


@pytest.mark.slow
@pytest.mark.parametrize("name", PRESET_NAMES)
def test_marginal_means(name):
    sc = preset(name)
    R = 2000
    acc = np.zeros((18, 10))
    acc2 = np.zeros((18, 10))
    for r in range(R):
        m = simulate_trial(sc, r).means
        acc += m
        acc2 += m * m
    mean = acc / R
    sd = np.sqrt(acc2 / R - mean**2)
    target = sc.mean_matrix()
    assert (np.abs(mean - target) < 4 * sd / np.sqrt(R)).all()


@pytest.mark.slow
def test_scenario2_late_cell_mean():
    sc = preset("sim2-exposure")
    vals = np.array([simulate_trial(sc, r).means[0, 9] for r in range(1000)])
    assert abs(vals.mean() - 20.0) < 3 * vals.std(ddof=1) / np.sqrt(1000)
