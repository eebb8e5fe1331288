"""
Tests for correlation decay, the CLT harness and the Birkhoff cohomology check
"""
import math

import numpy as np
import pytest

from ergolab.exceptions import ClassSViolation, InvalidInputError
from ergolab.measures import AtomicMeasure, LeafFamily
from ergolab.base_dynamics import l_adic
from ergolab.potentials import geometric_potential
from ergolab.skew_transfer import SkewSystem, equilibrium, solenoid
from ergolab.statistics import (
    birkhoff_cohomology_check,
    clt_sample,
    correlation,
    correlation_monte_carlo,
    fiber_integral,
    ks_normal,
    variance_estimate,
)
from ergolab.systems import fiber_observables


def cos2pi(x):
    return np.cos(2.0 * np.pi * x)


def y_sin_abs(x, y):
    return y * np.abs(np.sin(np.pi * x))


@pytest.fixture(scope="module")
def solenoid_equilibrium(cosine_solenoid):
    return equilibrium(cosine_solenoid, AtomicMeasure.dirac(0.0)).family


@pytest.fixture(scope="module")
def fine_solenoid():
    """Cosine solenoid on 256 cells with a product family; enough for fiber-constant observables"""
    base = l_adic(2)
    system = SkewSystem.build(base, solenoid(0.5, 0.25), geometric_potential(base, 1.0, zeta=1.0), N=256, bins=256)
    return system, system.product_family(AtomicMeasure.dirac(0.5))


@pytest.fixture(scope="module")
def affine_equilibrium(doubling_affine_system):
    """Equilibrium of (2x, y/2 + 1/4): every leaf sits next to y = 1/2"""
    return equilibrium(doubling_affine_system, AtomicMeasure.dirac(0.0)).family


class TestCorrelation:
    """Test C(n) through transfer operator duality"""

    def test_constant_psi_has_no_correlation(self, doubling_affine_system, affine_equilibrium):
        series = correlation(doubling_affine_system, affine_equilibrium, lambda x: np.ones_like(x), y_sin_abs, 6)
        assert np.allclose(series.C_values, 0.0, atol=1e-9)

    def test_constant_observable_has_no_correlation(self, doubling_affine_system, affine_equilibrium):
        series = correlation(doubling_affine_system, affine_equilibrium, cos2pi,
                             lambda x, y: np.ones_like(y), 6)
        assert np.allclose(series.C_values, 0.0, atol=1e-9)

    def test_fourier_coefficient_at_zero(self, doubling_affine_system, affine_equilibrium):
        """C(0) = y* int cos(2 pi x) |sin pi x| dx = -2y*/(3 pi) with y* the leaf position near 1/2"""
        series = correlation(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs, 8)
        assert series.C_values[0] == pytest.approx(-1.0 / (3.0 * math.pi), rel=0.02)
        assert abs(series.C_values[1]) < abs(series.C_values[0])

    def test_exponential_decay(self, doubling_affine_system, affine_equilibrium):
        """Doubling quarters the Fourier weight of |sin pi x| at every step"""
        series = correlation(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs, 8)
        assert series.fitted_rate < 0.5
        assert series.fit_r2 > 0.9
        assert series.to_rows()[0] == (0, series.C_values[0])
        assert series.to_dict()["n_max"] == 8

    def test_invalid_n_max(self, doubling_affine_system, affine_equilibrium):
        with pytest.raises(InvalidInputError, match="n_max"):
            correlation(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs, 0)

    def test_grid_mismatch(self, doubling_affine_system):
        fam = LeafFamily.product(np.full(8, 1 / 8), AtomicMeasure.dirac(0.5))
        with pytest.raises(InvalidInputError, match="leaves"):
            correlation(doubling_affine_system, fam, cos2pi, y_sin_abs, 4)

    def test_fiber_integral(self, affine_equilibrium):
        """s(x) = y* |sin pi x| leaf by leaf"""
        s = fiber_integral(affine_equilibrium, y_sin_abs)
        y_star = affine_equilibrium.leaves[0].positions[0]
        assert s == pytest.approx(y_star * np.abs(np.sin(np.pi * affine_equilibrium.centers)))

    def test_monte_carlo_agrees_with_duality(self, doubling_affine_system, affine_equilibrium):
        """Direct orbit averages agree with the duality series within their standard errors"""
        series = correlation(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs, 3)
        mc = correlation_monte_carlo(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs,
                                     3, samples=20000, seed=11, workers=2)
        assert mc.samples == 20000
        deviation = np.abs(mc.C_values - np.array(series.C_values))
        assert np.all(deviation <= 4.0 * mc.std_errors + 1e-3)

    def test_monte_carlo_reproducible(self, doubling_affine_system, affine_equilibrium):
        a = correlation_monte_carlo(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs,
                                    2, samples=2000, seed=4, workers=2)
        b = correlation_monte_carlo(doubling_affine_system, affine_equilibrium, cos2pi, y_sin_abs,
                                    2, samples=2000, seed=4, workers=2)
        assert np.array_equal(a.C_values, b.C_values)


class TestKolmogorovSmirnov:
    """Test the KS wrapper"""

    def test_matching_normal(self, rng):
        result = ks_normal(rng.normal(scale=2.0, size=5000), sigma=2.0)
        assert result.critical == pytest.approx(1.358 / math.sqrt(5000))
        assert result.statistic < 2.0 * result.critical

    def test_wrong_scale_rejected(self, rng):
        result = ks_normal(rng.normal(scale=2.0, size=5000), sigma=1.0)
        assert not result.passed

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            ks_normal(np.array([]))

    def test_invalid_sigma(self):
        with pytest.raises(InvalidInputError, match="sigma"):
            ks_normal(np.zeros(10), sigma=0.0)


class TestClt:
    """Test variance estimation and the CLT harness"""

    def test_variance_of_lacunary_cosine(self, doubling_affine_system, affine_equilibrium):
        """cos 2 pi x under doubling: C(0) = 1/2 and all lagged terms vanish"""
        estimate = variance_estimate(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x))
        assert estimate.sigma_sq == pytest.approx(0.5, abs=1e-9)
        assert estimate.c0 == pytest.approx(0.5, abs=1e-9)
        assert estimate.mean == pytest.approx(0.0, abs=1e-12)
        assert estimate.lag == 1
        assert not estimate.floored
        assert not estimate.is_degenerate()

    def test_constant_observable_has_zero_variance(self, doubling_affine_system, affine_equilibrium):
        estimate = variance_estimate(doubling_affine_system, affine_equilibrium,
                                     lambda x, y: np.full(np.shape(y), 3.0))
        assert estimate.sigma_sq == pytest.approx(0.0, abs=1e-9)
        assert estimate.mean == pytest.approx(3.0)
        assert estimate.is_degenerate()

    def test_adding_a_constant_keeps_the_variance(self, cosine_solenoid, solenoid_equilibrium):
        """sigma^2 of phi + 5 equals sigma^2 of phi for a fiber-dependent phi"""
        base = variance_estimate(cosine_solenoid, solenoid_equilibrium, y_sin_abs)
        shifted = variance_estimate(cosine_solenoid, solenoid_equilibrium, lambda x, y: y_sin_abs(x, y) + 5.0)
        assert base.sigma_sq > 0
        assert shifted.sigma_sq == pytest.approx(base.sigma_sq, rel=1e-8, abs=1e-12)
        assert shifted.mean == pytest.approx(base.mean + 5.0)
        assert shifted.lag == base.lag

    def test_coboundary_is_degenerate(self, fine_solenoid):
        """u o F - u with u = cos 2 pi x has variance at the grid resolution and bounded sums"""
        system, fam = fine_solenoid
        phi_obs = fiber_observables.build("coboundary", system)
        estimate = variance_estimate(system, fam, phi_obs)
        assert estimate.c0 == pytest.approx(1.0, rel=1e-3)
        assert estimate.sigma_sq <= 1e-6
        report = clt_sample(system, fam, phi_obs, n=200, samples=2000, seed=0)
        assert report.degenerate
        assert report.ks_statistic is None
        assert report.max_abs_sum <= 2.0 / math.sqrt(200) + 1e-9
        assert report.passed

    def test_degenerate_ratio_can_be_disabled(self, fine_solenoid):
        """With the relative threshold off only sigma^2 <= 1e-12 counts as zero"""
        system, fam = fine_solenoid
        report = clt_sample(system, fam, fiber_observables.build("coboundary", system), n=100,
                            samples=1000, degenerate_ratio=0.0)
        assert not report.degenerate
        assert report.ks_statistic is not None

    def test_normal_limit(self, doubling_affine_system, affine_equilibrium):
        report = clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x),
                            n=100, samples=2000, seed=1)
        assert not report.degenerate
        assert report.ks_statistic < 2.0 * report.ks_critical
        assert report.ks_critical == pytest.approx(1.358 / math.sqrt(2000))
        assert report.to_dict()["sample_count"] == 2000

    def test_degenerate_branch(self, doubling_affine_system, affine_equilibrium):
        """A zero observable skips KS and compares the max normalized sums instead"""
        report = clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: np.zeros_like(y),
                            n=10, samples=1000)
        assert report.degenerate
        assert report.ks_statistic is None
        assert report.ks_pass is None
        assert report.max_abs_sum == 0.0
        assert report.passed

    def test_reproducible_with_workers(self, doubling_affine_system, affine_equilibrium):
        kwargs = dict(n=20, samples=1000, seed=9, workers=3)
        a = clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x), **kwargs)
        b = clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x), **kwargs)
        assert a.ks_statistic == b.ks_statistic
        assert a.workers == 3

    @pytest.mark.slow
    def test_ks_calibration(self, doubling_affine_system, affine_equilibrium):
        """KS at 5% accepts the normal limit for at least 90 of 100 seeds"""
        passes = sum(
            clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x),
                       n=100, samples=1000, seed=seed).passed
            for seed in range(100)
        )
        assert passes >= 90

    @pytest.mark.parametrize("n,samples,match", [(100, 999, "samples"), (9, 1000, "Birkhoff length")])
    def test_invalid_arguments(self, doubling_affine_system, affine_equilibrium, n, samples, match):
        with pytest.raises(InvalidInputError, match=match):
            clt_sample(doubling_affine_system, affine_equilibrium, lambda x, y: cos2pi(x),
                       n=n, samples=samples)


class TestCohomology:
    """Test the Birkhoff cohomology check on the fixed fiber y = 0"""

    def test_closed_form(self, contracting_solenoid):
        """With G = y/2 and y0 = 0: Delta_n = y(1 - 2^-n)/(n(1 - 1/2))"""
        ns = (10, 100, 1000)
        report = birkhoff_cohomology_check(contracting_solenoid, lambda x, y: cos2pi(x) + y, 0.0,
                                           orbit_count=8, ns=ns, seed=2)
        for y, deltas in zip(report.initial_y, report.deltas):
            expected = [y * (1.0 - 0.5 ** n) / (n * 0.5) for n in ns]
            assert deltas == pytest.approx(expected, abs=1e-9)
        assert report.within_bound
        assert report.order_one_over_n
        assert report.passed

    def test_fiber_constant_potential(self, contracting_solenoid):
        """A potential that ignores y gives Delta = 0 on every orbit"""
        report = birkhoff_cohomology_check(contracting_solenoid, lambda x, y: cos2pi(x), 0.0,
                                           orbit_count=4, ns=(10, 100))
        assert np.allclose(report.deltas, 0.0)
        assert report.fitted_C == 0.0
        assert report.passed

    def test_outside_class_s(self, contracting_solenoid):
        with pytest.raises(ClassSViolation):
            birkhoff_cohomology_check(contracting_solenoid, lambda x, y: y, 0.5, ns=(10, 100))

    def test_report_shape(self, contracting_solenoid):
        report = birkhoff_cohomology_check(contracting_solenoid, lambda x, y: y, 0.0, orbit_count=5,
                                           ns=(100, 10))
        assert report.ns == [10, 100]
        assert len(report.deltas) == 5
        assert len(report.deltas[0]) == 2
        assert set(report.to_dict()) >= {"ns", "deltas", "fitted_C", "within_bound", "order_one_over_n", "passed"}

    def test_invalid_horizons(self, contracting_solenoid):
        with pytest.raises(InvalidInputError, match="ns"):
            birkhoff_cohomology_check(contracting_solenoid, lambda x, y: y, 0.0, ns=(0, 10))
