"""
Tests for perturbation families, admissibility and stability curves
"""
import math

import numpy as np
import pytest

from ergolab.base_dynamics import l_adic
from ergolab.exceptions import InvalidInputError, StabilityError
from ergolab.measures import AtomicMeasure
from ergolab.potentials import geometric_potential
from ergolab.skew_transfer import EquilibriumResult, SkewSystem, affine, solenoid
from ergolab.stability import (
    PerturbationFamily,
    StabilityCurve,
    base_shift,
    check_admissibility,
    coefficient,
    constant,
    fiber_shift,
    jacobian_reciprocals,
    stability_curve,
    uniform_constants_probe,
)


class TestPerturbationFamily:
    """Test family validation and caching"""

    def test_deltas_sorted_descending(self, doubling_affine_system):
        family = constant(doubling_affine_system, deltas=(0.01, 0.1, 0.05))
        assert family.deltas == (0.1, 0.05, 0.01)

    @pytest.mark.parametrize("deltas", [(), (0.0, 0.1), (0.5, 1.0)])
    def test_invalid_deltas(self, doubling_affine_system, deltas):
        with pytest.raises(InvalidInputError, match="delta"):
            constant(doubling_affine_system, deltas=deltas)

    def test_R_must_vanish_at_zero(self, doubling_affine_system):
        with pytest.raises(InvalidInputError, match="R\\(0\\)"):
            PerturbationFamily(generator=lambda d: doubling_affine_system, R=lambda d: d + 0.1)

    def test_R_must_be_non_decreasing(self, doubling_affine_system):
        with pytest.raises(InvalidInputError, match="non-decreasing"):
            PerturbationFamily(generator=lambda d: doubling_affine_system, R=lambda d: math.sin(30.0 * d))

    def test_systems_are_cached(self, doubling_affine_system, mocker):
        generator = mocker.Mock(return_value=doubling_affine_system)
        family = PerturbationFamily(generator=generator, R=lambda d: d)
        family.system(0.1)
        family.system(0.1)
        family.system(0.0)
        assert generator.call_count == 2

    def test_fiber_shift_keeps_spectral_data(self, doubling_affine_system):
        """Only the fiber changes, so the base operator is shared"""
        family = fiber_shift(doubling_affine_system, deltas=(0.1,))
        assert family.system(0.0) is doubling_affine_system
        assert family.system(0.1).spectral is doubling_affine_system.spectral
        assert family.kind == "fiber-shift"

    def test_coefficient_directions_length(self, doubling_affine_system):
        with pytest.raises(InvalidInputError, match="directions"):
            coefficient(doubling_affine_system, [0.5, 0.25], [1.0])


class TestAdmissibility:
    """Test the per-delta admissibility checks"""

    def test_jacobian_reciprocals_sum_to_one(self, cosine_solenoid):
        """The normalized operator fixes constants, so the reciprocal Jacobians sum to 1"""
        g = jacobian_reciprocals(cosine_solenoid)
        assert g.shape == (2, cosine_solenoid.N)
        assert np.allclose(g.sum(axis=0), 1.0, atol=1e-8)

    def test_base_shift(self):
        """Shifting 2x by delta moves preimages by delta/2 and leaves the Jacobian unchanged"""
        family = base_shift(affine(0.5, 0.25), l=2, N=64, bins=256, deltas=(0.1, 0.01))
        report = check_admissibility(family, 0.1)
        assert report.passed, report.failures
        assert report.preimage_displacement == pytest.approx(0.05, abs=1e-12)
        assert report.jacobian_difference == pytest.approx(0.0, abs=1e-9)
        assert report.fiber_displacement == pytest.approx(0.0, abs=1e-15)
        assert report.density_ratio == pytest.approx(1.0, abs=1e-9)

    def test_fiber_shift(self, doubling_affine_system):
        """A constant fiber offset displaces fiber images by exactly delta"""
        family = fiber_shift(doubling_affine_system, deltas=(0.1, 0.01))
        report = check_admissibility(family, 0.1)
        assert report.passed, report.failures
        assert report.fiber_displacement == pytest.approx(0.1)
        assert report.preimage_displacement == 0.0

    def test_coefficient_family(self, doubling_affine_system):
        family = coefficient(doubling_affine_system, [0.5, 0.25], [1.0, -1.0], offsets=[0.25, 0.25],
                             deltas=(0.1, 0.01))
        report = check_admissibility(family, 0.1)
        assert report.passed, report.failures
        assert report.fiber_displacement <= 0.1

    def test_understated_modulus_fails(self, doubling_affine_system):
        """Declaring R = delta/10 for a shift of size delta fails (U2.3)"""
        family = fiber_shift(doubling_affine_system, shift_sup=0.1, deltas=(0.1,))
        report = check_admissibility(family, 0.1)
        assert not report.passed
        assert "U2.3" in report.failures
        assert report.to_dict()["U2.3"]["passed"] is False

    def test_report_keys(self, doubling_affine_system):
        report = check_admissibility(constant(doubling_affine_system, deltas=(0.1,)), 0.1)
        assert set(report.to_dict()) == {"delta", "R", "U1", "U2.1", "U2.2", "U2.3", "U3", "passed"}
        assert "spectral_slack" in report.to_dict()["U2.1"]


class TestStabilityCurve:
    """Test the stability sweep"""

    def test_constant_family_has_zero_distances(self, doubling_affine_system):
        curve = stability_curve(constant(doubling_affine_system, deltas=(0.1, 0.01)))
        assert curve.distances == [0.0, 0.0]
        assert curve.C_hat == 0.0
        assert curve.passed
        assert len(curve.to_rows()) == 2

    def test_fiber_shift_moves_fixed_point(self, doubling_affine_system):
        """y/2 + 1/4 + delta has its fixed point at 1/2 + 2 delta"""
        family = fiber_shift(doubling_affine_system, deltas=(0.1, 0.05, 0.02, 0.01))
        curve = stability_curve(family, workers=2)
        bins = doubling_affine_system.bins
        for delta, dist in zip(curve.deltas, curve.distances):
            assert abs(dist - 2.0 * delta) <= 1.0 / bins + 1e-12
        assert curve.monotone
        assert curve.C_stable
        assert curve.within_coupling
        assert curve.passed
        assert set(curve.equilibria) == {0.0, 0.1, 0.05, 0.02, 0.01}

    def test_non_convergence_raises(self, doubling_affine_system, mocker):
        """An equilibrium that fails to converge aborts the sweep with its delta"""
        stalled = EquilibriumResult(family=doubling_affine_system.product_family(AtomicMeasure.dirac(0.0)),
                                    trace=[1.0], converged=False, ratio=math.nan, r2=math.nan)
        mocker.patch("ergolab.stability.equilibrium", return_value=stalled)
        with pytest.raises(StabilityError) as exc_info:
            stability_curve(constant(doubling_affine_system, deltas=(0.1,)), n_max=1)
        assert exc_info.value.delta == 0.0

    def test_coupling_violation_fails(self):
        curve = StabilityCurve(deltas=[0.1, 0.01], distances=[0.5, 0.05], R_values=[0.1, 0.01],
                               envelope_factors=[0.23, 0.046], C_candidates=[2.17, 1.09], C_hat=2.17,
                               monotone=True, C_stable=True, coupling_bounds=[0.2, 0.02])
        assert not curve.within_coupling
        assert not curve.passed
        assert curve.envelopes == pytest.approx([2.17 * 0.23, 2.17 * 0.046])

    def test_unstable_constant_fails(self):
        curve = StabilityCurve(deltas=[0.1, 0.01], distances=[0.1, 0.09], R_values=[0.1, 0.01],
                               envelope_factors=[0.23, 0.046], C_candidates=[0.43, 1.96], C_hat=1.96,
                               monotone=True, C_stable=False)
        assert curve.within_coupling
        assert not curve.passed

    @pytest.mark.slow
    def test_solenoid_fiber_shift_is_stable(self):
        """Shifting the cosine solenoid's fiber moves its equilibrium by O(delta)"""
        base = l_adic(2)
        system = SkewSystem.build(base, solenoid(0.5, 0.175), geometric_potential(base, 1.0, zeta=1.0),
                                  N=64, bins=1024)
        curve = stability_curve(fiber_shift(system, deltas=(0.1, 0.01, 0.001)), workers=2)
        for delta, dist, bound in zip(curve.deltas, curve.distances, curve.coupling_bounds):
            assert dist <= bound
            assert dist >= 2.0 * delta - 2.0 / system.bins
        assert curve.monotone
        assert curve.within_coupling
        assert curve.C_stable
        assert curve.passed


class TestUniformConstants:
    def test_constant_family(self, doubling_affine_system):
        """Identical systems share beta and D; identical leaves have zero Hölder seminorm"""
        family = constant(doubling_affine_system, deltas=(0.1, 0.01))
        report = uniform_constants_probe(family, trials=10, n_max=8, far_pairs=50)
        assert report.deltas == [0.0, 0.1, 0.01]
        assert report.sup_beta == pytest.approx(0.5)
        assert report.B_u == pytest.approx(doubling_affine_system.D / 0.5)
        assert report.sup_holder == 0.0
        assert report.passed
        assert set(report.to_dict()) >= {"sup_beta", "sup_D", "sup_holder", "B_u", "passed"}
