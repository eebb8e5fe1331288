"""
Tests for base maps, preimages and structural checks
"""
import numpy as np
import pytest

from ergolab.base_dynamics import (
    IntervalMap,
    check_structure,
    doubling,
    eval,
    inverse_branches,
    l_adic,
    manneville_pomeau,
    piecewise_affine,
)
from ergolab.exceptions import InvalidInputError


class TestEvaluation:
    """Test pointwise evaluation and preimages"""

    def test_doubling_values(self):
        """Doubling map on sample points"""
        fmap = doubling()
        assert eval(fmap, 0.3) == pytest.approx(0.6)
        assert eval(fmap, 0.75) == pytest.approx(0.5)
        assert eval(fmap, 0.5) == pytest.approx(0.0)

    def test_doubling_preimages(self):
        """Preimages of 0.6 under doubling are 0.3 and 0.8"""
        assert inverse_branches(doubling(), 0.6) == pytest.approx((0.3, 0.8))

    def test_vectorized_shapes(self):
        """Evaluation keeps the input shape; preimages add a leading branch axis"""
        fmap = l_adic(3)
        x = np.linspace(0.0, 0.99, 12).reshape(3, 4)
        assert fmap.evaluate(x).shape == (3, 4)
        assert fmap.preimages(x).shape == (3, 3, 4)

    def test_points_outside_unit_interval(self):
        """Points outside [0, 1] are rejected"""
        with pytest.raises(InvalidInputError, match="must lie in"):
            doubling().evaluate(np.array([0.2, 1.5]))

    def test_preimages_map_back(self):
        """f(f_b^-1(y)) = y for every branch of the tripling map"""
        fmap = l_adic(3)
        y = np.linspace(0.0, 0.999, 50)
        for row in fmap.preimages(y):
            assert np.allclose(fmap.evaluate(row), y, atol=1e-12)

    def test_manneville_pomeau_half(self):
        """x = 1/2 belongs to the left branch so f(1/2) = 1"""
        fmap = manneville_pomeau(0.5)
        assert eval(fmap, 0.5) == pytest.approx(1.0)
        assert eval(fmap, 0.75) == pytest.approx(0.5)

    def test_manneville_pomeau_preimages_by_bisection(self):
        """Left-branch preimages come from bisection and invert the map"""
        fmap = manneville_pomeau(0.5)
        y = np.array([0.0, 0.1, 0.5, 0.9, 1.0])
        left = fmap.preimages(y)[0]
        assert np.allclose(fmap.branches[0].forward(left), y, atol=1e-10)
        assert left[0] == pytest.approx(0.0)

    def test_shifted_preimages(self):
        """Preimages of f(x) = 2x + delta mod 1 move by delta/2"""
        delta = 0.1
        y = np.linspace(0.15, 0.95, 10)
        moved = np.sort(l_adic(2, shift=delta).preimages(y), axis=0)
        fixed = np.sort(l_adic(2).preimages(y), axis=0)
        d = np.abs(moved - fixed)
        d = np.minimum(d, 1.0 - d)
        assert np.allclose(d, delta / 2.0)


class TestStructure:
    """Test check_structure"""

    @pytest.mark.parametrize("fmap", [doubling(), l_adic(3), l_adic(4), manneville_pomeau(0.5),
                                      piecewise_affine([3.0, -3.0, 3.0], [0.0, 1 / 3, 2 / 3, 1.0])])
    def test_shipped_maps_pass(self, fmap):
        """Every shipped map satisfies (f1) and (P2)"""
        report = check_structure(fmap, 600)
        assert report.passed, report.failures
        assert report.round_trip_error < 1e-9

    def test_covering_count(self):
        """The neutral region meets one branch of Manneville-Pomeau and none of doubling"""
        assert check_structure(manneville_pomeau(0.5)).q == 1
        assert check_structure(doubling()).q == 0

    def test_too_few_samples(self):
        """sample_count below twice the degree is rejected"""
        with pytest.raises(InvalidInputError, match="sample_count"):
            check_structure(l_adic(3), 5)

    def test_f1_violation_reported(self):
        """A sigma larger than the true expansion fails (f1) without raising"""
        fmap = l_adic(2)
        strong = IntervalMap(branches=fmap.branches, sigma=3.0, circle=True)
        report = check_structure(strong, 100)
        assert not report.f1
        assert report.p2
        assert any("(f1)" in f for f in report.failures)

    def test_gap_in_domains(self):
        """Branches that leave a gap fail the cover check"""
        fmap = piecewise_affine([2.0, 2.0], [0.0, 0.5, 1.0])
        broken = IntervalMap(branches=(fmap.branches[0],), sigma=2.0)
        report = check_structure(broken, 100)
        assert not report.cover
        assert not report.passed


class TestBuilders:
    """Test map builders"""

    def test_digit_base(self):
        """Only unshifted power-of-two maps refresh digits"""
        assert l_adic(2).digit_base == 2
        assert l_adic(4).digit_base == 4
        assert l_adic(3).digit_base is None
        assert l_adic(2, shift=0.1).digit_base is None

    def test_invalid_l(self):
        with pytest.raises(InvalidInputError):
            l_adic(1)

    def test_shift_requires_circle(self):
        with pytest.raises(InvalidInputError, match="circle"):
            l_adic(2, shift=0.1, circle=False)

    def test_piecewise_affine_not_full_branch(self):
        """A slope that does not stretch its piece onto [0, 1] is rejected"""
        with pytest.raises(InvalidInputError, match="full branch"):
            piecewise_affine([2.0, 3.0], [0.0, 0.5, 1.0])

    def test_piecewise_affine_decreasing_branch(self):
        """Negative slopes give decreasing branches"""
        fmap = piecewise_affine([2.0, -2.0], [0.0, 0.5, 1.0])
        assert eval(fmap, 0.75) == pytest.approx(0.5)
        assert eval(fmap, 0.9) == pytest.approx(0.2)

    def test_manneville_pomeau_alpha_range(self):
        with pytest.raises(InvalidInputError):
            manneville_pomeau(1.5)
