import unittest

import numpy as np

from tests.base_test import BaseSpectralTest
from app.dirac_algebra import (
    BETA,
    DIRAC,
    SignTuple,
    check_identities,
    hamiltonian_symbol,
    null_bound,
    null_product_norm,
    null_structure_scan,
    project,
    projection_derivative_scan,
    projection_symbol,
)
from app.models import Representation, Sign


class TestDiracMatrices(BaseSpectralTest):
    def test_clifford_relations_hold_exactly(self):
        for name, defect in DIRAC.clifford_defects().items():
            self.assertEqual(defect, 0.0, name)

    def test_hamiltonian_at_rest_is_beta(self):
        np.testing.assert_array_equal(hamiltonian_symbol(np.zeros(3)), BETA)

    def test_projection_at_rest(self):
        plus = projection_symbol(np.zeros(3), Sign.PLUS)
        np.testing.assert_allclose(plus, np.diag([1, 1, 0, 0]), atol=1e-15)

    def test_paired_sign_tuple(self):
        signs = SignTuple.paired(Sign.PLUS, Sign.MINUS)
        self.assertEqual(signs.factors, (1, 1, -1, -1))


class TestIdentities(BaseSpectralTest):
    def test_identities_pass(self):
        report = check_identities(200, seed=1)
        self.assertTrue(report.passed, report)

    def test_rejects_empty_sample(self):
        with self.assertRaises(ValueError):
            check_identities(0)

    def test_projection_derivatives_within_bounds(self):
        report = projection_derivative_scan(200, seed=2)
        self.assertTrue(report.passed, report)
        # The unsharpened orders are dominated by the sharp ones.
        self.assertLessEqual(report.first_order, report.first_order_sharp + 1e-12)


class TestProjectOnFields(BaseSpectralTest):
    def test_branches_sum_to_field(self):
        psi = self.random_spinor(self.small_grid())
        total = project(psi, Sign.PLUS) + project(psi, Sign.MINUS)
        np.testing.assert_allclose(total.values, psi.values, atol=1e-12)

    def test_projection_is_idempotent(self):
        psi = self.random_spinor(self.small_grid()).to_spectral()
        once = project(psi, Sign.MINUS)
        twice = project(once, Sign.MINUS)
        self.assertIs(once.representation, Representation.SPECTRAL)
        np.testing.assert_allclose(twice.values, once.values, atol=1e-12)

    def test_branches_are_orthogonal(self):
        psi = self.random_spinor(self.small_grid())
        cross = project(project(psi, Sign.PLUS), Sign.MINUS)
        self.assertLess(np.max(np.abs(cross.values)), 1e-12)


class TestNullStructure(BaseSpectralTest):
    def test_coincident_frequencies_vanish(self):
        xi = np.array([[1.0], [2.0], [-0.5]])
        eta = np.zeros((3, 1))
        self.assertEqual(null_product_norm(xi, eta, Sign.PLUS)[0], 0.0)

    def test_product_is_small_for_close_frequencies(self):
        xi = np.array([10.0, 0.0, 0.0])
        eta = np.array([0.5, 0.2, 0.0])
        for theta in Sign:
            ratio = null_product_norm(xi, eta, theta) / null_bound(xi, eta)
            self.assertLessEqual(ratio, 0.6)

    def test_scan_has_no_violations(self):
        report = null_structure_scan(2000, seed=3)
        self.assertTrue(report.passed, report)
        self.assertGreater(report.max_ratio, 0.0)


if __name__ == "__main__":
    unittest.main()
