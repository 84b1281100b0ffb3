import math
import unittest

import numpy as np
from scipy.integrate import quad

from tests.base_test import BaseSpectralTest
from app.models import GridError, MultiplierError, Representation, RepresentationError
from app.spectral import (
    ScalarField,
    SpinorField,
    apply_multiplier,
    dealias_mask,
    dyadic_range,
    gaussian,
    l2_norm,
    littlewood_paley,
    littlewood_paley_pieces,
    littlewood_paley_tilde,
    lp_norm,
    make_grid,
    plane_wave,
    sobolev_norm,
    spectral_sup_norm,
    sup_norm,
    transform,
    w_k_infinity_norm,
    weighted_norm,
)


class TestGrid(BaseSpectralTest):
    def test_rejects_odd_grid(self):
        with self.assertRaises(GridError):
            make_grid(15, 16.0)

    def test_rejects_tiny_grid(self):
        with self.assertRaises(GridError):
            make_grid(6, 16.0)

    def test_rejects_bad_box(self):
        with self.assertRaises(GridError):
            make_grid(16, 0.0)
        with self.assertRaises(GridError):
            make_grid(16, float("inf"))

    def test_lattice_spacing(self):
        grid = make_grid(16, 8.0)
        self.assertAlmostEqual(grid.wavenumber_spacing, 2 * math.pi / 8.0)
        self.assertAlmostEqual(grid.nyquist, math.pi * 2.0)
        self.assertEqual(grid.wavevectors.shape, (3, 16, 16, 16))
        self.assertAlmostEqual(float(grid.bracket[0, 0, 0]), 1.0)

    def test_negation_index(self):
        grid = self.small_grid(8, 8.0)
        xi = grid.wavevectors.reshape(3, -1)
        partner = grid.negation_index
        interior = np.all(np.abs(xi) < grid.nyquist - 1e-12, axis=0)
        np.testing.assert_array_equal(xi[:, partner][:, interior], -xi[:, interior])

    def test_grids_compare_by_shape(self):
        self.assertTrue(make_grid(16, 8.0).matches(make_grid(16, 8.0)))
        self.assertFalse(make_grid(16, 8.0).matches(make_grid(16, 9.0)))


class TestTransforms(BaseSpectralTest):
    def test_round_trip(self):
        psi = self.random_spinor(self.small_grid())
        back = psi.to_spectral().to_physical()
        np.testing.assert_allclose(back.values, psi.values, atol=1e-13)
        self.assertIs(back.representation, Representation.PHYSICAL)

    def test_transform_refuses_same_representation(self):
        psi = self.random_spinor(self.small_grid()).to_spectral()
        with self.assertRaises(RepresentationError):
            transform(psi, Representation.SPECTRAL)

    def test_parseval(self):
        psi = self.random_spinor(self.small_grid(), seed=3)
        self.assertAlmostEqual(
            l2_norm(psi.to_spectral()) / l2_norm(psi), 1.0, places=12
        )

    def test_gaussian_transform_normalisation(self):
        grid = make_grid(32, 16.0)
        field = ScalarField(grid=grid, values=gaussian(grid, 1.0))
        peak = field.to_spectral().values[0, 0, 0]
        self.assertAlmostEqual(peak.real, (2 * math.pi) ** 1.5, places=8)

    def test_shape_is_validated(self):
        grid = self.small_grid()
        with self.assertRaises(ValueError):
            SpinorField(grid=grid, values=np.zeros((3, 16, 16, 16)))


class TestMultipliers(BaseSpectralTest):
    def test_identity_symbol(self):
        psi = self.random_spinor(self.small_grid())
        out = apply_multiplier(psi, np.ones((16, 16, 16)))
        np.testing.assert_allclose(out.values, psi.values, atol=1e-13)
        self.assertIs(out.representation, Representation.PHYSICAL)

    def test_spectral_input_stays_spectral(self):
        psi = self.random_spinor(self.small_grid()).to_spectral()
        out = apply_multiplier(psi, lambda xi: np.ones(xi.shape[1:]))
        self.assertIs(out.representation, Representation.SPECTRAL)

    def test_plane_wave_eigenfunction(self):
        grid = self.small_grid()
        node = (2, 1, 15)
        wave = ScalarField(grid=grid, values=plane_wave(grid, node))
        out = apply_multiplier(wave, grid.bracket)
        np.testing.assert_allclose(
            out.values, grid.bracket[node] * wave.values, atol=1e-12
        )

    def test_linearity(self):
        grid = self.small_grid()
        f, g = self.random_spinor(grid, seed=1), self.random_spinor(grid, seed=2)
        alpha, beta = 0.7 - 1.3j, -2.1 + 0.4j
        symbol = grid.bracket**2
        combined = apply_multiplier(f * alpha + g * beta, symbol)
        separate = (
            apply_multiplier(f, symbol) * alpha + apply_multiplier(g, symbol) * beta
        )
        np.testing.assert_allclose(combined.values, separate.values, atol=1e-11)

    def test_composition_order(self):
        grid = self.small_grid()
        psi = self.random_spinor(grid, seed=3)
        first = grid.bracket

        def second(xi):
            return np.exp(-np.sum(xi**2, axis=0))

        one_way = apply_multiplier(apply_multiplier(psi, first), second)
        other_way = apply_multiplier(apply_multiplier(psi, second), first)
        np.testing.assert_allclose(one_way.values, other_way.values, atol=1e-13)

    def test_non_finite_symbol(self):
        grid = self.small_grid()
        symbol = np.ones((16, 16, 16))
        symbol[0, 0, 0] = np.inf
        with self.assertRaises(MultiplierError):
            apply_multiplier(self.random_spinor(grid), symbol)

    def test_bad_symbol_shape(self):
        with self.assertRaises(MultiplierError):
            apply_multiplier(self.random_spinor(self.small_grid()), np.ones((8, 8, 8)))

    def test_matrix_symbol_needs_spinor(self):
        grid = self.small_grid()
        scalar = ScalarField(grid=grid, values=gaussian(grid))
        with self.assertRaises(MultiplierError):
            apply_multiplier(scalar, np.ones((4, 4, 16, 16, 16)))


class TestLittlewoodPaley(BaseSpectralTest):
    def test_tilde_reproduces_projection(self):
        psi = self.random_spinor(self.small_grid(32, 32.0), width=0.5)
        piece = littlewood_paley(psi, 1.0)
        np.testing.assert_allclose(
            littlewood_paley_tilde(piece, 1.0).values, piece.values, atol=1e-12
        )

    def test_pieces_telescope(self):
        psi = self.random_spinor(self.small_grid(32, 32.0), width=0.5)
        low, pieces = littlewood_paley_pieces(psi, 0.5)
        total = low.values + sum(p.values for p in pieces.values())
        np.testing.assert_allclose(total, psi.values, atol=1e-12)

    def test_rejects_non_dyadic_scale(self):
        with self.assertRaises(ValueError):
            littlewood_paley(self.random_spinor(self.small_grid()), 3.0)

    def test_dyadic_range_fits_lattice(self):
        grid = self.small_grid(32, 32.0)
        scales = dyadic_range(grid)
        self.assertTrue(scales)
        self.assertLessEqual(2 * scales[-1], grid.nyquist)
        self.assertGreaterEqual(2 * scales[0], grid.wavenumber_spacing)


class TestNorms(BaseSpectralTest):
    def test_sup_norm_uses_euclidean_modulus(self):
        grid = self.small_grid()
        values = np.zeros((4, 16, 16, 16), dtype=np.complex128)
        values[0] = 3.0
        values[3] = 4.0j
        self.assertAlmostEqual(sup_norm(SpinorField(grid=grid, values=values)), 5.0)

    def test_lp_norm_of_constant(self):
        grid = self.small_grid(16, 4.0)
        field = ScalarField(grid=grid, values=np.full((16, 16, 16), 2.0))
        self.assertAlmostEqual(lp_norm(field, 2), 2.0 * 4.0**1.5, places=10)
        self.assertAlmostEqual(lp_norm(field, 6), 2.0 * 4.0**0.5, places=10)

    def test_sobolev_zero_is_l2(self):
        psi = self.random_spinor(self.small_grid())
        self.assertAlmostEqual(sobolev_norm(psi, 0) / l2_norm(psi), 1.0, places=12)

    def test_sobolev_grows_with_order(self):
        psi = self.random_spinor(self.small_grid())
        self.assertLess(sobolev_norm(psi, 1), sobolev_norm(psi, 2))

    def test_spectral_sup_norm_of_gaussian(self):
        grid = make_grid(32, 16.0)
        psi = self.gaussian_spinor(grid)
        self.assertAlmostEqual(
            spectral_sup_norm(psi, 0) / (2 * math.pi) ** 1.5, 1.0, places=8
        )

    def test_weighted_norm_of_gaussian(self):
        grid = make_grid(32, 16.0)
        field = ScalarField(grid=grid, values=gaussian(grid))
        radial, _ = quad(lambda r: r * r * (1 + r * r) * math.exp(-r * r), 0, 20)
        expected = math.sqrt(4 * math.pi * radial)
        self.assertAlmostEqual(weighted_norm(field, 1, 0) / expected, 1.0, places=8)

    def test_w_k_infinity_zero_order(self):
        psi = self.random_spinor(self.small_grid())
        self.assertAlmostEqual(w_k_infinity_norm(psi, 0), sup_norm(psi), places=12)

    def test_dealias_mask(self):
        grid = self.small_grid(12, 12.0)
        mask = dealias_mask(grid)
        self.assertEqual(mask.shape, (12, 12, 12))
        self.assertTrue(mask[0, 0, 0])
        self.assertFalse(mask[6, 0, 0])


if __name__ == "__main__":
    unittest.main()
