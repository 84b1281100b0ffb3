import unittest

import numpy as np

from tests.base_test import BaseSpectralTest
from app.dirac_algebra import project
from app.initial_data import (
    GaussianFamily,
    ProjectedGaussianFamily,
    RandomSmoothFamily,
    build_initial_data,
    initial_smallness,
    resolve_family,
)
from app.models import RunConfig, Sign
from app.spectral import sup_norm


class TestInitialData(BaseSpectralTest):
    def test_resolve_family(self):
        self.assertIs(resolve_family("random-smooth"), RandomSmoothFamily)
        with self.assertRaises(ValueError):
            resolve_family("top-hat")

    def test_gaussian_peak(self):
        psi = GaussianFamily(eps0=0.2, width=2.0).build(self.small_grid())
        self.assertAlmostEqual(sup_norm(psi), 0.2, places=12)
        self.assertEqual(np.max(np.abs(psi.values[1:])), 0.0)

    def test_projected_gaussian_lives_on_one_branch(self):
        grid = self.small_grid()
        psi = ProjectedGaussianFamily(eps0=0.1, theta=Sign.MINUS).build(grid)
        self.assertLess(sup_norm(project(psi, Sign.PLUS)), 1e-12)
        self.assertGreater(sup_norm(psi), 0.0)

    def test_random_family_is_seeded(self):
        grid = self.small_grid()
        first = RandomSmoothFamily(eps0=0.3, width=1.0, seed=4).build(grid)
        again = RandomSmoothFamily(eps0=0.3, width=1.0, seed=4).build(grid)
        other = RandomSmoothFamily(eps0=0.3, width=1.0, seed=5).build(grid)
        self.assertAlmostEqual(sup_norm(first), 0.3, places=12)
        np.testing.assert_array_equal(first.values, again.values)
        self.assertFalse(np.allclose(first.values, other.values))

    def test_build_from_config(self):
        config = RunConfig(
            n=16, L=16.0, eps0=0.05, dt=0.05, t_final=4.0, family="gaussian", width=2.0
        )
        psi = build_initial_data(config, self.small_grid())
        self.assertAlmostEqual(sup_norm(psi), 0.05, places=12)

    def test_smallness_is_linear(self):
        grid = self.small_grid()
        small = GaussianFamily(eps0=0.1, width=2.0).build(grid)
        large = GaussianFamily(eps0=0.2, width=2.0).build(grid)
        ratio = initial_smallness(large) / initial_smallness(small)
        self.assertAlmostEqual(ratio, 2.0, places=10)


if __name__ == "__main__":
    unittest.main()
