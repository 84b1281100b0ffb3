import math
import unittest

import numpy as np
from scipy.integrate import quad

from tests.base_test import BaseSpectralTest
from app.dirac_algebra import project
from app.models import (
    InsufficientSnapshotsError,
    KernelVariant,
    PhaseConvention,
    PhaseUnwrapError,
    ProfileTiming,
    Representation,
    Sign,
)
from app.propagator import free_dirac
from app.scattering import (
    KERNEL_FLOOR,
    SOURCE_FLOOR,
    PhaseTable,
    ScatteringTracker,
    Snapshot,
    _unwrapped_phase,
    active_nodes,
    corrected_profile,
    cutoff_weight,
    drift_blocks,
    drift_metric,
    drift_times,
    interaction_coefficient,
    interaction_profile,
    log_phase_slope,
    phase_correction_increment,
    spectral_density,
    write_phase_table,
)
from app.spectral import SpinorField, bracket_of, spectral_sup_norm


def brute_force_coefficient(profiles, theta, variant, targets, c1):
    """Pairwise kernel sums straight from the definition."""
    grid = profiles[Sign.PLUS].grid
    xi = grid.wavevectors.reshape(3, -1)
    unit = xi / bracket_of(xi)
    parts, skipped = {}, np.zeros(targets.size)
    densities = {sign: spectral_density(profiles[sign]) for sign in Sign}
    peak = max(float(np.max(d)) for d in densities.values())
    for source_sign in Sign:
        density = densities[source_sign]
        density = np.where(density >= SOURCE_FLOOR * peak, density, 0.0)
        direction = -source_sign.factor
        if variant is KernelVariant.PLUS:
            direction = source_sign.factor
        values = np.zeros(targets.size)
        for row, target in enumerate(targets):
            difference = theta.factor * unit[:, [target]] + direction * unit
            distance = np.sqrt(np.sum(difference**2, axis=0))
            close = distance < KERNEL_FLOOR
            kernel = np.where(close, 0.0, 1.0 / np.where(close, 1.0, distance))
            values[row] = np.sum(kernel * density) / grid.volume
            skipped[row] += np.sum(density[close]) / grid.volume
        parts[source_sign] = c1 * values
    return parts, float(np.max(skipped))


class TestPhaseCorrection(BaseSpectralTest):
    def setUp(self):
        super().setUp()
        self.grid = self.small_grid(8, 8.0)
        psi = self.random_spinor(self.grid, seed=21, width=0.7)
        self.profiles = {sign: project(psi, sign).to_spectral() for sign in Sign}

    def test_drift_times(self):
        self.assertEqual(drift_times(20.0), [4.0, 8.0, 16.0])
        self.assertEqual(drift_times(3.0), [])

    def test_cutoff_weight(self):
        modulus = np.array([0.0, 0.5, 3.0])
        np.testing.assert_array_equal(cutoff_weight(modulus, 0.0, 0.01), [1, 0, 0])
        weight = cutoff_weight(modulus, 4.0, 0.01)
        self.assertAlmostEqual(weight[0], 1 / math.sqrt(17.0))
        self.assertAlmostEqual(weight[1], 1 / math.sqrt(17.0))
        self.assertEqual(weight[2], 0.0)

    def test_kernel_sums_match_pairwise_evaluation(self):
        targets = np.arange(self.grid.n_per_axis**3)
        for variant in KernelVariant:
            for theta in Sign:
                coefficient = interaction_coefficient(
                    self.profiles, theta, variant, targets, c1=0.3
                )
                parts, skipped = brute_force_coefficient(
                    self.profiles, theta, variant, targets, c1=0.3
                )
                for sign in Sign:
                    np.testing.assert_allclose(
                        coefficient.parts[sign], parts[sign], rtol=1e-9
                    )
                self.assertAlmostEqual(coefficient.skipped_mass, skipped, places=12)

    def test_zero_frequency_matches_radial_quadrature(self):
        grid = self.small_grid(64, 64.0)
        values = np.zeros((4, 64, 64, 64), dtype=np.complex128)
        values[0] = np.exp(-(grid.wavenumber_modulus**2) / 2)
        source = SpinorField(
            grid=grid, values=values, representation=Representation.SPECTRAL
        )
        profiles = {Sign.PLUS: source, Sign.MINUS: source * 0.0}
        coefficient = interaction_coefficient(
            profiles, Sign.PLUS, KernelVariant.MINUS, np.array([0]), c1=2.0
        )
        radial, _ = quad(lambda r: r * math.sqrt(1 + r * r) * math.exp(-r * r), 0, 10)
        expected = 2.0 * 4 * math.pi / (2 * math.pi) ** 3 * radial
        measured = coefficient.parts[Sign.PLUS][0]
        self.assertAlmostEqual(measured / expected, 1.0, delta=0.02)
        self.assertEqual(coefficient.parts[Sign.MINUS][0], 0.0)

    def test_doubling_the_density_doubles_the_increment(self):
        psi = self.random_spinor(self.grid, seed=24, width=0.7)
        targets = np.arange(self.grid.n_per_axis**3)
        args = (Sign.PLUS, KernelVariant.MINUS, targets, 0.4)
        single = phase_correction_increment(
            Snapshot(time=1.0, psi=psi), Snapshot(time=2.0, psi=psi), *args
        )
        double = phase_correction_increment(
            Snapshot(time=1.0, psi=psi * math.sqrt(2)),
            Snapshot(time=2.0, psi=psi * math.sqrt(2)),
            *args,
        )
        for sign in Sign:
            np.testing.assert_allclose(double[sign], 2 * single[sign], rtol=1e-10)

    def test_coincident_pairs_are_skipped(self):
        targets = np.arange(self.grid.n_per_axis**3)
        coefficient = interaction_coefficient(
            self.profiles, Sign.PLUS, KernelVariant.MINUS, targets, c1=1.0
        )
        self.assertGreater(coefficient.skipped_mass, 0.0)
        self.assertTrue(np.all(np.isfinite(coefficient.total)))

    def test_empty_targets(self):
        coefficient = interaction_coefficient(
            self.profiles, Sign.PLUS, KernelVariant.MINUS, np.zeros(0, dtype=int), 1.0
        )
        self.assertEqual(coefficient.total.size, 0)

    def test_frozen_table_uses_trapezoid_rule(self):
        psi = self.random_spinor(self.grid, seed=22, width=0.7)
        targets = np.arange(self.grid.n_per_axis**3)
        table = PhaseTable(
            grid=self.grid,
            theta=Sign.PLUS,
            variant=KernelVariant.MINUS,
            c1=0.5,
            timing=ProfileTiming.FROZEN,
            targets=targets,
        )
        for t in (0.0, 1.0, 3.0):
            table.accumulate(Snapshot(time=t, psi=psi))

        total = table.coefficient.total
        modulus = self.grid.wavenumber_modulus.ravel()
        w = {t: cutoff_weight(modulus, t, 0.01) for t in (0.0, 1.0, 3.0)}
        expected = total * (0.5 * (w[0.0] + w[1.0]) + 1.0 * (w[1.0] + w[3.0]))
        np.testing.assert_allclose(table.values, expected, rtol=1e-12, atol=1e-15)
        self.assertEqual(table.time, 3.0)

    def test_table_is_additive_over_intervals(self):
        psi = self.random_spinor(self.grid, seed=23, width=0.7)
        targets = np.arange(self.grid.n_per_axis**3)
        table = PhaseTable(
            grid=self.grid,
            theta=Sign.MINUS,
            variant=KernelVariant.MINUS,
            c1=0.5,
            targets=targets,
        )
        snapshots = [Snapshot(time=t, psi=free_dirac(psi, t)) for t in (0.0, 1.5, 4.0)]
        for snapshot in snapshots:
            table.accumulate(snapshot)

        args = (Sign.MINUS, KernelVariant.MINUS, targets, 0.5)
        first = phase_correction_increment(snapshots[0], snapshots[1], *args)
        second = phase_correction_increment(snapshots[1], snapshots[2], *args)
        for sign in Sign:
            np.testing.assert_allclose(
                table.parts[sign], first[sign] + second[sign], rtol=1e-12, atol=1e-15
            )

    def test_table_requires_time_order(self):
        psi = self.random_spinor(self.grid)
        table = PhaseTable(
            grid=self.grid,
            theta=Sign.PLUS,
            variant=KernelVariant.MINUS,
            c1=0.5,
            targets=np.arange(10),
        )
        table.accumulate(Snapshot(time=1.0, psi=psi))
        with self.assertRaises(ValueError):
            table.accumulate(Snapshot(time=1.0, psi=psi))

    def test_corrected_profile(self):
        psi = self.random_spinor(self.grid, seed=23)
        targets = np.arange(self.grid.n_per_axis**3)
        table = PhaseTable(
            grid=self.grid,
            theta=Sign.MINUS,
            variant=KernelVariant.MINUS,
            c1=1.0,
            targets=targets,
        )
        table.accumulate(Snapshot(time=0.0, psi=psi))
        table.accumulate(Snapshot(time=2.0, psi=psi))
        profile = interaction_profile(psi, 2.0, Sign.MINUS)

        corrected = corrected_profile(profile, table, PhaseConvention.DYNAMICAL)
        original = profile.profile.to_spectral().values.reshape(4, -1)
        phase = np.exp(-1j * table.values)
        np.testing.assert_allclose(
            corrected.values.reshape(4, -1), original * phase, atol=1e-14
        )

        literal = corrected_profile(profile, table, PhaseConvention.LITERAL)
        np.testing.assert_allclose(
            literal.values.reshape(4, -1), original / phase, atol=1e-14
        )

    def test_corrected_profile_mismatch(self):
        psi = self.random_spinor(self.grid)
        table = PhaseTable(
            grid=self.grid,
            theta=Sign.PLUS,
            variant=KernelVariant.MINUS,
            c1=1.0,
            targets=np.arange(4),
        )
        table.accumulate(Snapshot(time=1.0, psi=psi))
        with self.assertRaises(ValueError):
            corrected_profile(interaction_profile(psi, 2.0, Sign.PLUS), table)
        with self.assertRaises(ValueError):
            corrected_profile(interaction_profile(psi, 1.0, Sign.MINUS), table)


class TestDrift(BaseSpectralTest):
    def test_gauge_phase_is_removed(self):
        g1 = self.random_spinor(self.small_grid(), seed=30)
        g2 = g1 * np.exp(0.7j)
        scale = spectral_sup_norm(g1, 4)
        self.assertLess(drift_metric(g1, g2, 4), 1e-12 * scale)
        self.assertGreater(drift_metric(g1, g2, 4, align=False), 0.1 * scale)

    def test_unwrapped_phase(self):
        history = np.exp(1j * 0.5 * np.arange(20))[:, None] * np.array([1.0, 0, 0, 0])
        np.testing.assert_allclose(_unwrapped_phase(history), 0.5 * np.arange(20))

    def test_ambiguous_phase_step(self):
        history = np.exp(1j * 3.0 * np.arange(5))[:, None] * np.array([1.0, 0, 0, 0])
        with self.assertRaises(PhaseUnwrapError):
            _unwrapped_phase(history)


class TestScatteringTracker(BaseSpectralTest):
    def setUp(self):
        super().setUp()
        self.grid = self.small_grid(16, 16.0)
        self.psi0 = project(self.gaussian_spinor(self.grid, width=2.0), Sign.PLUS)
        self.tracker = ScatteringTracker(
            variants=[KernelVariant.MINUS, KernelVariant.PLUS], c1=0.1, t_final=8.0
        )
        for t in np.arange(0.0, 9.0):
            self.tracker(Snapshot(time=float(t), psi=free_dirac(self.psi0, float(t))))

    def test_targets_fixed_at_first_snapshot(self):
        profile = interaction_profile(self.psi0, 0.0, Sign.PLUS).profile
        expected = active_nodes(profile, 10.0, 1e-3, self.tracker.cutoff_radius)
        np.testing.assert_array_equal(self.tracker.targets, expected)
        self.assertEqual(
            self.tracker.probes().shape, (9, self.tracker.targets.size, 4)
        )
        self.assertEqual(self.tracker.recorded_drift_times(), [4.0, 8.0])

    def test_free_profiles_do_not_drift(self):
        metrics = drift_blocks(self.tracker)
        self.assertEqual(len(metrics), 3)
        uncorrected = [m for m in metrics if not m.corrected]
        scale = spectral_sup_norm(self.psi0, 10)
        self.assertLess(uncorrected[0].value, 1e-8 * scale)
        self.assertEqual(
            {m.variant for m in metrics if m.corrected},
            {KernelVariant.MINUS, KernelVariant.PLUS},
        )

    def test_free_phase_slope_vanishes(self):
        slope = log_phase_slope(self.tracker)
        self.assertLess(abs(slope.measured), 1e-8)
        self.assertEqual(slope.points, 7)
        self.assertEqual(slope.window, (2.0, 8.0))

    def test_phase_slope_needs_snapshots(self):
        with self.assertRaises(InsufficientSnapshotsError):
            log_phase_slope(self.tracker, window=(8.5, 9.0))
        with self.assertRaises(ValueError):
            log_phase_slope(self.tracker, theta=Sign.MINUS)

    def test_phase_table_archive(self):
        path = self.tmp / "phase_tables" / "minus.npz"
        write_phase_table(self.tracker.tables[KernelVariant.MINUS], path)
        with np.load(path) as archive:
            np.testing.assert_array_equal(archive["targets"], self.tracker.targets)
            self.assertEqual(str(archive["variant"]), "minus")
            self.assertEqual(archive["times"].size, 9)


if __name__ == "__main__":
    unittest.main()
