import unittest
from unittest.mock import patch

import numpy as np

from tests.base_test import BaseSpectralTest
from app.diagnostics import DiagnosticsRecord
from app.integrator import (
    SplitStepper,
    evolve,
    nonlinear_decay_scan,
    reverse_step,
    self_convergence,
    snapshot_schedule,
    strang_step,
)
from app.models import (
    InsufficientSnapshotsError,
    InstabilityError,
    KernelKind,
    KernelVariant,
    RunConfig,
    load_config,
)
from app.initial_data import build_initial_data
from app.propagator import free_dirac
from app.scattering import ScatteringTracker
from app.simulate_handler import population_ratio
from app.spectral import l2_norm, make_grid
from app.utils.checkpoint import read_checkpoint


class TestSplitStep(BaseSpectralTest):
    def setUp(self):
        super().setUp()
        self.psi = self.gaussian_spinor(self.small_grid(), width=1.5, amplitude=0.5)

    def test_positive_step_required(self):
        with self.assertRaises(ValueError):
            strang_step(self.psi, 0.0, c1=1.0)
        with self.assertRaises(ValueError):
            reverse_step(self.psi, -0.1, c1=1.0)

    def test_free_limit(self):
        stepped = strang_step(self.psi, 0.05, c1=0.0)
        np.testing.assert_allclose(
            stepped.values, free_dirac(self.psi, 0.05).values, atol=1e-13
        )

    def test_mass_is_conserved(self):
        psi = self.psi
        for _ in range(10):
            psi = strang_step(psi, 0.05, c1=1.0)
        self.assertAlmostEqual(l2_norm(psi) / l2_norm(self.psi), 1.0, places=12)

    def test_time_reversal(self):
        for kind in KernelKind:
            forward = strang_step(self.psi, 0.01, c1=1.0, kernel_kind=kind)
            back = reverse_step(forward, 0.01, c1=1.0, kernel_kind=kind)
            np.testing.assert_allclose(back.values, self.psi.values, atol=1e-10)

    def test_non_finite_state(self):
        values = self.psi.values.copy()
        values[0, 0, 0, 0] = np.nan
        with self.assertRaises(InstabilityError):
            SplitStepper(c1=1.0).step(self.psi.with_values(values), 0.01)


class TestEvolve(BaseSpectralTest):
    def make_config(self, **overrides):
        entries = dict(
            n=16,
            L=16.0,
            eps0=0.05,
            dt=0.1,
            t_final=2.0,
            family="gaussian",
            width=2.0,
            k_sobolev=2,
            weight_power=2.0,
        )
        entries.update(overrides)
        return RunConfig(**entries)

    def test_schedule(self):
        config = self.make_config(L=24.0, t_final=10.0, snapshot_interval=3.0)
        self.assertEqual(
            snapshot_schedule(config), [0.0, 3.0, 4.0, 6.0, 8.0, 9.0, 10.0]
        )

    def test_explicit_schedule(self):
        config = self.make_config(snapshot_times=[0.5, 1.5])
        self.assertEqual(snapshot_schedule(config), [0.0, 0.5, 1.5, 2.0])

    def test_run_writes_outputs(self):
        out = self.tmp / "run"
        config = self.make_config()
        state = evolve(config, out_dir=out)

        self.assertEqual(state.record.times, [0.0, 1.0, 2.0])
        self.assertEqual(state.step, 20)
        self.assertAlmostEqual(state.time, 2.0)
        self.assertLess(state.record.max_mass_drift, 1e-11)

        snapshots = sorted((out / "snapshots").glob("snap_*.bin"))
        self.assertEqual(len(snapshots), 3)
        last = read_checkpoint(snapshots[-1])
        self.assertEqual(last.time, 2.0)
        np.testing.assert_allclose(last.field.values, state.psi.values, atol=1e-14)

        reloaded = load_config(out / "config.toml")
        self.assertEqual(reloaded.model_dump(), config.model_dump())
        self.assertEqual(
            DiagnosticsRecord.from_csv(out / "diagnostics.csv").times, [0.0, 1.0, 2.0]
        )

    def test_gauge_covariance(self):
        config = self.make_config(eps0=0.5, g=3.0, t_final=1.0)
        grid = make_grid(config.n_per_axis, config.box_length)
        psi0 = build_initial_data(config, grid)
        plain = evolve(config, initial=psi0).psi
        rotated = evolve(config, initial=psi0 * np.exp(0.9j)).psi
        np.testing.assert_allclose(
            np.abs(rotated.values), np.abs(plain.values), atol=1e-12
        )

    def test_branch_populations_stay_bounded(self):
        state = evolve(self.make_config(eps0=0.2, g=2.0))
        ratio = population_ratio(state.record)
        self.assertIsNotNone(ratio)
        self.assertLessEqual(ratio, 2.0)

    def test_diagnostics_are_reproducible(self):
        config = self.make_config()
        evolve(config, out_dir=self.tmp / "first")
        evolve(config, out_dir=self.tmp / "second")
        self.assertEqual(
            (self.tmp / "first" / "diagnostics.csv").read_bytes(),
            (self.tmp / "second" / "diagnostics.csv").read_bytes(),
        )

    def test_zero_data_stays_zero(self):
        state = evolve(self.make_config(eps0=0.0))
        self.assertEqual(np.max(np.abs(state.psi.values)), 0.0)
        self.assertEqual(state.record.max_mass_drift, 0.0)

    def test_observers_and_phase_tables(self):
        config = self.make_config(t_final=4.0, family="projected-gaussian")
        tracker = ScatteringTracker.from_config(config, [KernelVariant.MINUS])
        seen = []
        state = evolve(config, observers=[tracker, lambda s: seen.append(s.time)])
        self.assertEqual(seen, [0.0, 1.0, 2.0, 3.0, 4.0])
        self.assertIn(KernelVariant.MINUS, state.phase_tables)
        self.assertEqual(state.phase_tables[KernelVariant.MINUS].times, seen)

    def test_instability_dump(self):
        out = self.tmp / "unstable"

        def runaway(stepper, psi, dt):
            return psi * 1.2

        with patch.object(SplitStepper, "step", runaway):
            with self.assertRaises(InstabilityError):
                evolve(self.make_config(), out_dir=out)
        dump = read_checkpoint(out / "instability_dump.bin")
        self.assertEqual(dump.time, 0.0)

    def test_self_convergence(self):
        config = self.make_config(eps0=0.5, g=3.0, dt=0.1, t_final=1.0)
        report = self_convergence(config, halvings=2)
        self.assertEqual(report.dt_values, [0.1, 0.05, 0.025])
        self.assertEqual(len(report.ratios), 1)
        self.assertTrue(report.passed, report)

    def test_decay_scan_needs_late_snapshots(self):
        record = evolve(self.make_config()).record
        with self.assertRaises(InsufficientSnapshotsError):
            nonlinear_decay_scan(record)


if __name__ == "__main__":
    unittest.main()
