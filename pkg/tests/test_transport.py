import dataclasses

import numpy as np
import pytest

from trisphere import transport as tr
from trisphere.capacitance import absorbing_charges, three_sphere_baseline_ratio
from trisphere.hydro import FlowModel, solve_mobility
from trisphere.kinematics import (
    Posture,
    SwimmerGeometry,
    gait_action,
    posture_of_state,
    sphere_positions,
)

GEO = SwimmerGeometry(R=1.0, W=10.0, w=6.0, S=1.0, mu=1.0)


def small_config(**overrides):
    base = dict(
        pe=1.0, window_x=24.0, window_rho=8.0, nx=120, nrho=40, dt=0.6
    )
    base.update(overrides)
    return tr.TransportConfig(**base)


def small_grid(cfg, x0=None):
    return tr.Grid(
        x0=-0.5 * cfg.window_x if x0 is None else x0,
        dx=cfg.dx, drho=cfg.drho, nx=cfg.nx, nrho=cfg.nrho,
    )


class TestClift:
    def test_zero_velocity_limit(self):
        assert tr.clift_sherwood(0.0) == pytest.approx(1.0)

    def test_pe_13(self):
        assert tr.clift_sherwood(13.0) == pytest.approx(2.0)

    def test_pe_1(self):
        assert tr.clift_sherwood(1.0) == pytest.approx(1.22112, abs=1e-5)

    def test_vectorized_and_monotone(self):
        pe = np.logspace(-2, 2, 30)
        sh = tr.clift_sherwood(pe)
        assert np.all(np.diff(sh) > 0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            tr.clift_sherwood(-1.0)


class TestConfig:
    def test_peclet_diffusivity_relation(self):
        cfg = small_config(pe=2.5)
        d = cfg.diffusivity(GEO)
        assert cfg.pe == pytest.approx(GEO.S * GEO.R / d)

    def test_invalid_values(self):
        with pytest.raises(ValueError):
            small_config(pe=-1.0)
        with pytest.raises(ValueError):
            small_config(nx=2)
        with pytest.raises(ValueError):
            small_config(far_field="magic")
        with pytest.raises(ValueError):
            small_config(solver="quantum")
        with pytest.raises(ValueError):
            small_config(far_field="charges", g=0.5)
        with pytest.raises(ValueError):
            small_config(penal_factor=10.0)

    def test_default_grid(self):
        cfg = tr.TransportConfig.default(GEO, pe=6.0)
        assert (cfg.nx, cfg.nrho) == (480, 160)
        assert cfg.window_x == pytest.approx(48.0 * GEO.R)
        assert cfg.dt == pytest.approx(0.1 * GEO.stroke_time)

    def test_penalization_scales(self):
        cfg = small_config(pe=0.06)  # large diffusivity drives lambda up
        lam = cfg.penalization(GEO)
        d = cfg.diffusivity(GEO)
        assert lam >= 1e7 * d / cfg.dx**2


class TestSolversAgree:
    @pytest.mark.parametrize("pe", [0.06, 0.6, 6.0])
    def test_dst_matches_splu_with_mask(self, pe):
        cfg = small_config(pe=pe)
        grid = small_grid(cfg)
        mask = tr.build_mask(grid, [0.0], tr.mask_radius(GEO, grid, cfg))
        rng = np.random.default_rng(0)
        b = rng.random((cfg.nx, cfg.nrho))
        c1, j1 = tr.ImplicitStepper(grid, GEO, cfg).step(b, mask, np.zeros_like(b))
        cfg2 = dataclasses.replace(cfg, solver="splu")
        c2, j2 = tr.ImplicitStepper(grid, GEO, cfg2).step(b, mask, np.zeros_like(b))
        # fast path carries the (documented) translated-kernel tail error
        assert np.abs(c1 - c2).max() <= 1e-6 * np.abs(c2).max()
        assert j1 == pytest.approx(j2, rel=1e-6)

    def test_maskless_solves_agree(self):
        cfg = small_config()
        grid = small_grid(cfg)
        rng = np.random.default_rng(3)
        b = rng.random((cfg.nx, cfg.nrho))
        nomask = np.zeros((cfg.nx, cfg.nrho), bool)
        c1, _ = tr.ImplicitStepper(grid, GEO, cfg).step(b, nomask, np.zeros_like(b))
        cfg2 = dataclasses.replace(cfg, solver="splu")
        c2, _ = tr.ImplicitStepper(grid, GEO, cfg2).step(b, nomask, np.zeros_like(b))
        assert np.abs(c1 - c2).max() <= 1e-10


class TestAdvance:
    def test_uniform_field_is_steady(self):
        cfg = small_config()
        grid = small_grid(cfg)
        nomask = np.zeros((cfg.nx, cfg.nrho), bool)
        field = tr.ConcentrationField(grid, np.ones((cfg.nx, cfg.nrho)), nomask)
        out, j = tr.advance(field, None, GEO, cfg)
        assert np.abs(out.c - 1.0).max() < 1e-13
        assert j == 0.0

    def test_pure_diffusion_conserves_mass(self):
        # Pe = 60 keeps the one-step resolvent reach sqrt(D dt) = 0.1 R,
        # so no mass reaches the window boundary during the test
        cfg = small_config(pe=60.0)
        grid = small_grid(cfg)
        X, RHO = np.meshgrid(grid.x_centers(), grid.rho_centers(), indexing="ij")
        blob = np.exp(-((X / 0.8) ** 2 + ((RHO - 3.0) / 0.8) ** 2))
        nomask = np.zeros((cfg.nx, cfg.nrho), bool)
        field = tr.ConcentrationField(grid, blob, nomask)
        m0 = field.total_mass()
        stepper = tr.ImplicitStepper(grid, GEO, cfg)
        zero_bc = lambda x, rho: 0.0 * np.asarray(x) * np.asarray(rho)
        out = field
        for _ in range(3):
            c, _ = stepper.step(out.c, nomask, stepper.coeff.boundary_rhs(zero_bc))
            out = tr.ConcentrationField(grid, c, nomask)
        assert abs(out.total_mass() - m0) <= 1e-10 * m0

    def test_linear_in_c_inf(self):
        cfg = small_config(pe=0.6, window_x=32.0, nx=160)
        post = Posture(0.0, 10.0, 10.0)
        f1, j1 = tr.steady_field(post, GEO, cfg)
        cfg2 = dataclasses.replace(cfg, c_inf=2.0)
        f2, j2 = tr.steady_field(post, GEO, cfg2)
        assert j2 == pytest.approx(2.0 * j1, rel=1e-13)
        np.testing.assert_allclose(f2.c, 2.0 * f1.c, rtol=0, atol=1e-12)

    def test_nan_detection(self):
        cfg = small_config()
        grid = small_grid(cfg)
        stepper = tr.ImplicitStepper(grid, GEO, cfg)
        bad = np.ones((cfg.nx, cfg.nrho))
        bad[3, 3] = np.nan
        with pytest.raises(FloatingPointError):
            stepper.step(bad, np.zeros((cfg.nx, cfg.nrho), bool),
                         np.zeros((cfg.nx, cfg.nrho)))


class TestSteadyFlux:
    def test_single_sphere_analytic(self):
        # charge-corrected far field: the continuum problem is exactly the
        # free-space C_inf (1 - R/r); tolerance is the staircase residual
        cfg = small_config(nx=240, nrho=80, far_field="charges")
        grid = small_grid(cfg)
        mask = tr.build_mask(grid, [0.0], tr.mask_radius(GEO, grid, cfg))
        charges = absorbing_charges([0.0], GEO.R, cfg.c_inf)
        stepper = tr.ImplicitStepper(grid, GEO, cfg, steady=True)
        bc = stepper.coeff.boundary_rhs(lambda x, rho: charges.concentration(x, rho))
        c, j = stepper.step(np.zeros((cfg.nx, cfg.nrho)), mask, bc)
        d = cfg.diffusivity(GEO)
        assert j == pytest.approx(4 * np.pi * GEO.R * d * cfg.c_inf, rel=0.02)

    def test_three_sphere_screening_ratio(self):
        cfg = tr.TransportConfig(pe=1.0, window_x=34.0, window_rho=10.0,
                                 nx=340, nrho=100, dt=0.6, far_field="charges")
        post = Posture(0.0, 10.0, 10.0)
        _, j0 = tr.steady_field(post, GEO, cfg)
        d = cfg.diffusivity(GEO)
        ratio = j0 / (12 * np.pi * GEO.R * d * cfg.c_inf)
        assert 0.0 < ratio < 1.0
        assert ratio == pytest.approx(three_sphere_baseline_ratio(10.0), rel=0.02)

    def test_screening_monotone_in_extension(self):
        # wider arms -> less competition -> larger flux
        cfg = small_config(nx=240, nrho=60, window_x=48.0, window_rho=12.0,
                           far_field="charges")
        js = []
        for wr in (6.0, 8.0, 10.0):
            geo = SwimmerGeometry(R=1.0, W=wr, w=2.0, S=1.0, mu=1.0)
            _, j = tr.steady_field(Posture(0.0, wr, wr), geo, cfg)
            js.append(j)
        assert js[0] < js[1] < js[2]

    def test_axisymmetry_mirror_flux(self):
        cfg = small_config(pe=0.6, window_x=36.0, nx=180)
        post = posture_of_state(2, 0.0, GEO)  # asymmetric posture
        _, j = tr.steady_field(post, GEO, cfg)
        mirrored = Posture(0.0, post.L2, post.L1)
        _, jm = tr.steady_field(mirrored, GEO, cfg)
        assert j == pytest.approx(jm, rel=1e-10)

    def test_window_guard(self):
        cfg = small_config()
        with pytest.raises(RuntimeError):
            tr.steady_field(Posture(40.0, 10.0, 10.0), GEO, cfg, x0=-12.0)


class TestInstantaneousFlux:
    def test_zero_field_zero_flux(self):
        cfg = small_config()
        grid = small_grid(cfg)
        mask = tr.build_mask(grid, [0.0], tr.mask_radius(GEO, grid, cfg))
        field = tr.ConcentrationField(grid, np.zeros((cfg.nx, cfg.nrho)), mask)
        assert tr.instantaneous_flux(field, GEO, cfg) == 0.0

    def test_consistent_with_steady_solve(self):
        cfg = small_config(pe=0.6, window_x=36.0, nx=180)
        post = Posture(0.0, 10.0, 10.0)
        field, j = tr.steady_field(post, GEO, cfg)
        assert tr.instantaneous_flux(field, GEO, cfg, posture=post) == pytest.approx(j)

    def test_posture_mismatch_detected(self):
        cfg = small_config(pe=0.6, window_x=36.0, nx=180)
        post = Posture(0.0, 10.0, 10.0)
        field, _ = tr.steady_field(post, GEO, cfg)
        with pytest.raises(ValueError):
            tr.instantaneous_flux(field, GEO, cfg, posture=Posture(0.0, 4.0, 10.0))

    def test_nonnegative_for_nonnegative_field(self):
        cfg = small_config()
        grid = small_grid(cfg)
        mask = tr.build_mask(grid, [0.0], tr.mask_radius(GEO, grid, cfg))
        rng = np.random.default_rng(1)
        field = tr.ConcentrationField(grid, rng.random((cfg.nx, cfg.nrho)), mask)
        assert tr.instantaneous_flux(field, GEO, cfg) >= 0.0


class TestMaxPrinciple:
    def test_short_masked_flow_run_stays_bounded(self):
        cfg = small_config(pe=6.0, window_x=32.0, nx=160, solver="splu")
        post = Posture(0.0, 10.0, 10.0)
        field, _ = tr.steady_field(post, GEO, cfg)
        pos = post.positions()
        sol = solve_mobility(pos, (-1.0, 0.0), GEO)
        flow = FlowModel.from_mobility(pos, sol, GEO)
        stepper = tr.ImplicitStepper(field.grid, GEO, cfg)
        out = field
        for _ in range(10):
            out, _ = tr.advance(out, flow, GEO, cfg, stepper)
        assert out.c.max() <= cfg.c_inf + 1e-8 * cfg.c_inf
        assert out.c.min() >= -1e-8 * cfg.c_inf

    def test_in_solid_concentration_small(self):
        cfg = small_config(pe=0.06, window_x=32.0, nx=160, solver="splu")
        post = Posture(0.0, 10.0, 10.0)
        field, _ = tr.steady_field(post, GEO, cfg)
        stepper = tr.ImplicitStepper(field.grid, GEO, cfg)
        out, _ = tr.advance(field, None, GEO, cfg, stepper)
        assert np.abs(out.c[out.mask]).max() <= 1e-6 * cfg.c_inf


class TestRecenter:
    def test_integer_shift_preserves_interior(self):
        cfg = small_config()
        grid = small_grid(cfg)
        rng = np.random.default_rng(2)
        c = rng.random((cfg.nx, cfg.nrho))
        nomask = np.zeros((cfg.nx, cfg.nrho), bool)
        field = tr.ConcentrationField(grid, c.copy(), nomask)
        bc = lambda x, rho: 7.0 + 0.0 * np.asarray(x) * np.asarray(rho)
        shifted = tr._recenter(field, grid.x_center + 3 * cfg.dx, bc)
        np.testing.assert_array_equal(shifted.c[:-3], c[3:])
        np.testing.assert_allclose(shifted.c[-3:], 7.0)
        assert shifted.grid.x0 == pytest.approx(grid.x0 + 3 * cfg.dx)

    def test_no_spurious_flux_on_recentring(self):
        cfg = small_config(pe=0.6, window_x=36.0, nx=180, far_field="charges")
        post = Posture(0.0, 10.0, 10.0)
        field, j = tr.steady_field(post, GEO, cfg)
        charges = tr.make_far_field_charges(post, GEO, cfg)
        bc = tr._boundary_value_fn(cfg, charges)
        moved = tr._recenter(field, field.grid.x_center + 2 * cfg.dx, bc)
        # same lab-frame solids in the shifted window
        moved.mask = tr.posture_mask(post, GEO, moved.grid, cfg)
        j2 = tr.instantaneous_flux(moved, GEO, cfg)
        assert j2 == pytest.approx(j, rel=1e-8)

    def test_subcell_drift_does_not_shift(self):
        cfg = small_config()
        grid = small_grid(cfg)
        field = tr.ConcentrationField(
            grid, np.ones((cfg.nx, cfg.nrho)), np.zeros((cfg.nx, cfg.nrho), bool)
        )
        bc = lambda x, rho: 1.0
        out = tr._recenter(field, grid.x_center + 0.3 * cfg.dx, bc)
        assert out.grid.x0 == grid.x0


class TestPeriodAverage:
    def _records(self, ts, js):
        return [
            tr.FluxRecord(t=t, s=4, a=0, X=0.0, J=j) for t, j in zip(ts, js)
        ]

    def test_constant_flux(self):
        ts = np.linspace(0.0, 8.0, 81)
        recs = self._records(ts, np.full_like(ts, 5.0))
        jbar, flag = tr.period_average_flux(recs, 4.0)
        assert jbar == pytest.approx(5.0)
        assert flag

    def test_synthetic_sine(self):
        ts = np.linspace(0.0, 12.0, 1201)
        js = 1.0 + np.sin(2 * np.pi * ts / 4.0)
        jbar, flag = tr.period_average_flux(self._records(ts, js), 4.0)
        assert jbar == pytest.approx(1.0, abs=2e-5)
        assert flag

    def test_insufficient_data(self):
        ts = np.linspace(0.0, 3.0, 31)
        with pytest.raises(ValueError):
            tr.period_average_flux(self._records(ts, np.ones_like(ts)), 4.0)

    def test_drifting_flux_not_periodic(self):
        ts = np.linspace(0.0, 20.0, 201)
        js = 1.0 + 0.05 * ts
        _, flag = tr.period_average_flux(self._records(ts, js), 4.0)
        assert not flag

    def test_development_time(self):
        ts = np.linspace(0.0, 40.0, 401)
        js = 2.0 + np.exp(-ts / 3.0)
        tdev = tr.development_time(self._records(ts, js), 4.0)
        assert 4.0 <= tdev <= 24.0


class TestRunCoupled:
    def test_gait_run_bookkeeping(self):
        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.6, solver="splu")
        res = tr.run_coupled(GEO, lambda s, rng: gait_action(s), cfg, n_actions=4)
        n_t = round(GEO.stroke_time / cfg.dt)
        assert len(res.records) == 1 + 4 * n_t
        assert len(res.actions) == 4
        # state chain is consistent
        for a, b in zip(res.actions[:-1], res.actions[1:]):
            assert b.s == a.s_next
        # reward bookkeeping matches the flux records
        first = res.actions[0]
        assert first.r_diff == pytest.approx(
            res.records[n_t].J - res.records[0].J
        )
        js = [r.J for r in res.records[: n_t + 1]]
        trapz = sum(0.5 * (a + b) * cfg.dt for a, b in zip(js[:-1], js[1:]))
        assert first.r_acc == pytest.approx(trapz)
        assert first.r_disp == pytest.approx(first.X_after - first.X_before)

    def test_displacement_matches_pure_hydro(self):
        from trisphere import hydro

        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.6, hydro_substeps=200,
                                 solver="splu")
        res = tr.run_coupled(GEO, lambda s, rng: gait_action(s), cfg, n_actions=4)
        assert res.posture.X == pytest.approx(
            hydro.gait_displacement(GEO, 200), rel=1e-12
        )

    def test_action_sequence_source(self):
        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.6, solver="splu")
        res = tr.run_coupled(GEO, [1, 2], cfg, n_actions=2)
        assert [a.a for a in res.actions] == [1, 2]
        with pytest.raises(ValueError):
            tr.run_coupled(GEO, [1], cfg, n_actions=2)

    def test_continuation_matches_single_run(self):
        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.6, solver="splu")
        full = tr.run_coupled(GEO, [1, 2, 1, 2], cfg, n_actions=4)
        part = tr.run_coupled(GEO, [1, 2], cfg, n_actions=2)
        cont = tr.run_coupled(GEO, [1, 2], cfg, n_actions=2, initial=part)
        assert cont.posture.X == pytest.approx(full.posture.X, rel=1e-12)
        assert cont.records[-1].J == pytest.approx(full.records[-1].J, rel=1e-9)

    def test_dt_must_divide_stroke(self):
        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.7)
        with pytest.raises(ValueError):
            tr.run_coupled(GEO, [1], cfg, n_actions=1)

    def test_boundary_data_follows_recentered_window(self):
        # in a gradient, a swimmer that migrates must absorb more: the
        # boundary values are sampled at the current window position
        cfg = tr.TransportConfig(pe=0.6, window_x=36.0, window_rho=12.0,
                                 nx=180, nrho=60, dt=0.6, g=0.01, c_inf=1.0,
                                 solver="splu")
        res = tr.run_coupled(GEO, lambda s, rng: gait_action(s), cfg,
                             n_actions=32)
        early = np.mean([a.r_acc for a in res.actions[4:8]])
        late = np.mean([a.r_acc for a in res.actions[-4:]])
        dx_swim = res.actions[-1].X_after - res.actions[7].X_after
        expected_gain = cfg.g * dx_swim / cfg.c_inf  # relative ambient rise
        assert late / early - 1.0 > 0.5 * expected_gain
        assert late > early
