"""Tests for the verification-theorem experiments."""

import dataclasses
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from thermopiezo.bias import build_bias_state, effective_constants
from thermopiezo.errors import (
    InsufficientHorizon,
    NonUniformBiasTemperature,
    PreconditionFailed,
    StabilityViolation,
    ValidationError,
)
from thermopiezo.fields import Grid, IncrementalAction
from thermopiezo.material import MaterialModel
from thermopiezo.solver import (
    IncrementalState,
    Scenario,
    Trajectory,
    assemble_operators,
    run_simulation,
)
from thermopiezo.theorems import (
    dissipation_identity,
    energy_balance_residual,
    energy_functionals,
    hamilton_density_checks,
    hamilton_densities,
    hamilton_variation_residual,
    laplace_transform,
    reciprocity_residual,
    uniqueness_experiment,
)

from oracles import random_bias_inputs, random_material


def coupled_bar_material():
    """1-D material with every coupling active."""
    return MaterialModel(rho0=1.0, theta_ref=1.0,
                         c2=np.full((1, 1, 1, 1), 4.0),
                         kappa_cond=np.eye(1), a_heat=0.8,
                         e_piezo=np.full((1, 1, 1), 0.3),
                         chi_diel=2.0 * np.eye(1),
                         lam_thermo=0.4 * np.eye(1),
                         p_pyro=np.array([0.2]), eps0=1.0)


def pulse(t, t0=0.25, width=0.06):
    return np.exp(-0.5 * ((t - t0) / width) ** 2)


def random_state(grid, rng, scale=0.1):
    """Random nodal fields on ``grid`` packed into a state container."""
    d = grid.dim
    return IncrementalState(
        grid=grid, t=0.0,
        u=scale * rng.standard_normal(grid.shape + (d,)),
        v=scale * rng.standard_normal(grid.shape + (d,)),
        phi1=scale * rng.standard_normal(grid.shape),
        theta1=scale * rng.standard_normal(grid.shape))


@pytest.fixture(scope="module")
def coupled_run():
    """Driven coupled bar with uniform bias temperature."""
    m = coupled_bar_material()
    bias = build_bias_state(m, theta0=1.1)
    grid = Grid(extents=(1.0,), n=(41,), mech_essential=("left", "right"),
                therm_essential=("left", "right"))
    action = IncrementalAction(
        f1=lambda X, t: 0.5 * pulse(t) * np.sin(np.pi * X[..., :1]))
    scenario = Scenario(material=m, bias=bias, grid=grid, action=action,
                        dt=0.005, t_final=1.0)
    return run_simulation(scenario)


@pytest.fixture(scope="module")
def reciprocal_pairs():
    """Two loadings on the same affine-bias bar, coarse and refined."""
    m = coupled_bar_material()
    bias = build_bias_state(m, theta0=(1.1, [0.3]))

    def run_pair(n, dt):
        grid = Grid(extents=(1.0,), n=(n,),
                    mech_essential=("left", "right"),
                    therm_essential=("left", "right"))
        act_a = IncrementalAction(f1=lambda X, t: 0.6 * pulse(t, 0.3, 0.08)
                                  * np.exp(-((X[..., :1] - 0.3) / 0.12) ** 2))
        act_b = IncrementalAction(gamma1=lambda X, t: 0.8 * pulse(t, 0.4, 0.08)
                                  * np.exp(-((X[..., 0] - 0.7) / 0.1) ** 2))
        kwargs = dict(material=m, bias=bias, grid=grid, dt=dt, t_final=20.0)
        return (run_simulation(Scenario(action=act_a, **kwargs)),
                run_simulation(Scenario(action=act_b, **kwargs)))

    return run_pair(81, 0.005), run_pair(161, 0.0025)


class TestEnergyFunctionals:
    def _setup(self, dim=1, theta0=1.1):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=theta0)
        grid = Grid(extents=(1.0,) * dim, n=(9,) * dim)
        return m, bias, grid, effective_constants(m, bias)

    def test_zero_state_has_zero_ledger(self):
        m, bias, grid, ec = self._setup()
        zero = IncrementalState(grid=grid, t=0.0, u=np.zeros((9, 1)),
                                v=np.zeros((9, 1)), phi1=np.zeros(9),
                                theta1=np.zeros(9))
        led = energy_functionals(zero, ec, bias)
        for name in ("W_def", "K_kin", "P_heat", "E_elec", "C_coupling",
                     "chi", "chi_theta", "chi_phi", "chi_u"):
            assert getattr(led, name) == 0.0
        assert led.total == 0.0
        assert led.dissipation == 0.0

    def test_uniform_temperature_closed_form(self):
        m, bias, grid, ec = self._setup()
        tau = 0.7
        state = IncrementalState(grid=grid, t=0.0, u=np.zeros((9, 1)),
                                 v=np.zeros((9, 1)), phi1=np.zeros(9),
                                 theta1=np.full(9, tau))
        led = energy_functionals(state, ec, bias)
        expect = ec.alpha / (2.0 * bias.theta_c) * m.rho0 * tau ** 2
        assert_allclose(led.P_heat, expect, rtol=1e-13)
        assert led.W_def == led.K_kin == led.E_elec == 0.0
        assert led.C_coupling == 0.0
        assert led.dissipation == 0.0
        assert_allclose(led.total, bias.theta_c * led.P_heat, rtol=1e-14)

    def test_deformation_energy_matches_quadratic_form(self):
        rng = np.random.default_rng(11)
        m = random_material(rng, 2)
        bias = build_bias_state(m, theta0=1.2)
        grid = Grid(extents=(1.0, 1.0), n=(9, 9))
        ec = effective_constants(m, bias)
        state = random_state(grid, rng)
        led = energy_functionals(state, ec, bias)
        ops = assemble_operators(m, bias, grid)
        u = state.u.reshape(-1)
        assert_allclose(led.W_def, 0.5 * u @ (ops.A @ u), rtol=1e-12)
        phi = state.phi1.reshape(-1)
        th = state.theta1.reshape(-1)
        assert_allclose(led.E_elec, 0.5 * phi @ (ops.D @ phi), rtol=1e-12)
        assert_allclose(led.C_coupling, -phi @ (ops.E @ th), rtol=1e-12)
        assert_allclose(bias.theta_c * led.P_heat,
                        0.5 * th @ (ops.H @ th), rtol=1e-12)

    def test_kinetic_energy_closed_form(self):
        m, bias, grid, ec = self._setup()
        state = IncrementalState(grid=grid, t=0.0, u=np.zeros((9, 1)),
                                 v=np.full((9, 1), 0.3), phi1=np.zeros(9),
                                 theta1=np.zeros(9))
        led = energy_functionals(state, ec, bias)
        assert_allclose(led.K_kin, 0.5 * m.rho0 * 0.3 ** 2, rtol=1e-13)

    def test_affine_bias_temperature_rejected(self):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=(1.1, [0.2]))
        grid = Grid(extents=(1.0,), n=(9,))
        ec = effective_constants(m, bias)
        state = IncrementalState(grid=grid, t=0.0, u=np.zeros((9, 1)),
                                 v=np.zeros((9, 1)), phi1=np.zeros(9),
                                 theta1=np.zeros(9))
        with pytest.raises(NonUniformBiasTemperature):
            energy_functionals(state, ec, bias)


class TestEnergyBalance:
    def test_residual_order_under_time_refinement(self):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,),
                    mech_essential=("left", "right"),
                    therm_essential=("left", "right"))
        action = IncrementalAction(
            f1=lambda X, t: 0.5 * pulse(t) * np.sin(np.pi * X[..., :1]))
        norms = []
        for dt in (0.02, 0.01, 0.005):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", StabilityViolation)
                traj = run_simulation(
                    Scenario(material=m, bias=bias, grid=grid,
                             action=action, dt=dt, t_final=1.0))
            norms.append(energy_balance_residual(traj).norm)
        norms = np.asarray(norms)
        orders = np.log2(norms[:-1] / norms[1:])
        assert np.all(np.diff(norms) < 0.0)
        assert orders.min() >= 0.9

    def test_closed_insulated_total_never_increases(self):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,),
                    mech_essential=("left", "right"))
        scenario = Scenario(
            material=m, bias=bias, grid=grid, action=IncrementalAction(),
            dt=0.005, t_final=1.5,
            u0=lambda X: 0.1 * np.sin(np.pi * X),
            theta1_0=lambda X: 0.2 * np.cos(np.pi * X[..., 0]))
        rep = energy_balance_residual(run_simulation(scenario))
        assert rep.totals[0] > 0.0
        assert rep.max_step_increase <= 1e-10 * rep.totals[0]
        assert rep.totals[-1] < rep.totals[0]

    def test_decimated_trajectory_rejected(self, coupled_run):
        sc = dataclasses.replace(coupled_run.scenario, save_every=2)
        traj = Trajectory(scenario=sc, states=coupled_run.states[::2],
                          gauss_residuals=coupled_run.gauss_residuals[::2])
        with pytest.raises(ValidationError):
            energy_balance_residual(traj)

    def test_driven_run_balances_power(self, coupled_run):
        rep = energy_balance_residual(coupled_run)
        scale = np.max(np.abs(rep.power)) + np.max(np.abs(rep.totals))
        assert np.max(np.abs(rep.residual)) == rep.norm
        assert rep.norm <= 5e-3 * scale


class TestDissipationIdentity:
    def _setup(self, dim=2):
        rng = np.random.default_rng(29)
        m = random_material(rng, dim)
        bias = build_bias_state(m, theta0=1.2)
        grid = Grid(extents=(1.0,) * dim, n=(7,) * dim)
        return m, bias, grid, effective_constants(m, bias), rng

    def test_identity_on_random_states(self):
        m, bias, grid, ec, rng = self._setup()
        for _ in range(20):
            state = random_state(grid, rng)
            chk = dissipation_identity(state, ec, bias)
            scale = max(abs(chk.lhs), abs(chk.rhs), 1e-30)
            assert abs(chk.residual) <= 1e-10 * scale
            assert chk.fourier
            assert chk.sign_ok
            assert chk.lhs <= 0.0

    def test_zero_gradient_state_dissipates_nothing(self):
        m, bias, grid, ec, _ = self._setup()
        state = IncrementalState(
            grid=grid, t=0.0, u=np.zeros(grid.shape + (2,)),
            v=np.zeros(grid.shape + (2,)), phi1=np.zeros(grid.shape),
            theta1=np.full(grid.shape, 0.4))
        chk = dissipation_identity(state, ec, bias)
        assert abs(chk.lhs) <= 1e-30 and abs(chk.rhs) <= 1e-30

    def test_identity_with_general_conduction_arrays(self):
        m, bias, grid, ec, rng = self._setup()
        d = grid.dim
        ec_gen = dataclasses.replace(
            ec,
            kap_u=0.3 * rng.standard_normal((d, d, d)),
            kap_E=0.2 * rng.standard_normal((d, d)),
            kap_1=0.4 * rng.standard_normal(d))
        for _ in range(5):
            state = random_state(grid, rng)
            chk = dissipation_identity(state, ec_gen, bias)
            scale = max(abs(chk.lhs), abs(chk.rhs), 1e-30)
            assert abs(chk.residual) <= 1e-10 * scale
            assert not chk.fourier


class TestUniquenessExperiment:
    def _scenarios(self, theta_offset=0.05, material=None, dt=0.005,
                   t_final=1.5):
        m = material if material is not None else coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,),
                    mech_essential=("left", "right"))
        quiet = IncrementalAction()
        kwargs = dict(material=m, bias=bias, grid=grid, action=quiet,
                      dt=dt, t_final=t_final)
        sa = Scenario(u0=lambda X: 0.1 * np.sin(np.pi * X),
                      theta1_0=lambda X: 0.2 * np.cos(np.pi * X[..., 0]),
                      **kwargs)
        sb = Scenario(u0=lambda X: 0.1 * np.sin(np.pi * X),
                      theta1_0=lambda X: 0.2 * np.cos(np.pi * X[..., 0])
                      + theta_offset, **kwargs)
        return sa, sb

    def test_difference_energy_decays_monotonically(self):
        sa, sb = self._scenarios()
        rep = uniqueness_experiment(sa, sb)
        assert rep.conclusive and rep.ignaczak_holds
        assert rep.monotone
        assert rep.max_step_increase <= 1e-10 * rep.totals[0]
        assert rep.totals[0] > 0.0

    def test_identical_scenarios_have_zero_difference(self):
        sa, _ = self._scenarios()
        rep = uniqueness_experiment(sa, sa)
        assert np.max(np.abs(rep.totals)) == 0.0
        assert np.max(np.abs(rep.totals_without_coupling)) == 0.0

    def test_conservative_limit_preserves_difference_energy(self):
        m = MaterialModel(rho0=1.0, theta_ref=1.0,
                          c2=np.full((1, 1, 1, 1), 4.0),
                          kappa_cond=1e-30 * np.eye(1), a_heat=0.8,
                          e_piezo=np.full((1, 1, 1), 0.3),
                          chi_diel=2.0 * np.eye(1),
                          lam_thermo=np.zeros((1, 1)),
                          p_pyro=np.zeros(1), eps0=1.0)
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,),
                    mech_essential=("left", "right"))
        quiet = IncrementalAction()
        kwargs = dict(material=m, bias=bias, grid=grid, action=quiet,
                      dt=0.001, t_final=1.0)
        sa = Scenario(u0=lambda X: 0.1 * np.sin(np.pi * X), **kwargs)
        sb = Scenario(**kwargs)
        rep = uniqueness_experiment(sa, sb)
        drift = np.max(np.abs(rep.totals - rep.totals[0]))
        assert len(rep.totals) == 1001
        assert drift <= 1e-9 * rep.totals[0]
        assert_allclose(rep.totals_without_coupling, rep.totals, rtol=1e-14)

    def test_strong_pyroelectric_coupling_is_inconclusive(self):
        m = dataclasses.replace(coupled_bar_material(),
                                p_pyro=np.array([5.0]))
        sa, sb = self._scenarios(material=m, dt=0.01, t_final=0.05)
        rep = uniqueness_experiment(sa, sb)
        assert not rep.ignaczak_holds
        assert not rep.conclusive
        assert np.isfinite(rep.lambda_min)
        assert np.all(np.isfinite(rep.totals))

    def test_indefinite_dielectric_is_inconclusive(self):
        m = dataclasses.replace(coupled_bar_material(),
                                chi_diel=-2.0 * np.eye(1))
        sa, sb = self._scenarios(material=m, dt=0.01, t_final=0.05)
        rep = uniqueness_experiment(sa, sb)
        assert not rep.conclusive
        assert np.isnan(rep.lambda_min)

    def test_mismatched_scenarios_rejected(self):
        sa, sb = self._scenarios()
        with pytest.raises(PreconditionFailed):
            uniqueness_experiment(sa, dataclasses.replace(sb, dt=0.01))
        other_action = IncrementalAction()
        with pytest.raises(PreconditionFailed):
            uniqueness_experiment(sa, dataclasses.replace(sb,
                                                          action=other_action))


class TestHamiltonDensities:
    def _ec(self, dim=2, seed=5, natural=False):
        rng = np.random.default_rng(seed)
        m = random_material(rng, dim)
        if natural:
            bias = build_bias_state(m)
        else:
            F0, W0, th0 = random_bias_inputs(rng, dim)
            bias = build_bias_state(m, F0, W0, th0)
        return m, effective_constants(m, bias), rng

    def test_zero_arguments_give_zero_densities(self):
        _, ec, _ = self._ec()
        psi, ham, gam = hamilton_densities(ec, np.zeros((2, 2)), np.zeros(2),
                                           0.0, np.zeros(2))
        assert psi == ham == gam == 0.0

    def test_pure_mechanical_free_energy_is_quadratic(self):
        _, ec, rng = self._ec()
        gu = rng.standard_normal((2, 2))
        psi, ham, _ = hamilton_densities(ec, gu, np.zeros(2), 0.0,
                                         np.zeros(2))
        expect = 0.0
        for m_ in range(2):
            for a in range(2):
                for l_ in range(2):
                    for g in range(2):
                        expect += 0.5 * ec.G[m_, a, l_, g] * gu[m_, a] \
                            * gu[l_, g]
        assert_allclose(psi, expect, rtol=1e-13)
        assert_allclose(ham, psi, rtol=1e-13)

    def test_enthalpy_offset_is_dielectric_quadratic(self):
        _, ec, rng = self._ec(seed=7)
        gu = rng.standard_normal((2, 2))
        gp = rng.standard_normal(2)
        tau = rng.standard_normal()
        gt = rng.standard_normal(2)
        psi, ham, _ = hamilton_densities(ec, gu, gp, tau, gt)
        assert_allclose(psi - ham, 0.5 * gp @ (ec.L @ gp), rtol=1e-12)

    def test_fourier_flow_potential_closed_form(self):
        m = coupled_bar_material()
        ec = effective_constants(m, build_bias_state(m, theta0=1.1))
        gt = np.array([0.7])
        _, _, gam = hamilton_densities(ec, np.zeros((1, 1)), np.zeros(1),
                                       0.3, gt)
        assert_allclose(gam, -0.5 * gt @ (ec.kap_2 @ gt), rtol=1e-13)

    def test_densities_broadcast_over_batches(self):
        _, ec, rng = self._ec(seed=9)
        gu = rng.standard_normal((3, 4, 2, 2))
        gp = rng.standard_normal((3, 4, 2))
        tau = rng.standard_normal((3, 4))
        gt = rng.standard_normal((3, 4, 2))
        psi, ham, gam = hamilton_densities(ec, gu, gp, tau, gt)
        assert psi.shape == ham.shape == gam.shape == (3, 4)
        psi1, ham1, gam1 = hamilton_densities(ec, gu[1, 2], gp[1, 2],
                                              tau[1, 2], gt[1, 2])
        assert_allclose([psi[1, 2], ham[1, 2], gam[1, 2]],
                        [psi1, ham1, gam1], rtol=1e-14)

    @pytest.mark.parametrize("natural", [True, False])
    def test_densities_generate_constitutive_response(self, natural):
        _, ec, _ = self._ec(seed=13, natural=natural)
        rep = hamilton_density_checks(ec, num_states=50, seed=1)
        assert rep.passed
        assert rep.num_states == 50
        assert max(rep.max_errors.values()) <= rep.tol


class TestHamiltonVariation:
    def test_solution_is_stationary_point(self, coupled_run):
        rep = hamilton_variation_residual(coupled_run, step=100)
        scale = 1.0
        assert rep.el_u_error <= 1e-10 * scale
        assert rep.el_phi_error <= 1e-10 * scale
        assert rep.fd_error <= 1e-6
        assert rep.momentum_residual <= 1e-10
        assert rep.gauss_residual <= 1e-10
        assert rep.passed

    def test_fourier_temperature_variation_vanishes(self, coupled_run):
        rng = np.random.default_rng(17)
        for step in (40, 120):
            rep = hamilton_variation_residual(
                coupled_run, step=step,
                delta_theta=rng.standard_normal(41))
            assert abs(rep.theta_variation) <= 1e-10
            assert abs(rep.heat_residual) <= 1e-10
            assert rep.defect_term == 0.0

    def test_perturbed_states_break_field_equations_only(self, coupled_run):
        rng = np.random.default_rng(23)
        s0, s1 = coupled_run.states[50], coupled_run.states[51]
        bumped = dataclasses.replace(
            s1, u=s1.u + 0.05 * rng.standard_normal(s1.u.shape))
        traj = Trajectory(scenario=coupled_run.scenario,
                          states=(s0, bumped),
                          gauss_residuals=np.zeros(2))
        rep = hamilton_variation_residual(traj, step=0)
        assert rep.el_u_error <= 1e-10
        assert rep.el_phi_error <= 1e-10
        assert rep.fd_error <= 1e-6
        assert rep.momentum_residual > 1e-3
        assert rep.gauss_residual > 1e-6

    def test_conduction_injection_matches_closed_form(self):
        eps_k, slope, kap = 0.3, 0.5, 1.0
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,))
        x = grid.points[..., 0]
        action = IncrementalAction(
            gamma1=lambda X, t: -eps_k * slope + 0.0 * X[..., 0],
            heat_flux={
                "left": lambda X, t: kap * slope + 0.0 * X[..., 0],
                "right": lambda X, t: -(kap + eps_k) * slope
                + 0.0 * X[..., 0]})
        theta = slope * x

        def state(t):
            return IncrementalState(grid=grid, t=t, u=np.zeros((41, 1)),
                                    v=np.zeros((41, 1)), phi1=np.zeros(41),
                                    theta1=theta)

        scenario = Scenario(material=m, bias=bias, grid=grid, action=action,
                            dt=0.01, t_final=0.01)
        traj = Trajectory(scenario=scenario, states=(state(0.0), state(0.01)),
                          gauss_residuals=np.zeros(2))
        rng = np.random.default_rng(3)
        dth = rng.standard_normal(41)
        rep = hamilton_variation_residual(traj, step=0,
                                          kap_1=np.array([eps_k]),
                                          delta_theta=dth)
        closed = -eps_k * slope * np.trapezoid(dth, x)
        assert abs(rep.heat_residual) <= 1e-12
        assert_allclose(rep.theta_variation, closed, rtol=1e-12)
        assert_allclose(rep.defect_term, closed, rtol=1e-12)

    def test_bad_step_and_stride_rejected(self, coupled_run):
        with pytest.raises(ValidationError):
            hamilton_variation_residual(coupled_run,
                                        step=len(coupled_run.states) - 1)
        sc = dataclasses.replace(coupled_run.scenario, save_every=2)
        traj = Trajectory(scenario=sc, states=coupled_run.states[::2],
                          gauss_residuals=coupled_run.gauss_residuals[::2])
        with pytest.raises(ValidationError):
            hamilton_variation_residual(traj)


class TestLaplaceTransform:
    def _synthetic(self, decay=0.0, t_final=20.0, num=4001, profile=None):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(11,))
        times = np.linspace(0.0, t_final, num)
        shape = profile if profile is not None else np.ones(11)
        states = tuple(
            IncrementalState(grid=grid, t=t,
                             u=np.exp(-decay * t) * np.ones((11, 1)),
                             v=np.zeros((11, 1)),
                             phi1=np.exp(-decay * t) * np.ones(11),
                             theta1=np.exp(-decay * t) * shape)
            for t in times)
        scenario = Scenario(material=m, bias=bias, grid=grid,
                            action=IncrementalAction(),
                            dt=times[1] - times[0], t_final=t_final)
        return Trajectory(scenario=scenario, states=states,
                          gauss_residuals=np.zeros(num))

    def test_constant_history_transforms_to_reciprocal(self):
        traj = self._synthetic()
        for p in (1.0, 2.5):
            lf = laplace_transform(traj, p)
            assert_allclose(lf.phi1, np.full(11, 1.0 / p), rtol=1e-4)
            assert_allclose(lf.u[:, 0], np.full(11, 1.0 / p), rtol=1e-4)
            assert lf.truncation <= 1e-6

    def test_exponential_decay_shifts_the_pole(self):
        traj = self._synthetic(decay=0.7)
        lf = laplace_transform(traj, 1.3)
        assert_allclose(lf.theta1, np.full(11, 1.0 / 2.0), rtol=1e-4)

    def test_spatial_profile_factors_out(self):
        profile = np.linspace(0.0, 1.0, 11) ** 2
        traj = self._synthetic(profile=profile)
        lf = laplace_transform(traj, 2.0)
        assert_allclose(lf.theta1, profile / 2.0, rtol=1e-4, atol=1e-9)

    def test_nonpositive_parameter_rejected(self):
        traj = self._synthetic(num=41, t_final=1.0)
        with pytest.raises(ValidationError):
            laplace_transform(traj, 0.0)
        with pytest.raises(ValidationError):
            laplace_transform(traj, -2.0)

    def test_short_horizon_raises(self, coupled_run):
        with pytest.raises(InsufficientHorizon):
            laplace_transform(coupled_run, 2.0)

    def test_derived_fields_are_reported(self):
        traj = self._synthetic(decay=0.7)
        lf = laplace_transform(traj, 1.0)
        for name in ("K1", "Delta1", "eta1", "Q1", "W1"):
            assert np.all(np.isfinite(getattr(lf, name)))
        assert lf.W1.shape == (11, 1)


class TestReciprocity:
    PS = (1.0, 2.0, 4.0)

    def test_identity_holds_for_distinct_loadings(self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        for p in self.PS:
            rep = reciprocity_residual(tr_a, tr_b, p)
            assert rep.relative <= 1e-3
            assert rep.normalization > 0.0

    def test_residual_decreases_under_joint_refinement(self, reciprocal_pairs):
        (ca, cb), (fa, fb) = reciprocal_pairs
        for p in self.PS:
            coarse = reciprocity_residual(ca, cb, p).relative
            fine = reciprocity_residual(fa, fb, p).relative
            assert fine < coarse

    def test_identical_loadings_are_exactly_zero(self, reciprocal_pairs):
        (tr_a, _), _ = reciprocal_pairs
        rep = reciprocity_residual(tr_a, tr_a, 2.0)
        assert rep.total == 0.0
        assert rep.relative == 0.0
        assert all(v == 0.0 for v in rep.terms.values())

    def test_swapping_roles_flips_every_term(self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        fwd = reciprocity_residual(tr_a, tr_b, 2.0)
        rev = reciprocity_residual(tr_b, tr_a, 2.0)
        for name, value in fwd.terms.items():
            assert rev.terms[name] == -value

    def test_printed_pyroelectric_variant_breaks_identity(
            self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        base = reciprocity_residual(tr_a, tr_b, 2.0)
        printed = reciprocity_residual(tr_a, tr_b, 2.0, printed_pyro=True)
        assert printed.relative > 100.0 * base.relative
        fwd, rev = printed, reciprocity_residual(tr_b, tr_a, 2.0,
                                                 printed_pyro=True)
        for name, value in fwd.terms.items():
            assert rev.terms[name] == -value

    def test_pyroelectric_terms_cancel_in_corrected_form(
            self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        rep = reciprocity_residual(tr_a, tr_b, 1.0)
        assert rep.terms["pyro_volume"] == -rep.terms["pyroelectric"]

    def test_fourier_heat_volume_bracket_cancels(self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        rep = reciprocity_residual(tr_a, tr_b, 1.0)
        assert rep.terms["heat_volume"] == 0.0

    def test_uniform_bias_kills_gradient_terms(self):
        m = coupled_bar_material()
        bias = build_bias_state(m, theta0=1.1)
        grid = Grid(extents=(1.0,), n=(41,),
                    mech_essential=("left", "right"),
                    therm_essential=("left", "right"))
        act_a = IncrementalAction(
            f1=lambda X, t: 0.6 * pulse(t, 0.3, 0.08)
            * np.exp(-((X[..., :1] - 0.3) / 0.12) ** 2))
        act_b = IncrementalAction(
            gamma1=lambda X, t: 0.8 * pulse(t, 0.4, 0.08)
            * np.exp(-((X[..., 0] - 0.7) / 0.1) ** 2))
        kwargs = dict(material=m, bias=bias, grid=grid, dt=0.01,
                      t_final=16.0)
        tr_a = run_simulation(Scenario(action=act_a, **kwargs))
        tr_b = run_simulation(Scenario(action=act_b, **kwargs))
        rep = reciprocity_residual(tr_a, tr_b, 1.5)
        assert rep.terms["stress_gradient"] == 0.0
        assert rep.terms["electric_gradient"] == 0.0
        assert rep.relative <= 1e-3

    def test_mismatched_trajectories_rejected(self, reciprocal_pairs):
        (tr_a, tr_b), (fa, _) = reciprocal_pairs
        with pytest.raises(PreconditionFailed):
            reciprocity_residual(tr_a, fa, 1.0)
        sc = dataclasses.replace(tr_b.scenario, dt=tr_b.scenario.dt / 2)
        with pytest.raises(PreconditionFailed):
            reciprocity_residual(tr_a, Trajectory(
                scenario=sc, states=tr_b.states,
                gauss_residuals=tr_b.gauss_residuals), 1.0)

    def test_inhomogeneous_initial_data_rejected(self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        s0 = tr_b.states[0]
        warm = dataclasses.replace(s0, theta1=s0.theta1 + 0.1)
        bad = Trajectory(scenario=tr_b.scenario,
                         states=(warm,) + tr_b.states[1:],
                         gauss_residuals=tr_b.gauss_residuals)
        with pytest.raises(PreconditionFailed):
            reciprocity_residual(tr_a, bad, 1.0)

    def test_volume_charge_loading_rejected(self, reciprocal_pairs):
        (tr_a, tr_b), _ = reciprocal_pairs
        action = dataclasses.replace(tr_b.scenario.action,
                                     rhoE1=lambda X, t: X[..., 0])
        sc = dataclasses.replace(tr_b.scenario, action=action)
        bad = Trajectory(scenario=sc, states=tr_b.states,
                         gauss_residuals=tr_b.gauss_residuals)
        with pytest.raises(PreconditionFailed):
            reciprocity_residual(tr_a, bad, 1.0)
