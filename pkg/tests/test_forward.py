import numpy as np
import pytest

from tumourid import fem
from tumourid.forward import (AdmissibleBox, NewtonError, Params, SolverConfig, State,
                              advance, chemical_potential, initial_fields, simulate,
                              solve_ch_step_newton, solve_nutrient_step)
from tumourid.mesh import NodalField, RefinePolicy, build_uniform
from tumourid.model import eval_f, eval_g, eval_h

SQUARE = (-5.0, 5.0, -5.0, 5.0)


@pytest.fixture(scope="module")
def mesh():
    return build_uniform(SQUARE, 16)


def test_params_and_box():
    assert np.array_equal(Params(1, 2, 3).as_array(), [1, 2, 3])
    assert Params.from_array([1, 2, 3]) == Params(1, 2, 3)
    with pytest.raises(ValueError):
        Params(-1, 0, 0)
    with pytest.raises(ValueError):
        Params(np.inf, 0, 0)
    box = AdmissibleBox()
    assert box.contains([0, 10, 5]) and not box.contains([0, 10.1, 5])
    with pytest.raises(ValueError):
        AdmissibleBox(0, 1, 1)


@pytest.mark.parametrize("kw", [dict(tau=0), dict(K=-1), dict(K=1.5), dict(newton_tol=0),
                                dict(newton_max_iter=0)])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_nutrient_constant_without_consumption(mesh):
    one = np.ones(mesh.n_nodes)
    sig = solve_nutrient_step(one, np.linspace(-1, 1, mesh.n_nodes), Params(1, 1, 0), 0.1, mesh)
    assert np.allclose(sig, 1.0, atol=1e-12)


def test_nutrient_constant_ode(mesh):
    one = np.ones(mesh.n_nodes)
    sig = solve_nutrient_step(one, 1.5 * one, Params(0, 0, 2.0), 0.05, mesh)
    assert np.allclose(sig, 1 / 1.1, atol=1e-12)


def test_nutrient_balance(mesh, desk_model, rng):
    M = fem.operators(mesh).M
    one = np.ones(mesh.n_nodes)
    sp_, pp = rng.uniform(0, 2, mesh.n_nodes), rng.uniform(-1.2, 1.2, mesh.n_nodes)
    C, tau = 3.0, 0.1
    sig = solve_nutrient_step(sp_, pp, Params(0, 0, C), tau, mesh)
    Mh = fem.assemble_weighted_mass(mesh, eval_h(pp))
    lhs = one @ (M @ sig) + tau * C * (one @ (Mh @ sig))
    assert lhs == pytest.approx(one @ (M @ sp_), abs=1e-10)


def test_ch_steady_state_at_zero(mesh, desk_model):
    z = np.zeros(mesh.n_nodes)
    phi, mu = solve_ch_step_newton(z, np.ones(mesh.n_nodes), Params(0, 0, 0), 0.1, mesh,
                                   desk_model, SolverConfig())
    assert np.abs(phi).max() < 1e-12 and np.abs(mu).max() < 1e-12


def test_ch_fixed_point_is_reproduced(mesh, desk_model):
    # relax a profile with P = chi = 0, then the relaxed state is a fixed point
    phi0, _ = initial_fields(mesh, desk_model)
    solver = SolverConfig(tau=0.1, K=40)
    traj = simulate(phi0, NodalField(mesh, np.ones(mesh.n_nodes)), Params(0, 0, 0), solver,
                    desk_model)
    pp = traj.states[-1].phi
    phi, mu = solve_ch_step_newton(pp, np.ones(mesh.n_nodes), Params(0, 0, 0), 100.0, mesh,
                                   desk_model, SolverConfig())
    expected_mu = chemical_potential(mesh, phi, desk_model)
    assert np.allclose(mu, expected_mu, atol=1e-8)


def test_ch_mass_identities(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    M = fem.operators(mesh).M
    one = np.ones(mesh.n_nodes)
    pp, sig = phi0.values, sigma0.values
    phi, _ = solve_ch_step_newton(pp, sig, Params(0, 5, 0), 0.1, mesh, desk_model, SolverConfig())
    assert one @ M @ phi == pytest.approx(one @ M @ pp, abs=1e-10)
    P, tau = 4.0, 0.1
    phi, _ = solve_ch_step_newton(pp, sig, Params(P, 5, 0), tau, mesh, desk_model, SolverConfig())
    gain = tau * P * (one @ (M @ (eval_f(pp) * eval_g(sig, desk_model))))
    assert gain > 0
    assert one @ M @ phi - one @ M @ pp == pytest.approx(gain, abs=1e-10)


def test_newton_converges_quadratically(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    traj = simulate(phi0, sigma0, Params(7, 6, 2), SolverConfig(tau=0.1, K=3), desk_model)
    res = []
    st = traj.states[-1]
    solve_ch_step_newton(st.phi, st.sigma, Params(7, 6, 2), 0.1, mesh, desk_model,
                         SolverConfig(), residuals=res)
    res = np.array(res)
    assert res[-1] <= 1e-10
    tail = res[res > 1e-9]
    ratios = tail[1:] / tail[:-1] ** 2
    assert len(ratios) >= 1 and np.all(ratios < 1e4)


def test_newton_failure_is_reported(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    with pytest.raises(NewtonError) as info:
        simulate(phi0, sigma0, Params(7, 6, 2), SolverConfig(tau=0.1, K=2, newton_max_iter=1),
                 desk_model)
    assert info.value.step == 1 and info.value.residual > 0


def test_flat_zero_state_is_steady(mesh, desk_model):
    z = np.zeros(mesh.n_nodes)
    st = State(mesh, z, z, np.ones(mesh.n_nodes))
    nxt = advance(st, Params(0, 0, 0), SolverConfig(tau=0.1), desk_model)
    assert np.abs(nxt.phi).max() < 1e-12 and np.abs(nxt.mu).max() < 1e-12
    assert np.allclose(nxt.sigma, 1.0) and nxt.k == 1 and nxt.t == pytest.approx(0.1)


def test_one_step_nutrient_mass_nonincreasing(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    st = State(mesh, phi0.values, chemical_potential(mesh, phi0.values, desk_model), sigma0.values)
    nxt = advance(st, Params(7, 6, 2), SolverConfig(tau=0.1), desk_model)
    M = fem.operators(mesh).M
    one = np.ones(mesh.n_nodes)
    assert np.all(nxt.sigma >= 0)
    assert one @ M @ nxt.sigma <= one @ M @ st.sigma


def test_adapt_with_flat_fields_keeps_mesh(mesh, desk_model):
    z = np.zeros(mesh.n_nodes)
    st = State(mesh, z, z, np.ones(mesh.n_nodes))
    nxt = advance(st, Params(0, 0, 0), SolverConfig(tau=0.1, adapt=True), desk_model)
    assert nxt.mesh is mesh


def test_adaptive_run(desk_model):
    mesh = build_uniform(SQUARE, 8)
    phi0, sigma0 = initial_fields(mesh, desk_model)
    pol = RefinePolicy(theta_mark=0.5, v_min=5e-3, v_max=0.8)
    traj = simulate(phi0, sigma0, Params(7, 6, 2), SolverConfig(tau=0.1, K=3, adapt=True,
                                                                  policy=pol), desk_model)
    assert traj.fixed_mesh is None
    meshes = traj.meshes
    assert meshes[-1].n_cells > mesh.n_cells
    for m in meshes:
        assert m.is_conforming()
        assert m.areas.sum() == pytest.approx(100.0, rel=1e-12)
    assert meshes[-1].areas.min() >= pol.v_min * (1 - 1e-12)


def test_simulate_zero_steps(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    traj = simulate(phi0, sigma0, Params(1, 1, 1), SolverConfig(K=0), desk_model)
    assert traj.K == 0 and len(traj.states) == 1 and traj.fixed_mesh is mesh


def test_simulate_conserves_mass_without_source(mesh, desk_model):
    phi0, sigma0 = initial_fields(mesh, desk_model)
    traj = simulate(phi0, sigma0, Params(0, 0, 0), SolverConfig(tau=0.1, K=10), desk_model)
    M = fem.operators(mesh).M
    mass = [np.sum(M @ s.phi) for s in traj.states]
    assert np.ptp(mass) < 1e-9
    assert [s.k for s in traj.states] == list(range(11))
    assert traj.states[-1].t == pytest.approx(1.0)


def test_simulate_deterministic(small_problem):
    p = small_problem
    again = simulate(p["phi0"], p["sigma0"], Params(7, 6, 2), p["solver"], p["model"])
    for a, b in zip(again.states, p["truth"].states):
        assert np.array_equal(a.phi, b.phi) and np.array_equal(a.mu, b.mu)
        assert np.array_equal(a.sigma, b.sigma)


def test_h1_norms_bounded_on_desk_run(desk_model):
    mesh = build_uniform(SQUARE, 32)
    phi0, sigma0 = initial_fields(mesh, desk_model)
    traj = simulate(phi0, sigma0, Params(7, 6, 2), SolverConfig(tau=0.1, K=20), desk_model)
    ops = fem.operators(mesh)
    # mu^0 is only a diagnostic of the projected initial data; the scheme produces k >= 1
    for s in traj.states[1:]:
        for u in (s.phi, s.mu, s.sigma):
            assert np.sqrt(u @ (ops.M @ u) + u @ (ops.K @ u)) < 1e3


def test_growth_with_source(small_problem):
    traj = small_problem["truth"]
    M = fem.operators(traj.fixed_mesh).M
    mass = [np.sum(M @ s.phi) for s in traj.states]
    assert np.all(np.diff(mass) > 0)
