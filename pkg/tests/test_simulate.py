import warnings

import numpy as np
import pytest

from rdode.errors import BlowUpError, FitError
from rdode.grid import laplacian_eigenpairs, make_grid, neumann_laplacian
from rdode.model import SystemModel, equilibrium_matrices, find_equilibria, frozen_model, get_model, sqcoupled_model
from rdode.simulate import (
    BLOWUP_CAP,
    IMEXStepper,
    NoiseSpec,
    SimState,
    SimulationTrace,
    growth_rate,
    lyapunov_escape_test,
    perturb,
    remainder_growth_check,
    simulate,
    step,
)
from rdode.stationary import assemble_stationary, continue_branch, linear_explicit_state, select_branch_point


def inert_model():
    z = lambda u, v: np.zeros_like(np.asarray(u, dtype=float))  # noqa: E731
    return SystemModel(
        name="inert", n=1, f=z, g=lambda u, v: np.zeros_like(np.asarray(v, dtype=float)),
        jac_fu=lambda u, v: np.zeros((1, 1) + np.shape(v)),
        jac_fv=lambda u, v: np.zeros((1,) + np.shape(v)),
        jac_gu=lambda u, v: np.zeros((1,) + np.shape(v)),
        jac_gv=lambda u, v: np.zeros(np.shape(v)),
    )


@pytest.fixture(scope="module")
def linear_case(grid):
    m = get_model("linear(-1,1,2,-1)")
    (eq,) = find_equilibria(m, [([0.0], 0.0)])
    return m, linear_explicit_state(m, equilibrium_matrices(m, eq), grid, 1)


def test_step_pure_diffusion_conserves_mean(grid, lap):
    m = inert_model()
    V = np.cos(3 * grid.nodes) + 0.25 + 0.1 * grid.nodes
    s = SimState(np.zeros((1, grid.M)), V)
    stepper = IMEXStepper(m, lap, 1e-3)
    mean0 = grid.mean(V)
    for _ in range(1000):
        s = stepper.step(s)
    assert abs(grid.mean(s.V) - mean0) < 1e-12
    assert np.ptp(s.V) < np.ptp(V)
    const = SimState(np.zeros((1, grid.M)), np.full(grid.M, 0.7))
    np.testing.assert_allclose(step(m, grid, lap, const, 1e-2).V, 0.7, atol=1e-12)


def test_step_second_order_in_time(grid, lap):
    m = get_model("linear(-1,1,2,-1)")
    s0 = SimState(np.cos(2 * grid.nodes)[None, :], np.cos(grid.nodes))

    def run(dt):
        st = IMEXStepper(m, lap, dt)
        s = s0
        for _ in range(round(0.5 / dt)):
            s = st.step(s)
        return s.stacked()

    ref = run(1e-4)
    e1, e2 = np.abs(run(4e-3) - ref).max(), np.abs(run(2e-3) - ref).max()
    assert 3.5 < e1 / e2 < 4.5


def test_step_rejects_bad_dt(grid, lap):
    s = SimState(np.zeros((1, grid.M)), np.zeros(grid.M))
    with pytest.raises(ValueError):
        step(inert_model(), grid, lap, s, 0.0)


def test_blow_up_detected():
    g = make_grid(M=21)
    lap = neumann_laplacian(g)
    m = get_model("linear(5,0,0,5)")
    s = SimState(np.ones((1, g.M)), np.ones(g.M))
    with pytest.raises(BlowUpError) as info:
        simulate(m, g, lap, s, 10.0, 1e-2)
    assert info.value.t is not None and info.value.t < 10.0


def test_simulate_argument_errors(grid, lap):
    s = SimState(np.zeros((1, grid.M)), np.zeros(grid.M))
    with pytest.raises(ValueError):
        simulate(inert_model(), grid, lap, s, 1.0, 0.0)
    with pytest.raises(ValueError):
        simulate(inert_model(), grid, lap, s, 1e-3, 1e-2)


def test_zero_deviation_stays_zero(grid, lap):
    m = sqcoupled_model()
    (eq,) = find_equilibria(m, [([0.9], 0.9)])
    s = SimState(np.ones((1, grid.M)) * eq.u_bar[0], np.full(grid.M, eq.v_bar))
    tr = simulate(m, grid, lap, s, 5.0, 1e-3)
    assert tr.max_deviation < 1e-8


def test_linear_stationarity_is_discretization_limited(linear_case, grid, lap):
    m, st = linear_case
    tr = simulate(m, grid, lap, SimState(st.U, st.V), 1.0, 1e-3, ref=st)
    # residual (1 - mu_1^h) cos x seeds the discrete mode-1 eigenvalue (1 - mu_1^h) / 3 > 0
    assert tr.max_deviation < 1e-5
    assert tr.max_deviation < 10 * st.residual_pde


def test_mass_balance_first_order(linear_case, grid, lap):
    m, st = linear_case
    init = perturb(st, laplacian_eigenpairs(lap, 1)[0], 1e-2)
    errs = [simulate(m, grid, lap, init, 0.2, dt, ref=st).mass_balance for dt in (4e-3, 2e-3)]
    assert errs[1] < errs[0]
    assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.1)


def test_perturb_mode_and_noise(linear_case, lap):
    _, st = linear_case
    pair = laplacian_eigenpairs(lap, 1)[0]
    s = perturb(st, pair, 1e-3)
    assert np.max(np.abs(s.V - st.V)) == pytest.approx(1e-3, rel=1e-14)
    assert np.all(s.U == st.U)
    s = perturb(st, pair, 1e-3, include_u=True)
    assert np.max(np.abs(s.U - st.U)) == pytest.approx(1e-3, rel=1e-14)
    a = perturb(st, NoiseSpec(seed=7), 1e-4)
    b = perturb(st, NoiseSpec(seed=7), 1e-4)
    assert np.array_equal(a.V, b.V) and np.array_equal(a.U, b.U)
    assert np.max(np.abs(a.V - st.V)) <= 1e-4
    with pytest.raises(ValueError):
        perturb(st, pair, 0.0)


def test_seeded_noise_traces_identical(linear_case, grid, lap):
    m, st = linear_case
    runs = [simulate(m, grid, lap, perturb(st, NoiseSpec(seed=3), 1e-4), 0.5, 1e-3, ref=st) for _ in range(2)]
    assert runs[0].deviation_norms == runs[1].deviation_norms


def test_growth_rate_synthetic():
    t = np.linspace(0, 30, 601)
    tr = SimulationTrace(list(t), list(1e-6 * np.exp(0.4142 * t)))
    assert growth_rate(tr) == pytest.approx(0.4142, abs=1e-3)
    assert tr.fit_window[0] == 0.0 and tr.fit_window[1] < 30
    short = SimulationTrace([0.0, 1.0, 2.0], [1e-3, 2e-3, 4e-3])
    with pytest.raises(FitError):
        growth_rate(short)


def test_trace_invariants():
    with pytest.raises(ValueError):
        SimulationTrace([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        SimulationTrace([0.0, 1.0], [1.0, -1.0])


def test_growth_rate_linear_experiment(linear_case, grid, lap):
    m, st = linear_case
    rep = lyapunov_escape_test(m, grid, lap, st, [1e-3], 0.05, 40.0)
    assert rep.runs[0].trace.fitted_rate == pytest.approx(np.sqrt(2) - 1, rel=0.05)


def test_growth_rate_halving_dt(grid, lap):
    m = frozen_model(1.0, False)
    V = np.cos(grid.nodes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        st = assemble_stationary(m, grid, V, U=V[None, :])
    rates = [
        lyapunov_escape_test(m, grid, lap, st, [1e-3], 0.05, 10.0, dt=dt).runs[0].trace.fitted_rate
        for dt in (2e-3, 1e-3)
    ]
    assert rates[1] == pytest.approx(1.0, rel=0.05)
    assert abs(rates[0] - rates[1]) < 0.01 * rates[1]


def test_escape_test_delta_validation(linear_case, grid, lap):
    m, st = linear_case
    with pytest.raises(ValueError):
        lyapunov_escape_test(m, grid, lap, st, [1e-3], 2 * BLOWUP_CAP, 1.0)
    with pytest.raises(ValueError):
        lyapunov_escape_test(m, grid, lap, st, [], 0.05, 1.0)


def test_escape_report_dict(linear_case, grid, lap):
    m, st = linear_case
    rep = lyapunov_escape_test(m, grid, lap, st, [1e-2], 0.05, 10.0)
    d = rep.to_dict()
    assert d["result"] == "PASS" and "M=401" in d["witness"]


def test_remainder(grid, lap, linear_case):
    m, st = linear_case
    amps = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
    assert remainder_growth_check(m, grid, st, amps) == (0.0, float("inf"))
    sq = sqcoupled_model()
    (eq,) = find_equilibria(sq, [([0.9], 0.9)])
    p = select_branch_point(continue_branch(sq, grid, lap, eq, 1, (0.95, 1.05), 10), 0.15)
    fit = remainder_growth_check(p.model, grid, p.state, amps)
    assert fit.eta_fit == pytest.approx(1.0, abs=0.1)
    # N = (w_v^2, 0), so C is the squared sup of the direction restricted to v
    assert 0.9 < fit.C_fit <= 1.0 + 1e-9
    with pytest.raises(ValueError):
        remainder_growth_check(m, grid, st, [1e-2])
    with pytest.raises(ValueError):
        remainder_growth_check(m, grid, st, [1e-3, 1e-2, 0.05, 0.08, 0.2])
