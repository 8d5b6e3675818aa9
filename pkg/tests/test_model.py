import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdode.errors import DomainError, SingularityError
from rdode.model import (
    EquilibriumMatrices,
    SystemModel,
    bifurcation_condition,
    det_identity,
    equilibrium_matrices,
    eval_rhs,
    find_equilibria,
    get_model,
    jacobian_check,
    parse_model_spec,
    perturbed_model,
    register_model,
    registered_models,
    sqcoupled_model,
)

MODEL_SPECS = ["linear(-1,1,2,-1)", "sqcoupled", "frozen-stable(1)", "frozen-unstable(1)", "autocatalytic"]


def test_sqcoupled_equilibria():
    m = sqcoupled_model()
    eqs = find_equilibria(m, [([0.9], 0.9), ([0.1], 0.1), ([1.2], 1.1)])
    pts = sorted(e.v_bar for e in eqs)
    assert len(pts) == 2
    assert pts == pytest.approx([0.0, 1.0], abs=1e-12)


def test_equilibrium_matrices_sqcoupled():
    m = sqcoupled_model()
    (eq,) = [e for e in find_equilibria(m, [([0.9], 0.9)])]
    mats = equilibrium_matrices(m, eq)
    np.testing.assert_allclose(mats.block, [[-1.0, 2.0], [1.0, -1.0]], atol=1e-12)
    lhs, rhs, diff = det_identity(mats)
    assert lhs == pytest.approx(1.0, abs=1e-12)
    assert diff < 1e-12


def test_linear_bifurcation_index_is_one():
    m = get_model("linear(-1,1,2,-1)")
    (eq,) = find_equilibria(m, [([0.3], -0.2)])
    assert np.allclose(eq.as_vector(), 0.0)
    mats = equilibrium_matrices(m, eq)
    assert bifurcation_condition(mats, [0.0, 1.0, 4.0, 9.0]) == 1
    assert bifurcation_condition(mats, [0.0, 2.0, 4.0]) is None


def test_no_equilibria_returns_empty(caplog):
    shifted = SystemModel(
        name="shifted",
        n=1,
        f=lambda u, v: u**2 + 1.0,
        g=lambda u, v: u[0] - v,
        jac_fu=lambda u, v: (2 * u)[None, ...],
        jac_fv=lambda u, v: np.zeros((1,) + np.shape(v)),
        jac_gu=lambda u, v: np.ones((1,) + np.shape(v)),
        jac_gv=lambda u, v: -np.ones(np.shape(v)),
    )
    assert find_equilibria(shifted, [([0.5], 0.0)], maxiter=20) == []


def test_eval_rhs_rejects_non_finite():
    m = SystemModel(
        name="log",
        n=1,
        f=lambda u, v: np.log(u),
        g=lambda u, v: u[0] - v,
        jac_fu=lambda u, v: (1 / u)[None, ...],
        jac_fv=lambda u, v: np.zeros((1,) + np.shape(v)),
        jac_gu=lambda u, v: np.ones((1,) + np.shape(v)),
        jac_gv=lambda u, v: -np.ones(np.shape(v)),
    )
    with pytest.raises(DomainError):
        with np.errstate(all="ignore"):
            eval_rhs(m, np.array([-1.0]), 0.0)


def test_det_identity_singular_a0():
    mats = EquilibriumMatrices(np.zeros((1, 1)), np.ones(1), np.ones(1), 0.0)
    with pytest.raises(SingularityError):
        det_identity(mats)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 2**31 - 1))
def test_det_identity_property(n, seed):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    if np.linalg.cond(A) > 1e6:
        A += 3 * np.eye(n)
    mats = EquilibriumMatrices(A, r.normal(size=n), r.normal(size=n), float(r.normal()))
    lhs, rhs, diff = det_identity(mats)
    assert diff <= 1e-9 * max(1.0, abs(lhs))


@pytest.mark.parametrize("spec", MODEL_SPECS)
def test_jacobians_match_finite_differences(spec, rng):
    m = get_model(spec)
    for _ in range(10):
        z = np.array([rng.uniform(lo, hi) for lo, hi in m.box])
        assert jacobian_check(m, z[:-1], z[-1]) < 1e-5


def test_vectorized_shapes():
    m = get_model("linear(-1,1,2,-1)")
    u, v = np.ones((1, 7)), np.ones(7)
    assert m.f(u, v).shape == (1, 7)
    assert np.shape(m.g(u, v)) == (7,)
    assert m.jac_fu(u, v).shape == (1, 1, 7)


def test_model_spec_parsing():
    assert parse_model_spec("linear(-1, 1, 2, -1)") == ("linear", (-1.0, 1.0, 2.0, -1.0))
    assert parse_model_spec("sqcoupled") == ("sqcoupled", ())
    for bad in ["lin((", "linear(a,b)", "", "3x"]:
        with pytest.raises(ValueError):
            get_model(bad)
    with pytest.raises(ValueError):
        get_model("nosuchmodel")
    with pytest.raises(ValueError):
        get_model("linear(1,2)")


def test_register_model():
    register_model("sq-alias", sqcoupled_model)
    assert "sq-alias" in registered_models()
    assert get_model("sq-alias").name == "sqcoupled"
    with pytest.raises(ValueError):
        register_model("bad(name)", sqcoupled_model)


def test_perturbed_model_stationary_identity(rng):
    m = sqcoupled_model()
    d, vb = 0.97, 1.0
    pm = perturbed_model(m, d, vb)
    u, v = rng.normal(size=(1, 5)), rng.normal(size=5)
    np.testing.assert_allclose(d * pm.g(u, v), m.g(u, v) + (1 - d) * (v - vb), atol=1e-14)
    assert perturbed_model(m, 1.0, vb) is m
    for _ in range(5):
        z = rng.uniform(-2, 2, 2)
        assert jacobian_check(pm, z[:1], z[1]) < 1e-5
