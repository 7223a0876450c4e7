import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qpadm import solvers
from qpadm.core import (DataError, Dataset, ParameterError, PenaltySpec, SolverConfig, Variant,
                        objective)
from qpadm.data import SynthSpec, partition, synth_generate
from qpadm.linalg import ridge_factor
from qpadm.solvers import (DivergenceError, gb_correct_modified, gb_correct_standard, solve,
                           update_beta_central, update_beta_m, update_eta, update_xi)
from oracles import beta_m_subproblem, lp_quantile

ALL = list(Variant)
TIGHT = dict(tol=1e-8, consensus_tol=1e-6, max_iter=50_000)


# ---------------------------------------------------------------- subproblems

def test_beta_m_fixed_point_at_zero():
    X = np.random.default_rng(0).standard_normal((4, 3))
    z4, z3 = np.zeros(4), np.zeros(3)
    np.testing.assert_array_equal(update_beta_m(ridge_factor(X), z4, z3, z4, z4, z3, z4, 1.0), z3)


def test_beta_m_scalar():
    f = ridge_factor(np.array([[1.0]]))
    z = np.zeros(1)
    assert update_beta_m(f, np.array([1.0]), z, z, z, z, z, 1.0)[0] == pytest.approx(0.5)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6), st.floats(0.1, 20))
def test_beta_m_matches_least_squares(seed, n, p, mu):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y, xi, eta, e = (rng.standard_normal(n) for _ in range(4))
    ref, d = rng.standard_normal(p), rng.standard_normal(p)
    got = update_beta_m(ridge_factor(X), y, ref, np.abs(xi), np.abs(eta), d, e, mu)
    want = beta_m_subproblem(X, y, ref, np.abs(xi), np.abs(eta), d, e, mu)
    np.testing.assert_allclose(got, want, atol=1e-8)


def test_xi_examples():
    # y - X b = 0.5, eta = 0.1, e/mu = 0.2, tau/mu = 0.7
    got = update_xi(np.array([0.5]), np.array([0.0]), np.array([0.1]), np.array([0.2]), 1.0, 0.7)
    assert got[0] == pytest.approx(0.1)
    z = np.zeros(1)
    assert update_xi(z, z, z, z, 1.0, 0.7)[0] == 0.0
    # argument exactly zero
    assert update_xi(np.array([0.7]), z, z, z, 1.0, 0.7)[0] == 0.0


def test_eta_examples():
    z = np.zeros(1)
    # y - X b - xi + e/mu = -0.5
    assert update_eta(np.array([-0.5]), z, z, z, 1.0, 0.7)[0] == pytest.approx(0.2)
    assert update_eta(z, z, z, z, 1.0, 0.7)[0] == 0.0
    assert update_eta(z, z, z, z, 1.0, 1.0)[0] == 0.0


def test_central_update_examples():
    assert update_beta_central([np.array([2.0])], np.array([1.0]), 1.0)[0] == pytest.approx(1.0)
    assert update_beta_central([np.zeros(2), np.zeros(2)], np.ones(2), 1.0).tolist() == [0, 0]
    got = update_beta_central([np.array([1.0]), np.array([3.0])], np.array([0.0]), 1.0)
    assert got[0] == pytest.approx(2.0)
    with pytest.raises(ParameterError):
        update_beta_central([], np.ones(1), 1.0)


def test_standard_correction_example():
    eta, beta = gb_correct_standard(np.array([1.0]), np.array([2.0]), np.array([1.0]),
                                    np.array([0.5]), np.array([[1.0]]), 0.75)
    assert eta[0] == pytest.approx(1.375)
    assert beta[0] == pytest.approx(0.625)


def test_modified_correction_examples():
    xi, _ = gb_correct_modified(np.array([1.0]), np.array([2.0]), np.zeros(1), np.zeros(1), 0.75)
    assert xi[0] == pytest.approx(1.75)
    _, eta = gb_correct_modified(np.zeros(1), np.zeros(1), np.array([1.0]), np.array([0.6]), 0.75)
    assert eta[0] == pytest.approx(0.7)


@given(st.integers(0, 10_000), st.floats(0.01, 0.99))
def test_corrections_fix_unchanged_iterates(seed, nu):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((4, 3))
    eta, beta, xi = rng.random(4), rng.standard_normal(3), rng.random(4)
    e2, b2 = gb_correct_standard(eta, eta, beta, beta, X, nu)
    np.testing.assert_allclose(e2, eta, atol=1e-14)
    np.testing.assert_allclose(b2, beta, atol=1e-14)
    x3, e3 = gb_correct_modified(xi, xi, eta, eta, nu)
    np.testing.assert_allclose(x3, xi, atol=1e-14)
    np.testing.assert_allclose(e3, eta, atol=1e-14)


def test_correction_rejects_bad_nu():
    z = np.zeros(1)
    for nu in (0.0, 1.0, 1.5):
        with pytest.raises(ParameterError):
            gb_correct_standard(z, z, z, z, np.ones((1, 1)), nu)
        with pytest.raises(ParameterError):
            gb_correct_modified(z, z, z, z, nu)


# ---------------------------------------------------------------- full solves

@pytest.fixture(scope="module")
def small_problem():
    sd = synth_generate(SynthSpec(40, 20, seed=0))
    X = sd.dataset.X[:, [0, 5, 11, 14, 19]]
    ds = Dataset.regression(X, sd.dataset.y)
    w = np.full(5, 0.1)
    _, f = lp_quantile(X, ds.y, w, 0.7)
    return ds, w, f


@pytest.mark.parametrize("variant", ALL)
def test_variants_reach_lp_objective(small_problem, variant):
    ds, w, f = small_problem
    fit = solve(ds, w, SolverConfig(tau=0.7, M=2, variant=variant, **TIGHT))
    assert fit.converged
    assert abs(fit.trace.objective[-1] - f) / f < 1e-3


@pytest.mark.parametrize("variant", ALL)
def test_unpenalized_median_matches_lp(variant):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 3))
    y = X @ [1, -1, 0.5] + rng.standard_normal(30)
    b, _ = lp_quantile(X, y, np.zeros(3), 0.5)
    fit = solve(Dataset.regression(X, y), np.zeros(3), SolverConfig(tau=0.5, variant=variant, **TIGHT))
    np.testing.assert_allclose(fit.beta, b, atol=1e-3)


@pytest.mark.parametrize("variant", ALL)
def test_zero_design_gives_zero(variant):
    ds = Dataset.regression(np.zeros((6, 2)), np.arange(6.0))
    fit = solve(ds, np.full(2, 0.5), SolverConfig(tau=0.5, M=2, variant=variant))
    # relaxed variants decay geometrically from the initial value
    assert fit.converged
    np.testing.assert_allclose(fit.beta, 0.0, atol=1e-4)


@pytest.mark.parametrize("variant", ALL)
def test_residual_trends_and_trace_consistency(small_problem, variant):
    ds, w, _ = small_problem
    fit = solve(ds, w, SolverConfig(tau=0.7, M=2, variant=variant, **TIGHT))
    tr = fit.trace
    assert len(tr.objective) == len(tr.consensus) == len(tr.fit_residual) == fit.n_iter
    assert tr.consensus[-1] < 1e-2 * max(tr.consensus[:10])
    assert tr.fit_residual[-1] < 1e-2 * max(tr.fit_residual[:10])
    pen = PenaltySpec("l1", w)
    assert abs(tr.objective[-1] - objective(ds, fit.beta, pen, 0.7)) <= 1e-6


@pytest.mark.parametrize("variant", ALL)
def test_slacks_stay_nonnegative(small_problem, variant):
    ds, w, _ = small_problem
    seen = []

    def check(k, scheme):
        seen.append(min(min(s.xi.min(), s.eta.min()) for s in scheme.states))

    cfg = SolverConfig(tau=0.7, M=2, variant=variant, max_iter=200)
    scheme = solvers.build_scheme(ds, w, cfg)
    solvers.run(scheme, ds, PenaltySpec("l1", w), cfg, callback=check)
    assert min(seen) >= 0.0


def test_deterministic(small_problem):
    ds, w, _ = small_problem
    cfg = SolverConfig(tau=0.7, M=3, variant="m-slack-gb")
    a, b = solve(ds, w, cfg), solve(ds, w, cfg)
    assert a.n_iter == b.n_iter
    np.testing.assert_array_equal(a.beta, b.beta)


def test_plain_relative_change_rule_available(small_problem):
    ds, w, _ = small_problem
    fit = solve(ds, w, SolverConfig(tau=0.7, M=2, variant="slack", consensus_tol=None))
    ch = fit.stop_history
    assert fit.converged and ch[-1] <= 1e-4 and all(c > 1e-4 for c in ch[:-1])


def test_max_iter_reported(small_problem):
    ds, w, _ = small_problem
    fit = solve(ds, w, SolverConfig(tau=0.7, M=2, max_iter=3))
    assert fit.n_iter == 3 and not fit.converged


def test_divergence_guard(small_problem, monkeypatch):
    ds, w, _ = small_problem
    monkeypatch.setattr(solvers, "DIVERGENCE_BOUND", 1e-3)
    with pytest.raises(DivergenceError) as err:
        solve(ds, w, SolverConfig(tau=0.7))
    assert err.value.iteration == 1


def test_warm_start_resumes(small_problem):
    ds, w, _ = small_problem
    cfg = SolverConfig(tau=0.7, M=2, variant="m-slack-gb", **TIGHT)
    cold = solve(ds, w, cfg)
    warm = solve(ds, w, cfg, warm_start=cold)
    assert warm.n_iter < cold.n_iter / 10


def test_partition_errors(small_problem):
    ds, w, _ = small_problem
    with pytest.raises(DataError):
        solve(ds, w, SolverConfig(M=41))
    with pytest.raises(DataError):
        solve(ds, w, SolverConfig(M=2), part=partition(40, 3))


def test_scad_routed_to_lla(small_problem):
    ds, _, _ = small_problem
    with pytest.raises(ParameterError):
        solve(ds, PenaltySpec("scad", np.ones(5)), SolverConfig())
    with pytest.raises(ParameterError):
        solve(ds, np.ones(4), SolverConfig())
