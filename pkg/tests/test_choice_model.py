import numpy as np
import pytest
from helpers import logit_sample, make_dataset

from choicecopula.choice_model import (
    PROB_FLOOR,
    ChoiceParams,
    ChoiceProblem,
    choice_loglik,
    fit_choice,
    numerical_gradient,
    problem_from_data,
)
from choicecopula.errors import DegenerateChoiceError, DomainError, SeparationWarning
from choicecopula.ghk import GhkConfig, mnl_probabilities
from choicecopula.stats_core import RngStream

BETA = np.array([[0.5, 1.0, -0.5], [-0.3, 0.4, 0.8], [0.0, 0.0, 0.0]])


@pytest.fixture(scope="module")
def logit_data():
    return logit_sample(4000, BETA, seed=1)


def test_flat_logit_loglik_is_n_log_one_over_j():
    n, J = 37, 4
    data = make_dataset(np.ones((n, 1)), np.arange(n) % J, n_alternatives=J)
    params = ChoiceParams.zeros(J, 1, kernel="logit")
    assert choice_loglik(params, data, np.zeros((n, J))) == pytest.approx(n * np.log(1 / J), rel=1e-14)


def test_single_observation_logit():
    data = make_dataset(np.zeros((1, 1)), [0], n_alternatives=2)
    params = ChoiceParams.zeros(2, 1, kernel="logit")
    assert abs(choice_loglik(params, data, np.array([[1.0, 0.0]])) - np.log(0.731059)) <= 1e-6


def test_probit_loglik_bit_identical_under_common_draws(small_sim, small_fit):
    data, _ = small_sim
    params = small_fit.choice_fit.params
    a = choice_loglik(params, data, small_fit.outcomes)
    b = choice_loglik(params, data, small_fit.outcomes)
    assert a == b


def test_probabilities_floored_before_log():
    data = make_dataset(np.zeros((1, 1)), [1], n_alternatives=2)
    params = ChoiceParams.zeros(2, 1, kernel="logit")
    ll = choice_loglik(params, data, np.array([[100.0, 0.0]]))
    assert ll == pytest.approx(np.log(PROB_FLOOR))


@pytest.mark.parametrize("kernel", ["logit", "probit"])
def test_loglik_invariant_to_common_utility_shift(kernel, logit_data):
    data, vl = logit_data
    params = ChoiceParams(BETA, 2, kernel=kernel, ghk=GhkConfig(num_draws=20))
    sub = data.take(np.arange(300))
    a = choice_loglik(params, sub, vl[:300])
    b = choice_loglik(params, sub, vl[:300] + 3.7)
    assert b == pytest.approx(a, rel=1e-12)


def test_params_invariants():
    p = ChoiceParams.zeros(3, 2)
    assert p.base == 2 and p.wage_coefficient == 1.0
    assert np.all(p.beta[p.base] == 0.0)
    with pytest.raises(DomainError):
        ChoiceParams(np.ones((3, 2)), 2)
    with pytest.raises(DomainError):
        ChoiceParams(np.zeros((3, 2)), 3)
    with pytest.raises(DomainError):
        ChoiceParams(np.zeros((3, 2)), 0, kernel="tobit")
    q = ChoiceParams(BETA, 2).with_free(np.arange(6.0))
    assert np.array_equal(q.beta[2], np.zeros(3)) and q.free_vector().tolist() == list(range(6))


def test_logit_fit_within_three_bootstrap_se(logit_data):
    data, vl = logit_data
    fit = fit_choice(data, vl, "logit")
    assert fit.converged
    reps = []
    gen = RngStream(99, 0).generator()
    for _ in range(200):
        idx = gen.integers(0, data.n, data.n)
        reps.append(fit_choice(data.take(idx), vl[idx], "logit", init=fit.params).params.free_vector())
    se = np.std(reps, axis=0, ddof=1)
    truth = BETA[:2].ravel()
    assert np.all(np.abs(fit.params.free_vector() - truth) <= 3 * se)


def test_logit_fit_matches_empirical_shares(logit_data):
    data, vl = logit_data
    fit = fit_choice(data, vl, "logit", tol=1e-9)
    P = mnl_probabilities(vl + data.z @ fit.params.beta.T)
    shares = np.bincount(data.choice, minlength=3) / data.n
    assert np.max(np.abs(P.mean(axis=0) - shares)) <= 0.005


@pytest.fixture(scope="module")
def kernel_pair():
    data, vl = logit_sample(4000, BETA, seed=1, vl_scale=0.0)
    lo = fit_choice(data, vl, "logit")
    pr = fit_choice(data, vl, "probit", ghk=GhkConfig(num_draws=200))
    P_lo = problem_from_data(data, vl, lo.params).all_probs(lo.params.beta)
    P_pr = problem_from_data(data, vl, pr.params).all_probs(pr.params.beta)
    return P_lo, P_pr


def test_probit_and_logit_agree_on_most_likely_alternative(kernel_pair):
    P_lo, P_pr = kernel_pair
    assert np.mean(np.argmax(P_lo, axis=1) == np.argmax(P_pr, axis=1)) >= 0.99


@pytest.mark.xfail(reason="full orderings agree for about 98% of rows even in very large samples: "
                          "the probit coefficients are not proportional to the logit ones",
                   strict=False)
def test_probit_and_logit_full_ranking_agreement(kernel_pair):
    P_lo, P_pr = kernel_pair
    same = np.all(np.argsort(P_lo, axis=1) == np.argsort(P_pr, axis=1), axis=1)
    assert same.mean() >= 0.99


def test_never_chosen_alternative_is_rejected(logit_data):
    data, vl = logit_data
    keep = np.flatnonzero(data.choice != 2)
    with pytest.raises(DegenerateChoiceError):
        fit_choice(data.take(keep), vl[keep], "logit")


def test_separated_binary_covariate_warns():
    g = np.random.default_rng(0)
    n = 300
    choice = g.integers(0, 3, n)
    dummy = (choice == 1).astype(float)  # dummy = 1 only ever with alternative 1
    z = np.column_stack([np.ones(n), dummy])
    data = make_dataset(z, choice, z_names=["const", "flag"], n_alternatives=3)
    with pytest.warns(SeparationWarning, match="flag"):
        fit_choice(data, np.zeros((n, 3)), "logit", max_iter=20)


def _expected_count_sample(beta, per_pattern=20_000, patterns=25, seed=4):
    """Choices allocated in proportion to the true logit probabilities."""
    g = np.random.default_rng(seed)
    J = beta.shape[0]
    zs = np.column_stack([np.ones(patterns), g.standard_normal((patterns, beta.shape[1] - 1))])
    rows, choices = [], []
    for zrow in zs:
        p = mnl_probabilities(zrow @ beta.T)
        counts = np.floor(p * per_pattern).astype(int)
        counts[np.argmax(counts)] += per_pattern - counts.sum()
        for j in range(J):
            rows += [zrow] * counts[j]
            choices += [j] * counts[j]
    z = np.asarray(rows)
    return make_dataset(z, choices, n_alternatives=J), np.zeros((z.shape[0], J))


def test_start_at_truth_on_noiseless_data_converges_fast():
    data, vl = _expected_count_sample(BETA)
    truth = ChoiceParams(BETA, 2, kernel="logit")
    fit = fit_choice(data, vl, init=truth)
    assert fit.converged and fit.iterations <= 2
    assert np.allclose(fit.params.beta, BETA, atol=2e-3)


def test_converged_fit_reports_small_gradient(small_fit):
    fit = small_fit.choice_fit
    assert fit.converged and fit.gradient_norm < 1e-5
    assert fit.params.kernel == "probit"
    d = fit.to_dict()
    assert d["seed_record"]["master_seed"] == 11 and d["params"]["wage_coefficient"] == 1.0


@pytest.mark.parametrize("kernel", ["logit", "probit"])
def test_analytic_gradient_matches_finite_differences(kernel, small_sim, small_fit):
    data, _ = small_sim
    vl = small_fit.outcomes.normalized_wage
    params = ChoiceParams(small_fit.choice_fit.params.beta, 2, kernel=kernel, ghk=GhkConfig(num_draws=50))
    problem = problem_from_data(data, vl, params)
    theta = params.free_vector() + 0.05
    _, g, S = problem.scores(theta)
    fd = numerical_gradient(problem.loglik, theta)
    assert np.allclose(g, fd, rtol=1e-5, atol=1e-4)
    assert np.allclose(S.sum(axis=0), g)


def test_problem_validates_inputs():
    with pytest.raises(DomainError):
        ChoiceProblem(np.ones((2, 1)), np.zeros((2, 3)), [0, 3])
