from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quantbench.classifier import predict_hard
from quantbench.core import is_valid_prevalence
from quantbench.metrics import ae
from quantbench.quantifiers import (ACC, CC, MLPE, PACC, PCC, SLD, EnsembleMember, EnsemblePACC, HDy,
                                    METHODS, _histogram, em_objective, estimate, estimate_acc,
                                    estimate_cc, estimate_ensemble, estimate_hdy, estimate_mlpe,
                                    estimate_pacc, estimate_pcc, estimate_sld, fit, fit_ensemble,
                                    hdy_alpha, hdy_distances, ptr_selection, sld_em, solve_adjustment)


@pytest.fixture(scope="module")
def fitted(bundle):
    return {m: fit(m, bundle.labelled, C=1.0, seed=0, ensemble_n=6, ensemble_q=300) for m in METHODS}


def one_hot(labels, n=3):
    return np.eye(n)[np.asarray(labels)]


def column_stochastic(rng, n, diag=0.6):
    M = rng.dirichlet(np.ones(n), size=n).T * (1 - diag) + diag * np.eye(n)
    return M / M.sum(axis=0)


# counting methods ---------------------------------------------------------

def test_cc_counts():
    posteriors = one_hot([0] * 60 + [1] * 25 + [2] * 15)
    np.testing.assert_allclose(CC().aggregate(posteriors), [0.60, 0.25, 0.15])


def test_cc_with_perfect_classifier(separable):
    q = fit("CC", separable.labelled, C=1e3)
    idx = np.arange(0, len(separable.test), 3)
    est = estimate_cc(q, separable.test.X[idx])
    np.testing.assert_array_equal(est, np.bincount(separable.test.labels[idx], minlength=3) / len(idx))


def test_cc_matches_tally_of_hard_predictions(fitted, bundle):
    X = bundle.test.X[:500]
    tally = np.bincount(predict_hard(fitted["CC"].model, X), minlength=3) / 500
    np.testing.assert_allclose(estimate_cc(fitted["CC"], X), tally)


def test_pcc_examples(fitted, bundle):
    np.testing.assert_allclose(PCC().aggregate(np.full((10, 3), 1 / 3)), [1 / 3] * 3)
    P = one_hot([0, 1, 1, 2, 2, 2])
    np.testing.assert_array_equal(PCC().aggregate(P), CC().aggregate(P))
    X = bundle.test.X[:300]
    np.testing.assert_allclose(estimate_pcc(fitted["PCC"], X),
                               fitted["PCC"].model.predict_proba(X).mean(axis=0), atol=1e-15)


# adjustment ---------------------------------------------------------------

def adjusted(cls, rates):
    q = cls()
    q.rates = np.asarray(rates, dtype=float)
    return q


def test_identity_rates_reduce_to_unadjusted(rng):
    for _ in range(50):
        P = rng.dirichlet(np.ones(3), size=40)
        assert np.array_equal(adjusted(ACC, np.eye(3)).aggregate(P), CC().aggregate(P))
        assert np.array_equal(adjusted(PACC, np.eye(3)).aggregate(P), PCC().aggregate(P))


def test_binary_closed_form():
    rates = [[0.9, 0.1], [0.1, 0.9]]
    np.testing.assert_allclose(solve_adjustment(rates, [0.6, 0.4]), [0.625, 0.375], atol=1e-12)


def test_forward_map_inversion(rng):
    checked = 0
    while checked < 200:
        M = column_stochastic(rng, 3, diag=rng.uniform(0.2, 0.9))
        if np.linalg.cond(M) >= 1e6:
            continue
        p = rng.dirichlet(np.ones(3))
        assert np.max(np.abs(solve_adjustment(M, M @ p) - p)) < 1e-8
        checked += 1


def test_singular_system_never_aborts():
    M = np.array([[0.5, 0.5, 0.2], [0.5, 0.5, 0.3], [0.0, 0.0, 0.5]])
    out = solve_adjustment(M, [0.45, 0.45, 0.1])
    assert is_valid_prevalence(out)
    assert is_valid_prevalence(solve_adjustment(np.full((3, 3), 1 / 3), [0.2, 0.3, 0.5]))


def test_out_of_range_solution_falls_back_to_simplex():
    # exact solve would give a strongly negative component
    M = np.array([[0.6, 0.4], [0.4, 0.6]])
    out = solve_adjustment(M, [0.9, 0.1])
    np.testing.assert_allclose(out, [1, 0], atol=1e-6)


def test_one_hot_posteriors_make_pacc_equal_acc(bundle):
    data = bundle.train
    oof = one_hot(np.where(np.arange(len(data)) % 4 == 0, (data.labels + 1) % 3, data.labels))
    acc, pacc = ACC().fit_from_posteriors(data, oof), PACC().fit_from_posteriors(data, oof)
    np.testing.assert_allclose(acc.rates, pacc.rates, atol=1e-15)
    P = one_hot(np.arange(90) % 3 * (np.arange(90) < 70))
    np.testing.assert_allclose(acc.aggregate(P), pacc.aggregate(P), atol=1e-12)


def test_acc_fit_on_separable_data_has_identity_rates(separable):
    q = fit("ACC", separable.labelled, C=1e3)
    np.testing.assert_allclose(q.rates, np.eye(3), atol=1e-9)
    assert not hasattr(fit("CC", separable.labelled, C=1e3), "rates")


# EM -----------------------------------------------------------------------

def test_sld_fixed_point(rng):
    p0 = np.array([0.5, 0.3, 0.2])
    d = rng.uniform(-0.05, 0.05, size=(50, 3))
    d -= d.mean(axis=1, keepdims=True)
    P = np.vstack([p0 + d, p0 - d])
    res = sld_em(p0, P, track=True)
    assert res.n_iter <= 2 and res.converged
    np.testing.assert_allclose(res.prevalence, p0, atol=1e-6)


def test_sld_iterates_are_valid_and_objective_rises(rng):
    P = rng.dirichlet([0.5, 0.5, 0.5], size=300)
    res = sld_em([0.2, 0.5, 0.3], P, track=True)
    assert all(is_valid_prevalence(t) for t in res.trace)
    assert np.all(np.diff(res.objective) >= -1e-12)
    assert res.objective[-1] == pytest.approx(em_objective([0.2, 0.5, 0.3], res.prevalence, P))


def test_sld_zero_training_prevalence_warns(rng):
    P = rng.dirichlet(np.ones(3), size=50)
    with pytest.warns(UserWarning, match="zero training prevalence"):
        res = sld_em([0.5, 0.5, 0.0], P)
    assert res.prevalence[2] == 0 and is_valid_prevalence(res.prevalence)


def test_estimate_sld_honours_iteration_cap(fitted, bundle):
    X = bundle.test.X[:200]
    np.testing.assert_allclose(estimate_sld(fitted["SLD"], X), estimate(fitted["SLD"], X))
    one = estimate_sld(fitted["SLD"], X, max_iter=1)
    np.testing.assert_allclose(one, fitted["SLD"].model.predict_proba(X).mean(axis=0), atol=1e-12)


# HDy ----------------------------------------------------------------------

@pytest.fixture
def scores(rng):
    return rng.beta(5, 2, size=100), rng.beta(2, 5, size=100)


def test_hdy_pure_components(scores):
    pos, neg = scores
    assert hdy_alpha(pos, neg, pos) == 1.0
    assert hdy_alpha(pos, neg, neg) == 0.0


def test_hdy_exact_mixture(scores):
    pos, neg = scores
    test = np.concatenate([np.tile(pos, 3), np.tile(neg, 7)])
    assert hdy_alpha(pos, neg, test) == pytest.approx(0.30, abs=0.01)


@given(st.lists(st.floats(0, 1), min_size=5, max_size=60), st.integers(0, 2**32 - 1))
def test_hdy_alpha_attains_scan_minimum(test, seed):
    rng = np.random.default_rng(seed)
    pos, neg = rng.beta(4, 2, 50), rng.beta(2, 4, 50)
    d = hdy_distances(pos, neg, np.array(test))
    alpha = hdy_alpha(pos, neg, np.array(test))
    assert d[round(alpha * 100)] == d.min()


def test_histogram_includes_right_edge():
    np.testing.assert_allclose(_histogram([0.0, 0.5, 1.0], 2), [1 / 3, 2 / 3])


def test_hdy_requires_both_validation_sides(bundle):
    oof = np.full((len(bundle.train), 3), 1 / 3)
    data = bundle.train.sampling_from_index(np.flatnonzero(bundle.train.labels > 0))
    with pytest.raises(ValueError, match="empty validation side"):
        HDy().fit_from_posteriors(data, oof[: len(data)])


# MLPE ---------------------------------------------------------------------

def test_mlpe(fitted, bundle):
    q = fitted["MLPE"]
    a, b = estimate_mlpe(q, bundle.test.X[:10]), estimate_mlpe(q, bundle.test.X[50:300])
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, bundle.labelled.prevalence())
    assert ae(bundle.labelled.prevalence(), a) == 0


# ensembles ----------------------------------------------------------------

def test_ptr_selection_brute_force(rng):
    for _ in range(50):
        tps = rng.dirichlet(np.ones(3), size=4)
        ref = rng.dirichlet(np.ones(3))
        d = [np.sqrt(np.sum((t - ref) ** 2)) for t in tps]
        brute = sorted(range(4), key=lambda i: (d[i], i))[:2]
        assert list(ptr_selection(tps, ref, 2)) == brute


def test_degenerate_two_member_ensemble(bundle):
    sample = bundle.train.sampling_from_index(np.arange(300))
    member = PACC(1.0).fit(sample)
    X = bundle.test.X[:100]
    for policy in ("Ptr", "AE"):
        members = [EnsembleMember(member, sample.prevalence(), 0.1) for _ in range(2)]
        ens = EnsemblePACC.from_members(members, policy)
        np.testing.assert_allclose(ens.quantify(X), member.quantify(X), atol=1e-12)


def test_identical_member_estimates(bundle):
    q = MLPE().fit(bundle.train)
    members = [EnsembleMember(q, p, e) for p, e in zip(np.eye(3).tolist() + [[1 / 3] * 3], [0.1, 0.2, 0.3, 0.4])]
    for policy in ("Ptr", "AE"):
        np.testing.assert_allclose(EnsemblePACC.from_members(members, policy).quantify(bundle.test.X[:5]),
                                   bundle.train.prevalence(), atol=1e-15)


def test_ensemble_members_record_their_sample(fitted, bundle):
    ens = fitted["E-PACC-AE"]
    data = bundle.labelled
    assert len(ens.members) == 6 and len(ens.selected) == 3
    for m in ens.members:
        np.testing.assert_array_equal(m.training_prevalence,
                                      np.bincount(data.labels[m.sample], minlength=3) / len(m.sample))
        assert np.isfinite(m.training_error)
    kept = {int(i) for i in ens.selected}
    worst_kept = max(ens.members[i].training_error for i in kept)
    assert all(ens.members[i].training_error >= worst_kept for i in range(6) if i not in kept)


def test_ensemble_is_deterministic(bundle):
    a = fit_ensemble("Ptr", bundle.train, 1.0, n=4, q_size=200, seed=3)
    b = fit_ensemble("Ptr", bundle.train, 1.0, n=4, q_size=200, seed=3)
    for x, y in zip(a.members, b.members):
        np.testing.assert_array_equal(x.sample, y.sample)
        np.testing.assert_array_equal(x.quantifier.model.weights, y.quantifier.model.weights)


def test_ensemble_arguments():
    with pytest.raises(ValueError):
        EnsemblePACC(n=3)
    with pytest.raises(ValueError):
        EnsemblePACC(policy="best")


# shared contracts ---------------------------------------------------------

@pytest.mark.parametrize("method", METHODS)
def test_estimates_are_valid_prevalences(fitted, bundle, method, rng):
    q = fitted[method]
    for _ in range(20):
        idx = rng.choice(len(bundle.test), size=rng.integers(1, 150), replace=False)
        assert is_valid_prevalence(estimate(q, bundle.test.X[idx]))


@pytest.mark.parametrize("method", METHODS)
def test_empty_sample_is_an_error(fitted, bundle, method):
    with pytest.raises(ValueError):
        estimate(fitted[method], bundle.test.X[:0])


def test_typed_estimators_reject_other_methods(fitted, bundle):
    X = bundle.test.X[:5]
    for fn, ok in [(estimate_cc, "CC"), (estimate_acc, "ACC"), (estimate_pcc, "PCC"),
                   (estimate_pacc, "PACC"), (estimate_hdy, "HDy"), (estimate_mlpe, "MLPE"),
                   (estimate_ensemble, "E-PACC-Ptr"), (estimate_sld, "SLD")]:
        fn(fitted[ok], X)
        with pytest.raises(TypeError):
            fn(fitted["ACC" if ok == "CC" else "CC"], X)


def test_concurrent_estimation_matches_sequential(fitted, bundle):
    samples = [bundle.test.X[i:i + 100] for i in range(0, 1000, 100)]
    for method in ("PACC", "SLD", "HDy", "E-PACC-Ptr"):
        q = fitted[method]
        sequential = [estimate(q, X) for X in samples]
        with ThreadPoolExecutor(4) as pool:
            parallel = list(pool.map(lambda X: estimate(q, X), samples))
        for a, b in zip(sequential, parallel):
            np.testing.assert_array_equal(a, b)


def test_unknown_method(bundle):
    with pytest.raises(ValueError, match="unknown method"):
        fit("QuaNet", bundle.train)
