import numpy as np
import pytest
from scipy import optimize

from ope_embeds.ml import (
    SeededRng,
    categorical,
    dirichlet,
    exponential,
    fit_lda,
    fit_multinomial,
    fit_multinomial_grouped,
    lda_posterior,
    predict_proba,
    uniform,
)


def _reference_loss(params, x, y, k, l2):
    """Independent objective for the convex-optimizer oracle."""
    w = params[: k * x.shape[1]].reshape(k, x.shape[1])
    b = params[k * x.shape[1] :]
    scores = x @ w.T + b
    scores -= scores.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(scores).sum(axis=1))
    ce = np.mean(log_z - scores[np.arange(len(y)), y])
    return ce + 0.5 * l2 * np.sum(w * w)


class TestMultinomial:
    def test_separated_classes_match_bfgs_oracle(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([-5 + 0.1 * rng.standard_normal(30), 5 + 0.1 * rng.standard_normal(30)])
        x = x[:, None]
        y = np.repeat([0, 1], 30)
        l2 = 0.05
        clf = fit_multinomial(x, y, l2=l2, max_iters=3000, tol=1e-12)
        res = optimize.minimize(
            _reference_loss, np.zeros(4), args=(x, y, 2, l2), method="BFGS",
            options={"gtol": 1e-12, "maxiter": 5000},
        )
        ours = clf.predict_proba(np.array([[-5.0]]))[0]
        w = res.x[:2].reshape(2, 1)
        b = res.x[2:]
        scores = np.array([[-5.0]]) @ w.T + b
        theirs = np.exp(scores - scores.max())
        theirs = (theirs / theirs.sum())[0]
        assert ours[0] > 0.95
        assert np.allclose(ours, theirs, atol=1e-4)

    def test_intercept_only_recovers_empirical_priors(self):
        x = np.ones((100, 1))
        y = np.array([0] * 30 + [1] * 70)
        clf = fit_multinomial(x, y, l2=0.0, max_iters=2000, tol=1e-12)
        probs = clf.predict_proba(np.ones((1, 1)))[0]
        assert np.allclose(probs, [0.3, 0.7], atol=1e-6)

    def test_zero_iterations_uniform(self):
        clf = fit_multinomial(np.random.default_rng(1).standard_normal((10, 3)),
                              np.arange(10) % 4, max_iters=0)
        probs = clf.predict_proba(np.zeros((2, 3)))
        assert np.allclose(probs, 0.25)
        assert np.all(clf.weights == 0)

    def test_absent_class_gets_small_probability(self):
        x = np.array([[-2.0], [2.0], [-2.1], [2.2]] * 10)
        y = np.array([0, 1, 0, 1] * 10)
        clf = fit_multinomial(x, y, n_classes=3, l2=1e-6, max_iters=500)
        probs = clf.predict_proba(np.array([[0.0]]))
        assert probs.shape == (1, 3)
        assert probs[0, 2] < 1.0 / 3

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((40, 3))
        y = rng.integers(0, 4, 40)
        l2 = 0.01
        k = 4
        for _ in range(5):
            params = rng.standard_normal(k * 3 + k) * 0.5
            grad = optimize.approx_fprime(
                params, _reference_loss, 1e-5, x, y, k, l2
            )
            from ope_embeds.ml import _grouped_loss_grad

            w = params[: k * 3].reshape(k, 3)
            b = params[k * 3 :]
            counts = np.zeros((40, k))
            counts[np.arange(40), y] = 1.0
            _, gw, gb = _grouped_loss_grad(
                x, counts, np.ones(40), 40.0, w, b, l2, True
            )
            ours = np.concatenate([gw.ravel(), gb])
            denom = max(np.abs(grad).max(), 1e-8)
            assert np.abs(ours - grad).max() / denom < 1e-4

    def test_loss_non_increasing(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((60, 4))
        y = rng.integers(0, 5, 60)
        losses = []
        for iters in (0, 1, 3, 10, 40):
            clf = fit_multinomial(x, y, max_iters=iters)
            losses.append(clf.fit_info.final_loss)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_grouped_equals_expanded(self):
        rng = np.random.default_rng(5)
        rows = rng.standard_normal((4, 2))
        idx = rng.integers(0, 4, 50)
        y = rng.integers(0, 3, 50)
        full = fit_multinomial(rows[idx], y, n_classes=3, l2=1e-3, max_iters=200)
        counts = np.zeros((4, 3))
        np.add.at(counts, (idx, y), 1.0)
        grouped = fit_multinomial_grouped(rows, counts, l2=1e-3, max_iters=200)
        assert np.allclose(full.weights, grouped.weights, atol=1e-10)
        assert np.allclose(full.intercepts, grouped.intercepts, atol=1e-10)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            fit_multinomial(np.array([[np.nan]]), np.array([0]))
        with pytest.raises(ValueError):
            fit_multinomial(np.zeros((2, 1)), np.array([0, 5]), n_classes=2)

    def test_predict_proba_width_mismatch(self):
        clf = fit_multinomial(np.zeros((4, 2)), np.array([0, 1, 0, 1]), max_iters=5)
        with pytest.raises(ValueError):
            predict_proba(clf, np.zeros((1, 3)))

    def test_predict_proba_shift_invariance_rows_sum(self):
        rng = np.random.default_rng(11)
        clf = fit_multinomial(rng.standard_normal((30, 2)), rng.integers(0, 3, 30), max_iters=50)
        x = rng.standard_normal((8, 2))
        probs = clf.predict_proba(x)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((probs > 0) & (probs < 1))
        # adding a constant to every class score leaves probabilities unchanged
        import dataclasses

        shifted = dataclasses.replace(clf, intercepts=clf.intercepts + 11.0)
        assert np.allclose(shifted.predict_proba(x), probs, atol=1e-12)


class TestLda:
    def test_symmetric_two_class_posterior(self):
        emb = np.array([[-1.2], [-0.8], [0.8], [1.2]])
        labels = np.array([0, 0, 1, 1])
        clf = fit_lda(emb, labels)
        post = lda_posterior(clf, np.array([0.0]))
        assert np.allclose(post, [0.5, 0.5], atol=1e-12)

    def test_priors_from_counts(self):
        rng = np.random.default_rng(0)
        emb = rng.standard_normal((100, 2))
        labels = np.array([0] * 10 + [1] * 30 + [2] * 60)
        clf = fit_lda(emb, labels)
        assert np.allclose(clf.priors, [0.1, 0.3, 0.6])

    def test_recovers_generating_means(self):
        rng = np.random.default_rng(42)
        centers = np.array([[2.0, 0.0], [-2.0, 1.0], [0.0, -3.0]])
        sigma = 0.8
        n_per = 4000
        emb = np.concatenate([c + sigma * rng.standard_normal((n_per, 2)) for c in centers])
        labels = np.repeat(np.arange(3), n_per)
        clf = fit_lda(emb, labels)
        tol = 3 * sigma / np.sqrt(n_per)
        assert np.all(np.abs(clf.means - centers) < tol)
        assert abs(clf.sigma2 - sigma**2) < 0.05

    def test_zero_prior_annihilates(self):
        emb = np.array([[-1.0], [-0.5], [1.0], [0.5]])
        labels = np.array([0, 0, 1, 1])
        clf = fit_lda(emb, labels, priors=np.array([1.0, 0.0]))
        post = lda_posterior(clf, np.array([10.0]))
        assert np.allclose(post, [1.0, 0.0])

    def test_hand_computed_gaussian_ratio(self):
        # means 0 and 2, sigma2=1 via explicit samples, priors 0.5/0.5, query 0.5
        emb = np.array([[-1.0], [1.0], [1.0], [3.0]])
        labels = np.array([0, 0, 1, 1])
        clf = fit_lda(emb, labels)
        assert np.allclose(clf.means, [[0.0], [2.0]])
        assert np.isclose(clf.sigma2, 1.0)
        post = lda_posterior(clf, np.array([0.5]))
        d0, d1 = np.exp(-0.5 * 0.25), np.exp(-0.5 * 2.25)
        expected = d0 / (d0 + d1)
        assert np.allclose(post, [expected, 1 - expected], atol=1e-12)

    def test_posterior_rows_sum_to_one(self):
        rng = np.random.default_rng(9)
        emb = rng.standard_normal((60, 3))
        labels = rng.integers(0, 4, 60)
        clf = fit_lda(emb, labels)
        post = lda_posterior(clf, rng.standard_normal((20, 3)))
        assert np.allclose(post.sum(axis=1), 1.0, atol=1e-12)

    def test_full_covariance_and_singleton_error(self):
        rng = np.random.default_rng(2)
        emb = rng.standard_normal((41, 2))
        labels = np.array([0] * 20 + [1] * 20 + [2])
        with pytest.raises(ValueError):
            fit_lda(emb, labels, spherical=False)
        clf = fit_lda(emb[:40], labels[:40], spherical=False)
        assert clf.covariance.shape == (2, 2)


class TestSamplers:
    def test_streams_depend_only_on_key(self):
        a = SeededRng(3).stream("toy", 5).standard_normal(8)
        b = SeededRng(3).stream("toy", 5).standard_normal(8)
        c = SeededRng(3).stream("toy", 6).standard_normal(8)
        d = SeededRng(4).stream("toy", 5).standard_normal(8)
        e = SeededRng(3).stream("other", 5).standard_normal(8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)
        assert not np.array_equal(a, e)

    def test_streams_order_insensitive(self):
        rng = SeededRng(0)
        forward = [rng.stream("x", i).standard_normal() for i in range(4)]
        backward = [SeededRng(0).stream("x", i).standard_normal() for i in reversed(range(4))]
        assert np.allclose(forward, backward[::-1])

    def test_dirichlet_simplex(self):
        draw = dirichlet(SeededRng(1).stream("d"), np.array([0.5, 1.5, 2.0]))
        assert np.all(draw >= 0)
        assert np.isclose(draw.sum(), 1.0)
        with pytest.raises(ValueError):
            dirichlet(SeededRng(1).stream("d"), np.array([0.5, -1.0]))

    def test_categorical_degenerate(self):
        rng = SeededRng(2).stream("c")
        draws = categorical(rng, np.tile([1.0, 0.0, 0.0], (50, 1)))
        assert np.all(draws == 0)
        assert categorical(rng, np.array([0.0, 0.0, 1.0])) == 2

    def test_categorical_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            categorical(SeededRng(0).stream("c"), np.array([0.5, 0.2]))

    def test_exponential_law_of_large_numbers(self):
        draws = exponential(SeededRng(5).stream("e"), 1_000_000, rate=1.0)
        assert abs(draws.mean() - 1.0) < 0.01
        with pytest.raises(ValueError):
            exponential(SeededRng(5).stream("e"), 3, rate=0.0)

    def test_uniform_bounds(self):
        draws = uniform(SeededRng(6).stream("u"), -1.0, 1.0, 1000)
        assert draws.min() >= -1.0 and draws.max() <= 1.0
        with pytest.raises(ValueError):
            uniform(SeededRng(6).stream("u"), 1.0, 1.0, 3)
