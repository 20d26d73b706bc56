import math

import numpy as np
import pytest

from metaunc.meta import (DirichletFamily, Embedding, LogisticNormalFamily, MetaModelConfig,
                          MetaModelError, MetaPosterior, cluster_embedding, fit, log_likelihood,
                          log_posterior, mean_embedding, posterior_predictive_logpdf)
from metaunc.simplex import (DirichletParams, LogisticNormalParams, alr_inv, barycentric_grid,
                             dirichlet_logpdf, logistic_normal_logpdf)


def ln_group(rng, n=500, mu=(0.5, -0.5), sigma=0.2):
    z = rng.multivariate_normal(mu, sigma * np.eye(len(mu)), size=n)
    return alr_inv(z)


class TestConfig:
    def test_defaults(self):
        c = MetaModelConfig()
        assert (c.likelihood_family, c.n_draws, c.n_chains, c.n_warmup) == ("logistic_normal", 2000, 4, 1000)
        assert (c.mu_scale, c.sigma_scale, c.alpha_log_scale, c.target_accept) == (5.0, 2.5, 3.0, 0.3)

    @pytest.mark.parametrize("kw", [{"mu_scale": 0}, {"n_draws": 0}, {"likelihood_family": "beta"}])
    def test_invalid(self, kw):
        with pytest.raises(MetaModelError):
            MetaModelConfig(**kw)

    def test_round_trip(self):
        c = MetaModelConfig(likelihood_family="dirichlet", n_draws=10)
        assert MetaModelConfig.from_dict(c.to_dict()) == c


class TestLogPosterior:
    def test_uniform_dirichlet_single_point(self):
        val = log_likelihood(DirichletParams([1.0, 1.0, 1.0]), [[1 / 3, 1 / 3, 1 / 3]], "dirichlet")
        assert val == pytest.approx(math.log(2), abs=1e-12)

    def test_likelihood_matches_density_sum(self, rng):
        pts = rng.dirichlet([2, 3, 4], size=40)
        a = DirichletParams([1.5, 2.5, 3.0])
        assert log_likelihood(a, pts, "dirichlet") == pytest.approx(dirichlet_logpdf(pts, a).sum(), rel=1e-12)
        ln = LogisticNormalParams([0.2, -0.1], [[0.6, 0.1], [0.1, 0.4]])
        assert log_likelihood(ln, pts, "logistic_normal") == pytest.approx(logistic_normal_logpdf(pts, ln).sum(), rel=1e-12)

    @pytest.mark.parametrize("family", ["logistic_normal", "dirichlet"])
    def test_differences_match_density_product(self, rng, family):
        pts = rng.dirichlet([2, 3, 4], size=30)
        cfg = MetaModelConfig(likelihood_family=family)
        fam = LogisticNormalFamily if family == "logistic_normal" else DirichletFamily
        P = fam.dims(3)[1]

        def by_density(u):
            # independent path: per-point densities plus the prior
            row = fam.to_constrained(u, 3)
            params = fam.to_params(row, 3)
            dens = (logistic_normal_logpdf(pts, params) if family == "logistic_normal"
                    else dirichlet_logpdf(pts, params))
            return dens.sum() + fam.log_prior(u, cfg, 3)

        for _ in range(5):
            u = rng.normal(0, 0.3, P)
            v = rng.standard_normal(P)
            h = 1e-3
            got = log_posterior(u + h * v, pts, cfg) - log_posterior(u, pts, cfg)
            ref = by_density(u + h * v) - by_density(u)
            assert got == pytest.approx(ref, rel=1e-6, abs=1e-9)

    def test_monotone_in_fit(self, rng):
        pts = rng.dirichlet([5, 5, 5], size=100)
        cfg = MetaModelConfig(likelihood_family="dirichlet")
        assert log_posterior(DirichletParams([5, 5, 5]), pts, cfg) > log_posterior(DirichletParams([1, 1, 1]), pts, cfg)

    def test_empty_group(self):
        with pytest.raises(MetaModelError):
            log_posterior(DirichletParams([1, 1]), np.zeros((0, 2)), MetaModelConfig(likelihood_family="dirichlet"))


class TestLogisticNormalCoordinates:
    def test_round_trip(self):
        row = np.array([0.3, -0.2, 1.5, 0.4, 0.2, 0.9, -0.1, 0.3, 0.6])
        u = LogisticNormalFamily.to_unconstrained(row, 4)
        np.testing.assert_allclose(LogisticNormalFamily.to_constrained(u, 4), row, rtol=1e-14)
        # diagonal entries are logged, the rest divided by their column's diagonal
        np.testing.assert_allclose(u[[3, 5, 8]], np.log(row[[3, 5, 8]]))
        np.testing.assert_allclose(u[[4, 6, 7]], row[[4, 6, 7]] / row[[3, 3, 5]])

    def test_prior_change_of_variables(self):
        from scipy import stats

        cfg = MetaModelConfig()
        s = cfg.sigma_scale

        def reference(a, b, c):
            # half-normal on L_11 = e^a and L_22 = e^c, normal on L_21 = b e^a,
            # times the Jacobian e^a * e^c * e^a
            return (stats.halfnorm.logpdf(math.exp(a), scale=s) + stats.halfnorm.logpdf(math.exp(c), scale=s)
                    + stats.norm.logpdf(b * math.exp(a), scale=s) + 2 * a + c)

        mu = np.array([0.4, -0.3])
        lp0 = LogisticNormalFamily.log_prior(np.r_[mu, 0.0, 0.0, 0.0], cfg, 3)
        for a, b, c in [(0.5, 1.2, -0.3), (-2.0, 7.0, 1.0), (1.5, -0.4, -4.0)]:
            lp = LogisticNormalFamily.log_prior(np.r_[mu, a, b, c], cfg, 3)
            assert lp - lp0 == pytest.approx(reference(a, b, c) - reference(0, 0, 0), abs=1e-12)

    def test_collinear_group_mixes(self, rng):
        # ALR coordinates nearly on a line: a thin, curved posterior
        t = rng.normal(size=60)
        z = np.column_stack([t, 0.8 * t + 0.02 * rng.normal(size=60)])
        post = fit(alr_inv(z), MetaModelConfig(), seed=3)
        assert post.diagnostics["max_rhat"] < 1.05
        assert post.diagnostics["min_ess"] > 100


class TestFit:
    def test_logistic_normal_recovery(self, rng):
        post = fit(ln_group(rng), MetaModelConfig(), seed=1)
        mu = post.draws[:, :2]
        assert np.all(np.abs(mu.mean(axis=0) - [0.5, -0.5]) < 3 * mu.std(axis=0))
        assert post.D == 2000 and post.diagnostics["max_rhat"] < 1.05
        assert len(post.diagnostics["accept_rate"]) == 4

    def test_dirichlet_recovery(self, rng):
        pts = rng.dirichlet([3, 7], size=500)
        post = fit(pts, MetaModelConfig(likelihood_family="dirichlet"), seed=2)
        assert np.all(np.abs(post.draws.mean(axis=0) - [3, 7]) < 3 * post.draws.std(axis=0))
        assert post.diagnostics["max_rhat"] < 1.05

    def test_degenerate_group(self, caplog):
        group = np.tile([1.0, 0.0, 0.0], (30, 1))
        post = fit(group, MetaModelConfig(n_warmup=500, n_draws=500), seed=0)
        assert post.degenerate
        log_diag = np.log(post.draws[:, [2, 4]])
        assert np.all(log_diag < -15)
        assert "identical" in caplog.text

    def test_too_small(self):
        with pytest.raises(MetaModelError):
            fit(np.zeros((0, 3)))
        with pytest.raises(MetaModelError):
            fit([[0.2, 0.3, 0.5]])

    def test_deterministic_and_thread_invariant(self, rng, quick_config):
        pts = ln_group(rng, 100)
        a = fit(pts, quick_config, seed=5, threads=1)
        b = fit(pts, quick_config, seed=5, threads=2)
        np.testing.assert_array_equal(a.draws, b.draws)
        assert a.diagnostics == b.diagnostics

    def test_draws_satisfy_constraints(self, rng, quick_config):
        post = fit(ln_group(rng, 60), quick_config, seed=3)
        assert post.D == 600 and np.all(post.draws[:, [2, 4]] > 0)
        with pytest.raises(MetaModelError):
            MetaPosterior("logistic_normal", 3, -np.abs(post.draws), {})

    def test_clamp_invariance(self, rng, quick_config):
        pts = ln_group(rng, 200)
        a = fit(pts, quick_config, seed=4).unconstrained().mean(axis=0)
        cfg = MetaModelConfig(**{**quick_config.to_dict(), "epsilon_clamp": 1e-10})
        b = fit(pts, cfg, seed=4).unconstrained().mean(axis=0)
        assert np.max(np.abs(a - b)) < 0.05

    def test_json_round_trip(self, rng, quick_config, tmp_path):
        post = fit(ln_group(rng, 50), quick_config, seed=3, model_name="M1")
        post.save(tmp_path / "p.json")
        back = MetaPosterior.load(tmp_path / "p.json")
        np.testing.assert_array_equal(back.draws, post.draws)
        assert back.diagnostics == post.diagnostics and back.config == post.config
        assert back.seed == 3 and back.model_name == "M1"


def _ln_posterior(rows):
    return MetaPosterior("logistic_normal", 3, np.array(rows, dtype=float), {})


class TestPredictive:
    def test_single_draw_is_family_density(self, rng):
        row = [0.3, -0.2, 0.8, 0.1, 0.6]
        post = _ln_posterior([row])
        params = LogisticNormalFamily.to_params(np.array(row), 3)
        p = rng.dirichlet([2, 2, 2], size=10)
        np.testing.assert_allclose(posterior_predictive_logpdf(post, p), logistic_normal_logpdf(p, params), rtol=1e-12)
        d = MetaPosterior("dirichlet", 3, [[2.0, 3.0, 4.0]], {})
        np.testing.assert_allclose(posterior_predictive_logpdf(d, p), dirichlet_logpdf(p, DirichletParams([2, 3, 4])), rtol=1e-12)

    def test_permutation_invariant(self, rng):
        rows = np.column_stack([rng.normal(0, 0.3, (20, 2)), np.exp(rng.normal(-0.3, 0.1, 20)),
                                rng.normal(0, 0.1, 20), np.exp(rng.normal(-0.3, 0.1, 20))])
        p = rng.dirichlet([2, 2, 2], size=5)
        a = posterior_predictive_logpdf(_ln_posterior(rows), p)
        b = posterior_predictive_logpdf(_ln_posterior(rows[rng.permutation(20)]), p)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    @pytest.mark.parametrize("family", ["logistic_normal", "dirichlet"])
    def test_grid_integral(self, rng, family, quick_config):
        cfg = MetaModelConfig(**{**quick_config.to_dict(), "likelihood_family": family})
        post = fit(rng.dirichlet([4, 3, 5], size=200), cfg, seed=1)
        grid = barycentric_grid(400)
        assert grid.with_log_density(posterior_predictive_logpdf(post, grid.points)).integral() == pytest.approx(1, abs=2e-3)

    def test_dimension_mismatch(self):
        with pytest.raises(MetaModelError):
            posterior_predictive_logpdf(_ln_posterior([[0, 0, 1, 0, 1]]), [0.5, 0.5])


class TestEmbeddings:
    def test_identical_draws(self):
        row = [0.3, -0.2, 0.8, 0.1, 0.6]
        e = mean_embedding(_ln_posterior([row] * 5))
        np.testing.assert_allclose(e.centers[0], row, rtol=1e-15)
        assert e.weights.tolist() == [1.0]

    def test_symmetric_draws(self):
        v = np.array([0.2, -0.1, 0.0, 0.05, 0.0])
        base = np.array([0.4, 0.1, 0.7, 0.0, 0.5])
        e = mean_embedding(_ln_posterior([base + v, base - v]))
        np.testing.assert_allclose(e.centers[0], base, atol=1e-15)

    def test_matches_draw_average(self, rng, quick_config):
        post = fit(ln_group(rng, 80), quick_config, seed=2)
        np.testing.assert_allclose(mean_embedding(post).centers[0], post.draws.mean(axis=0), atol=1e-12)

    def test_cluster_one_is_mean(self, rng, quick_config):
        post = fit(ln_group(rng, 80), quick_config, seed=2)
        np.testing.assert_allclose(cluster_embedding(post, 1).centers, mean_embedding(post).centers, atol=1e-8)

    def test_cluster_all_draws(self, rng, quick_config):
        post = fit(ln_group(rng, 80), quick_config, seed=2)
        e = cluster_embedding(post, post.D)
        np.testing.assert_array_equal(e.centers, post.draws)
        np.testing.assert_allclose(e.weights, 1 / post.D)

    def test_too_many_clusters(self, rng, quick_config):
        post = fit(ln_group(rng, 80), quick_config, seed=2)
        with pytest.raises(MetaModelError):
            cluster_embedding(post, post.D + 1)

    def test_two_blobs(self, rng):
        c1 = np.array([1.0, -1.0, 0.5, 0.0, 0.5])
        c2 = np.array([-1.0, 1.0, 0.5, 0.0, 0.5])
        noise = np.zeros((600, 5))
        noise[:, :2] = rng.normal(0, 0.1, (600, 2))
        rows = np.vstack([c1 + noise[:300], c2 + noise[300:]])
        e = cluster_embedding(_ln_posterior(rows), 2, seed=0)
        order = np.argsort(-e.centers[:, 0])
        np.testing.assert_allclose(e.centers[order], [c1, c2], atol=0.05)
        np.testing.assert_allclose(e.weights, [0.5, 0.5])

    def test_cluster_deterministic(self, rng, quick_config):
        post = fit(ln_group(rng, 80), quick_config, seed=2)
        a, b = cluster_embedding(post, 3, seed=7), cluster_embedding(post, 3, seed=7)
        np.testing.assert_array_equal(a.centers, b.centers)
        assert a.weights.sum() == pytest.approx(1.0, abs=1e-15)

    def test_embedding_validation(self):
        with pytest.raises(MetaModelError):
            Embedding("dirichlet", 2, [[1.0, 2.0]], [0.5])
        with pytest.raises(MetaModelError):
            Embedding("dirichlet", 2, [[-1.0, 2.0]], [1.0])
