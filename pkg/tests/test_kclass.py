import numpy as np
import pytest
import scipy.optimize

from conftest import simulate_iv
from ivinfer.data import DataSet
from ivinfer.exceptions import ConfigError, RankDeficiencyError
from ivinfer.kclass import KClassSpec, fit_kclass, kappa_liml, pi_liml
from ivinfer.linalg import oproj, proj


class TestSpecParsing:
    @pytest.mark.parametrize("text,kind", [("ols", "ols"), ("tsls", "tsls"), ("liml", "liml")])
    def test_plain(self, text, kind):
        assert KClassSpec.parse(text).kind == kind

    def test_fuller(self):
        spec = KClassSpec.parse("fuller:4")
        assert spec.kind == "fuller" and spec.a == 4.0

    def test_fixed(self):
        spec = KClassSpec.parse("kappa:0.5")
        assert spec.kind == "fixed" and spec.kappa == 0.5

    def test_rejects_garbage(self):
        with pytest.raises(ConfigError):
            KClassSpec.parse("gmm")
        with pytest.raises(ConfigError):
            KClassSpec(kind="fuller", a=-1.0)
        with pytest.raises(ConfigError):
            KClassSpec(kind="fixed", kappa=-0.1)


class TestCardFits:
    """Coefficient regressions on the college-proximity data."""

    def test_ols_explicit(self, card_full):
        named = fit_kclass(card_full, "ols").named_coef()
        assert abs(named["intercept"] - 4.040851) < 1e-5
        assert abs(named["ed76"] - 0.072634) < 1e-5
        assert abs(named["exp76"] - 0.084529) < 1e-5
        assert abs(named["exp762"] - (-0.002290)) < 1e-5
        assert abs(named["black"] - (-0.189408)) < 1e-5

    def test_tsls_explicit(self, card_full):
        named = fit_kclass(card_full, "tsls").named_coef()
        assert abs(named["intercept"] - 3.011786) < 1e-5
        assert abs(named["ed76"] - 0.144954) < 1e-5
        assert abs(named["black"] - (-0.159219)) < 1e-5

    def test_liml_explicit(self, card_full):
        named = fit_kclass(card_full, "liml").named_coef()
        assert abs(named["intercept"] - 2.627637) < 1e-5
        assert abs(named["ed76"] - 0.172352) < 1e-5
        assert abs(named["black"] - (-0.147746)) < 1e-5

    @pytest.mark.parametrize(
        "estimator,expected",
        [
            ("ols", (4.768683, 0.072634, 0.084529, -0.002290)),
            ("tsls", (3.907937, 0.144954, 0.061604, -0.001196)),
            ("liml", (3.587249, 0.172352, 0.051571, -0.000713)),
        ],
    )
    def test_absorbed_pipeline(self, card_absorbed, estimator, expected):
        named = fit_kclass(card_absorbed, estimator).named_coef()
        values = (named["intercept"], named["ed76"], named["exp76"], named["exp762"])
        np.testing.assert_allclose(values, expected, atol=1e-5)

    def test_kappa_identity(self, card_absorbed):
        kappa = kappa_liml(card_absorbed)
        n, k = card_absorbed.n, card_absorbed.k
        value = (n - k - 1) / k * (kappa - 1)
        assert abs(value - 0.8568537499466554) < 1e-8

    def test_kappa_same_with_explicit_controls(self, card_full, card_absorbed):
        assert abs(kappa_liml(card_full) - kappa_liml(card_absorbed)) < 1e-12

    def test_fuller_kappa арith(self, card_absorbed):
        kap = kappa_liml(card_absorbed)
        dfm = card_absorbed.n - card_absorbed.k - 1
        fit = fit_kclass(card_absorbed, "fuller:4")
        assert abs(fit.kappa - (kap - 4 / dfm)) < 1e-12


class TestKappaLiml:
    def test_just_identified_equals_one(self):
        z, x, _, y = simulate_iv(n=400, k=2, m_x=2, seed=3)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        assert abs(kappa_liml(ds) - 1.0) < 1e-12

    def test_just_identified_liml_equals_tsls(self):
        z, x, _, y = simulate_iv(n=400, k=2, m_x=2, seed=4)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        liml = fit_kclass(ds, "liml").coef_endog
        tsls = fit_kclass(ds, "tsls").coef_endog
        np.testing.assert_allclose(liml, tsls, atol=1e-10)

    def test_direct_minimization_oracle(self):
        # kappa - 1 equals the minimum of |P_Z u|^2 / |M_Z u|^2 over beta
        z, x, _, y = simulate_iv(n=300, k=6, m_x=3, seed=5)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)

        def objective(beta):
            u = y - x @ beta
            pu = proj(z, u)
            return float(pu @ pu) / float(u @ (u - pu))

        best = np.inf
        rng = np.random.default_rng(0)
        for start in [np.ones(3), np.zeros(3)] + [rng.standard_normal(3) for _ in range(4)]:
            res = scipy.optimize.minimize(objective, start, method="Nelder-Mead",
                                          options={"xatol": 1e-12, "fatol": 1e-14})
            best = min(best, res.fun)
        assert abs((kappa_liml(ds) - 1.0) - best) < 1e-9


class TestFitInvariants:
    def test_tsls_equals_two_stage(self):
        z, x, _, y = simulate_iv(n=500, k=4, m_x=2, seed=6)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        fit = fit_kclass(ds, "tsls")
        x_hat = proj(z, x)
        two_stage, *_ = np.linalg.lstsq(x_hat, y, rcond=None)
        np.testing.assert_allclose(fit.coef_endog, two_stage, atol=1e-8)

    def test_ols_is_fixed_zero(self):
        z, x, _, y = simulate_iv(n=200, k=3, m_x=1, seed=7)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        np.testing.assert_allclose(
            fit_kclass(ds, "ols").coef_endog,
            fit_kclass(ds, "kappa:0").coef_endog,
            atol=1e-12,
        )

    def test_objective_minimized_along_kappa_grid(self):
        z, x, _, y = simulate_iv(n=300, k=4, m_x=2, seed=8)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        kap_max = kappa_liml(ds)
        rng = np.random.default_rng(1)
        for kappa in np.linspace(0, kap_max, 7):
            fit = fit_kclass(ds, KClassSpec(kind="fixed", kappa=float(kappa)))
            beta = fit.coef_endog

            def objective(b):
                u = y - x @ b
                pu = proj(z, u)
                return kappa * float(pu @ pu) + (1 - kappa) * float(u @ u)

            base = objective(beta)
            for _ in range(5):
                assert base <= objective(beta + 1e-4 * rng.standard_normal(2)) + 1e-6

    def test_kappa_beyond_bound_rejected(self):
        z, x, _, y = simulate_iv(n=300, k=4, m_x=1, seed=9)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        x_orth = oproj(z, x)
        from ivinfer.linalg import gen_eig_smallest

        bound = 1 + gen_eig_smallest(x_orth.T @ x_orth, (proj(z, x)).T @ proj(z, x)).eigenvalues[0]
        with pytest.raises(RankDeficiencyError, match="uniqueness"):
            fit_kclass(ds, KClassSpec(kind="fixed", kappa=float(bound) + 0.05))

    def test_ar_at_liml_equals_kappa_identity(self, card_absorbed):
        fit = fit_kclass(card_absorbed, "liml")
        from ivinfer.inference import ar_test

        beta = fit.coef_endog
        res = ar_test(card_absorbed, beta)
        dfm = card_absorbed.n - card_absorbed.k - 1
        assert abs(res.statistic - dfm / card_absorbed.k * (fit.kappa - 1)) < 1e-9


class TestPiLiml:
    def test_noiseless_equals_first_stage(self):
        rng = np.random.default_rng(10)
        z = rng.standard_normal((100, 3))
        pi = rng.standard_normal((3, 2))
        x = z @ pi + rng.standard_normal((100, 2))
        beta = np.array([0.4, -0.2])
        y = x @ beta  # exact, zero residual direction
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        first_stage = np.linalg.solve(z.T @ z, z.T @ x)
        np.testing.assert_allclose(pi_liml(ds, beta), first_stage, atol=1e-10)

    def test_orthogonal_residual_leaves_block_unchanged(self):
        # symmetric construction with X'M_Z y = 0: the correction vanishes
        rng = np.random.default_rng(11)
        z = rng.standard_normal((50, 2))
        x = rng.standard_normal((50, 1))
        y_raw = rng.standard_normal(50)
        y = y_raw - oproj(z, x) @ np.linalg.lstsq(
            oproj(z, x), oproj(z, y_raw), rcond=None
        )[0]
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        beta = np.zeros(1)
        first_stage = np.linalg.solve(z.T @ z, z.T @ x)
        np.testing.assert_allclose(pi_liml(ds, beta), first_stage, atol=1e-8)

    def test_two_stage_self_consistency(self):
        z, x, _, y = simulate_iv(n=400, k=5, m_x=2, seed=12)
        ds = DataSet(y=y, X=x, Z=z, intercept=False)
        beta_liml = fit_kclass(ds, "liml").coef_endog
        pi = pi_liml(ds, beta_liml)
        zpi = z @ pi
        refit = np.linalg.solve(zpi.T @ zpi, zpi.T @ y)
        np.testing.assert_allclose(refit, beta_liml, atol=1e-8)

    def test_rejects_nuisance_blocks(self, card_race):
        with pytest.raises(ConfigError):
            pi_liml(card_race, np.zeros(1))


class TestSigmaEstimates:
    def test_wald_variance_counts_all_columns(self, card_full):
        fit = fit_kclass(card_full, "tsls")
        n = card_full.n
        m_total = 3 + 26 + 1
        s = np.column_stack([card_full.X, card_full.C, np.ones(n)])
        resid = card_full.y - s @ np.concatenate([fit.coef_endog, fit.coef_exog])
        np.testing.assert_allclose(
            fit.sigma2_wald, float(resid @ resid) / (n - m_total), rtol=1e-10
        )
