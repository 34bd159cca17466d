"""Model-assumption diagnostics: overidentification, rank, and
residual-prediction tests."""

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from ivinfer._reduce import pencil_eigs, reduce_dataset
from ivinfer.data import DataSet
from ivinfer.distributions import chi2_sf, normal_sf
from ivinfer.exceptions import ConfigError, RankDeficiencyError
from ivinfer.inference import TestResult
from ivinfer.kclass import fit_kclass
from ivinfer.linalg import proj


def _overid_df(red):
    return red.k - red.m_x - red.m_w


def j_test(ds, estimator="liml"):
    """Overidentification test of the instrument moment conditions.

    The statistic scales the instrument-projected share of the residual at
    the TSLS or LIML estimate by the residual degrees of freedom. Requires
    more instruments than endogenous covariates; asymptotically chi-squared
    with k - m degrees of freedom at the TSLS estimate, and bounded by that
    law at the LIML estimate (which stays valid under weak instruments).
    """
    if estimator not in ("tsls", "liml"):
        raise ConfigError(f"estimator must be 'tsls' or 'liml', got {estimator!r}.")
    red = reduce_dataset(ds)
    df = _overid_df(red)
    if df < 1:
        raise ConfigError("just-identified model: the J-statistic is undefined.")
    fit = fit_kclass(ds, estimator)
    s = np.column_stack([red.X, red.D, red.W])
    u = red.y - s @ fit.coef_endog if s.shape[1] else red.y
    up = proj(red.z_aug, u)
    denom = float(u @ u) - float(up @ up)
    statistic = red.dfm * float(up @ up) / denom
    return TestResult(
        name=f"j-{estimator}",
        statistic=statistic,
        p_value=float(chi2_sf(df, statistic)),
        df=df,
    )


def rank_test(ds):
    """Underidentification test of the first-stage coefficient matrix.

    The statistic is the residual degrees of freedom times the smallest
    eigenvalue of the first-stage projection pencil of the endogenous block;
    the null of reduced rank is rejected against chi-squared critical values
    with k - m + 1 degrees of freedom. For a single endogenous covariate,
    ``details["first_stage_f"]`` carries the statistic divided by k, the
    familiar first-stage F.
    """
    red = reduce_dataset(ds)
    m = red.m_x + red.m_w + red.m_d
    if m == 0:
        raise ConfigError("no endogenous covariates; the rank test is undefined.")
    if red.k_aug < m:
        raise ConfigError(f"need k >= m, got k={red.k_aug} < m={m}.")
    blocks = [red.X, red.D, red.W]
    cd = red.dfm * pencil_eigs(blocks, red.z_aug, gram_name="S'M_Z S")[0]
    df = red.k_aug - m + 1
    details = {}
    if m == 1:
        details["first_stage_f"] = cd / red.k_aug
    return TestResult(
        name="rank",
        statistic=float(cd),
        p_value=float(chi2_sf(df, cd)),
        df=df,
        details=details,
    )


def rank_test_general(ds, r):
    """Likelihood-ratio test that the first-stage rank deficiency is >= r.

    Sums the logs of one plus the ``r`` smallest first-stage pencil
    eigenvalues, scaled by the sample size; chi-squared critical values with
    r (k - m + r) degrees of freedom.
    """
    red = reduce_dataset(ds)
    m = red.m_x + red.m_w + red.m_d
    if not 1 <= r <= m:
        raise ConfigError(f"need 1 <= r <= m = {m}, got r={r}.")
    if red.k_aug < m:
        raise ConfigError(f"need k >= m, got k={red.k_aug} < m={m}.")
    eigs = pencil_eigs([red.X, red.D, red.W], red.z_aug, count=r, gram_name="S'M_Z S")
    statistic = red.n * float(np.log1p(eigs).sum())
    df = r * (red.k_aug - m + r)
    return TestResult(
        name=f"rank-general(r={r})",
        statistic=statistic,
        p_value=float(chi2_sf(df, statistic)),
        df=df,
    )


@dataclass(frozen=True)
class RPConfig:
    """Configuration of the residual-prediction test."""

    split_fraction: float = 0.5
    clip_quantile: float = 0.1
    gamma_floor: float = 0.1
    learner: str = "kernel-ridge"
    seed: int = 0
    robust_variance: bool = False

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ConfigError("split_fraction must be in (0, 1).")
        if not 0 < self.clip_quantile < 1:
            raise ConfigError("clip_quantile must be in (0, 1).")
        if self.gamma_floor <= 0:
            raise ConfigError("gamma_floor must be positive.")
        if self.learner not in ("kernel-ridge", "boosted-stumps"):
            raise ConfigError(f"unknown learner {self.learner!r}.")


def _subset(ds, idx):
    return DataSet(
        y=ds.y[idx], X=ds.X[idx], Z=ds.Z[idx], W=ds.W[idx], C=ds.C[idx], D=ds.D[idx],
        intercept=ds.intercept, names=ds.names,
    )


def _fit_learner(cfg, features, target):
    if cfg.learner == "kernel-ridge":
        from sklearn.kernel_ridge import KernelRidge

        std = features.std(axis=0)
        std[std == 0] = 1.0
        scaled = (features - features.mean(axis=0)) / std
        # median pairwise distance on (at most) 500 rows, deterministically
        sub = scaled[:: max(1, len(scaled) // 500)]
        d2 = np.sum((sub[:, None, :] - sub[None, :, :]) ** 2, axis=-1)
        med = np.median(np.sqrt(d2[np.triu_indices_from(d2, k=1)]))
        bandwidth = med if med > 0 else 1.0
        model = KernelRidge(
            kernel="rbf", gamma=1.0 / (2 * bandwidth**2), alpha=1e-2 * len(target)
        )
        model.fit(scaled, target)

        def predict(x):
            return model.predict((x - features.mean(axis=0)) / std)

        return predict
    from sklearn.ensemble import GradientBoostingRegressor

    model = GradientBoostingRegressor(
        max_depth=1, n_estimators=200, learning_rate=0.1, random_state=cfg.seed
    )
    model.fit(features, target)
    return model.predict


def residual_prediction_test(ds, cfg=None, seed=None):
    """Sample-splitting test of instrument-residual mean independence.

    Fits TSLS on a training half, nonlinearly regresses its residual on the
    instrument and exogenous features, rescales and clips the learned
    function, and evaluates the normalized inner product of that function
    with the test-half TSLS residual. One-sided standard-normal p-value.
    Deterministic given the seed. Not robust to weak instruments.

    Parameters
    ----------
    ds: DataSet
    cfg: RPConfig, optional
    seed: int, optional
        Shorthand to override ``cfg.seed``.

    Returns
    -------
    TestResult with ``details["T"]`` carrying the standardized statistic.
    """
    cfg = cfg or RPConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if ds.n < 100:
        raise ConfigError(f"need at least 100 observations, got {ds.n}.")
    if ds.m_w:
        raise ConfigError("assign all endogenous covariates to X for this test.")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(ds.n)
    n_train = int(np.ceil(cfg.split_fraction * ds.n))
    idx_train, idx_test = perm[:n_train], perm[n_train:]
    if len(idx_test) == 0 or len(idx_train) == 0:
        raise ConfigError("degenerate train/test split.")
    ds_train, ds_test = _subset(ds, idx_train), _subset(ds, idx_test)

    features = np.column_stack([ds.Z, ds.C, ds.D])
    fit_train = fit_kclass(ds_train, "tsls")
    exog_train = (
        np.column_stack([ds_train.C] + ([np.ones(ds_train.n)] if ds_train.intercept else []))
        if ds_train.m_c or ds_train.intercept
        else np.zeros((ds_train.n, 0))
    )
    s_train = np.column_stack([ds_train.X, ds_train.D])
    resid_train = ds_train.y - s_train @ fit_train.coef_endog
    if exog_train.shape[1]:
        resid_train = resid_train - exog_train @ fit_train.coef_exog

    predict = _fit_learner(cfg, features[idx_train], resid_train)
    w_train = predict(features[idx_train])
    scale = np.quantile(np.abs(w_train), 1 - cfg.clip_quantile)
    if scale <= 0:
        scale = 1.0
    w_test = np.clip(predict(features[idx_test]) / scale, -1.0, 1.0)

    red_test = reduce_dataset(ds_test)
    x_t = np.column_stack([red_test.X, red_test.D])
    z_t = red_test.z_aug
    fit_test = fit_kclass(ds_test, "tsls")
    resid_test = red_test.y - x_t @ fit_test.coef_endog
    n_test = len(idx_test)

    ce_test = ds_test.exog()
    w_red = w_test - proj(ce_test, w_test) if ce_test.shape[1] else w_test
    if x_t.shape[1]:
        px = proj(z_t, x_t)
        coef = scipy.linalg.solve(x_t.T @ px, x_t.T @ w_red, assume_a="sym")
        w_orth = w_red - px @ coef
    else:
        w_orth = w_red

    # estimates the variance of the individual summands w(Z_i) * residual_i
    if cfg.robust_variance:
        s_test = np.column_stack([ds_test.X, ds_test.D])
        resid_oos = ds_test.y - s_test @ fit_train.coef_endog
        exog_test = (
            np.column_stack([ds_test.C] + ([np.ones(ds_test.n)] if ds_test.intercept else []))
            if ds_test.m_c or ds_test.intercept
            else np.zeros((ds_test.n, 0))
        )
        if exog_test.shape[1]:
            resid_oos = resid_oos - exog_test @ fit_train.coef_exog
        sigma = float(np.sqrt(np.mean((w_orth**2) * (resid_oos**2))))
    else:
        sigma = float(
            np.sqrt(np.mean(w_orth**2) * np.mean(resid_test**2))
        )

    t_stat = float(w_test @ resid_test) / (np.sqrt(n_test) * max(cfg.gamma_floor, sigma))
    return TestResult(
        name="residual-prediction",
        statistic=t_stat,
        p_value=float(normal_sf(t_stat)),
        details={"seed": cfg.seed, "sigma": sigma, "n_test": n_test},
    )


def aggregate_p_median(p_values):
    """Conservative aggregation of split-dependent p-values: 2x the median."""
    p_values = np.asarray(list(p_values), dtype=float)
    if p_values.size == 0:
        raise ConfigError("need at least one p-value.")
    return float(min(1.0, 2.0 * np.median(p_values)))
