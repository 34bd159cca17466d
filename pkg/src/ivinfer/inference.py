"""Tests for the causal parameter.

All tests accept a :class:`~ivinfer.data.DataSet` and a coefficient vector
for the block of interest ``[X, D]``. Exogenous nuisance covariates (and the
intercept) are absorbed first; exogenous covariates of interest ``D`` then
enter both as covariates and as instruments, and endogenous nuisance
covariates ``W`` are profiled out. Scalings use the residual degrees of
freedom n - k - m_c - m_d throughout, with the intercept counted in m_c.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from ivinfer._reduce import pencil_eigs, reduce_dataset
from ivinfer.distributions import chi2_sf, gamma_clr_conv_sf, gamma_clr_sf
from ivinfer.exceptions import ConfigError, ConvergenceError, RankDeficiencyError
from ivinfer.kclass import fit_kclass
from ivinfer.linalg import gen_eig_smallest, proj

_NEG_COND_TOL = 1e-8


@dataclass(frozen=True)
class TestResult:
    """Outcome of a hypothesis test at a fixed parameter value."""

    name: str
    statistic: float
    p_value: float
    df: int = None
    beta: np.ndarray = None
    details: dict = field(default_factory=dict)

    def __iter__(self):
        # allow `stat, p = some_test(...)`
        return iter((self.statistic, self.p_value))


def _check_beta(red, beta):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    if beta.shape != (red.m_x + red.m_d,):
        raise ConfigError(
            f"beta must have length m_x + m_d = {red.m_x + red.m_d}, got {beta.shape}."
        )
    return beta


def _min_ar_scaled(red):
    """dfm times the smallest eigenvalue of the [y X W]-pencil (the LIML J)."""
    blocks = [red.y, red.X, red.D, red.W]
    return red.dfm * pencil_eigs(blocks, red.z_aug, gram_name="[y S]'M_Z [y S]")[0]


def _ar_scaled(red, beta):
    """dfm times min over gamma of |P_Z u|^2 / |M_Z u|^2 at u = y - [X D] beta - W gamma."""
    u = red.y - red.x_aug @ beta if red.m_x + red.m_d else red.y.copy()
    z = red.z_aug
    if red.m_w == 0:
        pu = proj(z, u)
        denom = float(u @ (u - pu))
        if denom <= 0:
            raise RankDeficiencyError("degenerate residual: u'M_Z u <= 0.")
        return red.dfm * float(pu @ pu) / denom
    return red.dfm * pencil_eigs([u, red.W], z, gram_name="[u W]'M_Z [u W]")[0]


def wald_test(ds, beta, estimator="tsls"):
    """Wald test of the coefficients of the covariates of interest.

    The statistic is the squared distance of ``beta`` from the k-class
    estimate, in the metric of the estimator's asymptotic covariance, divided
    by the unprojected residual variance. Under strong identification it is
    asymptotically chi-squared with as many degrees of freedom as tested
    coefficients. Not robust to weak instruments.

    Parameters
    ----------
    ds: DataSet
    beta: array of length m_x + m_d
        Null value for the coefficients of ``[X, D]``.
    estimator: str or KClassSpec
        k-class member whose estimate and covariance to use.

    Returns
    -------
    TestResult
    """
    red = reduce_dataset(ds)
    beta = _check_beta(red, beta)
    fit = fit_kclass(ds, estimator)
    kappa = fit.kappa

    s = np.column_stack([red.X, red.D, red.W])
    ps = proj(red.z_aug, s)
    a_full = s.T @ (kappa * ps + (1 - kappa) * s)
    m_test = red.m_x + red.m_d
    try:
        a_inv = np.linalg.inv(a_full)
    except np.linalg.LinAlgError:
        raise RankDeficiencyError("singular covariance in the Wald statistic.") from None
    v_test = a_inv[:m_test, :m_test]
    diff = beta - fit.coef_endog[:m_test]
    statistic = float(diff @ np.linalg.solve(v_test, diff)) / fit.sigma2_wald
    name = estimator if isinstance(estimator, str) else estimator.kind
    return TestResult(
        name=f"wald-{name}",
        statistic=statistic,
        p_value=float(chi2_sf(m_test, statistic)),
        df=m_test,
        beta=beta,
        details={"kappa": kappa},
    )


def ar_test(ds, beta):
    """Anderson-Rubin test, with nuisance endogenous coefficients profiled out.

    Weak-instrument robust. Uses chi-squared critical values with
    k + m_d - m_w degrees of freedom; with nuisance covariates the limiting
    law is a stochastic upper bound, so the test is conservative.
    """
    red = reduce_dataset(ds)
    beta = _check_beta(red, beta)
    df = red.k_aug - red.m_w
    statistic = _ar_scaled(red, beta) / df
    return TestResult(
        name="ar",
        statistic=statistic,
        p_value=float(chi2_sf(df, df * statistic)),
        df=df,
        beta=beta,
    )


def lr_test(ds, beta):
    """Likelihood-ratio test against the unrestricted LIML fit.

    Statistic: the profiled Anderson-Rubin quadratic form at ``beta`` minus
    its minimum over all coefficient values. Chi-squared critical values with
    m_x + m_d degrees of freedom require strong identification.
    """
    red = reduce_dataset(ds)
    beta = _check_beta(red, beta)
    statistic = max(_ar_scaled(red, beta) - _min_ar_scaled(red), 0.0)
    m_test = red.m_x + red.m_d
    return TestResult(
        name="lr",
        statistic=statistic,
        p_value=float(chi2_sf(m_test, statistic)),
        df=m_test,
        beta=beta,
    )


def _mixed_pencil_eigs(red, blocks, count, gram_name):
    """Pencil of ``blocks`` with M-side over [Z, D] and P-side over M_D Z."""
    stacked = np.column_stack(blocks)
    z_perp = red.Z - proj(red.D, red.Z)
    p_part = proj(z_perp, stacked)
    m_part = stacked - proj(red.z_aug, stacked)
    return gen_eig_smallest(
        stacked.T @ m_part, p_part.T @ p_part, count=count, gram_name=gram_name
    ).eigenvalues


def _clr_conditioning(red, beta, ar_at_beta):
    """The identification statistic conditioned on by the CLR test."""
    if red.m_w == 0:
        if red.m_x == 0:
            return np.inf
        u = red.y - red.x_aug @ beta
        z_aug = red.z_aug
        u_orth = u - proj(z_aug, u)
        denom = float(u @ u_orth)
        if denom <= 0:
            raise RankDeficiencyError("degenerate residual: u'M_Z u <= 0.")
        x_tilde = red.X - np.outer(u, u_orth @ red.X) / denom
        if red.m_d:
            vals = _mixed_pencil_eigs(red, [x_tilde], 1, "X~'M_[Z D] X~")
            return red.dfm * vals[0]
        return red.dfm * pencil_eigs([x_tilde], z_aug, gram_name="X~'M_Z X~")[0]
    # nuisance endogenous covariates: lambda_1 + lambda_2 - mu = lambda_2 - LR
    if red.m_d:
        lam = red.dfm * _mixed_pencil_eigs(
            red, [red.X, red.W, red.y], 2, "[X W y]'M_[Z D] [X W y]"
        )
    else:
        lam = red.dfm * pencil_eigs(
            [red.X, red.W, red.y], red.Z, count=2, gram_name="[X W y]'M_Z [X W y]"
        )
    return lam[0] + lam[1] - ar_at_beta


def clr_test(ds, beta, tol=1e-8, law="augmented"):
    """Conditional likelihood-ratio test.

    Uses the likelihood-ratio statistic with data-dependent critical values
    conditioned on the identification strength of the tested block. Robust to
    weak instruments. With nuisance endogenous covariates the conditioning
    statistic follows the conjectured subvector extension, and the output is
    labeled accordingly in ``details``.

    When exogenous covariates of interest are present, ``law`` selects the
    critical value function: ``"augmented"`` (default) folds them into the
    tested block, giving a conditioning law with ``m_x + m_d`` numerator
    degrees of freedom; ``"convolution"`` uses the sharper bound that adds an
    independent chi-squared component with ``m_d`` degrees of freedom,
    evaluated by convolution quadrature.
    """
    if law not in ("augmented", "convolution"):
        raise ConfigError(f"unknown critical value law {law!r}.")
    red = reduce_dataset(ds)
    beta = _check_beta(red, beta)
    ar_at_beta = _ar_scaled(red, beta)
    statistic = max(ar_at_beta - _min_ar_scaled(red), 0.0)
    s_min = _clr_conditioning(red, beta, ar_at_beta)

    if np.isfinite(s_min):
        scale = max(abs(statistic), 1.0)
        if s_min < -_NEG_COND_TOL * scale:
            raise RankDeficiencyError(
                f"negative conditioning statistic {s_min:.3e}; inputs are inconsistent."
            )
        s_min = max(s_min, 0.0)
        if law == "convolution" and red.m_d:
            p_value = gamma_clr_conv_sf(
                red.k - red.m_w, red.m_x, s_min, statistic, red.m_d, tol=tol
            )
        else:
            p_value = gamma_clr_sf(
                red.k_aug - red.m_w, red.m_x + red.m_d, s_min, statistic, tol=tol
            )
    else:
        p_value = float(chi2_sf(red.m_d, statistic)) if statistic > 0 else 1.0
    details = {"s_min": float(s_min) if np.isfinite(s_min) else np.inf}
    if red.m_w:
        details["critical_values"] = "conjectured"
    return TestResult(
        name="clr",
        statistic=statistic,
        p_value=float(p_value),
        df=red.m_x + red.m_d,
        beta=beta,
        details=details,
    )


def _lm_objective(red, u, qz=None, covs=None):
    """Closed-form Lagrange multiplier quadratic form for residual ``u``.

    ``qz`` may carry a precomputed orthonormal basis of the instrument span,
    and ``covs`` the stacked covariate blocks, to amortize repeated calls.
    """
    from ivinfer.linalg import _orthonormal_basis

    if qz is None:
        qz = _orthonormal_basis(red.z_aug)
    if covs is None:
        covs = np.column_stack([red.X, red.D, red.W])
    pu = qz @ (qz.T @ u)
    u_orth = u - pu
    sigma = float(u @ u_orth)
    if sigma <= 0:
        raise RankDeficiencyError("degenerate residual: u'M_Z u <= 0.")
    s_tilde = covs - np.outer(u, u_orth @ covs) / sigma
    ps_tilde = qz @ (qz.T @ s_tilde)
    t = proj(ps_tilde, pu)
    return red.dfm * float(t @ t) / sigma


def _liml_gamma(red, u):
    """LIML coefficients of ``u`` on the nuisance endogenous block."""
    w, z = red.W, red.z_aug
    kappa = 1.0 + pencil_eigs([u, w], z, gram_name="[u W]'M_Z [u W]")[0]
    pw = proj(z, w)
    normal = w.T @ (kappa * pw + (1 - kappa) * w)
    rhs = w.T @ (kappa * proj(z, u) + (1 - kappa) * u)
    return scipy.linalg.solve(normal, rhs, assume_a="sym")


def lm_test(ds, beta, restarts=5):
    """Lagrange multiplier (score) test.

    The statistic projects the null residual onto the instrument-predicted,
    residual-decorrelated covariates, so its degrees of freedom do not grow
    with the number of instruments; robust to weak instruments. With
    nuisance endogenous covariates the statistic is minimized over their
    coefficients, starting from the LIML value with jittered restarts.
    """
    from ivinfer.linalg import _orthonormal_basis

    red = reduce_dataset(ds)
    beta = _check_beta(red, beta)
    m_test = red.m_x + red.m_d
    u0 = red.y - red.x_aug @ beta if m_test else red.y.copy()
    qz = _orthonormal_basis(red.z_aug)
    covs = np.column_stack([red.X, red.D, red.W])

    if red.m_w == 0:
        statistic = _lm_objective(red, u0, qz=qz, covs=covs)
    else:
        def objective(gamma):
            return _lm_objective(red, u0 - red.W @ gamma, qz=qz, covs=covs)

        gamma0 = _liml_gamma(red, u0)
        starts = [gamma0, np.zeros(red.m_w)]
        rng = np.random.default_rng(0)
        spread = np.abs(gamma0) + 1.0
        starts += [gamma0 + spread * rng.standard_normal(red.m_w) for _ in range(restarts)]
        best = None
        for start in starts:
            res = scipy.optimize.minimize(
                objective, start, method="Nelder-Mead",
                options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
            )
            if best is None or res.fun < best.fun:
                best = res
        if best is None or not np.isfinite(best.fun):
            raise ConvergenceError(
                "nuisance-coefficient minimization failed",
                best=None if best is None else best.fun,
            )
        statistic = float(best.fun)

    return TestResult(
        name="lm",
        statistic=statistic,
        p_value=float(chi2_sf(m_test, statistic)),
        df=m_test,
        beta=beta,
    )
