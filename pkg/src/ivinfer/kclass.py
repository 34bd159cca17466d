"""k-class estimators: OLS, TSLS, LIML, Fuller, and fixed-kappa fits."""

import re
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ivinfer._reduce import pencil_eigs, reduce_dataset
from ivinfer.exceptions import ConfigError, RankDeficiencyError
from ivinfer.linalg import proj

_KAPPA_MARGIN = 1e-12


@dataclass(frozen=True)
class KClassSpec:
    """Which member of the k-class family to fit.

    ``kind`` is one of ``"ols"``, ``"tsls"``, ``"liml"``, ``"fuller"``, or
    ``"fixed"``. Fuller requires ``a > 0``; a fixed fit requires
    ``kappa >= 0``.
    """

    kind: str
    a: float = None
    kappa: float = None

    def __post_init__(self):
        if self.kind not in ("ols", "tsls", "liml", "fuller", "fixed"):
            raise ConfigError(f"unknown estimator kind {self.kind!r}.")
        if self.kind == "fuller" and (self.a is None or self.a <= 0):
            raise ConfigError("fuller requires a positive shift parameter a.")
        if self.kind == "fixed" and (self.kappa is None or self.kappa < 0):
            raise ConfigError("fixed kappa must be >= 0.")

    @classmethod
    def parse(cls, text):
        """Parse strings like ``"liml"``, ``"fuller:4"``, or ``"kappa:0.5"``."""
        text = text.strip().lower()
        if text in ("ols", "tsls", "liml"):
            return cls(kind=text)
        match = re.fullmatch(r"fuller:([0-9.eE+-]+)", text)
        if match:
            return cls(kind="fuller", a=float(match.group(1)))
        match = re.fullmatch(r"kappa:([0-9.eE+-]+)", text)
        if match:
            return cls(kind="fixed", kappa=float(match.group(1)))
        raise ConfigError(f"cannot parse estimator {text!r}.")


@dataclass(frozen=True)
class KClassFit:
    """A fitted k-class estimator.

    ``coef_endog`` covers the endogenous block ``[X, W]``; ``coef_exog``
    covers ``[C, D, intercept]`` recovered by back-substitution.
    ``sigma2_wald`` divides the unprojected residual sum of squares by
    ``n - m_total`` (all fitted columns, intercept included);
    ``sigma2_resid`` divides the instrument-orthogonal residual sum of
    squares by the residual degrees of freedom ``n - k - m_c - m_d``.
    """

    kappa: float
    coef_endog: np.ndarray
    coef_exog: np.ndarray
    sigma2_wald: float
    sigma2_resid: float
    names: list

    @property
    def coef(self):
        return np.concatenate([self.coef_endog, self.coef_exog])

    def named_coef(self):
        return dict(zip(self.names, self.coef))


def kappa_liml(ds):
    """The LIML k-class parameter: one plus the smallest eigenvalue of the
    projection pencil of ``[y, X, W]`` after absorbing exogenous covariates.

    Equals 1 exactly in a just-identified model. Raises a rank error when the
    pencil has no finite spectrum (every direction of the endogenous block
    plus outcome lies in the instrument-and-control span).
    """
    red = reduce_dataset(ds)
    blocks = [red.y, red.X, red.W, red.D]
    mu = pencil_eigs(blocks, red.z_aug, gram_name="[y X W]'M_[Z C] [y X W]")[0]
    return 1.0 + float(mu)


def _admissible_kappa_bound(red):
    """Upper bound for kappa: 1 + smallest finite eigenvalue of the S-pencil.

    Infinite when every direction of the endogenous block is spanned by the
    instruments and controls (the k-class objective is then convex for every
    kappa).
    """
    s_blocks = [red.X, red.D, red.W]
    if sum(b.shape[1] for b in s_blocks) == 0:
        return np.inf
    try:
        return 1.0 + float(pencil_eigs(s_blocks, red.z_aug, gram_name="S'M_[Z C] S")[0])
    except RankDeficiencyError:
        return np.inf


def fit_kclass(ds, spec):
    """Fit a k-class estimator on a dataset.

    The endogenous coefficients solve the kappa-weighted normal equations on
    exogenous-residualized blocks; exogenous coefficients (including the
    intercept) are recovered by regressing the endogenous-fit residual on the
    exogenous block.

    Parameters
    ----------
    ds: DataSet
    spec: KClassSpec or str

    Returns
    -------
    KClassFit
    """
    if isinstance(spec, str):
        spec = KClassSpec.parse(spec)
    red = reduce_dataset(ds)

    if spec.kind == "ols":
        kappa = 0.0
    elif spec.kind == "tsls":
        kappa = 1.0
    elif spec.kind == "liml":
        kappa = kappa_liml(ds)
    elif spec.kind == "fuller":
        kappa = kappa_liml(ds) - spec.a / red.dfm
    else:
        kappa = spec.kappa

    if spec.kind not in ("ols", "liml"):
        bound = _admissible_kappa_bound(red)
        if kappa > bound + _KAPPA_MARGIN:
            raise RankDeficiencyError(
                f"kappa={kappa:.6g} exceeds the uniqueness bound {bound:.6g}; "
                "the k-class objective is not strictly convex."
            )

    s = np.column_stack([red.X, red.D, red.W])
    z = red.z_aug
    y = red.y
    if s.shape[1] == 0:
        coef_endog = np.zeros(0)
        resid_reduced = y
    else:
        ps = proj(z, s)
        py = proj(z, y)
        normal = s.T @ (kappa * ps + (1 - kappa) * s)
        rhs = s.T @ (kappa * py + (1 - kappa) * y)
        try:
            coef_endog = scipy.linalg.solve(normal, rhs, assume_a="sym")
        except scipy.linalg.LinAlgError as exc:
            raise RankDeficiencyError(f"singular k-class normal matrix: {exc}") from None
        resid_reduced = y - s @ coef_endog

    # back-substitute the exogenous block [C, D, intercept] on original data
    exog_cols = [ds.C]
    if ds.intercept:
        exog_cols.append(np.ones((ds.n, 1)))
    exog = np.column_stack(exog_cols) if exog_cols else np.zeros((ds.n, 0))
    s_orig = np.column_stack([ds.X, ds.D, ds.W])
    resid_orig = ds.y - (s_orig @ coef_endog if s_orig.shape[1] else 0.0)
    if exog.shape[1]:
        coef_exog, *_ = np.linalg.lstsq(exog, resid_orig, rcond=None)
        resid_full = resid_orig - exog @ coef_exog
    else:
        coef_exog = np.zeros(0)
        resid_full = resid_orig

    m_total = s.shape[1] + exog.shape[1]
    sigma2_wald = float(resid_full @ resid_full) / (ds.n - m_total)
    resid_orth = resid_reduced - proj(z, resid_reduced)
    sigma2_resid = float(resid_orth @ resid_orth) / red.dfm

    names = (
        ds.names["X"] + ds.names["D"] + ds.names["W"] + ds.names["C"]
        + (["intercept"] if ds.intercept else [])
    )
    return KClassFit(
        kappa=float(kappa),
        coef_endog=np.asarray(coef_endog, dtype=float),
        coef_exog=np.asarray(coef_exog, dtype=float),
        sigma2_wald=sigma2_wald,
        sigma2_resid=sigma2_resid,
        names=names,
    )


def pi_liml(ds, beta):
    """First-stage coefficient matrix maximizing the concentrated likelihood.

    Uses the outcome-corrected covariates: the endogenous block minus the
    residual direction scaled by its instrument-orthogonal covariance with
    the block.

    Parameters
    ----------
    ds: DataSet with no W or D blocks (split not needed for estimation).
    beta: array of length m_x.

    Returns
    -------
    np.ndarray of dimension (k, m_x).
    """
    if ds.m_w or ds.m_d:
        raise ConfigError("pi_liml expects all endogenous covariates in X and none in W/D.")
    red = reduce_dataset(ds)
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    u = red.y - red.X @ beta
    u_orth = u - proj(red.Z, u)
    denom = float(u @ u_orth)
    if denom <= 0:
        raise RankDeficiencyError("degenerate residual: (y - X beta)'M_Z (y - X beta) <= 0.")
    x_tilde = red.X - np.outer(u, u_orth @ red.X) / denom
    ztz = red.Z.T @ red.Z
    return scipy.linalg.solve(ztz, red.Z.T @ x_tilde, assume_a="sym")
