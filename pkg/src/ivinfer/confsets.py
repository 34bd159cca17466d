"""Confidence sets by test inversion.

Wald, Anderson-Rubin, and likelihood-ratio sets have closed forms: all three
are quadrics centered at a k-class estimate, differing only in the kappa
parameter and the bound. Conditional-likelihood-ratio and Lagrange-multiplier
sets are found by inverting the p-value function on an adaptive grid with
bisection refinement. Grid evaluation works on cached Gram matrices, so each
candidate parameter costs a small dense eigenproblem rather than a pass over
the data.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from ivinfer._reduce import pencil_grams, reduce_dataset
from ivinfer.distributions import chi2_cdf, chi2_quantile, chi2_sf, gamma_clr_sf
from ivinfer.exceptions import ConfigError, ConvergenceError, RankDeficiencyError
from ivinfer.inference import _min_ar_scaled
from ivinfer.kclass import fit_kclass, kappa_liml
from ivinfer.linalg import gen_eig_smallest, proj, project_quadric
from ivinfer.quadric import ALL_SPACE, Quadric

_BOUNDARY_RTOL = 1e-10


@dataclass(frozen=True)
class ConfidenceSet:
    """A confidence region for the coefficients of the covariates of interest.

    ``kind`` is one of ``"intervals"`` (union of disjoint intervals, possibly
    with infinite endpoints), ``"quadric"`` (multivariate closed form),
    ``"empty"``, or ``"all"``.
    """

    kind: str
    level: float
    test: str
    intervals: tuple = ()
    quadric: Quadric = None
    details: dict = field(default_factory=dict)

    def __contains__(self, x):
        if self.kind == "all":
            return True
        if self.kind == "empty":
            return False
        if self.kind == "quadric":
            return self.quadric(np.atleast_1d(x)) <= 0
        x = float(np.atleast_1d(x)[0])
        return any(lo <= x <= hi for lo, hi in self.intervals)

    def is_bounded(self):
        if self.kind == "empty":
            return True
        if self.kind == "all":
            return False
        if self.kind == "quadric":
            return self.quadric.is_bounded() and self.quadric.bound >= 0
        return all(np.isfinite(lo) and np.isfinite(hi) for lo, hi in self.intervals)

    def __str__(self):
        if self.kind == "empty":
            return "∅"
        if self.kind == "all":
            return "(-inf, inf)"
        if self.kind == "quadric":
            return f"quadric(center={np.round(self.quadric.center, 3)}, bound={self.quadric.bound:.3g})"
        return " U ".join(f"[{lo:.3f}, {hi:.3f}]" for lo, hi in self.intervals)


def _set_from_quadric(quadric, level, test, details=None):
    details = details or {}
    if quadric is ALL_SPACE:
        return ConfidenceSet(kind="all", level=level, test=test, details=details)
    if quadric.dim == 1:
        intervals = quadric.intervals()
        if not intervals:
            return ConfidenceSet(kind="empty", level=level, test=test, details=details)
        if intervals == [(-np.inf, np.inf)]:
            return ConfidenceSet(kind="all", level=level, test=test,
                                 intervals=tuple(intervals), details=details)
        return ConfidenceSet(
            kind="intervals", level=level, test=test, intervals=tuple(intervals),
            quadric=quadric, details=details,
        )
    if quadric.is_empty():
        return ConfidenceSet(kind="empty", level=level, test=test, details=details)
    return ConfidenceSet(kind="quadric", level=level, test=test, quadric=quadric,
                         details=details)


def _kclass_at(red, kappa):
    """Coefficients, kappa-Gram, and residual statistics at a fixed kappa."""
    s = np.column_stack([red.X, red.D, red.W])
    z = red.z_aug
    ps = proj(z, s)
    py = proj(z, red.y)
    gram = s.T @ (kappa * ps + (1 - kappa) * s)
    rhs = s.T @ (kappa * py + (1 - kappa) * red.y)
    try:
        coef = scipy.linalg.solve(gram, rhs, assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise RankDeficiencyError(f"singular normal matrix at kappa={kappa:.6g}: {exc}") from None
    resid = red.y - s @ coef
    resid_p = py - ps @ coef
    ssp = float(resid_p @ resid_p)
    ssm = float(resid @ resid) - ssp
    sigma2 = ssm / red.dfm
    ar_tilde = red.dfm * ssp / ssm
    return coef, gram, sigma2, ar_tilde


def _parse_test(test):
    test = test.strip().lower()
    if test.startswith("wald"):
        estimator = test.split(":", 1)[1] if ":" in test else "tsls"
        return "wald", estimator
    if test in ("ar", "lr", "clr", "lm"):
        return test, None
    raise ConfigError(f"unknown test {test!r}.")


def invert_closed_form(ds, test, alpha=0.05):
    """Closed-form confidence set for the inverse Wald, AR, or LR test.

    All three sets are quadrics {b : (b - center)' A (b - center) <= c} in
    the coefficients of the covariates of interest, obtained by minimizing
    over the nuisance endogenous coefficients (a Schur complement). When the
    implied kappa exceeds its admissible bound the set is the whole space.
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}.")
    kind, estimator = _parse_test(test)
    if kind not in ("wald", "ar", "lr"):
        raise ConfigError(f"no closed form for {test!r}; use invert_grid.")
    red = reduce_dataset(ds)
    m_t = red.m_x + red.m_d
    if m_t == 0:
        raise ConfigError("no covariates of interest.")

    if kind == "wald":
        fit = fit_kclass(ds, estimator)
        kappa = fit.kappa
        coef, gram, _, _ = _kclass_at(red, kappa)
        bound = fit.sigma2_wald * chi2_quantile(m_t, 1 - alpha)
    elif kind == "ar":
        quantile = chi2_quantile(red.k_aug - red.m_w, 1 - alpha)
        kappa = 1.0 + quantile / red.dfm
        coef, gram, sigma2, ar_tilde = _kclass_at(red, kappa)
        bound = sigma2 * (quantile - ar_tilde)
    else:
        quantile = chi2_quantile(m_t, 1 - alpha)
        kap_liml = kappa_liml(ds)
        kappa = kap_liml + quantile / red.dfm
        coef, gram, sigma2, ar_tilde = _kclass_at(red, kappa)
        j_liml = red.dfm * (kap_liml - 1.0)
        bound = sigma2 * (quantile + j_liml - ar_tilde)

    full = Quadric(a=gram, center=coef, bound=bound)
    projected = project_quadric(full, list(range(m_t))) if red.m_w else full
    return _set_from_quadric(projected, 1 - alpha, test, details={"kappa": kappa})


@dataclass(frozen=True)
class BoundedEmpty:
    """Closed-form predicates for the AR and LR confidence sets.

    Flags are ``True``/``False``, or ``None`` when the deciding inequality
    holds with equality to tolerance (boundary, indeterminate).
    ``thresholds`` carries the overidentification statistic, the rank
    statistic, and the level cutoffs.
    """

    ar_nonempty: bool
    ar_bounded: bool
    lr_bounded: bool
    thresholds: dict


def _flag(lhs, rhs):
    scale = max(abs(lhs), abs(rhs), 1.0)
    if abs(lhs - rhs) <= _BOUNDARY_RTOL * scale:
        return None
    return bool(lhs < rhs)


def bounded_empty_predicates(ds, alpha=0.05):
    """Nonemptiness and boundedness of the AR and LR sets without inverting.

    The AR set is nonempty iff the LIML overidentification statistic is below
    the chi-squared quantile, and bounded iff that quantile is below the rank
    statistic; the LR set is always nonempty and is bounded iff the
    chi-squared(m_x) quantile is below rank statistic minus
    overidentification statistic.
    """
    red = reduce_dataset(ds)
    m_t = red.m_x + red.m_d
    from ivinfer._reduce import pencil_eigs

    j_liml = red.dfm * pencil_eigs(
        [red.y, red.X, red.D, red.W], red.z_aug, gram_name="[y S]'M_Z [y S]"
    )[0]
    cd = red.dfm * pencil_eigs(
        [red.X, red.D, red.W], red.z_aug, gram_name="S'M_Z S"
    )[0]
    df_ar = red.k_aug - red.m_w
    q_ar = chi2_quantile(df_ar, 1 - alpha)
    q_lr = chi2_quantile(m_t, 1 - alpha)
    nonempty = _flag(j_liml, q_ar)
    if nonempty is None and j_liml == q_ar:
        nonempty = True  # weak inequality holds exactly
    return BoundedEmpty(
        ar_nonempty=nonempty,
        ar_bounded=_flag(q_ar, cd),
        lr_bounded=_flag(q_lr, cd - j_liml),
        thresholds={
            "j_liml": float(j_liml),
            "cd": float(cd),
            "alpha_max": float(chi2_sf(df_ar, j_liml)),
            "alpha_min": float(chi2_sf(df_ar, cd)),
            "rank_p": float(chi2_sf(red.k_aug - red.m_w - m_t + 1, cd)),
        },
    )


class _GramEvaluator:
    """p-value evaluators over cached Gram matrices.

    Blocks are stacked as [y, X, D, W]; any candidate residual
    u = y - [X D] b - W g is a coefficient vector in that basis, so test
    statistics reduce to small dense forms. Used by grid inversion, where a
    single confidence set requires thousands of p-value evaluations.
    """

    def __init__(self, ds):
        red = reduce_dataset(ds)
        self.ds = ds
        self.red = red
        self.m_t = red.m_x + red.m_d
        self.m_w = red.m_w
        blocks = np.column_stack([red.y, red.X, red.D, red.W])
        # unit-norm columns; all statistics are scale-invariant ratios, and
        # coefficient vectors are rescaled to match in _coef_vector
        self.col_norms = np.linalg.norm(blocks, axis=0)
        self.col_norms[self.col_norms == 0] = 1.0
        blocks = blocks / self.col_norms
        self.gm, self.gp = pencil_grams([blocks], red.z_aug, normalize=False)
        self.scale = float(np.linalg.norm(self.gm + self.gp, 2))
        if red.m_d:
            z_perp = red.Z - proj(red.D, red.Z)
            p_mixed = proj(z_perp, blocks)
            gpm = p_mixed.T @ p_mixed
            self.gp_mixed = (gpm + gpm.T) / 2
        else:
            self.gp_mixed = self.gp
        self.dim = 1 + self.m_t + self.m_w
        self.j_liml = _min_ar_scaled(red)
        # conditioning eigenvalues for the subvector CLR (column order is
        # immaterial for the pencil spectrum)
        if self.m_w:
            lam = gen_eig_smallest(
                self.gm, self.gp_mixed, count=2,
                gram_name="[y X W]'M_Z [y X W]", scale=self.scale,
            ).eigenvalues
            self.clr_lams = red.dfm * lam
        else:
            self.clr_lams = None
        self._fits = {}

    def _coef_vector(self, beta, gamma=None):
        """Unit coefficient vector of y - [X D] beta - W gamma in the
        normalized-column basis. ``beta`` is in original data units; ``gamma``
        (used only inside the LM minimization) in normalized-column units."""
        c = np.zeros(self.dim)
        c[0] = self.col_norms[0]
        c[1 : 1 + self.m_t] = -np.atleast_1d(beta) * self.col_norms[1 : 1 + self.m_t]
        if gamma is not None:
            c[1 + self.m_t :] = -np.atleast_1d(gamma)
        return c / np.linalg.norm(c)

    def _w_selector(self):
        return np.eye(self.dim)[:, 1 + self.m_t :]

    def ar_scaled(self, beta):
        red = self.red
        c = self._coef_vector(beta)
        if self.m_w == 0:
            num = float(c @ self.gp @ c)
            den = float(c @ self.gm @ c)
            return red.dfm * num / den
        basis = np.column_stack([c, self._w_selector()])
        lam = gen_eig_smallest(
            basis.T @ self.gm @ basis, basis.T @ self.gp @ basis,
            gram_name="[u W]'M_Z [u W]", scale=self.scale,
        ).eigenvalues[0]
        return red.dfm * float(lam)

    def p_ar(self, beta):
        df = self.red.k_aug - self.m_w
        return float(chi2_sf(df, self.ar_scaled(beta)))

    def p_lr(self, beta):
        stat = max(self.ar_scaled(beta) - self.j_liml, 0.0)
        return float(chi2_sf(self.m_t, stat))

    def p_clr(self, beta, tol=1e-8):
        red = self.red
        ar = self.ar_scaled(beta)
        stat = max(ar - self.j_liml, 0.0)
        if self.m_w:
            s_min = max(self.clr_lams[0] + self.clr_lams[1] - ar, 0.0)
        elif red.m_x == 0:
            return float(chi2_sf(red.m_d, stat)) if stat > 0 else 1.0
        else:
            c = self._coef_vector(beta)
            den = float(c @ self.gm @ c)
            sel_x = np.eye(self.dim)[:, 1 : 1 + self.m_t]
            s_vec = (self.gm @ c).T @ sel_x / den
            shift = sel_x - np.outer(c, s_vec)
            m_part = shift.T @ self.gm @ shift
            p_part = shift.T @ self.gp_mixed @ shift
            s_min = red.dfm * gen_eig_smallest(
                m_part, p_part, gram_name="X~'M_Z X~", scale=self.scale
            ).eigenvalues[0]
            s_min = max(s_min, 0.0)
        return gamma_clr_sf(red.k_aug - self.m_w, self.m_t, s_min, stat, tol=tol)

    def _lm_objective(self, c):
        den = float(c @ self.gm @ c)
        if den <= 0:
            return np.inf
        sel_s = np.eye(self.dim)[:, 1:]
        s_vec = (self.gm @ c).T @ sel_s / den
        shift = sel_s - np.outer(c, s_vec)
        # the projection onto span(P_Z S~) is invariant to column scaling of
        # S~; unit-norm columns keep the rank decision meaningful when the
        # decorrelated block nearly degenerates (large |beta|)
        col = np.sqrt(np.einsum("ji,jk,ki->i", shift, self.gm + self.gp, shift))
        col[col <= 0] = 1.0
        shift = shift / col
        sp = shift.T @ self.gp @ shift
        su = shift.T @ self.gp @ c
        w, v = np.linalg.eigh((sp + sp.T) / 2)
        keep = w > 1e-10 * max(w[-1], 0) if w.size else w > 0
        if not keep.any():
            return 0.0
        coords = v[:, keep].T @ su
        quad = float(coords @ (coords / w[keep]))
        return self.red.dfm * quad / den

    def _liml_gamma_normalized(self, beta):
        c0 = self._coef_vector(beta)
        sel_w = self._w_selector()
        basis = np.column_stack([c0, sel_w])
        kap = 1.0 + gen_eig_smallest(
            basis.T @ self.gm @ basis, basis.T @ self.gp @ basis,
            gram_name="[u W]'M_Z [u W]", scale=self.scale,
        ).eigenvalues[0]
        gw = sel_w.T @ (self.gp + (1 - kap) * self.gm) @ sel_w
        rhs = sel_w.T @ (self.gp + (1 - kap) * self.gm) @ c0
        try:
            return np.linalg.solve(gw, rhs)
        except np.linalg.LinAlgError:
            return np.zeros(self.m_w)

    def lm_stat(self, beta, warm=False):
        if self.m_w == 0:
            return self._lm_objective(self._coef_vector(beta))

        def objective(gamma):
            return self._lm_objective(self._coef_vector(beta, gamma))

        gamma0 = self._liml_gamma_normalized(beta)
        if warm and getattr(self, "_warm_gamma", None) is not None:
            starts = [self._warm_gamma, gamma0]
            options = {"xatol": 1e-8, "fatol": 1e-10, "maxiter": 300}
        else:
            rng = np.random.default_rng(0)
            spread = np.abs(gamma0) + 1.0
            starts = [gamma0, np.zeros(self.m_w)]
            starts += [gamma0 + spread * rng.standard_normal(self.m_w) for _ in range(3)]
            options = {"xatol": 1e-9, "fatol": 1e-11, "maxiter": 1000}
        best, best_x = np.inf, None
        for start in starts:
            res = scipy.optimize.minimize(
                objective, start, method="Nelder-Mead", options=options
            )
            if res.fun < best:
                best, best_x = res.fun, res.x
        self._warm_gamma = best_x
        return float(best)

    def p_lm(self, beta, warm=False):
        # far beyond the scale where |beta| X dominates y, the cached Gram
        # matrices cannot resolve the nearly-degenerate decorrelated block;
        # fall back to the direct data-level statistic there
        balance = self.col_norms[0] / max(self.col_norms[1 : 1 + self.m_t].min(), 1e-300)
        if np.abs(np.atleast_1d(beta)).max() > 100.0 * (balance + 1.0):
            from ivinfer.inference import lm_test

            return float(lm_test(self.ds, beta).p_value)
        return float(chi2_sf(self.m_t, self.lm_stat(beta, warm=warm)))

    def p_wald(self, ds, estimator, beta):
        if estimator not in self._fits:
            fit = fit_kclass(ds, estimator)
            coef, gram, _, _ = _kclass_at(self.red, fit.kappa)
            a_inv = np.linalg.inv(gram)
            v = a_inv[: self.m_t, : self.m_t]
            self._fits[estimator] = (coef[: self.m_t], v, fit.sigma2_wald)
        center, v, sigma2 = self._fits[estimator]
        diff = np.atleast_1d(beta) - center
        stat = float(diff @ np.linalg.solve(v, diff)) / sigma2
        return float(chi2_sf(self.m_t, stat))

    def p_value(self, test, beta, ds=None, warm=False):
        kind, estimator = _parse_test(test)
        if kind == "ar":
            return self.p_ar(beta)
        if kind == "lr":
            return self.p_lr(beta)
        if kind == "clr":
            return self.p_clr(beta)
        if kind == "lm":
            return self.p_lm(beta, warm=warm)
        return self.p_wald(ds, estimator, beta)


@dataclass(frozen=True)
class GridConfig:
    initial_points: int = 512
    bisection_steps: int = 60
    xtol: float = 1e-4
    tail_scale: float = 1e6
    inflate: float = 5.0


def invert_grid(ds, test, alpha=0.05, config=None):
    """Confidence set by sign changes of p(beta) - alpha on an adaptive grid.

    The grid centers at the LIML estimate and spans the closed-form AR set
    inflated by ``config.inflate``; each sign change is refined by bisection.
    Open tails are detected by evaluating far beyond the grid. Only a single
    covariate of interest is supported (the multivariate analogue would be a
    grid mask, out of scope).
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}.")
    config = config or GridConfig()
    evaluator = _GramEvaluator(ds)
    if evaluator.m_t != 1:
        raise ConfigError(f"grid inversion requires one covariate of interest, got {evaluator.m_t}.")

    fit = fit_kclass(ds, "liml")
    center = float(fit.coef_endog[0])
    scale = abs(center) + 1.0

    ar_set = invert_closed_form(ds, "ar", alpha)
    if ar_set.kind == "intervals" and ar_set.is_bounded():
        lo = min(a for a, _ in ar_set.intervals)
        hi = max(b for _, b in ar_set.intervals)
        mid, half = (lo + hi) / 2, (hi - lo) / 2
        lo, hi = mid - config.inflate * half, mid + config.inflate * half
        lo, hi = min(lo, center - scale), max(hi, center + scale)
    else:
        lo, hi = center - 50 * scale, center + 50 * scale

    def pval(b):
        return evaluator.p_value(test, np.array([b]), ds=ds, warm=True)

    grid = np.linspace(lo, hi, config.initial_points)
    accepts = np.array([pval(b) >= alpha for b in grid])

    def bisect(b_in, b_out):
        for _ in range(config.bisection_steps):
            if abs(b_out - b_in) < config.xtol:
                break
            mid = (b_in + b_out) / 2
            if pval(mid) >= alpha:
                b_in = mid
            else:
                b_out = mid
        return (b_in + b_out) / 2

    intervals = []
    i = 0
    n_pts = len(grid)
    while i < n_pts:
        if not accepts[i]:
            i += 1
            continue
        j = i
        while j + 1 < n_pts and accepts[j + 1]:
            j += 1
        left = bisect(grid[i], grid[i - 1]) if i > 0 else grid[0]
        right = bisect(grid[j], grid[j + 1]) if j + 1 < n_pts else grid[-1]
        intervals.append((left, right))
        i = j + 1

    tail = config.tail_scale * scale
    open_left = pval(-tail) >= alpha
    open_right = pval(tail) >= alpha
    if open_left:
        if intervals and not accepts[0]:
            intervals.insert(0, (-np.inf, bisect(-tail, grid[0])))
        elif intervals:
            intervals[0] = (-np.inf, intervals[0][1])
        else:
            intervals.append((-np.inf, bisect(-tail, grid[len(grid) // 2])))
    if open_right:
        if intervals and not accepts[-1]:
            intervals.append((bisect(tail, grid[-1]), np.inf))
        elif intervals:
            intervals[-1] = (intervals[-1][0], np.inf)
        else:
            intervals.append((bisect(tail, grid[len(grid) // 2]), np.inf))

    if not intervals:
        p_best = max(pval(b) for b in grid[:: max(1, n_pts // 16)])
        return ConfidenceSet(
            kind="empty", level=1 - alpha, test=test,
            details={"max_p_on_grid": p_best, "grid": (lo, hi)},
        )
    return ConfidenceSet(
        kind="intervals", level=1 - alpha, test=test, intervals=tuple(intervals)
    )


def equivalent_levels(ds, alpha=0.05):
    """Levels at which the Wald and LR sets coincide with the AR set.

    Requires the AR set to be nonempty and bounded at level ``alpha``. The
    returned dictionary carries ``alpha_wald_given_ar`` (for the Wald set
    using the k-class estimator at the AR kappa) and ``alpha_lr_given_ar``.
    """
    red = reduce_dataset(ds)
    m_t = red.m_x + red.m_d
    pred = bounded_empty_predicates(ds, alpha)
    j_liml, cd = pred.thresholds["j_liml"], pred.thresholds["cd"]
    q_ar = chi2_quantile(red.k_aug - red.m_w, 1 - alpha)
    if not (j_liml <= q_ar):
        raise ConfigError(
            f"precondition J_LIML <= quantile failed: {j_liml:.4f} > {q_ar:.4f}."
        )
    if not (q_ar < cd):
        raise ConfigError(
            f"precondition quantile < rank statistic failed: {q_ar:.4f} >= {cd:.4f}."
        )
    kappa_ar = 1.0 + q_ar / red.dfm
    coef, gram, sigma2, ar_tilde = _kclass_at(red, kappa_ar)
    s_neg = -sigma2 * (q_ar - ar_tilde)  # the proposition's s(kappa) is <= 0 here
    fit = fit_kclass(ds, f"kappa:{kappa_ar}")
    alpha_wald = float(chi2_sf(m_t, -s_neg / fit.sigma2_wald))
    alpha_lr = float(chi2_sf(m_t, q_ar - j_liml))
    return {
        "alpha_wald_given_ar": alpha_wald,
        "alpha_lr_given_ar": alpha_lr,
        "kappa_ar": kappa_ar,
    }
