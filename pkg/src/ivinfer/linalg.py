"""Dense linear-algebra primitives: projections, definite pencils, quadrics.

All routines work on plain ``numpy`` arrays. Projection matrices are never
formed explicitly; a thin pivoted QR of the basis determines the column span
at relative tolerance ``RANK_RTOL``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ivinfer.exceptions import RankDeficiencyError
from ivinfer.quadric import ALL_SPACE, Quadric

RANK_RTOL = 1e-10
EIG_CLAMP = 1e-10


def _orthonormal_basis(a):
    """Orthonormal basis of span(a) via pivoted QR, rank-truncated."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    if a.shape[1] == 0:
        return np.zeros((a.shape[0], 0))
    q, r, _ = scipy.linalg.qr(a, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros((a.shape[0], 0))
    rank = int(np.sum(diag > RANK_RTOL * diag[0]))
    return q[:, :rank]


def proj(a, b):
    """Project the columns of ``b`` onto the column span of ``a``.

    Parameters
    ----------
    a: np.ndarray of dimension (n, p)
        Basis whose span to project onto. May be rank deficient.
    b: np.ndarray of dimension (n,) or (n, r)
        Vector or matrix to project.

    Returns
    -------
    np.ndarray of the same shape as ``b``.
    """
    b = np.asarray(b, dtype=float)
    a = np.asarray(a, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise ValueError(
            f"a and b must have the same number of rows, got {a.shape[0]} and {b.shape[0]}."
        )
    q = _orthonormal_basis(a)
    return q @ (q.T @ b)


def oproj(a, b):
    """Residual of ``b`` after projecting onto the column span of ``a``."""
    return np.asarray(b, dtype=float) - proj(a, b)


@dataclass(frozen=True)
class GenEigResult:
    """Smallest finite generalized eigenvalues, ascending, with optional vectors."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = None


def gen_eig_smallest(amat, bmat, count=1, vectors=False, gram_name="A", scale=None):
    """Smallest ``count`` finite solutions mu of det(bmat - mu * amat) = 0.

    ``amat`` must be symmetric positive (semi-)definite and ``bmat`` symmetric
    positive semi-definite. When ``amat`` is singular, the pencil has infinite
    eigenvalues; those directions are profiled out of ``bmat`` by a Schur
    complement and only the finite spectrum is returned. Eigenvalues within
    ``EIG_CLAMP`` of zero are clamped to zero.

    Parameters
    ----------
    amat: np.ndarray of dimension (d, d)
        Symmetric PSD matrix, typically a Gram matrix of residualized columns.
    bmat: np.ndarray of dimension (d, d)
        Symmetric PSD matrix.
    count: int
        Number of eigenvalues to return.
    vectors: bool
        Whether to also return eigenvectors (in original coordinates; only
        available when ``amat`` has full rank).
    gram_name: str
        Name used in error messages to identify the offending matrix.
    scale: float, optional
        Reference magnitude for the rank decision on ``amat``. Defaults to
        its own largest eigenvalue; callers solving a pencil should pass the
        magnitude of the full problem so that an ``amat`` that is negligible
        relative to ``bmat`` is treated as rank deficient.

    Returns
    -------
    GenEigResult
        ``eigenvalues`` sorted ascending, length ``count``.
    """
    amat = np.asarray(amat, dtype=float)
    bmat = np.asarray(bmat, dtype=float)
    amat = (amat + amat.T) / 2
    bmat = (bmat + bmat.T) / 2
    d = amat.shape[0]
    if amat.shape != (d, d) or bmat.shape != (d, d):
        raise ValueError(f"matrix shapes {amat.shape}, {bmat.shape} do not match.")

    w, v = np.linalg.eigh(amat)
    threshold = RANK_RTOL * max(w[-1] if d else 0.0, scale if scale is not None else 0.0)
    if d == 0 or w[-1] <= threshold:
        raise RankDeficiencyError(
            f"Gram matrix {gram_name} is numerically zero; "
            "the pencil has no finite eigenvalues."
        )
    keep = w > threshold
    n_keep = int(keep.sum())
    if count > n_keep:
        raise RankDeficiencyError(
            f"Gram matrix {gram_name} has rank {n_keep} < {count}; "
            f"the pencil has fewer than {count} finite eigenvalues."
        )
    v1 = v[:, keep]
    b11 = v1.T @ bmat @ v1
    if n_keep < d:
        v0 = v[:, ~keep]
        b10 = v1.T @ bmat @ v0
        b00 = v0.T @ bmat @ v0
        b11 = b11 - b10 @ np.linalg.pinv(b00) @ b10.T
    scale = 1.0 / np.sqrt(w[keep])
    mid = (b11 * scale).T * scale
    mid = (mid + mid.T) / 2

    if vectors and n_keep == d:
        vals, vecs = np.linalg.eigh(mid)
        vecs = (v1 * scale) @ vecs
    else:
        vals = np.linalg.eigvalsh(mid)
        vecs = None

    vals = vals.copy()
    vals[np.abs(vals) < EIG_CLAMP] = 0.0
    if vals[0] < -EIG_CLAMP:
        raise RankDeficiencyError(
            f"pencil with Gram matrix {gram_name} has negative eigenvalue {vals[0]:.3e}; "
            "expected both matrices positive semi-definite."
        )
    return GenEigResult(
        eigenvalues=vals[:count],
        eigenvectors=vecs[:, :count] if vecs is not None else None,
    )


def kappa_definiteness(x, z, kappa):
    """Classify the definiteness of x^T (kappa P_z + (1 - kappa) Id) x.

    Returns one of ``"positive_definite"``, ``"semidefinite_singular"``, or
    ``"indefinite"``, decided by comparing ``kappa`` against the smallest
    eigenvalue of ``(x^T M_z x)^{-1} x^T x``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    x_orth = oproj(z, x)
    m_gram = x_orth.T @ x_orth
    if np.linalg.matrix_rank(m_gram, tol=RANK_RTOL * max(np.linalg.norm(m_gram), 1.0)) < x.shape[1]:
        raise RankDeficiencyError("M_Z X is rank deficient; kappa threshold undefined.")
    lambda1 = gen_eig_smallest(m_gram, x.T @ x, gram_name="X'M_Z X").eigenvalues[0]
    if abs(kappa - lambda1) <= EIG_CLAMP * max(1.0, abs(lambda1)):
        return "semidefinite_singular"
    if kappa < lambda1:
        return "positive_definite"
    return "indefinite"


def project_quadric(quadric, keep):
    """Project a quadric onto a coordinate subset by minimizing over the rest.

    Implements the case split for {x : (x - z0)^T A (x - z0) <= c}: if the
    dropped block of ``A`` has a negative eigenvalue the projection covers the
    whole space (returns ``ALL_SPACE``); otherwise the result is the Schur
    complement quadric ``(B A^+ B^T)^+`` with center ``B z0`` and the same
    bound, where ``B`` selects the kept coordinates.
    """
    keep = list(keep)
    m = quadric.a.shape[0]
    if len(set(keep)) != len(keep):
        raise ValueError("keep indices must be distinct.")
    if sorted(keep) == list(range(m)):
        order = np.asarray(keep)
        return Quadric(
            a=quadric.a[np.ix_(order, order)],
            center=quadric.center[order],
            bound=quadric.bound,
        )
    drop = [i for i in range(m) if i not in keep]
    a22 = quadric.a[np.ix_(drop, drop)]
    eig22 = np.linalg.eigvalsh((a22 + a22.T) / 2)
    lam_min = eig22[0] if eig22.size else 0.0
    if abs(lam_min) < EIG_CLAMP * max(1.0, np.abs(eig22).max() if eig22.size else 1.0):
        lam_min = 0.0
    if lam_min < 0:
        return ALL_SPACE
    order = np.asarray(keep)
    b = np.zeros((len(keep), m))
    b[np.arange(len(keep)), order] = 1.0
    a_proj = np.linalg.pinv(b @ np.linalg.pinv(quadric.a) @ b.T)
    return Quadric(a=(a_proj + a_proj.T) / 2, center=quadric.center[order], bound=quadric.bound)
