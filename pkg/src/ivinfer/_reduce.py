"""Internal canonical reduction shared by estimators and tests.

Every estimator and test first regresses the exogenous nuisance block
``[C, 1]`` out of all other blocks. Exogenous covariates of interest ``D``
then act both as covariates and as instruments, so the working problem has
instruments ``[Z, D]`` and tested covariates ``[X, D]``. Residual degrees of
freedom count all absorbed columns: dfm = n - k - m_c - m_d, with the
intercept included in m_c.
"""

from dataclasses import dataclass

import numpy as np

from ivinfer.data import oproj_block
from ivinfer.linalg import gen_eig_smallest, proj


@dataclass(frozen=True)
class Reduced:
    """Blocks after regressing out [C, intercept]; D is kept separate."""

    y: np.ndarray
    X: np.ndarray
    W: np.ndarray
    D: np.ndarray
    Z: np.ndarray
    n: int
    k: int       # columns of Z, exclusive of D
    m_x: int
    m_w: int
    m_c: int     # absorbed exogenous columns, counting the intercept
    m_d: int

    @property
    def dfm(self):
        """Residual degrees of freedom: n - k - m_c - m_d."""
        return self.n - self.k - self.m_c - self.m_d

    @property
    def z_aug(self):
        """Instruments including exogenous covariates of interest."""
        return np.column_stack([self.Z, self.D]) if self.m_d else self.Z

    @property
    def x_aug(self):
        """Tested covariates [X, D]."""
        return np.column_stack([self.X, self.D]) if self.m_d else self.X

    @property
    def k_aug(self):
        return self.k + self.m_d


def reduce_dataset(ds):
    ce = ds.exog()
    return Reduced(
        y=oproj_block(ce, ds.y),
        X=oproj_block(ce, ds.X),
        W=oproj_block(ce, ds.W),
        D=oproj_block(ce, ds.D),
        Z=oproj_block(ce, ds.Z),
        n=ds.n,
        k=ds.k,
        m_x=ds.m_x,
        m_w=ds.m_w,
        m_c=ds.m_c + int(ds.intercept),
        m_d=ds.m_d,
    )


def pencil_grams(blocks, instruments, normalize=True):
    """Gram matrices (A'M_Z A, A'P_Z A) for the columns in ``blocks``.

    Columns are scaled to unit norm by default; pencil eigenvalues are
    invariant under column scaling, and balanced Gram matrices keep the rank
    decisions meaningful when columns live on very different scales.
    """
    a = np.column_stack([np.asarray(b, dtype=float).reshape(len(b), -1) for b in blocks])
    if normalize and a.shape[1]:
        norms = np.linalg.norm(a, axis=0)
        norms[norms == 0] = 1.0
        a = a / norms
    pa = proj(instruments, a)
    m_gram = a.T @ (a - pa)
    p_gram = pa.T @ pa
    return (m_gram + m_gram.T) / 2, (p_gram + p_gram.T) / 2


def pencil_eigs(blocks, instruments, count=1, gram_name="A'M_Z A"):
    """Smallest finite eigenvalues of the projection pencil of ``blocks``."""
    m_gram, p_gram = pencil_grams(blocks, instruments)
    scale = float(np.linalg.norm(m_gram + p_gram, 2)) if m_gram.size else 0.0
    return gen_eig_smallest(
        m_gram, p_gram, count=count, gram_name=gram_name, scale=scale
    ).eigenvalues
