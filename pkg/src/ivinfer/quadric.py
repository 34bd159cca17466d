"""Centered quadrics {x : (x - center)^T A (x - center) <= bound}."""

from dataclasses import dataclass, field

import numpy as np

_SYM_RTOL = 1e-10
_FLAT_ATOL = 1e-12


class _AllSpace:
    """Sentinel for a constraint satisfied by every point."""

    def __repr__(self):
        return "ALL_SPACE"

    def __call__(self, x):
        return -np.inf


ALL_SPACE = _AllSpace()


@dataclass(frozen=True)
class Quadric:
    """Solution set of (x - center)^T a (x - center) <= bound.

    ``a`` must be symmetric to relative tolerance 1e-10. The set is an
    ellipsoid if ``a`` is positive definite and ``bound >= 0``, empty if
    ``a`` is positive semi-definite and ``bound < 0``, and unbounded
    otherwise.
    """

    a: np.ndarray
    center: np.ndarray
    bound: float
    _eigs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        scale = max(np.abs(a).max(), 1.0)
        if np.abs(a - a.T).max() > _SYM_RTOL * scale:
            raise ValueError("quadric matrix must be symmetric.")
        if a.shape[0] != center.shape[0]:
            raise ValueError(
                f"matrix of dimension {a.shape} incompatible with center {center.shape}."
            )
        object.__setattr__(self, "a", (a + a.T) / 2)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "bound", float(self.bound))
        object.__setattr__(self, "_eigs", np.linalg.eigvalsh(self.a))

    @property
    def dim(self):
        return self.a.shape[0]

    def __call__(self, x):
        """Evaluate (x - center)^T a (x - center) - bound; <= 0 means inside."""
        x = np.atleast_1d(np.asarray(x, dtype=float)) - self.center
        return float(x @ self.a @ x) - self.bound

    def is_bounded(self):
        return bool(self._eigs[0] > 0)

    def is_empty(self):
        return bool(self._eigs[0] >= 0 and self.bound < 0)

    def project(self, keep):
        from ivinfer.linalg import project_quadric

        return project_quadric(self, keep)

    def intervals(self):
        """Solution set of a one-dimensional quadric as a list of intervals.

        Case analysis on (sign of a, sign of bound), with |a| below an
        absolute tolerance treated as zero (flat quadratic, no linear term in
        centered form):

        ========  ==========  =======================================
        sign(a)   bound >= 0  result
        ========  ==========  =======================================
        a > 0     yes         [center - r, center + r], r = sqrt(b/a)
        a > 0     no          empty
        a ~ 0     yes         (-inf, inf)
        a ~ 0     no          empty
        a < 0     yes         (-inf, inf)
        a < 0     no          two rays, complement of an open interval
        ========  ==========  =======================================
        """
        if self.dim != 1:
            raise ValueError(f"interval extraction requires dimension 1, got {self.dim}.")
        a = float(self.a[0, 0])
        c = float(self.center[0])
        b = self.bound
        if abs(a) < _FLAT_ATOL:
            return [(-np.inf, np.inf)] if b >= 0 else []
        if a > 0:
            if b < 0:
                return []
            r = np.sqrt(b / a)
            return [(c - r, c + r)]
        if b >= 0:
            return [(-np.inf, np.inf)]
        r = np.sqrt(b / a)
        return [(-np.inf, c - r), (c + r, np.inf)]
