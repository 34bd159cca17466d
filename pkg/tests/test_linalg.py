import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ivinfer.exceptions import RankDeficiencyError
from ivinfer.linalg import (
    gen_eig_smallest,
    kappa_definiteness,
    oproj,
    proj,
    project_quadric,
)
from ivinfer.quadric import ALL_SPACE, Quadric


def test_proj_identity_span():
    rng = np.random.default_rng(0)
    b = rng.standard_normal((3, 2))
    np.testing.assert_allclose(proj(np.eye(3), b), b, atol=1e-12)


def test_proj_zero_span():
    b = np.arange(6.0).reshape(3, 2)
    np.testing.assert_allclose(proj(np.zeros((3, 2)), b), 0.0, atol=0)


def test_proj_reproduces_column_space():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((10, 3))
    w = rng.standard_normal((3, 2))
    np.testing.assert_allclose(proj(a, a @ w), a @ w, atol=1e-10)


def test_proj_idempotent_and_decomposition():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((20, 4))
    b = rng.standard_normal((20, 3))
    pb = proj(a, b)
    np.testing.assert_allclose(proj(a, pb), pb, atol=1e-10)
    np.testing.assert_allclose(pb + oproj(a, b), b, atol=1e-10)


def test_proj_rank_deficient_basis():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((10, 2))
    a = np.column_stack([a, a[:, 0] + a[:, 1]])
    b = rng.standard_normal(10)
    np.testing.assert_allclose(proj(a, b), proj(a[:, :2], b), atol=1e-10)


def test_oproj_annihilates_basis():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((15, 3))
    np.testing.assert_allclose(oproj(a, a), 0.0, atol=1e-10)
    b = rng.standard_normal((15, 2))
    np.testing.assert_allclose(oproj(np.zeros((15, 1)), b), b, atol=0)
    np.testing.assert_allclose(np.abs(a.T @ oproj(a, b)).max(), 0.0, atol=1e-8)


def test_proj_dimension_mismatch():
    with pytest.raises(ValueError, match="rows"):
        proj(np.ones((3, 1)), np.ones((4, 1)))


class TestGenEig:
    def test_identity_weight(self):
        res = gen_eig_smallest(np.eye(3), np.diag([3.0, 1.0, 2.0]), count=2)
        np.testing.assert_allclose(res.eigenvalues, [1.0, 2.0], atol=1e-12)

    def test_scaling(self):
        res = gen_eig_smallest(2 * np.eye(2), np.diag([4.0, 8.0]), count=1)
        np.testing.assert_allclose(res.eigenvalues, [2.0], atol=1e-12)

    def test_just_identified_counterexample(self):
        # X'M_Z X = Id_3, X'P_Z X = diag(1/4, 1, 1): smallest eigenvalue 1/4
        res = gen_eig_smallest(np.eye(3), np.diag([0.25, 1.0, 1.0]))
        np.testing.assert_allclose(res.eigenvalues, [0.25], atol=1e-12)

    def test_matches_plain_eigenvalues(self):
        rng = np.random.default_rng(5)
        b = rng.standard_normal((4, 4))
        b = b @ b.T
        res = gen_eig_smallest(np.eye(4), b, count=4)
        np.testing.assert_allclose(res.eigenvalues, np.linalg.eigvalsh(b), atol=1e-10)

    def test_congruence_invariance(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((5, 5))
        a = a @ a.T + 5 * np.eye(5)
        b = rng.standard_normal((5, 5))
        b = b @ b.T
        t = rng.standard_normal((5, 5))
        base = gen_eig_smallest(a, b, count=5).eigenvalues
        cong = gen_eig_smallest(t.T @ a @ t, t.T @ b @ t, count=5).eigenvalues
        np.testing.assert_allclose(base, cong, rtol=1e-8)

    def test_singular_weight_profiles_out(self):
        # pencil with one infinite eigenvalue; finite spectrum from the
        # Schur complement of the null block
        a = np.diag([1.0, 0.0])
        b = np.array([[2.0, 1.0], [1.0, 3.0]])
        res = gen_eig_smallest(a, b)
        np.testing.assert_allclose(res.eigenvalues, [2.0 - 1.0 / 3.0], atol=1e-12)

    def test_zero_weight_raises(self):
        with pytest.raises(RankDeficiencyError, match="no finite"):
            gen_eig_smallest(np.zeros((2, 2)), np.eye(2))

    def test_count_exceeds_finite_spectrum(self):
        a = np.diag([1.0, 0.0])
        b = np.eye(2)
        with pytest.raises(RankDeficiencyError, match="rank"):
            gen_eig_smallest(a, b, count=2)

    def test_eigenvectors(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 4))
        a = a @ a.T + 4 * np.eye(4)
        b = rng.standard_normal((4, 4))
        b = b @ b.T
        res = gen_eig_smallest(a, b, count=2, vectors=True)
        for i in range(2):
            v = res.eigenvectors[:, i]
            np.testing.assert_allclose(b @ v, res.eigenvalues[i] * (a @ v), atol=1e-8)


class TestKappaDefiniteness:
    def setup_method(self):
        rng = np.random.default_rng(8)
        self.z = rng.standard_normal((60, 4))
        self.x = self.z @ rng.standard_normal((4, 2)) + rng.standard_normal((60, 2))

    def _lambda1(self):
        x_orth = oproj(self.z, self.x)
        return gen_eig_smallest(x_orth.T @ x_orth, self.x.T @ self.x).eigenvalues[0]

    def test_zero_kappa(self):
        assert kappa_definiteness(self.x, self.z, 0.0) == "positive_definite"

    def test_boundary(self):
        assert kappa_definiteness(self.x, self.z, self._lambda1()) == "semidefinite_singular"

    def test_indefinite_cross_checked(self):
        kappa = self._lambda1() + 0.1
        assert kappa_definiteness(self.x, self.z, kappa) == "indefinite"
        pz = proj(self.z, self.x)
        assembled = self.x.T @ (kappa * pz + (1 - kappa) * self.x)
        assert np.linalg.eigvalsh((assembled + assembled.T) / 2)[0] < 0


class TestProjectQuadric:
    def test_keep_all(self):
        rng = np.random.default_rng(9)
        a = rng.standard_normal((3, 3))
        q = Quadric(a=a @ a.T + np.eye(3), center=rng.standard_normal(3), bound=2.0)
        same = project_quadric(q, [0, 1, 2])
        np.testing.assert_allclose(same.a, q.a)
        np.testing.assert_allclose(same.center, q.center)
        assert same.bound == q.bound

    def test_negative_dropped_block(self):
        q = Quadric(a=np.diag([1.0, -1.0]), center=np.zeros(2), bound=1.0)
        assert project_quadric(q, [0]) is ALL_SPACE

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_grid_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((3, 3))
        a = a @ a.T + 0.5 * np.eye(3)
        center = rng.standard_normal(3)
        q = Quadric(a=a, center=center, bound=1.5)
        projected = project_quadric(q, [0])
        lo, hi = projected.intervals()[0]
        # brute-force minimization of the quadratic over the dropped coords
        grid = np.linspace(-6, 6, 201)
        for endpoint in (lo, hi):
            vals = [
                q(np.array([endpoint, g1, g2])) for g1 in grid for g2 in grid
            ]
            assert min(vals) < 1e-4
        inner = (lo + hi) / 2
        vals = [q(np.array([inner, g1, g2])) for g1 in grid for g2 in grid]
        assert min(vals) < 0
        outer = hi + 0.5 * (hi - lo)
        vals = [q(np.array([outer, g1, g2])) for g1 in grid for g2 in grid]
        assert min(vals) > 0


class TestQuadricIntervals:
    def test_ellipse(self):
        q = Quadric(a=np.array([[2.0]]), center=np.array([1.0]), bound=8.0)
        np.testing.assert_allclose(q.intervals(), [(-1.0, 3.0)])

    def test_empty(self):
        q = Quadric(a=np.array([[2.0]]), center=np.array([0.0]), bound=-1.0)
        assert q.intervals() == []

    def test_complement(self):
        q = Quadric(a=np.array([[-1.0]]), center=np.array([0.0]), bound=-4.0)
        np.testing.assert_allclose(q.intervals(), [(-np.inf, -2.0), (2.0, np.inf)])

    def test_all_line(self):
        q = Quadric(a=np.array([[-1.0]]), center=np.array([0.0]), bound=1.0)
        assert q.intervals() == [(-np.inf, np.inf)]

    def test_flat(self):
        assert Quadric(a=np.array([[0.0]]), center=np.array([0.0]), bound=1.0).intervals() == [
            (-np.inf, np.inf)
        ]
        assert Quadric(a=np.array([[0.0]]), center=np.array([0.0]), bound=-1.0).intervals() == []

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            Quadric(a=np.array([[1.0, 1.0], [0.0, 1.0]]), center=np.zeros(2), bound=1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_projection_identity_property(seed):
    rng = np.random.default_rng(seed)
    n, p = 12, 3
    a = rng.standard_normal((n, p))
    b = rng.standard_normal(n)
    pb = proj(a, b)
    mb = oproj(a, b)
    np.testing.assert_allclose(pb + mb, b, atol=1e-9)
    np.testing.assert_allclose(pb @ mb, 0.0, atol=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_pencil_invariant_to_instrument_basis_change(seed):
    rng = np.random.default_rng(seed)
    n, k = 40, 4
    z = rng.standard_normal((n, k))
    t = rng.standard_normal((k, k)) + 3 * np.eye(k)
    x = rng.standard_normal((n, 2))
    from ivinfer._reduce import pencil_eigs

    base = pencil_eigs([x], z, count=2)
    rotated = pencil_eigs([x], z @ t, count=2)
    np.testing.assert_allclose(base, rotated, rtol=1e-8, atol=1e-10)
