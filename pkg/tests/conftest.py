import pathlib

import numpy as np
import pytest

from ivinfer.data import (
    CARD_COLSPEC,
    absorb_exogenous,
    build_card_dataset,
    read_fixed_width,
)

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def card_table():
    return read_fixed_width(DATA / "nls.dat", CARD_COLSPEC)


@pytest.fixture(scope="session")
def card_full(card_table):
    """All three endogenous covariates in X, exogenous controls explicit."""
    return build_card_dataset(card_table)


@pytest.fixture(scope="session")
def card_absorbed(card_full):
    return absorb_exogenous(card_full)


@pytest.fixture(scope="session")
def card_split(card_table):
    """Schooling of interest, experience terms as endogenous nuisance."""
    return build_card_dataset(card_table, x=["ed76"], w=["exp76", "exp762"])


@pytest.fixture(scope="session")
def card_split_absorbed(card_split):
    return absorb_exogenous(card_split)


@pytest.fixture(scope="session")
def card_race(card_table):
    """Race of interest (exogenous), schooling and experience as endogenous
    nuisance."""
    return build_card_dataset(card_table, x=[], w=["ed76", "exp76", "exp762"], d=["black"])


def simulate_iv(n=500, k=3, m_x=1, m_w=0, seed=0, pi_scale=1.0, rho=0.5,
                beta=None, gamma=None):
    """Simple Gaussian instrumental variables data generator."""
    rng = np.random.default_rng(seed)
    m = m_x + m_w
    z = rng.standard_normal((n, k))
    pi = pi_scale * rng.standard_normal((k, m))
    cov = np.full((m + 1, m + 1), rho) + (1 - rho) * np.eye(m + 1)
    noise = rng.multivariate_normal(np.zeros(m + 1), cov, size=n)
    eps, v = noise[:, 0], noise[:, 1:]
    s = z @ pi + v
    beta = np.ones(m_x) if beta is None else np.asarray(beta, dtype=float)
    gamma = np.ones(m_w) if gamma is None else np.asarray(gamma, dtype=float)
    y = s[:, :m_x] @ beta + s[:, m_x:] @ gamma + eps
    return z, s[:, :m_x], s[:, m_x:], y
