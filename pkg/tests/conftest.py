import numpy as np
import pytest

from bimax import QuadraticBmo, ReweightBmo, SolverSpec
from bimax.core import StepSchedule


@pytest.fixture(scope="session")
def quad11():
    """The seed-11 quadratic instance used across oracle tests."""
    return QuadraticBmo.random(seed=11)


@pytest.fixture(scope="session")
def quad11_data(quad11):
    return quad11.make_dataset(m1=40, m2=60, m_test=120, seed=3)


@pytest.fixture(scope="session")
def reweight11():
    return ReweightBmo(seed=11)


def constant_spec(algorithm="ssgda", T=20, eta=0.05, gamma=0.1, **kwargs) -> SolverSpec:
    return SolverSpec(algorithm=algorithm, T=T,
                      eta=StepSchedule.constant(eta),
                      gamma1=StepSchedule.constant(gamma),
                      gamma2=StepSchedule.constant(gamma), **kwargs)


def zero_forcing_quadratic(d=3, lam=0.0, sigma=0.0):
    """Unforced instance: from the zero start every gradient vanishes."""
    eye = np.eye(d)
    zero = np.zeros((d, d))
    return QuadraticBmo(A=eye, B=eye, C=zero, P=zero, Q=zero, M=zero, lam=lam,
                        sigma_upper=sigma, sigma_lower=sigma)
