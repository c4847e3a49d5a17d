from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pame.linalg import jacobi_eigenvalues, largest_eigenvalue_psd, power_iteration
from pame.rng import Purpose, stream


def random_symmetric(size: int, seed: int) -> np.ndarray:
    a = stream(seed, Purpose.ORACLE).standard_normal((size, size))
    return (a + a.T) / 2


@given(st.integers(1, 12), st.integers(0, 10_000))
def test_jacobi_matches_eigvalsh(size, seed):
    a = random_symmetric(size, seed)
    expected = np.linalg.eigvalsh(a)
    got = jacobi_eigenvalues(a)
    assert np.allclose(got, expected, atol=1e-11 * max(1.0, np.abs(expected).max()))


@given(st.integers(2, 20), st.integers(0, 10_000))
def test_power_iteration_on_psd(size, seed):
    a = random_symmetric(size, seed)
    psd = a @ a.T
    expected = np.linalg.eigvalsh(psd)[-1]
    assert largest_eigenvalue_psd(psd) == pytest.approx(expected, rel=1e-8)


def test_power_iteration_reports_non_convergence():
    # Two equal-magnitude dominant eigenvalues of opposite sign never settle.
    flip = np.diag([1.0, -1.0])
    _, converged = power_iteration(lambda x: flip @ x, 2, max_iter=50)
    assert not converged


def test_power_iteration_zero_operator():
    theta, converged = power_iteration(lambda x: 0 * x, 3)
    assert theta == 0.0 and converged


def test_jacobi_diagonal_input():
    assert jacobi_eigenvalues(np.diag([3.0, -1.0, 2.0])).tolist() == [-1.0, 2.0, 3.0]
    assert jacobi_eigenvalues(np.array([[4.0]])).tolist() == [4.0]
