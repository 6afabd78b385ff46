import mpmath
import numpy as np
import pytest

from hcthmm.ctmc import (
    PiecewiseConstantPath,
    sample_path,
    stationary_distribution,
    transition_matrix,
    transition_matrix_stack,
)
from hcthmm.errors import RateMatrixError, ReducibleChainError


def taylor_expm_oracle(A, terms=50, dps=50):
    """Truncated Taylor series in high-precision arithmetic."""
    with mpmath.workdps(dps):
        n = A.shape[0]
        X = mpmath.matrix(A.tolist())
        term = mpmath.eye(n)
        acc = mpmath.eye(n)
        for k in range(1, terms + 1):
            term = term * X / k
            acc += term
        return np.array([[float(acc[i, j]) for j in range(n)] for i in range(n)])


def random_generator(rng, M, max_row_rate=0.4):
    """Random generator with row exit rates below max_row_rate."""
    Q = rng.uniform(0.01, max_row_rate / (M - 1), size=(M, M))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


class TestTransitionMatrix:
    def test_zero_generator_gives_identity(self):
        for dt in [0.1, 1.0, 100.0]:
            np.testing.assert_allclose(
                transition_matrix(np.zeros((3, 3)), dt), np.eye(3), atol=1e-15
            )

    def test_two_state_closed_form(self):
        a = b = 0.1
        P = transition_matrix(np.array([[-a, a], [b, -b]]), 1.0)
        expect = 0.5 + 0.5 * np.exp(-0.2)
        assert P[0, 0] == pytest.approx(expect, abs=1e-13)

    def test_two_state_closed_form_random(self, rng):
        for _ in range(20):
            a, b = rng.uniform(0.01, 2.0, 2)
            dt = rng.uniform(0.1, 5.0)
            P = transition_matrix(np.array([[-a, a], [b, -b]]), dt)
            e = np.exp(-(a + b) * dt)
            expect = np.array(
                [[b + a * e, a - a * e], [b - b * e, a + b * e]]
            ) / (a + b)
            np.testing.assert_allclose(P, expect, atol=1e-12)

    def test_matches_taylor_oracle(self, rng):
        for _ in range(25):
            M = int(rng.integers(2, 5))
            Q = random_generator(rng, M)
            dt = rng.uniform(0.05, 10.0)
            P = transition_matrix(Q, dt)
            np.testing.assert_allclose(P, taylor_expm_oracle(dt * Q), atol=1e-12)

    def test_rows_stochastic(self, rng):
        for _ in range(20):
            Q = random_generator(rng, 3, max_row_rate=3.0)
            P = transition_matrix(Q, rng.uniform(0.01, 50.0))
            np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-10)
            assert np.all(P >= 0.0) and np.all(P <= 1.0)

    def test_chapman_kolmogorov(self, rng):
        for _ in range(15):
            Q = random_generator(rng, 3, max_row_rate=1.0)
            s, t = rng.uniform(0.1, 5.0, 2)
            left = transition_matrix(Q, s + t)
            right = transition_matrix(Q, s) @ transition_matrix(Q, t)
            np.testing.assert_allclose(left, right, atol=1e-9)

    def test_small_dt_near_identity(self, rng):
        Q = random_generator(rng, 4, max_row_rate=1.0)
        P = transition_matrix(Q, 1e-8)
        assert np.abs(P - np.eye(4)).max() <= 1e-6

    def test_rejects_bad_dt(self):
        Q = np.array([[-1.0, 1.0], [1.0, -1.0]])
        for dt in [0.0, -1.0, np.nan, np.inf]:
            with pytest.raises(ValueError):
                transition_matrix(Q, dt)

    def test_rejects_bad_generator(self):
        with pytest.raises(RateMatrixError):
            transition_matrix(np.array([[-1.0, 2.0], [1.0, -1.0]]), 1.0)
        with pytest.raises(RateMatrixError):
            transition_matrix(np.array([[0.5, -0.5], [1.0, -1.0]]), 1.0)

    def test_stack_matches_single(self, rng):
        Q = random_generator(rng, 3)
        dts = np.array([0.5, 1.0, 7.0])
        stack = transition_matrix_stack(Q, dts)
        for d, P in zip(dts, stack):
            np.testing.assert_allclose(P, transition_matrix(Q, d), atol=1e-14)


class TestStationaryDistribution:
    def test_symmetric_two_state(self):
        pi = stationary_distribution(np.array([[-0.3, 0.3], [0.3, -0.3]]))
        np.testing.assert_allclose(pi, [0.5, 0.5], atol=1e-12)

    def test_asymmetric_two_state(self):
        pi = stationary_distribution(np.array([[-1.0, 1.0], [3.0, -3.0]]))
        np.testing.assert_allclose(pi, [0.75, 0.25], atol=1e-12)

    def test_fixed_point_of_transition_matrix(self, rng):
        for _ in range(10):
            Q = random_generator(rng, 3, max_row_rate=1.0)
            pi = stationary_distribution(Q)
            for dt in [0.1, 1.0, 10.0]:
                np.testing.assert_allclose(
                    pi @ transition_matrix(Q, dt), pi, atol=1e-9
                )

    def test_reducible_detected(self):
        Q = np.zeros((2, 2))
        with pytest.raises(ReducibleChainError):
            stationary_distribution(Q)

    def test_transient_state_detected(self):
        # state 1 leaks into absorbing state 2
        Q = np.array([[-1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(ReducibleChainError):
            stationary_distribution(Q)

    def test_monte_carlo_occupancy(self, rng):
        Q = random_generator(rng, 3, max_row_rate=1.5)
        pi = stationary_distribution(Q)
        path = sample_path(Q, pi, horizon=200_000.0, rng=rng)
        occ = path.occupancy()
        np.testing.assert_allclose(occ, pi, atol=0.02)


class TestSamplePath:
    def test_zero_generator_constant_path(self, rng):
        path = sample_path(np.zeros((3, 3)), [0.2, 0.5, 0.3], 50.0, rng)
        assert len(path.states) == 1
        assert path.states_at([0.0, 25.0, 49.9]).tolist() == [path.states[0]] * 3

    def test_holding_time_mean(self, rng):
        a = 0.25
        Q = np.array([[-a, a], [a, -a]])
        holds = []
        for _ in range(400):
            path = sample_path(Q, [1.0, 0.0], horizon=2000.0, rng=rng)
            holds.extend(np.diff(path.jump_times))
        holds = np.asarray(holds)
        se = holds.std() / np.sqrt(len(holds))
        assert abs(holds.mean() - 1 / a) <= 3 * se + 1e-9

    def test_states_at_lookup(self):
        path = PiecewiseConstantPath(
            jump_times=np.array([0.0, 2.0, 5.0]), states=np.array([1, 0, 2]), horizon=10.0
        )
        np.testing.assert_array_equal(
            path.states_at([0.0, 1.9, 2.0, 4.9, 5.0, 9.9]), [1, 1, 0, 0, 2, 2]
        )

    def test_occupancy_matches_stationary(self, rng):
        Q = np.array([[-0.2, 0.15, 0.05], [0.1, -0.2, 0.1], [0.05, 0.15, -0.2]])
        pi = stationary_distribution(Q)
        path = sample_path(Q, [1.0, 0.0, 0.0], horizon=300_000.0, rng=rng)
        np.testing.assert_allclose(path.occupancy(), pi, atol=0.02)
