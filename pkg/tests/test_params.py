import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hcthmm.errors import BlockShapeError, NotInvertibleError
from hcthmm.params import (
    NaturalParams,
    SubjectSeries,
    ThetaSubject,
    block_slices,
    from_natural,
    offdiagonal_pairs,
    permute_theta,
    softmax_with_reference,
    theta_dim,
    to_natural,
)


def random_theta(rng, M, q, scale=1.0):
    return ThetaSubject(
        a=rng.normal(0, scale, M - 1),
        c=rng.normal(-2, scale, M * (M - 1)),
        b0=rng.normal(1, scale, M + 1),
        b1=rng.normal(0, scale, q * (M + 1)),
    )


class TestSubjectSeries:
    def test_valid(self):
        s = SubjectSeries("a", 1, [0.0, 1.0, 3.0], [0, 2, 5], np.zeros((3, 1)))
        assert s.n_obs == 3 and s.q == 1

    def test_rejects_nonincreasing_times(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            SubjectSeries("a", 1, [0.0, 1.0, 1.0], [0, 1, 2], np.zeros((3, 1)))

    def test_rejects_negative_counts(self):
        with pytest.raises(ValueError, match="negative"):
            SubjectSeries("a", 1, [0.0, 1.0], [0, -1], np.zeros((2, 1)))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError, match="lengths"):
            SubjectSeries("a", 1, [0.0, 1.0], [0, 1, 2], np.zeros((3, 1)))

    def test_arrays_frozen(self):
        s = SubjectSeries("a", 1, [0.0, 1.0], [0, 1], np.zeros((2, 1)))
        with pytest.raises(ValueError):
            s.counts[0] = 7


class TestThetaDimensions:
    def test_total_dimension_formula(self):
        for M, q in [(2, 1), (3, 1), (3, 2), (6, 1)]:
            rng = np.random.default_rng(0)
            t = random_theta(rng, M, q)
            assert t.dim == (M + 1) * (M + q) == theta_dim(M, q)

    def test_vector_round_trip(self):
        rng = np.random.default_rng(1)
        t = random_theta(rng, 3, 2)
        back = ThetaSubject.from_vector(t.to_vector(), 3, 2)
        assert np.array_equal(back.to_vector(), t.to_vector())

    def test_mismatch_names_block(self):
        t = random_theta(np.random.default_rng(2), 3, 1)
        with pytest.raises(BlockShapeError, match="'a'"):
            t.check_dims(4, 1)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            ThetaSubject(a=[np.nan], c=[0.0, 0.0], b0=[0.0, 0.0, 0.0], b1=[0.0, 0.0, 0.0])


class TestToNatural:
    def test_zero_logits_give_uniform_pi(self):
        t = ThetaSubject(a=np.zeros(2), c=np.zeros(6), b0=np.zeros(4), b1=np.zeros(4))
        nat = to_natural(t, 3, 1)
        np.testing.assert_allclose(nat.pi, np.full(3, 1 / 3), atol=1e-15)

    def test_constant_log_rates(self):
        t = ThetaSubject(
            a=np.zeros(2), c=np.full(6, np.log(0.1)), b0=np.zeros(4), b1=np.zeros(4)
        )
        nat = to_natural(t, 3, 1)
        off = nat.Q[~np.eye(3, dtype=bool)]
        np.testing.assert_allclose(off, 0.1, atol=1e-15)
        np.testing.assert_allclose(np.diag(nat.Q), -0.2, atol=1e-15)

    def test_rate_layout_row_major(self):
        c = np.log(np.arange(1, 7, dtype=float))
        t = ThetaSubject(a=np.zeros(2), c=c, b0=np.zeros(4), b1=np.zeros(4))
        Q = to_natural(t, 3, 1).Q
        expect = {(0, 1): 1, (0, 2): 2, (1, 0): 3, (1, 2): 4, (2, 0): 5, (2, 1): 6}
        for (m, l), v in expect.items():
            assert Q[m, l] == pytest.approx(v, abs=1e-12)

    def test_generator_rows_sum_to_zero(self, rng):
        for _ in range(20):
            t = random_theta(rng, 3, 1)
            nat = to_natural(t, 3, 1)
            np.testing.assert_allclose(nat.Q.sum(axis=1), 0.0, atol=1e-12)
            assert abs(nat.pi.sum() - 1.0) < 1e-12

    def test_dimension_error(self):
        t = random_theta(np.random.default_rng(0), 3, 1)
        with pytest.raises(BlockShapeError):
            to_natural(t, 2, 1)


class TestFromNatural:
    def test_uniform_pi_gives_zero_logits(self):
        nat = NaturalParams(
            pi=np.full(3, 1 / 3),
            Q=np.array([[-0.2, 0.1, 0.1], [0.1, -0.2, 0.1], [0.1, 0.1, -0.2]]),
            delta_coeffs=[0.0, 0.0],
            lambda_coeffs=np.ones((3, 2)),
        )
        t = from_natural(nat)
        np.testing.assert_allclose(t.a, 0.0, atol=1e-15)
        np.testing.assert_allclose(t.c, np.log(0.1), atol=1e-15)

    def test_round_trip_100_random(self, rng):
        for _ in range(100):
            M = int(rng.integers(2, 5))
            q = int(rng.integers(1, 3))
            t = random_theta(rng, M, q)
            back = from_natural(to_natural(t, M, q))
            np.testing.assert_allclose(back.to_vector(), t.to_vector(), atol=1e-12)

    def test_boundary_rejected(self):
        nat = NaturalParams(
            pi=[0.5, 0.5],
            Q=np.array([[0.0, 0.0], [1.0, -1.0]]),
            delta_coeffs=[0.0],
            lambda_coeffs=np.ones((2, 1)),
        )
        with pytest.raises(NotInvertibleError):
            from_natural(nat)


class TestNaturalParamsInvariants:
    def test_rejects_bad_simplex(self):
        with pytest.raises(ValueError):
            NaturalParams(
                pi=[0.6, 0.6],
                Q=np.array([[-1.0, 1.0], [1.0, -1.0]]),
                delta_coeffs=[0.0],
                lambda_coeffs=np.ones((2, 1)),
            )

    def test_rejects_negative_rate(self):
        with pytest.raises(ValueError):
            NaturalParams(
                pi=[0.5, 0.5],
                Q=np.array([[1.0, -1.0], [1.0, -1.0]]),
                delta_coeffs=[0.0],
                lambda_coeffs=np.ones((2, 1)),
            )


@settings(max_examples=60, deadline=None)
@given(
    data=st.data(),
    M=st.integers(min_value=2, max_value=5),
    q=st.integers(min_value=1, max_value=2),
)
def test_transform_round_trip_property(data, M, q):
    dims = theta_dim(M, q)
    vec = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-8, max_value=8, allow_nan=False),
                min_size=dims,
                max_size=dims,
            )
        )
    )
    t = ThetaSubject.from_vector(vec, M, q)
    nat = to_natural(t, M, q)
    assert abs(nat.pi.sum() - 1.0) < 1e-12
    assert np.all(np.abs(nat.Q.sum(axis=1)) < 1e-12)
    back = from_natural(nat)
    np.testing.assert_allclose(back.to_vector(), vec, atol=1e-10)


def test_permute_theta_keeps_dims(rng):
    t = random_theta(rng, 3, 1)
    perm = [2, 0, 1]
    p = permute_theta(t, perm)
    assert p.dim == t.dim
    nat, natp = to_natural(t, 3, 1), to_natural(p, 3, 1)
    np.testing.assert_allclose(natp.pi, nat.pi[perm], atol=1e-12)
    np.testing.assert_allclose(natp.Q, nat.Q[np.ix_(perm, perm)], atol=1e-12)


def test_offdiagonal_pairs_order():
    assert offdiagonal_pairs(3) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]


def test_block_slices_partition():
    sl = block_slices(3, 2)
    assert sl["a"] == slice(0, 2)
    assert sl["c"] == slice(2, 8)
    assert sl["b0"] == slice(8, 12)
    assert sl["b1"] == slice(12, 20)
