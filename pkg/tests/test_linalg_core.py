import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from covflow.errors import (
    DegenerateEigenvalues,
    IllConditionedPassiveBlock,
    InvalidCovariance,
    InvalidDimension,
    InvalidSpectrum,
    NonPositiveDiagonal,
)
from covflow.linalg_core import (
    BlockSplit,
    Spectrum,
    as_generator,
    check_covariance,
    eigenvalues,
    is_rotation,
    jacobi_precondition,
    logdet_pd,
    make_rng,
    random_spd,
    rotate_covariance,
    sample_haar,
    schur_complement_active,
)

even_dims = st.sampled_from([2, 4, 6, 8, 10, 12])
seeds = st.integers(0, 2**32 - 1)


def test_make_rng_is_addressable():
    a = make_rng(5, 1, 2).standard_normal(4)
    b = make_rng(5, 1, 2).standard_normal(4)
    c = make_rng(5, 2, 1).standard_normal(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.array_equal(as_generator((5, 1, 2)).standard_normal(4), a)


def test_block_split():
    s = BlockSplit(6)
    assert (s.half, s.passive, s.active) == (3, slice(0, 3), slice(3, 6))
    for bad in (0, 1, 3, 7):
        with pytest.raises(InvalidDimension):
            BlockSplit(bad)


class TestSpectrum:
    def test_statistics(self):
        s = Spectrum([0.5, 1.5, 1.0, 1.0])
        assert s.mean == 1.0
        assert s.variance == pytest.approx(0.125)
        assert s.geometric_mean == pytest.approx(0.75 ** 0.25)
        assert s.non_standardness == pytest.approx(-0.5 * np.log(0.75))

    def test_rejects_bad_values(self):
        with pytest.raises(InvalidSpectrum):
            Spectrum([1.0, 0.0])
        with pytest.raises(InvalidSpectrum):
            Spectrum([1.0, np.nan])
        with pytest.raises(InvalidSpectrum):
            Spectrum([1.0, 2.0], normalized=True)
        with pytest.raises(DegenerateEigenvalues):
            Spectrum([1.0, 1.0], distinct=True)

    def test_values_read_only(self):
        s = Spectrum([1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 3.0

    @given(arrays(float, st.integers(2, 12), elements=st.floats(1e-3, 1e3)))
    def test_normalize(self, v):
        s = Spectrum.normalize(v)
        assert abs(s.mean - 1.0) <= 1e-12
        assert s.non_standardness >= 0
        assert s.geometric_mean <= 1 + 1e-12


class TestCheckCovariance:
    def test_accepts_spd(self, rng):
        a = random_spd(5, rng)
        assert check_covariance(a) is not None

    @pytest.mark.parametrize("bad", [
        np.ones((2, 3)),
        np.array([[1.0, 0.5], [0.0, 1.0]]),
        np.array([[1.0, 2.0], [2.0, 1.0]]),
        np.array([[1.0, np.inf], [np.inf, 1.0]]),
    ])
    def test_rejects(self, bad):
        with pytest.raises(InvalidCovariance):
            check_covariance(bad)


@given(even_dims, seeds, st.sampled_from(["orthogonal", "unitary"]))
def test_haar_samples_are_rotations(dim, seed, group):
    q = sample_haar(dim, group, make_rng(seed))
    assert is_rotation(q, 1e-10)
    if group == "orthogonal":
        assert not np.iscomplexobj(q)


def test_haar_batched_matches_shape(rng):
    q = sample_haar(4, "unitary", rng, size=7)
    assert q.shape == (7, 4, 4)
    assert is_rotation(q)


def test_haar_phase_fixed_diagonal_of_first_column_distribution():
    # Without the phase fix, QR of Gaussians gives a positive R diagonal and a
    # biased first entry of Q; with it, E[q11] = 0.
    q = sample_haar(3, "orthogonal", make_rng(1), size=40_000)
    m = q[:, 0, 0].mean()
    se = q[:, 0, 0].std() / np.sqrt(q.shape[0])
    assert abs(m) < 4 * se


@given(even_dims, seeds)
def test_rotation_preserves_trace_and_spectrum(dim, seed):
    gen = make_rng(seed)
    a = random_spd(dim, gen)
    q = sample_haar(dim, "unitary", gen)
    b = rotate_covariance(a, q)
    assert abs(np.trace(b).real - np.trace(a)) <= 1e-12 * dim * np.abs(a).max()
    assert np.allclose(eigenvalues(b), eigenvalues(a), rtol=1e-10, atol=1e-12)


def test_rotate_dimension_mismatch():
    with pytest.raises(InvalidDimension):
        rotate_covariance(np.eye(3), np.eye(4))


@given(st.integers(1, 10), seeds)
def test_logdet_matches_eigenvalues(dim, seed):
    a = random_spd(dim, make_rng(seed)) if dim > 1 else np.array([[2.5]])
    assert logdet_pd(a) == pytest.approx(np.sum(np.log(np.linalg.eigvalsh(a))), rel=1e-10, abs=1e-12)


def test_logdet_rejects_indefinite():
    with pytest.raises(InvalidCovariance):
        logdet_pd(np.diag([1.0, -1.0]))


@given(even_dims, seeds)
def test_schur_complement_is_inverse_of_precision_block(dim, seed):
    a = random_spd(dim, make_rng(seed))
    h = dim // 2
    precision = np.linalg.inv(a)
    expected = np.linalg.inv(precision[h:, h:])
    assert np.allclose(schur_complement_active(a), expected, rtol=1e-9, atol=1e-12)


def test_schur_rejects_ill_conditioned_passive_block():
    a = np.diag([1.0, 1e-15, 1.0, 1.0])
    with pytest.raises(IllConditionedPassiveBlock):
        schur_complement_active(a)


@given(st.integers(1, 8), seeds)
def test_jacobi_precondition(dim, seed):
    a = random_spd(dim, make_rng(seed)) if dim > 1 else np.array([[4.0]])
    out, scaler = jacobi_precondition(a, also_return_scaler=True)
    assert np.array_equal(np.diag(out), np.ones(dim))
    assert np.allclose(scaler @ a @ scaler, out, atol=1e-14)
    assert np.allclose(out, out.T)


def test_jacobi_rejects_nonpositive_diagonal():
    with pytest.raises(NonPositiveDiagonal):
        jacobi_precondition(np.diag([1.0, 0.0]))


def test_random_spd_condition_number(rng):
    a = random_spd(6, rng, cond=100.0)
    ev = np.linalg.eigvalsh(a)
    assert ev[-1] / ev[0] == pytest.approx(100.0, rel=1e-8)
