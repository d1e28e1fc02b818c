import numpy as np
import pytest
from hypothesis import given, strategies as st

from covflow.divergence import (
    GaussianMoments,
    MixtureOracle,
    correlation_c,
    diagonal_non_standardness,
    kl_gaussian_to_standard,
    kl_gaussians,
    mc_kl_gap,
    mixture_moments,
    non_standardness,
    non_standardness_cov,
)
from covflow.errors import InvalidCovariance, InvalidOracle
from covflow.linalg_core import make_rng, random_spd

seeds = st.integers(0, 2**32 - 1)


def test_standard_normal_is_zero():
    m = GaussianMoments.centered(np.eye(4))
    assert non_standardness(m) == 0.0
    assert m.is_standardized()


def test_scalar_closed_form():
    # 1d: KL(N(mu, v) || N(0, 1)) = (mu^2 + v - 1 - log v) / 2
    m = GaussianMoments([0.7], [[2.0]])
    assert non_standardness(m) == pytest.approx(0.5 * (0.49 + 2.0 - 1.0 - np.log(2.0)))


@given(st.integers(1, 8), seeds)
def test_two_paths_agree(dim, seed):
    gen = make_rng(seed)
    cov = random_spd(dim, gen) if dim > 1 else np.array([[1.7]])
    m = GaussianMoments(gen.normal(size=dim), cov)
    assert non_standardness(m) == pytest.approx(kl_gaussian_to_standard(m), rel=1e-10, abs=1e-12)
    assert non_standardness(m) == pytest.approx(kl_gaussians(m, GaussianMoments.centered(np.eye(dim))),
                                                rel=1e-10, abs=1e-12)


@given(st.integers(2, 8), seeds)
def test_split_into_diagonal_and_correlation(dim, seed):
    # S = S(diag) + C for centred Gaussians
    cov = random_spd(dim, make_rng(seed))
    m = GaussianMoments.centered(cov)
    assert non_standardness(m) == pytest.approx(diagonal_non_standardness(m) + correlation_c(cov),
                                                rel=1e-9, abs=1e-12)


def test_correlation_zero_iff_diagonal(rng):
    assert correlation_c(np.diag([1.0, 3.0, 0.2])) == pytest.approx(0.0, abs=1e-14)
    assert correlation_c(random_spd(3, rng)) > 0


def test_batched_matches_scalar(rng):
    covs = np.stack([random_spd(4, rng) for _ in range(5)])
    batched = non_standardness_cov(covs)
    single = [non_standardness(GaussianMoments.centered(c)) for c in covs]
    assert np.allclose(batched, single, rtol=1e-12)


def test_kl_gaussians_self_zero(rng):
    m = GaussianMoments(rng.normal(size=3), random_spd(3, rng))
    assert abs(kl_gaussians(m, m)) < 1e-12


def test_mismatched_mean_rejected():
    with pytest.raises(InvalidCovariance):
        GaussianMoments([0.0, 0.0], np.eye(3))


def test_mixture_oracle_validation():
    comp = GaussianMoments.centered(np.eye(2))
    with pytest.raises(InvalidOracle):
        MixtureOracle([0.5, 0.6], [comp, comp])
    with pytest.raises(InvalidOracle):
        MixtureOracle([1.0], [])
    with pytest.raises(InvalidOracle):
        MixtureOracle([0.5, 0.5], [comp, GaussianMoments.centered(np.eye(3))])
    with pytest.raises(InvalidOracle):
        MixtureOracle([1.0], [GaussianMoments.centered(np.diag([1.0, -1.0]))])


def test_mixture_moments_two_point():
    # equal mixture of N(+-1, s^2): mean 0, variance 1 + s^2
    s2 = 0.25
    comps = [GaussianMoments([1.0], [[s2]]), GaussianMoments([-1.0], [[s2]])]
    mom = mixture_moments(MixtureOracle([0.5, 0.5], comps))
    assert mom.mean[0] == pytest.approx(0.0)
    assert mom.cov[0, 0] == pytest.approx(1.0 + s2)


def test_mixture_sample_moments(rng):
    comps = [GaussianMoments([1.0, 0.0], np.diag([0.5, 2.0])), GaussianMoments([-1.0, 2.0], np.eye(2))]
    oracle = MixtureOracle([0.3, 0.7], comps)
    x = oracle.sample(200_000, rng)
    mom = mixture_moments(oracle)
    assert np.allclose(x.mean(axis=0), mom.mean, atol=0.02)
    assert np.allclose(np.cov(x.T), mom.cov, atol=0.03)


def test_mc_gap_needs_enough_samples():
    oracle = MixtureOracle([1.0], [GaussianMoments.centered(np.eye(2))])
    with pytest.raises(ValueError):
        mc_kl_gap(oracle, 100)


def test_mc_gap_gaussian_case():
    # for a single Gaussian the gap is S itself
    comp = GaussianMoments([0.3, -0.2], np.array([[1.5, 0.3], [0.3, 0.6]]))
    m, se = mc_kl_gap(MixtureOracle([1.0], [comp]), 200_000, make_rng(3))
    assert abs(m - non_standardness(comp)) < 4 * se


def test_mc_gap_deterministic():
    comp = GaussianMoments([0.3, -0.2], np.eye(2) * 1.3)
    oracle = MixtureOracle([1.0], [comp])
    assert mc_kl_gap(oracle, 20_000, make_rng(4), chunk=7_000) == mc_kl_gap(oracle, 20_000, make_rng(4), chunk=7_000)
