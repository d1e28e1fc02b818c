"""Closed-form Gaussian KL quantities and a Monte Carlo check of the loss split.

The split KL(p || N(0,I)) = KL(p || N(m,S)) + KL(N(m,S) || N(0,I)) is verified
through its gap form: the difference of the two left-hand KLs is the
expectation of log N(x; m, S) - log N(x; 0, I) under p, which needs only the
exact moments of p, never its density.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidCovariance, InvalidOracle
from .linalg_core import SeedLike, as_generator, check_covariance, logdet_pd


@dataclass(frozen=True, eq=False)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.cov)
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        if cov.shape != (mean.size, mean.size):
            raise InvalidCovariance(f"mean of size {mean.size} does not match covariance {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def centered(cls, cov) -> "GaussianMoments":
        cov = np.asarray(cov)
        return cls(np.zeros(cov.shape[-1]), cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def is_standardized(self, tol: float = 1e-12) -> bool:
        d = self.dim
        return bool(np.all(np.abs(self.mean) <= tol) and abs(np.trace(self.cov).real - d) <= tol * d)


def non_standardness(moments: GaussianMoments) -> float:
    """S(m, Sigma) = (|m|^2 + tr Sigma - D - log det Sigma) / 2."""
    cov = check_covariance(moments.cov)
    m = moments.mean
    value = 0.5 * (m @ m + np.trace(cov).real - moments.dim - logdet_pd(cov))
    return float(max(value, 0.0))


def non_standardness_cov(cov: np.ndarray) -> np.ndarray:
    """S of centred Gaussians for a stack of covariances; no validation."""
    cov = np.asarray(cov)
    d = cov.shape[-1]
    tr = np.trace(cov, axis1=-2, axis2=-1).real
    return 0.5 * (tr - d - logdet_pd(cov))


def kl_gaussian_to_standard(moments: GaussianMoments) -> float:
    """KL(N(m, Sigma) || N(0, I)) written as the expected log-density ratio.

    E[log N(x; m, S)] = -(D log 2pi + log det S + D) / 2 and
    E[log N(x; 0, I)] = -(D log 2pi + |m|^2 + tr S) / 2, evaluated with an
    eigendecomposition so that this path shares no code with
    ``non_standardness``.
    """
    cov = check_covariance(moments.cov)
    ev = np.linalg.eigvalsh(0.5 * (cov + cov.conj().T))
    d = moments.dim
    log2pi = np.log(2 * np.pi)
    e_log_p = -0.5 * (d * log2pi + np.sum(np.log(ev)) + d)
    e_log_q = -0.5 * (d * log2pi + float(np.sum(moments.mean**2)) + float(np.sum(ev)))
    return float(e_log_p - e_log_q)


def kl_gaussians(p: GaussianMoments, q: GaussianMoments) -> float:
    """KL(N_p || N_q) for general Gaussians."""
    sp = check_covariance(p.cov)
    sq = check_covariance(q.cov)
    diff = q.mean - p.mean
    tr = np.trace(np.linalg.solve(sq, sp)).real
    maha = float(diff @ np.linalg.solve(sq, diff).real)
    return float(0.5 * (tr + maha - p.dim + logdet_pd(sq) - logdet_pd(sp)))


def correlation_c(cov: np.ndarray) -> float:
    """C = log(det Diag(Sigma) / det Sigma) / 2, zero iff Sigma is diagonal."""
    cov = check_covariance(cov)
    diag = np.diagonal(cov).real
    return float(max(0.5 * (np.sum(np.log(diag)) - logdet_pd(cov)), 0.0))


def diagonal_non_standardness(moments: GaussianMoments) -> float:
    """KL(N(m, Diag Sigma) || N(0, I))."""
    diag = np.diagonal(moments.cov).real
    m = moments.mean
    return float(0.5 * (m @ m + np.sum(diag) - moments.dim - np.sum(np.log(diag))))


# ---------------------------------------------------------------- mixtures


@dataclass(frozen=True, eq=False)
class MixtureOracle:
    weights: np.ndarray
    components: Sequence[GaussianMoments] = field(default_factory=tuple)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        comps = tuple(self.components)
        if w.size == 0 or w.size != len(comps):
            raise InvalidOracle("need one weight per component and at least one component")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidOracle("weights must be non-negative and sum to 1")
        dims = {c.dim for c in comps}
        if len(dims) != 1:
            raise InvalidOracle("components have different dimensions")
        for c in comps:
            try:
                check_covariance(c.cov)
            except InvalidCovariance as exc:
                raise InvalidOracle(f"component covariance invalid: {exc}") from exc
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    def sample(self, n: int, rng: SeedLike = None) -> np.ndarray:
        gen = as_generator(rng)
        labels = gen.choice(len(self.weights), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                chol = np.linalg.cholesky(comp.cov)
                out[idx] = comp.mean + gen.standard_normal((idx.size, self.dim)) @ chol.T
        return out


def mixture_moments(oracle: MixtureOracle) -> GaussianMoments:
    w = oracle.weights
    means = np.stack([c.mean for c in oracle.components])
    covs = np.stack([np.asarray(c.cov, dtype=float) for c in oracle.components])
    m = w @ means
    second = np.einsum("k,kij->ij", w, covs + np.einsum("ki,kj->kij", means, means))
    cov = second - np.outer(m, m)
    return GaussianMoments(m, 0.5 * (cov + cov.T))


def _log_normal(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    z = np.linalg.solve(chol, (x - mean).T)
    d = x.shape[1]
    return -0.5 * (d * np.log(2 * np.pi) + 2 * np.sum(np.log(np.diag(chol))) + np.sum(z * z, axis=0))


def mc_kl_gap(oracle: MixtureOracle, n_samples: int, rng: SeedLike = None, chunk: int = 100_000):
    """MC estimate and standard error of KL(p||N(0,I)) - KL(p||N(m,S)).

    Samples are drawn in fixed-size chunks from consecutive child streams of
    ``rng``, so the estimate does not depend on how chunks are scheduled.
    """
    if n_samples < 10_000:
        raise ValueError("mc_kl_gap needs at least 1e4 samples")
    mom = mixture_moments(oracle)
    try:
        check_covariance(mom.cov)
    except InvalidCovariance as exc:
        raise InvalidOracle("mixture covariance is degenerate") from exc
    gen = as_generator(rng)
    streams = np.random.SeedSequence(int(gen.integers(2**63))).spawn((n_samples + chunk - 1) // chunk)
    total = 0.0
    total_sq = 0.0
    remaining = n_samples
    for ss in streams:
        n = min(chunk, remaining)
        remaining -= n
        x = oracle.sample(n, np.random.Generator(np.random.Philox(ss)))
        g = _log_normal(x, mom.mean, mom.cov) - _log_normal(x, np.zeros(oracle.dim), np.eye(oracle.dim))
        total += g.sum()
        total_sq += (g * g).sum()
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return float(mean), float(np.sqrt(var / n_samples))
