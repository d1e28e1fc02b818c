"""Dense positive-definite matrix algebra and Haar sampling.

All matrix functions accept either a single ``(D, D)`` array or a stack of
shape ``(..., D, D)``; stacks are processed in one vectorised pass, which is
what makes the Monte Carlo checks cheap.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import (
    DegenerateEigenvalues,
    IllConditionedPassiveBlock,
    InvalidCovariance,
    InvalidDimension,
    InvalidSpectrum,
    NonPositiveDiagonal,
)

GROUPS = ("orthogonal", "unitary")

SYMMETRY_RTOL = 1e-10
PD_RTOL = 1e-12
PASSIVE_COND_MAX = 1e14

SeedLike = Union[int, Sequence[int], np.random.Generator, None]


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-based generator addressed by ``(seed, *keys)``.

    Streams for different key tuples are independent, so a single trajectory
    can be replayed from e.g. ``(seed, layer, rotation)`` without generating
    anything else.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng: SeedLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    if isinstance(rng, (int, np.integer)):
        return make_rng(int(rng))
    seed, *keys = rng
    return make_rng(seed, *keys)


def conj_t(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + conj_t(a))


@dataclass(frozen=True)
class BlockSplit:
    """Half/half passive-active split of ``range(dim)``."""

    dim: int

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2:
            raise InvalidDimension(f"coupling split needs an even dimension >= 2, got {self.dim}")

    @property
    def half(self) -> int:
        return self.dim // 2

    @property
    def passive(self) -> slice:
        return slice(0, self.half)

    @property
    def active(self) -> slice:
        return slice(self.half, self.dim)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Positive eigenvalues of a covariance.

    ``normalized`` and ``distinct`` are checked flags: constructing with
    ``normalized=True`` asserts mean 1 (trace equals dimension) and
    ``distinct=True`` asserts a strictly positive minimal gap.
    """

    values: np.ndarray
    normalized: bool = False
    distinct: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size == 0 or not np.all(np.isfinite(v)):
            raise InvalidSpectrum("spectrum must be a non-empty finite vector")
        if np.any(v <= 0):
            raise InvalidSpectrum("all eigenvalues must be strictly positive")
        if self.normalized and abs(v.mean() - 1.0) > 1e-12:
            raise InvalidSpectrum(f"normalized spectrum must have mean 1, got {v.mean()!r}")
        if self.distinct and v.size > 1 and self.min_gap_of(v) <= 0:
            raise DegenerateEigenvalues("spectrum has repeated eigenvalues")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @staticmethod
    def min_gap_of(v: np.ndarray) -> float:
        if v.size < 2:
            return np.inf
        return float(np.min(np.diff(np.sort(v))))

    @classmethod
    def normalize(cls, values, distinct: bool = False) -> "Spectrum":
        v = np.asarray(values, dtype=float)
        return cls(v / v.mean(), normalized=True, distinct=distinct)

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def min_gap(self) -> float:
        return self.min_gap_of(self.values)

    @property
    def is_distinct(self) -> bool:
        return self.min_gap > 0

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def variance(self) -> float:
        # population variance: tr(S^2)/D - (tr S / D)^2
        return float(np.mean((self.values - self.values.mean()) ** 2))

    @property
    def lambda_max(self) -> float:
        return float(self.values.max())

    @property
    def lambda_min(self) -> float:
        return float(self.values.min())

    @property
    def geometric_mean(self) -> float:
        return float(np.exp(np.mean(np.log(self.values))))

    @property
    def non_standardness(self) -> float:
        """KL of N(0, diag(values)) to N(0, I); accurate near the identity."""
        d = self.values - 1.0
        return float(0.5 * np.sum(d - np.log1p(d)))

    def as_matrix(self) -> np.ndarray:
        return np.diag(self.values)

    def __len__(self):
        return self.dim

    def __repr__(self):
        return f"Spectrum(dim={self.dim}, values={self.values.tolist()!r})"


# ---------------------------------------------------------------- validation


def check_covariance(cov: np.ndarray) -> np.ndarray:
    """Return ``cov`` as an array after checking symmetry and definiteness.

    Raises InvalidCovariance for non-square, non-Hermitian or non positive
    definite input (smallest eigenvalue <= 1e-12 * largest).
    """
    a = np.asarray(cov)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise InvalidCovariance(f"covariance must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidCovariance("covariance has non-finite entries")
    scale = np.max(np.abs(a), axis=(-1, -2))
    asym = np.max(np.abs(a - conj_t(a)), axis=(-1, -2))
    if np.any(asym > SYMMETRY_RTOL * scale):
        raise InvalidCovariance("covariance is not symmetric/Hermitian")
    ev = np.linalg.eigvalsh(symmetrize(a))
    if np.any(ev[..., 0] <= PD_RTOL * ev[..., -1]):
        raise InvalidCovariance("covariance is not positive definite")
    return a


def is_rotation(q: np.ndarray, tol: float = 1e-10) -> bool:
    q = np.asarray(q)
    eye = np.eye(q.shape[-1])
    unit = np.linalg.norm(q @ conj_t(q) - eye, axis=(-1, -2))
    return bool(np.all(unit < tol) and np.all(np.abs(np.abs(np.linalg.det(q)) - 1) < tol))


def eigenvalues(cov: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric/Hermitian matrix (stack)."""
    return np.linalg.eigvalsh(symmetrize(np.asarray(cov)))


def logdet_pd(cov: np.ndarray) -> np.ndarray:
    """log det of a positive-definite matrix (stack) via Cholesky."""
    try:
        chol = np.linalg.cholesky(symmetrize(np.asarray(cov)))
    except np.linalg.LinAlgError as exc:
        raise InvalidCovariance("covariance is not positive definite") from exc
    return 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1).real), axis=-1)


# ------------------------------------------------------------------- Haar


def sample_haar(dim: int, group: str = "orthogonal", rng: SeedLike = None, size: int | None = None) -> np.ndarray:
    """Haar-distributed orthogonal or unitary matrix (or a stack of ``size``).

    QR of an i.i.d. (complex) Gaussian matrix, with every column of Q
    multiplied by the phase of the matching diagonal entry of R. Without that
    correction the result is not Haar distributed.
    """
    if dim < 2:
        raise InvalidDimension(f"Haar sampling needs dim >= 2, got {dim}")
    if group not in GROUPS:
        raise ValueError(f"unknown group {group!r}, expected one of {GROUPS}")
    gen = as_generator(rng)
    shape = (dim, dim) if size is None else (size, dim, dim)
    z = gen.standard_normal(shape)
    if group == "unitary":
        z = (z + 1j * gen.standard_normal(shape)) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    phase = d / np.abs(d)
    return q * phase[..., None, :]


# ------------------------------------------------------------- structure


def rotate_covariance(cov: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Q Sigma Q^* (conjugate transpose for complex Q), symmetrised."""
    cov = np.asarray(cov)
    q = np.asarray(q)
    if cov.shape[-1] != q.shape[-1] or q.shape[-1] != q.shape[-2]:
        raise InvalidDimension(f"rotation {q.shape} does not match covariance {cov.shape}")
    return symmetrize(q @ cov @ conj_t(q))


def _split(cov: np.ndarray, split: BlockSplit | None):
    cov = np.asarray(cov)
    if split is None:
        split = BlockSplit(cov.shape[-1])
    if cov.shape[-1] != split.dim:
        raise InvalidDimension(f"split for dim {split.dim} applied to shape {cov.shape}")
    p, a = split.passive, split.active
    return cov[..., p, p], cov[..., a, p], cov[..., a, a]


def passive_cholesky(pp: np.ndarray) -> np.ndarray:
    ev = np.linalg.eigvalsh(pp)
    if np.any(ev[..., 0] <= 0):
        raise InvalidCovariance("passive block is not positive definite")
    if np.any(ev[..., -1] > PASSIVE_COND_MAX * ev[..., 0]):
        raise IllConditionedPassiveBlock("passive block condition number exceeds 1e14")
    return np.linalg.cholesky(pp)


def schur_complement_active(cov: np.ndarray, split: BlockSplit | None = None) -> np.ndarray:
    """Sigma_aa - Sigma_ap Sigma_pp^{-1} Sigma_pa for the half/half split.

    Uses a Cholesky solve, never an explicit inverse, and returns a
    symmetrised result.
    """
    pp, ap, aa = _split(cov, split)
    chol = passive_cholesky(pp)
    y = np.linalg.solve(chol, conj_t(ap))  # L^{-1} Sigma_pa
    return symmetrize(aa - conj_t(y) @ y)


def jacobi_precondition(mat: np.ndarray, also_return_scaler: bool = False):
    """Rescale a matrix to unit diagonal: A_ij / sqrt(A_ii A_jj).

    Returns the scaled matrix, and with ``also_return_scaler`` also the
    diagonal matrix Diag(A)^{-1/2} such that ``scaled = S A S``.
    """
    a = np.asarray(mat)
    diag = np.diagonal(a, axis1=-2, axis2=-1).real
    if np.any(diag <= 0):
        raise NonPositiveDiagonal("diagonal preconditioning needs a positive diagonal")
    inv_sqrt = 1.0 / np.sqrt(diag)
    out = a * inv_sqrt[..., :, None] * inv_sqrt[..., None, :]
    idx = np.arange(a.shape[-1])
    out[..., idx, idx] = 1.0
    if also_return_scaler:
        scaler = np.zeros(a.shape, dtype=float)
        scaler[..., idx, idx] = inv_sqrt
        return out, scaler
    return out


def random_spd(dim: int, rng: SeedLike = None, cond: float | None = None) -> np.ndarray:
    """Random real SPD matrix; with ``cond`` the spectrum spans [1, cond]."""
    gen = as_generator(rng)
    q = sample_haar(dim, "orthogonal", gen) if dim >= 2 else np.eye(1)
    if cond is None:
        ev = gen.uniform(0.1, 3.0, dim)
    else:
        ev = np.geomspace(1.0, cond, dim)
    return symmetrize((q * ev) @ q.T)
