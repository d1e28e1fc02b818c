"""Optimal affine coupling block acting on Gaussian moments.

With data rotated to Sigma_0 and split into passive/active halves, the best
affine coupling plus ActNorm maps the moments to mean zero and

    Sigma_1 = blockdiag(M(Sigma_pp), M(Sigma_aa - Sigma_ap Sigma_pp^-1 Sigma_pa))

where M rescales to unit diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSchurComplement, InvalidCovariance
from .linalg_core import (
    BlockSplit,
    check_covariance,
    jacobi_precondition,
    passive_cholesky,
    rotate_covariance,
    schur_complement_active,
    symmetrize,
)

SCHUR_DIAG_MIN = 1e-14


@dataclass(frozen=True, eq=False)
class CouplingParams:
    """Affine coupling x -> A x + b with A = [[R, 0], [T, S]].

    ``r`` scales the passive half (ActNorm), ``s`` the active half, ``t_matrix``
    is the linear dependence of the active output on the passive input.
    """

    r: np.ndarray
    s: np.ndarray
    t_matrix: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.r) <= 0) or np.any(np.asarray(self.s) <= 0):
            raise ValueError("coupling scales must be strictly positive")

    @property
    def dim(self) -> int:
        return 2 * len(self.r)

    def matrix(self) -> np.ndarray:
        h = len(self.r)
        a = np.zeros((2 * h, 2 * h))
        a[:h, :h] = np.diag(self.r)
        a[h:, :h] = self.t_matrix
        a[h:, h:] = np.diag(self.s)
        return a

    def log_det(self) -> float:
        return float(np.sum(np.log(self.r)) + np.sum(np.log(self.s)))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return x @ self.matrix().T + self.b

    def push_forward(self, mean: np.ndarray, cov: np.ndarray):
        a = self.matrix()
        return a @ mean + self.b, a @ cov @ a.T


def optimal_coupling_params(cov0: np.ndarray, mean0: np.ndarray | None = None,
                            split: BlockSplit | None = None) -> CouplingParams:
    """Stationary point of S over (r, s, T, b) for real input moments.

    R = Diag(Sigma_pp)^{-1/2}, S = Diag(Schur)^{-1/2}, T = -S Sigma_ap Sigma_pp^{-1},
    b = -A m_0. The positive root is taken for both scales.
    """
    cov0 = check_covariance(cov0)
    if np.iscomplexobj(cov0):
        raise InvalidCovariance("coupling parameters are only defined for real covariances")
    dim = cov0.shape[-1]
    split = split or BlockSplit(dim)
    mean0 = np.zeros(dim) if mean0 is None else np.asarray(mean0, dtype=float)
    p, a = split.passive, split.active
    pp, ap = cov0[p, p], cov0[a, p]
    schur = schur_complement_active(cov0, split)
    r = 1.0 / np.sqrt(np.diag(pp))
    s = 1.0 / np.sqrt(np.diag(schur))
    chol = passive_cholesky(pp)
    # Sigma_ap Sigma_pp^{-1} = (Sigma_pp^{-1} Sigma_pa)^T
    gain = np.linalg.solve(chol.T, np.linalg.solve(chol, ap.T)).T
    t = -s[:, None] * gain
    params = CouplingParams(r, s, t, np.zeros(dim))
    b = -params.matrix() @ mean0
    return CouplingParams(r, s, t, b)


def whiten_step(cov0: np.ndarray, split: BlockSplit | None = None, check: bool = True) -> np.ndarray:
    """Covariance after the optimal coupling block (stacks supported).

    Off-diagonal blocks are exactly zero and the diagonal exactly one. Raises
    DegenerateSchurComplement when a Schur diagonal entry drops below 1e-14.
    """
    cov0 = np.asarray(cov0)
    if check:
        check_covariance(cov0)
    dim = cov0.shape[-1]
    split = split or BlockSplit(dim)
    p, a = split.passive, split.active
    schur = schur_complement_active(cov0, split)
    if np.any(np.diagonal(schur, axis1=-2, axis2=-1).real < SCHUR_DIAG_MIN):
        raise DegenerateSchurComplement("Schur complement is numerically singular")
    out = np.zeros_like(cov0)
    out[..., p, p] = jacobi_precondition(cov0[..., p, p])
    out[..., a, a] = jacobi_precondition(schur)
    return symmetrize(out)


def rotate_and_whiten(cov: np.ndarray, q: np.ndarray, split: BlockSplit | None = None,
                      check: bool = True) -> np.ndarray:
    return whiten_step(rotate_covariance(cov, q), split, check=check)


def scaling_log_dets(cov0: np.ndarray, split: BlockSplit | None = None):
    """(log det M_p^2, log det M_a^2) of the diagonal scalings used by whiten_step."""
    cov0 = np.asarray(cov0)
    split = split or BlockSplit(cov0.shape[-1])
    p = split.passive
    schur = schur_complement_active(cov0, split)
    lp = -np.sum(np.log(np.diagonal(cov0[..., p, p], axis1=-2, axis2=-1).real), axis=-1)
    la = -np.sum(np.log(np.diagonal(schur, axis1=-2, axis2=-1).real), axis=-1)
    return lp, la


def off_diagonal_block(cov: np.ndarray, split: BlockSplit | None = None) -> np.ndarray:
    cov = np.asarray(cov)
    split = split or BlockSplit(cov.shape[-1])
    return cov[..., split.active, split.passive]


__all__ = [
    "CouplingParams",
    "optimal_coupling_params",
    "whiten_step",
    "rotate_and_whiten",
    "scaling_log_dets",
    "off_diagonal_block",
]
