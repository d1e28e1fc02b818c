"""Monte Carlo versus closed-form oracle checks, used by ``covflow validate``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bounds import expected_corner_inverse_trace, vandermonde_gap_det
from .divergence import GaussianMoments, MixtureOracle, mc_kl_gap, mixture_moments, non_standardness
from .linalg_core import GROUPS, SeedLike, as_generator, make_rng, random_spd, sample_haar


@dataclass
class CheckResult:
    name: str
    passed: bool
    estimate: float
    expected: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} {self.name}: estimate={self.estimate!r} expected={self.expected!r} "
                f"tol={self.tolerance!r}{' ' + self.detail if self.detail else ''}")


def _mean_se(x: np.ndarray):
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))


def _chunked_haar(dim, group, n, rng, chunk=20_000):
    gen = as_generator(rng)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        yield sample_haar(dim, group, gen, size=m)
        done += m


def gorin_expected(dim: int, group: str) -> dict:
    """Exact fourth-order Haar moments of matrix entries."""
    if group == "orthogonal":
        out = {"q11^2 q12^2": 1.0 / (dim * (dim + 2))}
        if dim >= 2:
            out["q11 q12 q21 q22"] = -1.0 / (dim * (dim - 1) * (dim + 2))
    else:
        out = {"|u11|^2 |u12|^2": 1.0 / (dim * (dim + 1))}
        if dim >= 2:
            out["u11 u22 conj(u12 u21)"] = -1.0 / ((dim - 1) * dim * (dim + 1))
    return out


def haar_moments_mc(dim: int, group: str, n: int, rng: SeedLike = None) -> dict:
    """(mean, se) of the monomials in ``gorin_expected``."""
    parts: dict[str, list] = {}
    for q in _chunked_haar(dim, group, n, rng):
        a, b, c, d = q[:, 0, 0], q[:, 0, 1], q[:, 1, 0], q[:, 1, 1]
        if group == "orthogonal":
            vals = {"q11^2 q12^2": a**2 * b**2, "q11 q12 q21 q22": a * b * c * d}
        else:
            vals = {"|u11|^2 |u12|^2": np.abs(a) ** 2 * np.abs(b) ** 2,
                    "u11 u22 conj(u12 u21)": (a * d * np.conj(b * c)).real}
        for k, v in vals.items():
            parts.setdefault(k, []).append(v)
    return {k: _mean_se(np.concatenate(v)) for k, v in parts.items()}


def corner_mean_mc(a: np.ndarray, group: str, n: int, rng: SeedLike = None):
    """(mean, se) of (Q A Q*)_{11} for A = diag(a)."""
    a = np.asarray(a, dtype=float)
    vals = [np.sum(np.abs(q[:, 0, :]) ** 2 * a, axis=-1) for q in _chunked_haar(a.size, group, n, rng)]
    return _mean_se(np.concatenate(vals))


def inverse_trace_mc(a: np.ndarray, k: int, n: int, rng: SeedLike = None):
    """(mean, se) of tr(C^-1), C the top-left k x k corner of U diag(a) U*."""
    a = np.asarray(a, dtype=float)
    vals = []
    for u in _chunked_haar(a.size, "unitary", n, rng):
        rows = u[:, :k, :]
        corner = np.einsum("nik,k,njk->nij", rows, a, rows.conj())
        vals.append(np.trace(np.linalg.inv(corner), axis1=-2, axis2=-1).real)
    return _mean_se(np.concatenate(vals))


def random_mixture(dim: int, n_comp: int, rng: SeedLike = None) -> MixtureOracle:
    gen = as_generator(rng)
    w = gen.dirichlet(np.ones(n_comp))
    comps = [GaussianMoments(gen.normal(0.0, 0.7, dim), random_spd(dim, gen, cond=10.0) * gen.uniform(0.3, 1.5))
             for _ in range(n_comp)]
    return MixtureOracle(w, comps)


def run_oracle_suite(quick: bool = True, seed: int = 0) -> list[CheckResult]:
    """Every closed-form oracle against its Monte Carlo or exact-arithmetic counterpart."""
    n_haar = 20_000 if quick else 100_000
    n_mix = 50_000 if quick else 1_000_000
    results = []

    for dim in (2, 4, 8):
        for gi, group in enumerate(GROUPS):
            est = haar_moments_mc(dim, group, n_haar, make_rng(seed, 1, dim, gi))
            for name, exact in gorin_expected(dim, group).items():
                m, se = est[name]
                results.append(CheckResult(f"haar-moment[{group},D={dim}] {name}", abs(m - exact) <= 4 * se,
                                           m, exact, 4 * se))
            a = np.arange(1.0, dim + 1)
            m, se = corner_mean_mc(a, group, n_haar, make_rng(seed, 2, dim, gi))
            results.append(CheckResult(f"corner-mean[{group},D={dim}]", abs(m - a.mean()) <= 4 * se,
                                       m, float(a.mean()), 4 * se))

    for n_dim, k in ((4, 1), (4, 2), (4, 3), (6, 3)):
        a = np.arange(1.0, n_dim + 1)
        a /= a.mean()
        exact = float(expected_corner_inverse_trace(a, k))
        m, se = inverse_trace_mc(a, k, n_haar, make_rng(seed, 3, n_dim, k))
        results.append(CheckResult(f"inverse-trace[N={n_dim},K={k}]", abs(m - exact) <= 3 * se, m, exact, 3 * se))

    gen = make_rng(seed, 4)
    for n in range(2, 7):
        for k in range(1, n):
            vals = gen.uniform(0.2, 3.0, n)
            lhs, rhs = vandermonde_gap_det(vals, k)
            rel = float(abs(lhs - rhs) / abs(rhs))
            results.append(CheckResult(f"vandermonde[n={n},k={k}]", rel <= 1e-8, float(lhs), float(rhs), 1e-8))

    for j in range(3 if quick else 10):
        dim = 2 + j % 4
        oracle = random_mixture(dim, 3, make_rng(seed, 5, j))
        exact = non_standardness(mixture_moments(oracle))
        m, se = mc_kl_gap(oracle, n_mix, make_rng(seed, 6, j))
        results.append(CheckResult(f"loss-split[mixture {j}, D={dim}]", abs(m - exact) <= 3 * se, m, exact, 3 * se))
    return results
