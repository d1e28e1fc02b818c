"""Closed-form bounds on the expected non-Standardness after coupling blocks.

The precise (unitary-average) bound is an alternating sum whose terms grow
exponentially with the dimension while the total stays O(D), so it is
evaluated in arbitrary precision (mpmath) on a doubling precision ladder
until two consecutive levels agree.

Every extended-precision routine builds its own ``mpmath.MPContext`` so that
no precision state is shared between calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np

from .errors import (
    DegenerateEigenvalues,
    InvalidDimension,
    InvalidOrder,
    InvalidSpectrum,
    PrecisionExhausted,
    UndefinedAtIdentity,
)
from .linalg_core import Spectrum

DEFAULT_BITS = 256
DEGENERATE_GAP = 1e-300


@dataclass(frozen=True)
class PrecisionPolicy:
    start_bits: int = 256
    max_bits: int = 8192
    rel_stability_target: float = 1e-9

    def __post_init__(self):
        if self.start_bits < 128:
            raise ValueError("start_bits must be at least 128")
        if self.max_bits < self.start_bits:
            raise ValueError("max_bits must be >= start_bits")


@dataclass
class BoundReport:
    s_before: float
    thm1_bound: float | None
    thm2_varmax: float | None
    thm2_lossonly: float | None
    gamma: float
    geometric_mean: float
    var_lambda: float
    lambda_max: float
    lambda_min: float
    precision_bits_used: int | None = None
    notes: dict = field(default_factory=dict)


def _context(bits: int) -> mpmath.ctx_mp.MPContext:
    ctx = mpmath.MPContext()
    ctx.prec = int(bits)
    return ctx


def _as_ctx(ctx, bits):
    return ctx if ctx is not None else _context(bits)


# ------------------------------------------------------- polynomial primitives


def _esym_upto(values, k: int, ctx) -> list:
    """[e_0, ..., e_k] of ``values`` by e_j <- e_j + v e_{j-1}, one value at a time."""
    e = [ctx.mpf(1)] + [ctx.mpf(0)] * k
    for v in values:
        for j in range(k, 0, -1):
            e[j] += v * e[j - 1]
    return e


def elementary_symmetric(values: Sequence, k: int, bits: int = DEFAULT_BITS, ctx=None):
    """e_k(values): sum of all products of k distinct entries."""
    n = len(values)
    if not 0 <= k <= n:
        raise InvalidOrder(f"e_k needs 0 <= k <= {n}, got k={k}")
    ctx = _as_ctx(ctx, bits)
    return _esym_upto([ctx.mpf(v) for v in values], k, ctx)[k]


def partial_fraction_r(a, others: Sequence, bits: int = DEFAULT_BITS, ctx=None):
    """R(a; {b_i}) = prod_i 1 / (a - b_i); the empty product is 1."""
    ctx = _as_ctx(ctx, bits)
    a = ctx.mpf(a)
    out = ctx.mpf(1)
    for b in others:
        diff = a - ctx.mpf(b)
        if abs(diff) < DEGENERATE_GAP:
            raise DegenerateEigenvalues(f"R(a; b) undefined: a={a} coincides with an entry")
        out /= diff
    return out


def _check_distinct(values: Sequence[float]):
    v = np.sort(np.asarray(values, dtype=float))
    if v.size > 1 and np.min(np.diff(v)) <= 0:
        raise DegenerateEigenvalues("values must be pairwise distinct")


# ------------------------------------------------------------ precision ladder


def _ladder(evaluate: Callable[[int], object], policy: PrecisionPolicy):
    """Double the precision until two consecutive evaluations agree.

    ``evaluate(bits)`` returns an mpf, or None when the value is not usable at
    that precision. Returns ``(value, bits)`` of the finer of the agreeing pair.
    """
    bits = policy.start_bits
    prev = evaluate(bits)
    while bits * 2 <= policy.max_bits:
        bits *= 2
        cur = evaluate(bits)
        if prev is not None and cur is not None:
            if abs(cur - prev) <= policy.rel_stability_target * abs(cur):
                return cur, bits
        prev = cur
    raise PrecisionExhausted(f"no stable value up to {policy.max_bits} bits")


# ------------------------------------------------ projected orbit expectation


def _inverse_trace_sum(a_values: Sequence[float], k: int, ctx):
    a = [ctx.mpf(v) for v in a_values]
    n = len(a)
    total = ctx.mpf(0)
    for j in range(n):
        rest = a[:j] + a[j + 1:]
        r = partial_fraction_r(a[j], rest, ctx=ctx)
        e = _esym_upto(rest, k - 1, ctx)[k - 1]
        total += a[j] ** (n - k - 1) * ctx.log(a[j]) * r * e
    # Paired with R(a; b) = prod 1/(a - b) the overall sign is (-1)^(k-1).
    return (n - k) * (-1) ** (k - 1) * total


def expected_corner_inverse_trace(a_values: Sequence[float], k: int, bits: int | None = None,
                                    policy: PrecisionPolicy | None = None):
    """E[tr(C^{-1})] for C the k x k corner of U Diag(a) U^*, U Haar on U(N).

    With ``bits`` the expression is evaluated once at that precision; otherwise
    the precision ladder of ``policy`` is used.
    """
    n = len(a_values)
    if not 1 <= k <= n - 1:
        raise InvalidOrder(f"corner size must satisfy 1 <= k <= {n - 1}, got {k}")
    if np.any(np.asarray(a_values, dtype=float) <= 0):
        raise InvalidSpectrum("values must be positive")
    _check_distinct(a_values)
    if bits is not None:
        return _inverse_trace_sum(a_values, k, _context(bits))
    value, _ = _ladder(lambda b: _inverse_trace_sum(a_values, k, _context(b)), policy or PrecisionPolicy())
    return value


# -------------------------------------------------------- precise single block


def _check_thm_spectrum(spectrum: Spectrum, need_distinct: bool):
    if spectrum.dim < 2 or spectrum.dim % 2:
        raise InvalidDimension(f"bounds need an even dimension, got {spectrum.dim}")
    if abs(spectrum.mean - 1.0) > 1e-12:
        raise InvalidSpectrum("spectrum must be normalized to mean 1")
    if need_distinct and not spectrum.is_distinct:
        raise DegenerateEigenvalues("precise bound needs distinct eigenvalues")


def expected_schur_diagonal(spectrum: Spectrum, bits: int):
    """Unitary average of one diagonal entry of the active Schur complement.

    Equals sum_i lam_i^{1-D/2} log(lam_i) R(1/lam_i; 1/lam_{!=i}) e_{D/2-1}(1/lam_{!=i})
    times (-1)^{D/2}, i.e. (2/D) E[tr((P_aa)^{-1})] for the precision matrix P.
    """
    ctx = _context(bits)
    lam = [ctx.mpf(float(v)) for v in spectrum.values]
    inv = [1 / v for v in lam]
    d = len(lam)
    half = d // 2
    total = ctx.mpf(0)
    for i in range(d):
        rest = inv[:i] + inv[i + 1:]
        r = partial_fraction_r(inv[i], rest, ctx=ctx)
        e = _esym_upto(rest, half - 1, ctx)[half - 1]
        total += lam[i] ** (1 - half) * ctx.log(lam[i]) * r * e
    return (-1) ** half * total


def _s_before_mp(spectrum: Spectrum, ctx):
    lam = [ctx.mpf(float(v)) for v in spectrum.values]
    return sum((v - 1 - ctx.log(v) for v in lam), ctx.mpf(0)) / 2


def thm1_bound_at(spectrum: Spectrum, bits: int):
    """Precise bound at a fixed precision; None when the log argument is not positive."""
    _check_thm_spectrum(spectrum, need_distinct=True)
    ctx = _context(bits)
    x = expected_schur_diagonal(spectrum, bits)
    if not x > 0:
        return None
    x = ctx.mpf(x)
    return _s_before_mp(spectrum, ctx) + ctx.mpf(spectrum.dim) / 4 * ctx.log(x)


def thm1_bound(spectrum: Spectrum, policy: PrecisionPolicy | None = None):
    """Upper bound on E_{Q ~ U(D)}[S(Sigma_1)] and the precision it needed.

    Returns ``(bound, bits_used)``. Raises DegenerateEigenvalues for repeated
    eigenvalues and PrecisionExhausted when no stable positive log argument
    is reached by ``policy.max_bits``.
    """
    policy = policy or PrecisionPolicy()
    _check_thm_spectrum(spectrum, need_distinct=True)
    value, bits = _ladder(lambda b: thm1_bound_at(spectrum, b), policy)
    return float(value), bits


# ------------------------------------------------------- interpretable bounds


def _dim_factor(d: int) -> float:
    return d * d / ((d - 1) * (d + 2))


def _is_identity(spectrum: Spectrum) -> bool:
    return bool(np.all(np.abs(spectrum.values - 1.0) <= 1e-12))


def _lossonly_log_term(s: float, d: int) -> float:
    """log(1 - c (1 - r) / (1 + r) (1 - g)) with g = exp(-2s/D), r = sqrt(1 - g^D).

    (1 - r) / (1 + r) is evaluated as g^D / (1 + r)^2, which does not cancel
    when g^D is below machine precision.
    """
    g_d = math.exp(-2.0 * s)
    root = math.sqrt(-math.expm1(-2.0 * s))
    one_minus_g = -math.expm1(-2.0 * s / d)
    return math.log1p(-_dim_factor(d) * g_d / (1 + root) ** 2 * one_minus_g)


def thm2_reductions(spectrum: Spectrum):
    """(S - varmax, S - lossonly), computed directly so they stay resolvable when tiny next to S."""
    _check_thm_spectrum(spectrum, need_distinct=False)
    if _is_identity(spectrum):
        raise UndefinedAtIdentity("interpretable bounds are undefined at Sigma = I")
    d = spectrum.dim
    s = spectrum.non_standardness
    varmax = -d / 4 * math.log1p(-_dim_factor(d) / 2 * spectrum.variance / spectrum.lambda_max)
    lossonly = -d / 4 * _lossonly_log_term(s, d)
    return varmax, lossonly


def thm2_bounds(spectrum: Spectrum):
    """(var-max, loss-only) upper bounds on E_{Q ~ O(D)}[S(Sigma_1)]."""
    red_varmax, red_lossonly = thm2_reductions(spectrum)
    s = spectrum.non_standardness
    return s - red_varmax, s - red_lossonly


def gamma_limit(dim: int) -> float:
    """Limit of the deep rate as S -> 0: (D(D+2) - 4) / (2(D-1)(D+2))."""
    return (dim * (dim + 2) - 4) / (2 * (dim - 1) * (dim + 2))


def gamma_rate(s: float, dim: int) -> float:
    """Per-block contraction factor of the deep-network bound."""
    if s < 0:
        raise ValueError("non-Standardness must be non-negative")
    if dim < 2 or dim % 2:
        raise InvalidDimension(f"rate needs an even dimension, got {dim}")
    if s == 0:
        return gamma_limit(dim)
    return 1.0 + dim / (4.0 * s) * _lossonly_log_term(s, dim)


def deep_bound(s0: float, dim: int, layers: int) -> float:
    """gamma(S_0)^L * S_0."""
    if layers < 0:
        raise ValueError("layers must be non-negative")
    if s0 == 0:
        return 0.0
    return gamma_rate(s0, dim) ** layers * s0


def am_gm_gap_bounds(spectrum: Spectrum):
    """(Var/(2 lam_max), Var/(2 lam_min)), which bracket mean - geometric mean."""
    var = spectrum.variance
    return var / (2 * spectrum.lambda_max), var / (2 * spectrum.lambda_min)


def kappa_max(g: float, dim: int) -> float:
    """Largest condition number of a mean-1 spectrum with geometric mean g."""
    if not 0 < g < 1:
        raise ValueError("kappa_max needs 0 < g < 1")
    g_d = math.exp(dim * math.log(g))
    root = math.sqrt(-math.expm1(dim * math.log(g)))
    # (1 + r) / (1 - r) = (1 + r)^2 / g^D
    return (1 + root) ** 2 / g_d


# --------------------------------------------------------- Vandermonde oracle


def vandermonde_gap_det(values: Sequence[float], k: int, bits: int = 200):
    """Both sides of det[a_i^j, j in {0..n} minus {k}] = V(a) e_{n-k}(a).

    Returns ``(determinant, vandermonde_times_esym)`` as mpf values; an
    independent check on the polynomial algebra used by the bounds.
    """
    n = len(values)
    if not 1 <= k <= n - 1:
        raise InvalidOrder(f"need 1 <= k <= {n - 1}, got {k}")
    if n > 8:
        raise ValueError("vandermonde oracle is limited to n <= 8")
    _check_distinct(values)
    ctx = _context(bits)
    a = [ctx.mpf(v) for v in values]
    powers = [p for p in range(n + 1) if p != k]
    lhs = ctx.det(ctx.matrix([[x ** p for p in powers] for x in a]))
    vdm = ctx.mpf(1)
    for i in range(n):
        for j in range(i + 1, n):
            vdm *= a[j] - a[i]
    rhs = vdm * _esym_upto(a, n - k, ctx)[n - k]
    return lhs, rhs


# ---------------------------------------------------------------- reporting


def bound_report(spectrum: Spectrum, policy: PrecisionPolicy | None = None,
                 bound_set: Sequence[str] = ("thm1", "thm2_varmax", "thm2_lossonly", "gamma")) -> BoundReport:
    """All bounds for one spectrum; failing bounds are None with a reason in ``notes``."""
    s = spectrum.non_standardness
    notes = {}
    thm1 = bits = None
    if "thm1" in bound_set:
        try:
            thm1, bits = thm1_bound(spectrum, policy)
        except (DegenerateEigenvalues, PrecisionExhausted, InvalidSpectrum, InvalidDimension) as exc:
            notes["thm1"] = exc.code
    varmax = lossonly = None
    if "thm2_varmax" in bound_set or "thm2_lossonly" in bound_set:
        try:
            varmax, lossonly = thm2_bounds(spectrum)
        except (UndefinedAtIdentity, InvalidSpectrum, InvalidDimension) as exc:
            notes["thm2"] = exc.code
    try:
        gamma = gamma_rate(max(s, 0.0), spectrum.dim)
    except InvalidDimension as exc:
        gamma = math.nan
        notes["gamma"] = exc.code
    return BoundReport(
        s_before=s,
        thm1_bound=thm1,
        thm2_varmax=varmax if "thm2_varmax" in bound_set else None,
        thm2_lossonly=lossonly if "thm2_lossonly" in bound_set else None,
        gamma=gamma,
        geometric_mean=spectrum.geometric_mean,
        var_lambda=spectrum.variance,
        lambda_max=spectrum.lambda_max,
        lambda_min=spectrum.lambda_min,
        precision_bits_used=bits,
        notes=notes,
    )
