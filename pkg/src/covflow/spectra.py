"""Toy eigenvalue spectra: parametric families, dataset families, scaling.

Parametric spectra sample a bijective profile mu on the grid i/(D-1),
divide by the mean and are then pulled toward the identity by a scale s via
lam = (nu - 1) s + 1.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DegenerateEigenvalues, InvalidCount, InvalidSpectrum, PositivityViolation
from .linalg_core import SeedLike, Spectrum, as_generator

POWER_FLOOR = 1e-6

PARAMETRIC_KINDS = ("power", "reciprocal", "exponential")
DATASET_KINDS = ("single-varied", "all-but-one-varied", "two-halves", "uniform-random", "log-uniform-random")


def _profile(kind: str, params: dict) -> Callable[[np.ndarray], np.ndarray]:
    if kind == "power":
        p = float(params.get("p", 1.0))
        floor = float(params.get("floor", POWER_FLOOR))
        return lambda x: x**p + floor
    if kind == "reciprocal":
        return lambda x: 1.0 / (1.1 - x)
    if kind == "exponential":
        return np.exp
    raise InvalidSpectrum(f"unknown parametric family {kind!r}")


@dataclass(frozen=True)
class SpectrumFamily:
    kind: str
    dim: int
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.kind == "power":
            return f"power-p{self.params.get('p', 1.0):g}-d{self.dim}"
        return f"{self.kind}-d{self.dim}"


def generate_parametric(family: SpectrumFamily) -> Spectrum:
    if family.dim < 2:
        raise InvalidSpectrum("parametric spectra need dim >= 2")
    grid = np.arange(family.dim) / (family.dim - 1)
    mu = _profile(family.kind, family.params)(grid)
    if np.any(mu <= 0):
        raise PositivityViolation("profile must be strictly positive on [0, 1]")
    return Spectrum.normalize(mu, distinct=True)


def s_max(base: Spectrum) -> float:
    """Largest admissible scale: 1 / (1 - lam_min)."""
    if base.lambda_min >= 1.0:
        return np.inf
    return 1.0 / (1.0 - base.lambda_min)


def scale_spectrum(base: Spectrum, s: float) -> Spectrum:
    if not 0 < s < s_max(base):
        raise PositivityViolation(f"scale {s} outside (0, s_max={s_max(base)})")
    lam = (base.values - 1.0) * s + 1.0
    if np.any(lam <= 0):
        raise PositivityViolation("scaled spectrum is not positive")
    # renormalising removes the ~1e-16 drift of the mean introduced by the affine map
    return Spectrum(lam / lam.mean(), normalized=True)


def scale_schedule(base: Spectrum, n_scale: int) -> np.ndarray:
    """n/3 geometric points in [0.001, 0.9) s_max then 2n/3 linear in [0.9, 0.999] s_max."""
    if n_scale <= 0 or n_scale % 3:
        raise InvalidCount(f"n_scale must be a positive multiple of 3, got {n_scale}")
    smax = s_max(base)
    third = n_scale // 3
    geo = np.geomspace(0.001, 0.9, third, endpoint=False) if third > 1 else np.array([0.001])
    lin = np.linspace(0.9, 0.999, 2 * third)
    return np.concatenate([geo, lin]) * smax


def distinctness_perturb(spectrum: Spectrum, epsilon: float = 1e-5) -> Spectrum:
    """Multiply by linearly increasing factors in [1 - eps, 1 + eps], renormalise."""
    if not 0 < epsilon <= 0.01:
        raise ValueError("epsilon must lie in (0, 0.01]")
    d = spectrum.dim
    factors = 1.0 - epsilon + 2.0 * epsilon * np.arange(d) / max(d - 1, 1)
    out = Spectrum.normalize(spectrum.values * factors)
    if not out.is_distinct:
        raise DegenerateEigenvalues("perturbed spectrum still has repeated eigenvalues")
    return Spectrum(out.values, normalized=True, distinct=True)


def varied_values(n_vary: int, v_max: float) -> np.ndarray:
    if v_max <= 1:
        raise ValueError("v_max must exceed 1")
    return np.geomspace(1.0 / v_max, v_max, n_vary)


def _raw_family(kind: str, dim: int, v: float) -> np.ndarray:
    if kind == "single-varied":
        raw = np.ones(dim)
        raw[-1] = v
    elif kind == "all-but-one-varied":
        raw = np.full(dim, v)
        raw[-1] = 1.0
    elif kind == "two-halves":
        raw = np.concatenate([np.full(dim // 2, v), np.full(dim - dim // 2, 1.0 / v)])
    else:
        raise InvalidSpectrum(f"{kind!r} is not a deterministic dataset family")
    return raw


def dataset_spectrum(kind: str, dim: int, value: float) -> Spectrum:
    """One member of a deterministic dataset family, normalised to mean 1."""
    return Spectrum.normalize(_raw_family(kind, dim, value))


def generate_dataset_family(kind: str, dim: int, n_vary: int = 128, v_max: float = 1000.0,
                            rng: SeedLike = None) -> list[Spectrum]:
    """Spectra of one toy dataset family; the all-ones spectrum is excluded.

    The random families draw ``n_vary`` spectra: uniform on [0, 2], or with
    log-eigenvalues uniform on [log(1/v_max), log(v_max)].
    """
    if dim < 2 or dim % 2:
        raise InvalidSpectrum(f"dataset families need an even dimension, got {dim}")
    if v_max <= 1:
        raise ValueError("v_max must exceed 1")
    out = []
    if kind in ("uniform-random", "log-uniform-random"):
        gen = as_generator(rng)
        for _ in range(n_vary):
            if kind == "uniform-random":
                raw = gen.uniform(0.0, 2.0, dim)
                while np.any(raw <= 0):
                    raw = gen.uniform(0.0, 2.0, dim)
            else:
                raw = np.exp(gen.uniform(-np.log(v_max), np.log(v_max), dim))
            out.append(Spectrum.normalize(raw))
        return out
    for v in varied_values(n_vary, v_max):
        spec = dataset_spectrum(kind, dim, v)
        if np.allclose(spec.values, 1.0, rtol=0, atol=1e-12):
            continue
        out.append(spec)
    return out


# ------------------------------------------------------------------- JSON


def spectra_to_json(spectra: list[Spectrum], ids: list[str] | None = None) -> str:
    ids = ids or [str(i) for i in range(len(spectra))]
    doc = {
        "schema": "covflow-spectra/1",
        "spectra": [{"id": i, "values": [float(x) for x in s.values]} for i, s in zip(ids, spectra)],
    }
    return json.dumps(doc, indent=1)


def load_spectra(path: str | Path) -> tuple[list[str], list[Spectrum]]:
    """Read spectra JSON: our schema document, a bare array, or an array of arrays."""
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        items = [(str(e.get("id", i)), e["values"]) for i, e in enumerate(doc["spectra"])]
    elif doc and all(isinstance(x, (int, float)) for x in doc):
        items = [("0", doc)]
    else:
        items = [(str(i), vals) for i, vals in enumerate(doc)]
    return [i for i, _ in items], [Spectrum(np.asarray(v, dtype=float)) for _, v in items]
