"""Single-block rotation averaging and the multi-layer whitening experiment.

Randomness is addressed, never drawn from a shared stream:

* single block: rotations for spectrum ``j`` and group ``g`` come from
  ``make_rng(seed, j, g)`` and are reused for every scale of that spectrum;
* deep: the rotation of layer ``l`` and slot ``r`` comes from
  ``make_rng(seed, l, r)`` and is shared by all instances, or from
  ``make_rng(seed, l, r, i)`` with ``independent_rotations``.

So results do not depend on the number of worker processes.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .bounds import PrecisionPolicy, bound_report, gamma_rate, thm1_bound, thm2_bounds
from .divergence import non_standardness_cov
from .errors import CovflowError, DegenerateSchurComplement, IllConditionedPassiveBlock, InvalidCovariance
from .linalg_core import GROUPS, Spectrum, eigenvalues, make_rng, rotate_covariance, sample_haar
from .spectra import DATASET_KINDS, distinctness_perturb, generate_dataset_family, scale_spectrum
from .whitening import whiten_step

ALL_BOUNDS = ("thm1", "thm2_varmax", "thm2_lossonly", "gamma")
WORKERS_ENV = "COVFLOW_WORKERS"


@dataclass
class ExperimentConfig:
    dim: int = 16
    layers: int = 16
    n_rot: int = 8
    group: str = "orthogonal"
    seed: int = 0
    stop_threshold: float = 1e-9
    n_scale: int = 150
    n_vary: int = 16
    v_max: float = 1000.0
    epsilon: float = 1e-5
    families: tuple = DATASET_KINDS
    bound_set: tuple = ALL_BOUNDS
    independent_rotations: bool = False
    retain_spectra: bool = False
    start_bits: int = 256
    max_bits: int = 8192
    rel_stability_target: float = 1e-9
    workers: int = 1

    def __post_init__(self):
        self.families = tuple(self.families)
        self.bound_set = tuple(self.bound_set)
        if self.dim < 2 or self.dim % 2:
            raise ValueError(f"dim must be even and >= 2, got {self.dim}")
        if self.n_rot < 1:
            raise ValueError("n_rot must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.stop_threshold <= 0:
            raise ValueError("stop_threshold must be positive")
        if self.group not in GROUPS + ("both",):
            raise ValueError(f"group must be orthogonal, unitary or both, got {self.group!r}")
        unknown = set(self.bound_set) - set(ALL_BOUNDS)
        if unknown:
            raise ValueError(f"unknown bounds {sorted(unknown)}")
        unknown = set(self.families) - set(DATASET_KINDS)
        if unknown:
            raise ValueError(f"unknown dataset families {sorted(unknown)}")

    @classmethod
    def desk_deep(cls, **overrides) -> "ExperimentConfig":
        return cls(**{"dim": 16, "layers": 16, "n_rot": 8, "n_vary": 16, **overrides})

    @classmethod
    def full_deep(cls, **overrides) -> "ExperimentConfig":
        return cls(**{"dim": 48, "layers": 32, "n_rot": 32, "n_vary": 128, **overrides})

    @classmethod
    def full_single_block(cls, **overrides) -> "ExperimentConfig":
        return cls(**{"dim": 48, "n_rot": 100, "n_scale": 150, "group": "both", **overrides})

    @property
    def groups(self) -> tuple:
        return GROUPS if self.group == "both" else (self.group,)

    @property
    def policy(self) -> PrecisionPolicy:
        return PrecisionPolicy(self.start_bits, self.max_bits, self.rel_stability_target)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"] = list(self.families)
        d["bound_set"] = list(self.bound_set)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None and workers > 1:
        return workers
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _map(fn, items: Sequence, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ------------------------------------------------------------ statistics


@dataclass
class RotationStats:
    mean: float
    median: float
    iqr: float
    se: float
    n: int

    @classmethod
    def of(cls, values) -> "RotationStats":
        v = np.asarray(values, dtype=float)
        q25, q50, q75 = np.quantile(v, [0.25, 0.5, 0.75])
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(float(v.mean()), float(q50), float(q75 - q25), se, int(v.size))


# ---------------------------------------------------------- single block


@dataclass
class SingleBlockRecord:
    spectrum_id: str
    scale_s: float
    s_before: float
    stats: dict
    bound_values: dict
    bound_notes: dict = field(default_factory=dict)
    thm1_bits: int | None = None

    @property
    def mc_mean_orthogonal(self):
        st = self.stats.get("orthogonal")
        return None if st is None else st.mean

    @property
    def mc_mean_unitary(self):
        st = self.stats.get("unitary")
        return None if st is None else st.mean

    @property
    def mc_iqr(self):
        st = self.stats.get("orthogonal") or self.stats.get("unitary")
        return st.iqr


def single_block_values(lam: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """S(Sigma_1) for Sigma = diag(lam) under each rotation in the stack."""
    cov = rotate_covariance(np.diag(lam).astype(rotations.dtype), rotations)
    return non_standardness_cov(whiten_step(cov, check=False))


def _single_block_task(task):
    config, j, spectrum_id, base, scales = task
    rotations = {
        g: sample_haar(config.dim, g, make_rng(config.seed, j, GROUPS.index(g)), size=config.n_rot)
        for g in config.groups
    }
    records = []
    for s in scales:
        spec = scale_spectrum(base, float(s))
        stats = {g: RotationStats.of(single_block_values(spec.values, q)) for g, q in rotations.items()}
        rep = bound_report(spec, config.policy, config.bound_set)
        bounds = {}
        if "thm1" in config.bound_set:
            bounds["thm1"] = rep.thm1_bound
        if "thm2_varmax" in config.bound_set:
            bounds["thm2_varmax"] = rep.thm2_varmax
        if "thm2_lossonly" in config.bound_set:
            bounds["thm2_lossonly"] = rep.thm2_lossonly
        if "gamma" in config.bound_set:
            bounds["gamma"] = rep.gamma
        records.append(SingleBlockRecord(spectrum_id, float(s), rep.s_before, stats, bounds,
                                         dict(rep.notes), rep.precision_bits_used))
    return records


def run_single_block(config: ExperimentConfig, spectra_with_scales: Iterable) -> list[SingleBlockRecord]:
    """Rotation-averaged S after one optimal block for each (spectrum, scale).

    ``spectra_with_scales`` yields ``(spectrum_id, base_spectrum, scales)``;
    each base is a mean-1 spectrum and each scale lies in (0, s_max).
    """
    tasks = [(config, j, sid, base, list(scales)) for j, (sid, base, scales) in enumerate(spectra_with_scales)]
    out = []
    for chunk in _map(_single_block_task, tasks, resolve_workers(config.workers)):
        out.extend(chunk)
    return out


# ------------------------------------------------------------------ deep


@dataclass
class TrajectoryRecord:
    instance_id: str
    rotation_seed: int
    s_values: list
    ratios: list
    terminated_early: bool = False
    termination_layer: int | None = None
    abort_reason: str | None = None
    spectra: list | None = None

    @property
    def computed_layers(self) -> int:
        """Number of blocks actually applied."""
        return len(self.ratios)


def _layer_rotation(config: ExperimentConfig, layer: int, r: int, instance: int) -> np.ndarray:
    group = "unitary" if config.group == "unitary" else "orthogonal"
    keys = (layer, r, instance) if config.independent_rotations else (layer, r)
    return sample_haar(config.dim, group, make_rng(config.seed, *keys))


def _trajectory(config: ExperimentConfig, instance: int, instance_id: str, spectrum: Spectrum, r: int):
    cov = np.diag(spectrum.values).astype(complex if config.group == "unitary" else float)
    s_vals = [float(spectrum.non_standardness)]
    ratios = []
    kept = [np.array(spectrum.values)] if config.retain_spectra else None
    terminated = False
    term_layer = None
    reason = None
    if s_vals[0] < config.stop_threshold:
        terminated, term_layer = True, 0
    else:
        for layer in range(1, config.layers + 1):
            q = _layer_rotation(config, layer, r, instance)
            try:
                cov = whiten_step(rotate_covariance(cov, q), check=False)
            except (DegenerateSchurComplement, IllConditionedPassiveBlock, InvalidCovariance) as exc:
                terminated, term_layer, reason = True, layer - 1, exc.code
                break
            s_new = float(non_standardness_cov(cov))
            s_new = max(s_new, 0.0)
            ratios.append(s_new / s_vals[-1])
            s_vals.append(s_new)
            if kept is not None:
                kept.append(eigenvalues(cov))
            if s_new < config.stop_threshold:
                if layer < config.layers:
                    terminated, term_layer = True, layer
                break
    s_vals = s_vals + [s_vals[-1]] * (config.layers + 1 - len(s_vals))
    return TrajectoryRecord(instance_id, r, s_vals, ratios, terminated, term_layer, reason, kept)


def _deep_task(task):
    config, instance, instance_id, spectrum = task
    return [_trajectory(config, instance, instance_id, spectrum, r) for r in range(config.n_rot)]


def run_deep(config: ExperimentConfig, spectra) -> list[TrajectoryRecord]:
    """Repeated random rotation + optimal whitening (multi-layer protocol).

    ``spectra`` is a list of Spectrum or of ``(instance_id, Spectrum)``. Each
    instance gets ``config.n_rot`` trajectories; a trajectory stops once S
    drops below ``config.stop_threshold``.
    """
    items = [x if isinstance(x, tuple) else (str(i), x) for i, x in enumerate(spectra)]
    tasks = [(config, i, sid, spec) for i, (sid, spec) in enumerate(items)]
    out = []
    for chunk in _map(_deep_task, tasks, resolve_workers(config.workers)):
        out.extend(chunk)
    return out


def build_deep_spectra(config: ExperimentConfig) -> list[tuple[str, Spectrum]]:
    """Toy dataset families, each member perturbed to distinct eigenvalues."""
    out = []
    for f, kind in enumerate(config.families):
        members = generate_dataset_family(kind, config.dim, config.n_vary, config.v_max,
                                          rng=make_rng(config.seed, 10_000 + DATASET_KINDS.index(kind)))
        for k, spec in enumerate(members):
            out.append((f"{kind}-{k}", distinctness_perturb(spec, config.epsilon)))
    return out


@dataclass
class InstanceSummary:
    instance_id: str
    s0: float
    mean_s: np.ndarray
    se_s: np.ndarray


def summarize_instances(trajectories: Sequence[TrajectoryRecord]) -> list[InstanceSummary]:
    """Rotation-averaged S per layer for each instance (held values after a stop)."""
    by_id: dict[str, list] = {}
    for t in trajectories:
        by_id.setdefault(t.instance_id, []).append(t.s_values)
    out = []
    for iid, rows in by_id.items():
        a = np.asarray(rows, dtype=float)
        se = a.std(axis=0, ddof=1) / np.sqrt(a.shape[0]) if a.shape[0] > 1 else np.zeros(a.shape[1])
        out.append(InstanceSummary(iid, float(a[0, 0]), a.mean(axis=0), se))
    return out


def late_layer_ratios(trajectories: Sequence[TrajectoryRecord], dim: int, s_per_dim: float = 0.01) -> np.ndarray:
    """Per-block ratios S_l / S_{l-1} over blocks entered with S_{l-1}/D below ``s_per_dim``."""
    out = []
    for t in trajectories:
        for l, ratio in enumerate(t.ratios):
            if t.s_values[l] / dim < s_per_dim:
                out.append(ratio)
    return np.asarray(out)


# ---------------------------------------------------- bound comparison


def _bound_ratios(values: np.ndarray, bound_set, policy: PrecisionPolicy) -> dict:
    spec = Spectrum(np.clip(values, np.finfo(float).tiny, None))
    spec = Spectrum(spec.values / spec.mean, normalized=True)
    s = spec.non_standardness
    out = {}
    if "thm1" in bound_set:
        try:
            out["thm1"] = thm1_bound(spec, policy)[0] / s
        except CovflowError:
            out["thm1"] = np.nan
    if "thm2_varmax" in bound_set or "thm2_lossonly" in bound_set:
        try:
            vm, lo = thm2_bounds(spec)
        except CovflowError:
            vm = lo = np.nan * s
        if "thm2_varmax" in bound_set:
            out["thm2_varmax"] = vm / s
        if "thm2_lossonly" in bound_set:
            out["thm2_lossonly"] = lo / s
    if "gamma" in bound_set:
        out["gamma"] = gamma_rate(s, spec.dim)
    return out


def compare_bounds_per_layer(trajectories: Sequence[TrajectoryRecord], spectra_per_layer=None,
                             bound_set: Sequence[str] = ALL_BOUNDS, stop_threshold: float = 1e-9,
                             policy: PrecisionPolicy | None = None) -> list[dict]:
    """Per-block table of empirical ratios against bound/S ratios.

    Row ``block = l + 1`` compares S_{l+1}/S_l with B(Sigma_l)/S(Sigma_l) over
    every trajectory still running at layer ``l``. ``spectra_per_layer`` maps
    trajectory index to its per-layer eigenvalues and defaults to the retained
    ``TrajectoryRecord.spectra``. The ``conjecture_margin_<bound>`` column is
    mean over trajectories of (B_0/S_0)^(l+1) - S_{l+1}/S_0; it is reported,
    not asserted.
    """
    policy = policy or PrecisionPolicy()
    if spectra_per_layer is None:
        spectra_per_layer = [t.spectra for t in trajectories]
    if any(s is None for s in spectra_per_layer):
        raise ValueError("per-layer spectra were not retained (set retain_spectra)")
    n_layers = max((t.computed_layers for t in trajectories), default=0)
    per_traj = []
    for t, specs in zip(trajectories, spectra_per_layer):
        per_traj.append([
            _bound_ratios(np.asarray(specs[l]), bound_set, policy)
            if t.s_values[l] >= stop_threshold else None
            for l in range(t.computed_layers)
        ])
    first = [p[0] if p else None for p in per_traj]
    rows = []
    for l in range(n_layers):
        idx = [k for k, t in enumerate(trajectories) if l < t.computed_layers and per_traj[k][l] is not None]
        if not idx:
            continue
        ratios = np.array([trajectories[k].ratios[l] for k in idx])
        q25, q75 = np.quantile(ratios, [0.25, 0.75])
        row = {"block": l + 1, "n": len(idx), "mean_ratio": float(ratios.mean()), "iqr_ratio": float(q75 - q25)}
        for b in bound_set:
            vals = np.array([per_traj[k][l][b] for k in idx], dtype=float)
            vals = vals[np.isfinite(vals)]
            if vals.size:
                bq25, bq75 = np.quantile(vals, [0.25, 0.75])
                row[f"mean_{b}"] = float(vals.mean())
                row[f"iqr_{b}"] = float(bq75 - bq25)
            else:
                row[f"mean_{b}"] = row[f"iqr_{b}"] = float("nan")
            margins = []
            for k, t in enumerate(trajectories):
                if first[k] is None or not np.isfinite(first[k][b]) or t.s_values[0] <= 0:
                    continue
                margins.append(first[k][b] ** (l + 1) - t.s_values[l + 1] / t.s_values[0])
            row[f"conjecture_margin_{b}"] = float(np.mean(margins)) if margins else float("nan")
        rows.append(row)
    return rows
