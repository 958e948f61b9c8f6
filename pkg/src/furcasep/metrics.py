"""Evaluation-side SDR, SDR improvement, and permutation-invariant assignment.

SDR here is the projection form: the target is scaled to best explain the
estimate, and the ratio of projected energy to residual energy is reported in
dB. All functions are pure; the differentiable loss in layers.py must agree
with this module away from its epsilon guard.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .signal import Waveform

SDR_CLAMP_DB = 100.0
ENERGY_EPS_REL = 1e-20  # relative guard deciding when the dB clamp engages
MAX_PIT_SOURCES = 8  # factorial search guard


@dataclass(frozen=True)
class SdrResult:
    sdr_db: float
    projection_energy: float
    error_energy: float
    scale: float


@dataclass(frozen=True)
class PitResult:
    """Best output-to-target assignment: output j is scored against target permutation[j]."""

    permutation: tuple[int, ...]
    per_source_sdr_db: tuple[float, ...]
    mean_sdr_db: float
    loss: float


def _as_samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def sdr(target, estimate) -> SdrResult:
    """Projection SDR of an estimate against a target, clamped to +-100 dB.

    scale = <x,s>/<x,x>, projection = scale*x, error = projection - estimate,
    sdr = 10*log10(projection energy / error energy).
    """
    x = _as_samples(target)
    s = _as_samples(estimate)
    if isinstance(target, Waveform) and isinstance(estimate, Waveform):
        if target.sample_rate_hz != estimate.sample_rate_hz:
            raise ValueError(
                f"sdr: sample rates differ: {target.sample_rate_hz} vs {estimate.sample_rate_hz}"
            )
    if x.shape != s.shape:
        raise ValueError(f"sdr: length mismatch: target {x.shape[0]} vs estimate {s.shape[0]}")
    if x.size == 0:
        raise ValueError("sdr: empty signals")
    xx = float(np.dot(x, x))
    if xx == 0.0:
        raise ValueError("sdr: target has zero energy")
    scale = float(np.dot(x, s)) / xx
    error = scale * x - s
    projection_energy = scale * scale * xx
    error_energy = float(np.dot(error, error))
    guard = ENERGY_EPS_REL * max(projection_energy, error_energy)
    if projection_energy <= guard:
        sdr_db = -SDR_CLAMP_DB
    elif error_energy <= guard:
        sdr_db = SDR_CLAMP_DB
    else:
        sdr_db = float(np.clip(10.0 * np.log10(projection_energy / error_energy), -SDR_CLAMP_DB, SDR_CLAMP_DB))
    return SdrResult(sdr_db, projection_energy, error_energy, scale)


def sdr_improvement(target, estimate, mixture) -> float:
    """SDR of the estimate minus SDR of the unprocessed mixture, both against target."""
    return sdr(target, estimate).sdr_db - sdr(target, mixture).sdr_db


def pit_assign(targets: list, estimates: list) -> PitResult:
    """Exhaustive best-permutation assignment over the pairwise SDR matrix.

    The S*S matrix is computed once; every permutation is scored from it and the
    maximizer of the mean per-pair SDR wins. Ties go to the lexicographically
    smallest permutation.
    """
    n = len(targets)
    if len(estimates) != n:
        raise ValueError(f"pit_assign: {n} targets vs {len(estimates)} estimates")
    if n < 2:
        raise ValueError(f"pit_assign needs at least 2 sources, got {n}")
    if n > MAX_PIT_SOURCES:
        raise ValueError(f"pit_assign supports at most {MAX_PIT_SOURCES} sources, got {n}")
    matrix = [[sdr(t, e).sdr_db for e in estimates] for t in targets]
    best_perm = None
    best_mean = -np.inf
    for perm in itertools.permutations(range(n)):
        mean = sum(matrix[perm[j]][j] for j in range(n)) / n
        if mean > best_mean:
            best_mean = mean
            best_perm = perm
    per_source = tuple(matrix[best_perm[j]][j] for j in range(n))
    return PitResult(best_perm, per_source, best_mean, -best_mean)
