"""Separation quality metrics: SI-SDR, projection-based SDR, permutation
resolution.

SDR here projects the estimate onto the span of causally shifted copies
of the reference (a least-squares FIR fit), which is self-contained and
deterministic; with a single tap it reduces exactly to SI-SDR.  Scores
are capped at +120 dB, reached when the distortion is identically zero.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_toeplitz
from scipy.signal import fftconvolve

from .errors import ConfigurationError, DataError, DimensionError
from .stft import Waveform

__all__ = ["ScoreReport", "si_sdr", "sdr_proj", "permute_resolve"]

SCORE_CAP_DB = 120.0


def _samples(x) -> np.ndarray:
    if isinstance(x, Waveform):
        return x.samples
    return np.asarray(x, dtype=np.float64)


def _ratio_db(signal_energy: float, error_energy: float) -> float:
    if error_energy <= 0.0 or (
        signal_energy > 0.0
        and 10.0 * np.log10(signal_energy / error_energy) > SCORE_CAP_DB
    ):
        return SCORE_CAP_DB
    if signal_energy == 0.0:
        return -SCORE_CAP_DB
    return float(10.0 * np.log10(signal_energy / error_energy))


def si_sdr(est, ref) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    est = _samples(est)
    ref = _samples(ref)
    if est.shape != ref.shape:
        raise DimensionError("estimate and reference lengths must match")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise DataError("all-zero reference signal")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    err = est - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(err, err)))


def sdr_proj(est, ref, proj_taps: int = 512) -> float:
    """SDR with the target defined by a least-squares FIR fit of the reference.

    The estimate is projected onto causal shifts 0..proj_taps-1 of the
    reference via Toeplitz normal equations; the distortion is the
    projection residual.  Always >= `si_sdr` since the one-tap fit is the
    optimal scaling.
    """
    est = _samples(est)
    ref = _samples(ref)
    if est.shape != ref.shape:
        raise DimensionError("estimate and reference lengths must match")
    if float(np.dot(ref, ref)) == 0.0:
        raise DataError("all-zero reference signal")
    taps = int(min(proj_taps, ref.size))
    if taps < 1:
        raise ConfigurationError("proj_taps must be >= 1")
    # autocorrelation r[0..taps-1] and cross-correlation c[k] = <est, ref_-k>
    acf = fftconvolve(ref, ref[::-1], mode="full")[ref.size - 1 : ref.size - 1 + taps]
    ccf = fftconvolve(est, ref[::-1], mode="full")[ref.size - 1 : ref.size - 1 + taps]
    load = acf[0] * 1e-12
    r = acf.copy()
    r[0] += load
    try:
        h = solve_toeplitz(r, ccf)
    except np.linalg.LinAlgError:
        from scipy.linalg import toeplitz

        h = np.linalg.lstsq(toeplitz(r), ccf, rcond=None)[0]
    target = fftconvolve(ref, h, mode="full")[: ref.size]
    err = est - target
    return _ratio_db(float(np.dot(target, target)), float(np.dot(err, err)))


@dataclass
class ScoreReport:
    """Per-speaker scores under a resolved speaker assignment."""

    si_sdr: list[float]
    sdr: list[float]
    assignment: tuple[int, ...]
    delta_si_sdr: list[float] | None = None
    delta_sdr: list[float] | None = None

    def as_dict(self) -> dict:
        out = {
            "si_sdr": self.si_sdr,
            "sdr": self.sdr,
            "assignment": list(self.assignment),
        }
        if self.delta_si_sdr is not None:
            out["delta_si_sdr"] = self.delta_si_sdr
        if self.delta_sdr is not None:
            out["delta_sdr"] = self.delta_sdr
        return out


def permute_resolve(est_set, ref_set, metric=si_sdr, mixtures=None) -> ScoreReport:
    """Exhaustively resolve the estimate-to-reference assignment.

    The returned assignment maps reference index -> estimate index and
    maximizes the mean of `metric` (up to 6 speakers).  When `mixtures`
    is given, per-speaker deltas against the unprocessed mixtures are
    reported as well.
    """
    ests = [_samples(e) for e in est_set]
    refs = [_samples(r) for r in ref_set]
    if len(ests) != len(refs):
        raise DimensionError("need equally many estimates and references")
    c = len(refs)
    if c > 6:
        raise ConfigurationError("exhaustive permutation search limited to 6 speakers")
    table = np.array([[metric(e, r) for e in ests] for r in refs])
    best, best_score = None, -np.inf
    for perm in itertools.permutations(range(c)):
        score = float(np.mean([table[r, perm[r]] for r in range(c)]))
        if score > best_score:
            best, best_score = perm, score
    scores_si = [si_sdr(ests[best[r]], refs[r]) for r in range(c)]
    scores_sdr = [sdr_proj(ests[best[r]], refs[r]) for r in range(c)]
    delta_si = delta_sdr = None
    if mixtures is not None:
        mixes = [_samples(m) for m in mixtures]
        delta_si = [
            scores_si[r] - si_sdr(mixes[r], refs[r]) for r in range(c)
        ]
        delta_sdr = [
            scores_sdr[r] - sdr_proj(mixes[r], refs[r]) for r in range(c)
        ]
    return ScoreReport(scores_si, scores_sdr, best, delta_si, delta_sdr)
