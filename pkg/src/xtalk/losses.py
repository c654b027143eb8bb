"""Mixture-constraint and speaker-activity losses, muting, and the
combined objective.

The mixture-constraint loss demands that each speaker estimate plus the
filtered images of the other estimates reconstruct every recorded
mixture.  At close-talk microphone c the wearer's estimate enters
unfiltered, which anchors output channel c to that microphone's gain
and time alignment; at far-field microphones every speaker is filtered.

The per-unit distance is an absolute loss on real part, imaginary part
and magnitude, normalized by the mixture's total magnitude; a squared
variant (normalized by total power) is available for smooth-gradient
checks.  All sums run in fixed ascending (t, f) order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError, NumericalError
from .fcp import FilterEstimate, apply_filter
from .stft import Spectrogram, istft

__all__ = [
    "ActivityMask",
    "LossBreakdown",
    "f_div",
    "l2_div",
    "activity_mask",
    "mute",
    "sa_loss",
    "mc_loss_close_talk",
    "mc_loss_far_field",
    "mc_total",
    "total_loss",
    "reconstruct_close_talk",
    "reconstruct_far_field",
]

MIN_ACTIVE_S = 0.1


@dataclass
class LossBreakdown:
    """Per-microphone loss terms and the weighted total."""

    mc_close: list[float]
    mc_far: list[float]
    sa: list[float]
    alpha: float
    beta: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = (
            float(sum(self.mc_close))
            + self.alpha * float(sum(self.mc_far))
            + self.beta * float(sum(self.sa))
        )

    def as_dict(self) -> dict:
        return {
            "mc_close": [float(v) for v in self.mc_close],
            "mc_far": [float(v) for v in self.mc_far],
            "sa": [float(v) for v in self.sa],
            "alpha": float(self.alpha),
            "beta": float(self.beta),
            "total": float(self.total),
        }


def f_div(ref: np.ndarray, est: np.ndarray) -> float:
    """Absolute real/imag/magnitude mismatch over the reference magnitude."""
    ref = np.asarray(ref)
    est = np.asarray(est)
    if ref.shape != est.shape:
        raise DimensionError("spectrogram shapes must match")
    denom = float(np.sum(np.abs(ref)))
    if denom == 0.0:
        raise DataError("all-zero reference spectrogram in loss denominator")
    num = (
        np.abs(ref.real - est.real)
        + np.abs(ref.imag - est.imag)
        + np.abs(np.abs(ref) - np.abs(est))
    )
    return float(np.sum(num)) / denom


def l2_div(ref: np.ndarray, est: np.ndarray) -> float:
    """Squared-magnitude mismatch over the reference power (smooth variant)."""
    ref = np.asarray(ref)
    est = np.asarray(est)
    if ref.shape != est.shape:
        raise DimensionError("spectrogram shapes must match")
    denom = float(np.sum(np.abs(ref) ** 2))
    if denom == 0.0:
        raise DataError("all-zero reference spectrogram in loss denominator")
    return float(np.sum(np.abs(ref - est) ** 2)) / denom


def _div(objective: str):
    if objective == "f-abs":
        return f_div
    if objective == "l2":
        return l2_div
    raise ConfigurationError(f"unknown objective {objective!r}")


@dataclass
class ActivityMask:
    """Frame- and speaker-level activity derived from sample timestamps."""

    frame_active: np.ndarray    # (C, T) bool
    speaker_active: np.ndarray  # (C,) bool
    min_active_s: float = MIN_ACTIVE_S

    def mask(self, c: int) -> np.ndarray:
        """(T,) multiplier D(c, t) * E(c)."""
        return self.frame_active[c].astype(np.float64) * float(
            self.speaker_active[c]
        )


def activity_mask(
    activity: np.ndarray, like: Spectrogram, min_active_s: float = MIN_ACTIVE_S
) -> ActivityMask:
    """Build D(c, t) and E(c) from sample-domain activity vectors.

    D(c, t) is 1 iff the window of frame t (shifted by the analysis
    padding) overlaps any active sample of speaker c; E(c) is 1 iff the
    speaker has at least ``min_active_s`` seconds of active samples.
    """
    activity = np.atleast_2d(np.asarray(activity))
    n = like.original_length
    if activity.shape[1] != n:
        raise DimensionError(
            f"activity length {activity.shape[1]} != signal length {n}"
        )
    win = like.config.win_samples(like.sample_rate)
    hop = like.config.hop_samples(like.sample_rate)
    t_frames = like.num_frames
    c_num = activity.shape[0]
    cum = np.zeros((c_num, n + 1), dtype=np.int64)
    np.cumsum(activity, axis=1, out=cum[:, 1:])
    starts = np.arange(t_frames) * hop - (win - hop)
    lo = np.clip(starts, 0, n)
    hi = np.clip(starts + win, 0, n)
    frame_active = (cum[:, hi] - cum[:, lo]) > 0
    speaker_active = cum[:, -1] >= min_active_s * like.sample_rate
    return ActivityMask(frame_active, speaker_active, min_active_s)


def mute(
    z: Spectrogram, activity_c: np.ndarray, min_active_s: float = MIN_ACTIVE_S
) -> Spectrogram:
    """Zero the frames (and fully inactive speakers) outside annotated activity."""
    mask = activity_mask(activity_c, z, min_active_s)
    return z.with_values(z.values * mask.mask(0)[:, None])


def sa_loss(
    est: np.ndarray,
    mixture: np.ndarray,
    activity_c: np.ndarray,
    speaker: int | None = None,
) -> float:
    """Penalty on estimate amplitude inside the speaker's silent ranges.

    Ratio of silent-range L1 norms (estimate over mixture), scaled by the
    silent fraction of the segment.  Defined as 0 when the speaker is
    active everywhere (no silent range to penalize).
    """
    est = np.asarray(est, dtype=np.float64)
    mixture = np.asarray(mixture, dtype=np.float64)
    activity_c = np.asarray(activity_c)
    if est.shape != mixture.shape or est.shape != activity_c.shape:
        raise DimensionError("estimate, mixture and activity lengths must match")
    n = est.size
    silent = 1.0 - activity_c.astype(np.float64)
    silent_count = float(silent.sum())
    if silent_count == 0.0:
        return 0.0
    num = float(np.sum(np.abs(est) * silent))
    if num == 0.0:
        return 0.0
    den = float(np.sum(np.abs(mixture) * silent))
    if den == 0.0:
        who = f" (speaker {speaker})" if speaker is not None else ""
        raise NumericalError(
            "silent-range mixture energy is zero while the estimate is "
            f"nonzero{who}"
        )
    return (num / den) * (silent_count / n)


def reconstruct_close_talk(
    mic: int, estimates: list[np.ndarray], filters: FilterEstimate
) -> np.ndarray:
    """Wearer estimate plus filtered interfering estimates at close-talk mic."""
    if filters.num_speakers != len(estimates):
        raise ConfigurationError(
            "filter bank does not cover every speaker estimate"
        )
    cfg = filters.cfg
    out = np.array(estimates[mic], dtype=np.complex128, copy=True)
    for src in range(len(estimates)):
        if src == mic:
            continue
        out += apply_filter(
            filters.ct[mic, src], estimates[src], cfg.past_taps, cfg.future_taps
        )
    return out


def reconstruct_far_field(
    p: int, estimates: list[np.ndarray], filters: FilterEstimate
) -> np.ndarray:
    """Sum of filtered speaker estimates at far-field microphone p."""
    if filters.num_speakers != len(estimates):
        raise ConfigurationError(
            "filter bank does not cover every speaker estimate"
        )
    cfg = filters.cfg
    out = np.zeros_like(np.asarray(estimates[0], dtype=np.complex128))
    for src in range(len(estimates)):
        out += apply_filter(
            filters.ff[p, src], estimates[src], cfg.past_taps, cfg.future_taps
        )
    return out


def mc_loss_close_talk(
    mic: int,
    mixture: np.ndarray,
    estimates: list[np.ndarray],
    filters: FilterEstimate,
    objective: str = "f-abs",
) -> float:
    return _div(objective)(mixture, reconstruct_close_talk(mic, estimates, filters))


def mc_loss_far_field(
    p: int,
    mixture: np.ndarray,
    estimates: list[np.ndarray],
    filters: FilterEstimate,
    objective: str = "f-abs",
) -> float:
    return _div(objective)(mixture, reconstruct_far_field(p, estimates, filters))


def resolve_alpha(alpha: float | None, num_far_mics: int) -> float:
    """Default far-field weight is 1/P."""
    if alpha is not None:
        return float(alpha)
    if num_far_mics == 0:
        raise ConfigurationError(
            "alpha defaults to 1/P but there are no far-field microphones"
        )
    return 1.0 / num_far_mics


def mc_total(
    estimates: list[np.ndarray],
    ct_mixtures: list[np.ndarray],
    ff_mixtures: list[np.ndarray],
    filters: FilterEstimate,
    alpha: float | None = None,
    objective: str = "f-abs",
) -> LossBreakdown:
    """Mixture-constraint loss over every microphone."""
    alpha = resolve_alpha(alpha, len(ff_mixtures))
    close = [
        mc_loss_close_talk(c, ct_mixtures[c], estimates, filters, objective)
        for c in range(len(ct_mixtures))
    ]
    far = [
        mc_loss_far_field(p, ff_mixtures[p], estimates, filters, objective)
        for p in range(len(ff_mixtures))
    ]
    return LossBreakdown(close, far, [], alpha, 0.0)


def total_loss(
    estimates: list[Spectrogram],
    ct_specs: list[Spectrogram],
    ff_specs: list[Spectrogram],
    filters: FilterEstimate,
    alpha: float | None = None,
    beta: float = 0.0,
    activity: np.ndarray | None = None,
    ct_waves: list[np.ndarray] | None = None,
    min_active_s: float = MIN_ACTIVE_S,
    objective: str = "f-abs",
) -> LossBreakdown:
    """Combined objective.

    With ``activity`` given (weak supervision) the estimates are muted
    before entering the mixture-constraint terms, and the
    speaker-activity penalty on the raw (un-muted) estimates is added
    with weight ``beta``.  Without activity the loss is purely the
    mixture constraint.
    """
    alpha = resolve_alpha(alpha, len(ff_specs))
    if activity is None:
        est_vals = [z.values for z in estimates]
        mc = mc_total(
            est_vals, [s.values for s in ct_specs], [s.values for s in ff_specs],
            filters, alpha, objective,
        )
        return mc
    activity = np.atleast_2d(np.asarray(activity))
    muted = [
        mute(z, activity[c], min_active_s).values for c, z in enumerate(estimates)
    ]
    mc = mc_total(
        muted, [s.values for s in ct_specs], [s.values for s in ff_specs],
        filters, alpha, objective,
    )
    sa_terms = []
    if beta != 0.0:
        if ct_waves is None:
            ct_waves = [istft(s).samples for s in ct_specs]
        for c, z in enumerate(estimates):
            est_wav = istft(z).samples
            sa_terms.append(sa_loss(est_wav, ct_waves[c], activity[c], speaker=c))
    return LossBreakdown(mc.mc_close, mc.mc_far, sa_terms, alpha, beta)
