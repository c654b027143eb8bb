"""Forward convolutive prediction: per-frequency weighted linear regression.

A subband filter with ``past`` taps (current frame included) and
``future`` taps relates a source spectrogram Z to its image at a
receiver through

    image(t, f) = sum_k conj(g[f, k]) * Z(t - past + 1 + k, f),

i.e. tap index ``past - 1`` multiplies the current frame.  Filters are
estimated independently per (receiver, speaker, frequency) by minimizing
the weighted squared mismatch to the receiver's mixture; the weights
floor each time-frequency unit's power at ``xi`` times the mixture's
maximum power so that low-energy units still contribute.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError, NumericalError
from .stft import Spectrogram

__all__ = [
    "FcpConfig",
    "FilterEstimate",
    "fcp_weights",
    "stack_taps",
    "estimate_filter",
    "apply_filter",
    "adjoint_filter",
    "fcp_image",
    "estimate_all_filters",
]


@dataclass(frozen=True)
class FcpConfig:
    """Tap window and weighting parameters for filter estimation.

    ``weighting`` selects the per-unit regression weights used when a
    whole filter bank is estimated: ``"mixture-power"`` floors the
    receiver's unit power at xi times its maximum (the standard choice),
    ``"uniform"`` weights every unit equally (the plain least-squares
    subproblem of the deconvolution objective).
    """

    past_taps: int = 30
    future_taps: int = 0
    xi: float = 1e-3
    diag_load: float = 1e-5
    weighting: str = "mixture-power"

    def __post_init__(self):
        if self.past_taps < 1 or self.future_taps < 0:
            raise ConfigurationError("need past_taps >= 1 and future_taps >= 0")
        if self.xi <= 0:
            raise ConfigurationError("xi must be positive")
        if self.diag_load < 0:
            raise ConfigurationError("diag_load must be non-negative")
        if self.weighting not in ("mixture-power", "uniform"):
            raise ConfigurationError(f"unknown weighting {self.weighting!r}")

    @property
    def num_taps(self) -> int:
        return self.past_taps + self.future_taps


def fcp_weights(mixture: np.ndarray, xi: float) -> np.ndarray:
    """Per-unit regression weights: xi * max power + unit power.

    Args:
        mixture: complex mixture spectrogram values (T, F).
        xi: positive floor factor.

    Returns:
        Real array (T, F), strictly positive.
    """
    power = np.abs(np.asarray(mixture)) ** 2
    peak = power.max()
    if peak == 0.0:
        raise DataError("all-zero mixture: regression weights are degenerate")
    return xi * peak + power


def stack_taps(values: np.ndarray, past: int, future: int) -> np.ndarray:
    """Stack a (T, F) spectrogram into a (T, F, past+future) tap window.

    Entry [t, f, k] holds values[t - past + 1 + k, f]; positions outside
    [0, T) are zero.
    """
    t_frames, f_bins = values.shape
    k = past + future
    out = np.zeros((t_frames, f_bins, k), dtype=values.dtype)
    for i in range(k):
        off = i - (past - 1)
        src_lo, src_hi = max(0, off), min(t_frames, t_frames + off)
        dst_lo, dst_hi = max(0, -off), min(t_frames, t_frames - off)
        out[dst_lo:dst_hi, :, i] = values[src_lo:src_hi]
    return out


def _load_and_solve(a: np.ndarray, b: np.ndarray, diag_load: float) -> np.ndarray:
    """Solve the per-frequency normal equations with trace-scaled loading."""
    k = a.shape[-1]
    trace = np.einsum("fkk->f", a).real
    if diag_load > 0:
        a = a + (diag_load * trace / k)[:, None, None] * np.eye(k)
    zero_rows = trace <= 0.0
    sol = np.zeros_like(b)
    todo = ~zero_rows
    if np.any(todo):
        try:
            sol[todo] = np.linalg.solve(a[todo], b[todo][:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            for f in np.nonzero(todo)[0]:
                try:
                    sol[f] = np.linalg.solve(a[f], b[f])
                except np.linalg.LinAlgError:
                    raise NumericalError(
                        f"singular normal matrix at frequency bin {f}"
                    ) from None
    return sol


def estimate_filter(
    z_hat: np.ndarray,
    mixture: np.ndarray,
    weights: np.ndarray,
    cfg: FcpConfig,
    threads: int = 1,
) -> np.ndarray:
    """Closed-form weighted least squares, one tap vector per frequency.

    Args:
        z_hat: source estimate values (T, F).
        mixture: receiver mixture values (T, F).
        weights: positive weights (T, F) from `fcp_weights`.
        cfg: tap window, xi and diagonal loading.

    Returns:
        Complex taps (F, past+future) in the Hermitian-application
        convention used by `apply_filter`.
    """
    z_hat = np.asarray(z_hat)
    mixture = np.asarray(mixture)
    if z_hat.shape != mixture.shape or z_hat.shape != weights.shape:
        raise DimensionError("source, mixture and weights must share (T, F)")
    t_frames = z_hat.shape[0]
    if t_frames < cfg.num_taps:
        raise ConfigurationError(
            f"need at least {cfg.num_taps} frames, got {t_frames}"
        )
    window = stack_taps(z_hat, cfg.past_taps, cfg.future_taps)
    wconj = window.conj() / weights[:, :, None]

    def solve_bins(sl):
        a = np.einsum("tfk,tfl->fkl", wconj[:, sl], window[:, sl], optimize=True)
        b = np.einsum("tfk,tf->fk", wconj[:, sl], mixture[:, sl], optimize=True)
        return _load_and_solve(a, b, cfg.diag_load)

    f_bins = z_hat.shape[1]
    if threads > 1 and f_bins > 1:
        chunks = np.array_split(np.arange(f_bins), min(threads, f_bins))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ix: solve_bins(slice(ix[0], ix[-1] + 1)), chunks))
        coef = np.concatenate(parts, axis=0)
    else:
        coef = solve_bins(slice(None))
    return coef.conj()


def apply_filter(taps: np.ndarray, z_hat: np.ndarray, past: int, future: int) -> np.ndarray:
    """Subband convolution: out(t,f) = sum_k conj(taps[f,k]) z_hat(t-past+1+k, f)."""
    window = stack_taps(np.asarray(z_hat), past, future)
    return np.einsum("tfk,fk->tf", window, taps.conj(), optimize=True)


def adjoint_filter(taps: np.ndarray, grad: np.ndarray, past: int, future: int) -> np.ndarray:
    """Adjoint of `apply_filter` w.r.t. its source argument.

    Propagates a gradient at the filter output back to the source:
    out(t,f) = sum_k taps[f,k] * grad(t + past - 1 - k, f).
    """
    grad = np.asarray(grad)
    t_frames, f_bins = grad.shape
    k = past + future
    out = np.zeros((t_frames, f_bins), dtype=np.complex128)
    for i in range(k):
        off = past - 1 - i
        src_lo, src_hi = max(0, off), min(t_frames, t_frames + off)
        dst_lo, dst_hi = max(0, -off), min(t_frames, t_frames - off)
        out[dst_lo:dst_hi] += taps[None, :, i] * grad[src_lo:src_hi]
    return out


def fcp_image(taps: np.ndarray, z_hat: Spectrogram, cfg: FcpConfig) -> Spectrogram:
    """Filtered source estimate approximating the speaker image at a receiver."""
    if taps.shape != (z_hat.num_bins, cfg.num_taps):
        raise DimensionError(
            f"taps shape {taps.shape} does not match "
            f"({z_hat.num_bins}, {cfg.num_taps})"
        )
    return z_hat.with_values(
        apply_filter(taps, z_hat.values, cfg.past_taps, cfg.future_taps)
    )


def identity_taps(f_bins: int, past: int, future: int) -> np.ndarray:
    """Unit single tap at lag zero: applying it reproduces the input."""
    taps = np.zeros((f_bins, past + future), dtype=np.complex128)
    taps[:, past - 1] = 1.0
    return taps


@dataclass
class FilterEstimate:
    """Per-(receiver, speaker, frequency) tap vectors.

    ``ct[c, c_src]`` holds the taps relating speaker ``c_src`` to
    close-talk microphone ``c``; the diagonal is the identity impulse
    (the wearer's own speech reaches its microphone unfiltered).
    ``ff[p, c_src]`` covers the far-field microphones.
    """

    ct: np.ndarray  # (C, C, F, K)
    ff: np.ndarray  # (P, C, F, K)
    cfg: FcpConfig

    @property
    def num_speakers(self) -> int:
        return self.ct.shape[0]

    @property
    def num_far_mics(self) -> int:
        return self.ff.shape[0]


def estimate_all_filters(
    estimates: list[np.ndarray],
    ct_mixtures: list[np.ndarray],
    ff_mixtures: list[np.ndarray],
    cfg: FcpConfig,
    threads: int = 1,
) -> FilterEstimate:
    """FCP for every (receiver, speaker) pair needed by the mixture losses.

    At close-talk microphone c only the interfering speakers are
    estimated; the (c, c) slot keeps the identity impulse.
    """
    num_c = len(estimates)
    num_p = len(ff_mixtures)
    if len(ct_mixtures) != num_c:
        raise ConfigurationError("one close-talk mixture per speaker is required")
    f_bins = np.asarray(estimates[0]).shape[1]
    k = cfg.num_taps

    def weights_for(mixture):
        if cfg.weighting == "uniform":
            return np.ones(np.asarray(mixture).shape)
        return fcp_weights(mixture, cfg.xi)

    ct = np.zeros((num_c, num_c, f_bins, k), dtype=np.complex128)
    ff = np.zeros((num_p, num_c, f_bins, k), dtype=np.complex128)
    for mic in range(num_c):
        w = weights_for(ct_mixtures[mic])
        for src in range(num_c):
            if src == mic:
                ct[mic, src] = identity_taps(f_bins, cfg.past_taps, cfg.future_taps)
            else:
                ct[mic, src] = estimate_filter(
                    estimates[src], ct_mixtures[mic], w, cfg, threads
                )
    for p in range(num_p):
        w = weights_for(ff_mixtures[p])
        for src in range(num_c):
            ff[p, src] = estimate_filter(
                estimates[src], ff_mixtures[p], w, cfg, threads
            )
    return FilterEstimate(ct, ff, cfg)
