"""STFT analysis/synthesis and the waveform/spectrogram data model.

Conventions used throughout the package:

* analysis and synthesis windows are both the square root of a periodic
  Hann window, so the overlap-added product is plain Hann;
* the FFT size equals the window length in samples (no zero-padded FFT);
* signals are zero-padded by ``win - hop`` samples on both sides before
  framing, so every input sample is covered by a full complement of
  windows and the round trip is exact to machine precision;
* all complex processing is done in double precision.

With hop dividing the window length the overlap-added Hann sums to the
constant ``win / (2 * hop)`` (exactly 1 at 50% overlap); synthesis divides
by this constant.  Spectrogram energy relates to signal energy by the
fixed factor ``fft_size * win / (2 * hop)`` when bins are counted with
their two-sided multiplicity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError

__all__ = ["Waveform", "StftConfig", "Spectrogram", "stft", "istft", "istft_grad"]


@dataclass
class Waveform:
    """A mono time-domain signal with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise DimensionError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be a positive integer")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    """Analysis/synthesis parameters in milliseconds (sample-rate agnostic)."""

    win_ms: float = 16.0
    hop_ms: float = 8.0
    window: str = "sqrt-hann"

    def __post_init__(self):
        if self.win_ms <= 0 or self.hop_ms <= 0:
            raise ConfigurationError("win_ms and hop_ms must be positive")
        if self.window != "sqrt-hann":
            raise ConfigurationError(f"unsupported window {self.window!r}")

    def win_samples(self, sample_rate: int) -> int:
        return _ms_to_samples(self.win_ms, sample_rate, "win_ms")

    def hop_samples(self, sample_rate: int) -> int:
        hop = _ms_to_samples(self.hop_ms, sample_rate, "hop_ms")
        win = self.win_samples(sample_rate)
        if win % hop != 0:
            raise ConfigurationError(
                f"hop ({hop} samples) must divide window ({win} samples)"
            )
        return hop

    def fft_size(self, sample_rate: int) -> int:
        # FFT size equals the window length; F = fft_size // 2 + 1.
        return self.win_samples(sample_rate)

    def num_bins(self, sample_rate: int) -> int:
        return self.fft_size(sample_rate) // 2 + 1


def _ms_to_samples(ms: float, sample_rate: int, name: str) -> int:
    exact = ms * sample_rate / 1000.0
    n = int(round(exact))
    if abs(exact - n) > 1e-9 or n < 1:
        raise ConfigurationError(
            f"{name}={ms} ms is not an integer number of samples at {sample_rate} Hz"
        )
    return n


def _sqrt_hann(win: int) -> np.ndarray:
    # periodic Hann, so shifted copies at hop = win/m overlap-add to m/2
    n = np.arange(win)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / win))


def _cola_constant(win: int, hop: int) -> float:
    return win / (2.0 * hop)


@dataclass
class Spectrogram:
    """Complex STFT values indexed ``[frame t, frequency f]``."""

    values: np.ndarray
    config: StftConfig
    sample_rate: int
    original_length: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise DimensionError("spectrogram values must be 2-D [t, f]")
        if self.values.shape[1] != self.config.num_bins(self.sample_rate):
            raise DimensionError(
                f"expected {self.config.num_bins(self.sample_rate)} bins, "
                f"got {self.values.shape[1]}"
            )

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def num_bins(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "Spectrogram":
        """Same geometry, new complex values."""
        return Spectrogram(values, self.config, self.sample_rate, self.original_length)

    def copy(self) -> "Spectrogram":
        return self.with_values(self.values.copy())


def num_frames_for(length: int, win: int, hop: int) -> int:
    """Frame count produced by `stft` for a signal of `length` samples."""
    padded = length + 2 * (win - hop)
    return int(np.ceil((padded - win) / hop)) + 1


def max_length_for(num_frames: int, win: int, hop: int) -> int:
    """Longest signal representable by `num_frames` frames (see `istft`)."""
    return (num_frames - 1) * hop + 2 * hop - win


def stft(w: Waveform, cfg: StftConfig) -> Spectrogram:
    """Forward STFT with symmetric ``win - hop`` zero-padding.

    Frame t of the padded signal covers samples ``[t*hop, t*hop + win)``;
    sample n of the original signal sits at padded position
    ``n + (win - hop)``.
    """
    win = cfg.win_samples(w.sample_rate)
    hop = cfg.hop_samples(w.sample_rate)
    window = _sqrt_hann(win)
    n = w.samples.size
    t_frames = num_frames_for(n, win, hop)
    padded_len = (t_frames - 1) * hop + win
    buf = np.zeros(padded_len)
    buf[win - hop : win - hop + n] = w.samples
    frames = np.lib.stride_tricks.sliding_window_view(buf, win)[::hop]
    spec = np.fft.rfft(frames * window, n=win, axis=1)
    return Spectrogram(spec, cfg, w.sample_rate, n)


def istft(s: Spectrogram, length: int | None = None) -> Waveform:
    """Inverse STFT by overlap-add with the same sqrt-Hann window.

    Output is trimmed to `length` samples (defaults to
    ``s.original_length``).  `length` must not exceed what the frame
    count can represent with a full complement of windows.
    """
    if length is None:
        length = s.original_length
    win = s.config.win_samples(s.sample_rate)
    hop = s.config.hop_samples(s.sample_rate)
    t_frames = s.num_frames
    if length < 0 or length > max_length_for(t_frames, win, hop):
        raise DimensionError(
            f"length {length} not representable by {t_frames} frames "
            f"(max {max_length_for(t_frames, win, hop)})"
        )
    window = _sqrt_hann(win)
    frames = np.fft.irfft(s.values, n=win, axis=1) * window
    buf = np.zeros((t_frames - 1) * hop + win)
    for t in range(t_frames):
        buf[t * hop : t * hop + win] += frames[t]
    buf /= _cola_constant(win, hop)
    out = buf[win - hop : win - hop + length]
    return Waveform(out, s.sample_rate)


def istft_grad(s: Spectrogram, wave_grad: np.ndarray) -> np.ndarray:
    """Adjoint of `istft`: gradient w.r.t. spectrogram values.

    Args:
        s: spectrogram defining the geometry (values unused).
        wave_grad: d(loss)/d(waveform sample), length = s.original_length.

    Returns:
        Complex array (T, F) where the real/imag parts are the partial
        derivatives w.r.t. the real/imag parts of each STFT value.
    """
    win = s.config.win_samples(s.sample_rate)
    hop = s.config.hop_samples(s.sample_rate)
    t_frames = s.num_frames
    wave_grad = np.asarray(wave_grad, dtype=np.float64)
    if wave_grad.size != s.original_length:
        raise DimensionError("wave_grad length must equal original_length")
    window = _sqrt_hann(win)
    buf = np.zeros((t_frames - 1) * hop + win)
    buf[win - hop : win - hop + wave_grad.size] = wave_grad
    buf /= _cola_constant(win, hop)
    frames = np.lib.stride_tricks.sliding_window_view(buf, win)[::hop] * window
    g = np.fft.rfft(frames, n=win, axis=1) * (2.0 / win)
    # DC and Nyquist bins are counted once in irfft; their imaginary
    # parts never reach the output
    g[:, 0] = g[:, 0].real * 0.5
    g[:, -1] = g[:, -1].real * 0.5
    return g
