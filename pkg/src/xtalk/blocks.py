"""Block-wise processing of long sessions and training-segment planning.

Long sessions are cut into fixed-length blocks whose starts advance by
the emit length (block length minus two context margins); each block is
gain-normalized per channel, separated, rescaled, and only its center
region is emitted (the first and last blocks also emit their outer
context).  The per-channel gain is the block's sample standard deviation
rounded to the nearest power of two, so the divide/multiply pair
round-trips bit-exactly; a silent channel is passed through unscaled.
The final block is right-aligned to the session end and earlier blocks
win in the overlap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .stft import StftConfig, Waveform, istft, stft

__all__ = [
    "BlockPlan",
    "Block",
    "plan_blocks",
    "blockwise_separate",
    "segment_training_windows",
    "solver_separator",
    "passthrough_separator",
]


@dataclass(frozen=True)
class BlockPlan:
    block_len_s: float = 8.0
    context_s: float = 0.96

    def __post_init__(self):
        if self.emit_len_s <= 0:
            raise ConfigurationError(
                "block length must exceed twice the context length"
            )

    @property
    def emit_len_s(self) -> float:
        return self.block_len_s - 2.0 * self.context_s


@dataclass(frozen=True)
class Block:
    start: int
    end: int
    emit_start: int
    emit_end: int


def plan_blocks(num_samples: int, sample_rate: int, plan: BlockPlan) -> list[Block]:
    """Block boundaries in samples; regular grid plus a right-aligned tail."""
    block_len = int(round(plan.block_len_s * sample_rate))
    context = int(round(plan.context_s * sample_rate))
    emit = block_len - 2 * context
    if emit <= 0:
        raise ConfigurationError("emit region is empty at this sample rate")
    if num_samples <= block_len:
        return [Block(0, num_samples, 0, num_samples)]
    starts = []
    b = 0
    while b * emit + block_len <= num_samples:
        starts.append(b * emit)
        b += 1
    if starts[-1] + block_len < num_samples:
        starts.append(num_samples - block_len)
    blocks = []
    for i, s in enumerate(starts):
        end = s + block_len
        emit_start = 0 if i == 0 else s + context
        emit_end = num_samples if i == len(starts) - 1 else end - context
        blocks.append(Block(s, end, emit_start, emit_end))
    return blocks


def _pow2_sigma(x: np.ndarray) -> float:
    sigma = float(np.std(x))
    if sigma <= 0.0 or not math.isfinite(sigma):
        warnings.warn("silent block channel: passing through unscaled")
        return 1.0
    return 2.0 ** round(math.log2(sigma))


def passthrough_separator(ct, ff, activity=None):
    """Identity separator: each output is its normalized close-talk mixture."""
    return list(ct)


def solver_separator(solve_cfg, stft_cfg: StftConfig | None = None):
    """Build a block separator that runs the blind-deconvolution solver."""
    from .solver import solve

    stft_cfg = stft_cfg or StftConfig()

    def run(ct, ff, activity=None):
        ct_specs = [stft(w, stft_cfg) for w in ct]
        ff_specs = [stft(w, stft_cfg) for w in ff]
        result = solve(ct_specs, ff_specs, activity, solve_cfg)
        n = ct[0].samples.size
        return [istft(z, n) for z in result.estimates]

    return run


def blockwise_separate(
    ct_waves: list[Waveform],
    ff_waves: list[Waveform],
    separator,
    plan: BlockPlan = BlockPlan(),
    activity: np.ndarray | None = None,
) -> list[Waveform]:
    """Run a separator block-by-block over a full session.

    Args:
        ct_waves: close-talk mixtures, one per speaker (full session).
        ff_waves: far-field mixtures.
        separator: callable (ct_blocks, ff_blocks, activity_block) ->
            per-speaker waveform estimates for one block, operating on
            gain-normalized inputs.
        plan: block/context lengths.
        activity: optional (C, N) sample activity, sliced per block.

    Returns:
        Per-speaker estimates with exactly the session's length.
    """
    sr = ct_waves[0].sample_rate
    n = ct_waves[0].samples.size
    c_num = len(ct_waves)
    out = [np.zeros(n) for _ in range(c_num)]
    cursor = 0
    for block in plan_blocks(n, sr, plan):
        sl = slice(block.start, block.end)
        ct_sigma = [_pow2_sigma(w.samples[sl]) for w in ct_waves]
        ct_blocks = [
            Waveform(w.samples[sl] / s, sr) for w, s in zip(ct_waves, ct_sigma)
        ]
        ff_blocks = [
            Waveform(w.samples[sl] / _pow2_sigma(w.samples[sl]), sr)
            for w in ff_waves
        ]
        act_block = activity[:, sl] if activity is not None else None
        estimates = separator(ct_blocks, ff_blocks, act_block)
        lo = max(block.emit_start, cursor)
        hi = block.emit_end
        if hi <= lo:
            continue
        for c in range(c_num):
            rescaled = estimates[c].samples * ct_sigma[c]
            out[c][lo:hi] = rescaled[lo - block.start : hi - block.start]
        cursor = hi
    return [Waveform(x, sr) for x in out]


@dataclass(frozen=True)
class Segment:
    start: int
    end: int


def segment_training_windows(
    num_samples: int,
    sample_rate: int,
    seg_len_s: float = 8.0,
    overlap: float = 0.5,
) -> list[Segment]:
    """Fixed-length segments with fractional overlap; a trailing partial
    segment is dropped.  Sessions shorter than one segment yield a single
    whole-session segment."""
    if not (0.0 <= overlap < 1.0):
        raise ConfigurationError("overlap must be in [0, 1)")
    seg = int(round(seg_len_s * sample_rate))
    hop = int(round(seg * (1.0 - overlap)))
    if hop < 1:
        raise ConfigurationError("segment hop must be at least one sample")
    if num_samples <= seg:
        return [Segment(0, num_samples)]
    out = []
    start = 0
    while start + seg <= num_samples:
        out.append(Segment(start, start + seg))
        start += hop
    return out
