"""Cross-talk reduction for close-talk microphone recordings.

A classical blind-deconvolution toolkit: multi-speaker scene simulation,
forward-convolutive-prediction filter estimation, mixture-constraint and
speaker-activity losses, an alternating per-scene separator, separation
metrics, and block-wise long-session processing.
"""

from .blocks import (
    Block,
    BlockPlan,
    blockwise_separate,
    passthrough_separator,
    plan_blocks,
    segment_training_windows,
    solver_separator,
)
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    NumericalError,
    XtalkError,
)
from .fcp import (
    FcpConfig,
    FilterEstimate,
    apply_filter,
    estimate_all_filters,
    estimate_filter,
    fcp_image,
    fcp_weights,
)
from .losses import (
    ActivityMask,
    LossBreakdown,
    activity_mask,
    f_div,
    l2_div,
    mc_loss_close_talk,
    mc_loss_far_field,
    mc_total,
    mute,
    sa_loss,
    total_loss,
)
from .manifest import SessionManifest, load_manifest, save_scene
from .metrics import ScoreReport, permute_resolve, sdr_proj, si_sdr
from .scenes import (
    Scene,
    SceneConfig,
    SubbandFilter,
    gen_conversation_activity,
    synth_scene,
    synth_subband_scene,
    synth_timedomain_scene,
)
from .solver import (
    SeparatorState,
    SolveConfig,
    SolveResult,
    init_estimates,
    loss_gradient,
    solve,
    solve_scene,
)
from .stft import Spectrogram, StftConfig, Waveform, istft, istft_grad, stft
from .wavio import read_wav, write_wav

__version__ = "0.1.0"
