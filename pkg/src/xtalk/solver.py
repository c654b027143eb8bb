"""Alternating blind-deconvolution optimizer for per-scene separation.

Filters and source estimates are optimized in alternation: a closed-form
weighted-least-squares step refits all subband filters against the
current estimates, then a configurable number of backtracked
(sub)gradient steps move the estimates (or complex masks) against the
combined mixture-constraint / speaker-activity objective.  A refit is
accepted only if it does not increase the objective, so with
backtracking enabled the recorded loss trace is monotone non-increasing.

Estimates are initialized at the close-talk mixtures (masks at one).
In weakly-supervised mode the estimates are muted by the annotated
speaker activity before every filter refit and inside the
mixture-constraint terms, the speaker-activity penalty is added with
weight beta, and the returned estimates carry the muting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fcp import FcpConfig, FilterEstimate, adjoint_filter, estimate_all_filters
from .losses import (
    LossBreakdown,
    activity_mask,
    l2_div,
    f_div,
    mute,
    reconstruct_close_talk,
    reconstruct_far_field,
    resolve_alpha,
    sa_loss,
    total_loss,
)
from .stft import Spectrogram, istft, istft_grad

__all__ = [
    "SolveConfig",
    "SeparatorState",
    "SolveResult",
    "init_estimates",
    "filter_step",
    "source_step",
    "loss_gradient",
    "solve",
    "solve_scene",
]


@dataclass(frozen=True)
class SolveConfig:
    max_iters: int = 30
    inner_steps: int = 8
    fcp: FcpConfig = field(default_factory=FcpConfig)
    alpha: float | None = None          # None -> 1/P
    beta: float = 1.0
    mode: str = "unsupervised"          # or "weakly-supervised"
    objective: str = "f-abs"            # or "l2"
    parametrization: str = "direct"     # or "mask"
    step_size: float = 0.5              # first move, as a fraction of the estimate norm
    backtracking: bool = True
    shrink: float = 0.5
    grow: float = 1.5
    sufficient_decrease: float = 1e-4
    epsilon_mag: float = 1e-8
    tol: float = 1e-6
    tol_window: int = 5
    min_active_s: float = 0.1
    threads: int = 1

    def __post_init__(self):
        if self.mode not in ("unsupervised", "weakly-supervised"):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.objective not in ("f-abs", "l2"):
            raise ConfigurationError(f"unknown objective {self.objective!r}")
        if self.parametrization not in ("direct", "mask"):
            raise ConfigurationError(
                f"unknown parametrization {self.parametrization!r}"
            )
        if self.step_size <= 0 or self.epsilon_mag <= 0:
            raise ConfigurationError("step_size and epsilon_mag must be positive")
        if not (0 < self.shrink < 1):
            raise ConfigurationError("shrink must be in (0, 1)")


@dataclass
class SeparatorState:
    """Mutable optimizer state for one scene."""

    estimates: list[Spectrogram]
    masks: list[np.ndarray] | None      # mask parametrization only
    step_size: float                    # absolute step, set on first move
    iteration: int
    loss_trace: list[LossBreakdown]
    status: str = "running"


@dataclass
class SolveResult:
    estimates: list[Spectrogram]
    loss_trace: list[LossBreakdown]
    status: str
    iterations: int


def init_estimates(ct_specs: list[Spectrogram], cfg: SolveConfig) -> SeparatorState:
    """Start every estimate at its close-talk mixture (mask at unity)."""
    if not ct_specs:
        raise ConfigurationError("at least one close-talk mixture is required")
    if cfg.parametrization == "mask":
        masks = [np.ones_like(s.values) for s in ct_specs]
        estimates = [s.with_values(masks[c] * s.values) for c, s in enumerate(ct_specs)]
        return SeparatorState(estimates, masks, 0.0, 0, [])
    estimates = [s.copy() for s in ct_specs]
    return SeparatorState(estimates, None, 0.0, 0, [])


def filter_step(
    estimates: list[Spectrogram],
    ct_specs: list[Spectrogram],
    ff_specs: list[Spectrogram],
    cfg: SolveConfig,
    activity: np.ndarray | None = None,
) -> FilterEstimate:
    """Closed-form filter refit against the (muted, in weak mode) estimates."""
    if activity is not None:
        base = [
            mute(z, activity[c], cfg.min_active_s).values
            for c, z in enumerate(estimates)
        ]
    else:
        base = [z.values for z in estimates]
    return estimate_all_filters(
        base,
        [s.values for s in ct_specs],
        [s.values for s in ff_specs],
        cfg.fcp,
        cfg.threads,
    )


def _unit_subgrad(mixture: np.ndarray, recon: np.ndarray, objective: str,
                  epsilon_mag: float) -> np.ndarray:
    """Elementwise (sub)gradient of the per-unit distance w.r.t. the
    reconstruction, already divided by the mixture normalizer."""
    if objective == "l2":
        den = np.sum(np.abs(mixture) ** 2)
        return 2.0 * (recon - mixture) / den
    den = np.sum(np.abs(mixture))
    err = recon - mixture
    mag = np.abs(recon)
    smooth = np.sqrt(recon.real**2 + recon.imag**2 + epsilon_mag**2)
    sig = np.sign(mag - np.abs(mixture))
    g = (
        np.sign(err.real) + sig * recon.real / smooth
        + 1j * (np.sign(err.imag) + sig * recon.imag / smooth)
    )
    return g / den


def loss_gradient(
    estimates: list[Spectrogram],
    ct_specs: list[Spectrogram],
    ff_specs: list[Spectrogram],
    filters: FilterEstimate,
    alpha: float | None = None,
    beta: float = 0.0,
    activity: np.ndarray | None = None,
    ct_waves: list[np.ndarray] | None = None,
    objective: str = "f-abs",
    epsilon_mag: float = 1e-8,
    min_active_s: float = 0.1,
) -> tuple[list[np.ndarray], LossBreakdown]:
    """Total loss and its (sub)gradient w.r.t. every estimate spectrogram.

    Gradients use the convention g = dL/d(Re Z) + 1j * dL/d(Im Z), so a
    step along -g is steepest descent.  The returned breakdown matches
    `losses.total_loss` on the same inputs exactly.
    """
    alpha = resolve_alpha(alpha, len(ff_specs))
    div = f_div if objective == "f-abs" else l2_div
    c_num = len(estimates)
    cfg = filters.cfg
    masks = None
    if activity is not None:
        activity = np.atleast_2d(np.asarray(activity))
        am = activity_mask(activity, estimates[0], min_active_s)
        masks = [am.mask(c)[:, None] for c in range(c_num)]
        work = [z.values * masks[c] for c, z in enumerate(estimates)]
    else:
        work = [z.values for z in estimates]

    grads = [np.zeros_like(z.values) for z in estimates]
    mc_close, mc_far = [], []
    for mic in range(len(ct_specs)):
        y = ct_specs[mic].values
        recon = reconstruct_close_talk(mic, work, filters)
        mc_close.append(div(y, recon))
        s = _unit_subgrad(y, recon, objective, epsilon_mag)
        grads[mic] += s
        for src in range(c_num):
            if src == mic:
                continue
            grads[src] += adjoint_filter(
                filters.ct[mic, src], s, cfg.past_taps, cfg.future_taps
            )
    for p in range(len(ff_specs)):
        y = ff_specs[p].values
        recon = reconstruct_far_field(p, work, filters)
        mc_far.append(div(y, recon))
        s = _unit_subgrad(y, recon, objective, epsilon_mag)
        for src in range(c_num):
            grads[src] += alpha * adjoint_filter(
                filters.ff[p, src], s, cfg.past_taps, cfg.future_taps
            )
    if masks is not None:
        for c in range(c_num):
            grads[c] *= masks[c]

    sa_terms = []
    if activity is not None and beta != 0.0:
        if ct_waves is None:
            ct_waves = [istft(s).samples for s in ct_specs]
        for c, z in enumerate(estimates):
            est_wav = istft(z).samples
            sa_terms.append(sa_loss(est_wav, ct_waves[c], activity[c], speaker=c))
            silent = 1.0 - activity[c].astype(np.float64)
            den = float(np.sum(np.abs(ct_waves[c]) * silent))
            count = float(silent.sum())
            if count > 0.0 and den > 0.0:
                scale = count / est_wav.size
                wave_grad = np.sign(est_wav) * silent * (scale / den)
                grads[c] += beta * istft_grad(z, wave_grad)
    breakdown = LossBreakdown(mc_close, mc_far, sa_terms, alpha, beta)
    return grads, breakdown


def _evaluate(estimates, ct_specs, ff_specs, filters, cfg, activity, ct_waves):
    return total_loss(
        estimates, ct_specs, ff_specs, filters,
        alpha=cfg.alpha,
        beta=cfg.beta if activity is not None else 0.0,
        activity=activity, ct_waves=ct_waves,
        min_active_s=cfg.min_active_s, objective=cfg.objective,
    )


def source_step(
    state: SeparatorState,
    ct_specs: list[Spectrogram],
    ff_specs: list[Spectrogram],
    filters: FilterEstimate,
    cfg: SolveConfig,
    current: LossBreakdown,
    activity: np.ndarray | None = None,
    ct_waves: list[np.ndarray] | None = None,
) -> LossBreakdown:
    """One backtracked (sub)gradient step on the estimates, in place.

    Returns the loss after the step; sets ``state.status`` to
    ``converged-with-warning`` if the line search underflows, or to
    ``stationary`` when the gradient vanishes.
    """
    grads, _ = loss_gradient(
        state.estimates, ct_specs, ff_specs, filters,
        alpha=cfg.alpha, beta=cfg.beta if activity is not None else 0.0,
        activity=activity, ct_waves=ct_waves,
        objective=cfg.objective, epsilon_mag=cfg.epsilon_mag,
        min_active_s=cfg.min_active_s,
    )
    if state.masks is not None:
        grads = [g * np.conj(ct_specs[c].values) for c, g in enumerate(grads)]
        ref_norm = np.sqrt(sum(float(np.sum(np.abs(m) ** 2)) for m in state.masks))
    else:
        ref_norm = np.sqrt(
            sum(float(np.sum(np.abs(z.values) ** 2)) for z in state.estimates)
        )
    gnorm2 = sum(float(np.sum(np.abs(g) ** 2)) for g in grads)
    if gnorm2 == 0.0:
        state.status = "stationary"
        return current
    if state.step_size <= 0.0:
        state.step_size = cfg.step_size * max(ref_norm, 1e-300) / np.sqrt(gnorm2)

    eta = state.step_size
    floor = state.step_size * 1e-14
    while True:
        if state.masks is not None:
            cand_masks = [m - eta * g for m, g in zip(state.masks, grads)]
            cand = [
                s.with_values(cand_masks[c] * s.values)
                for c, s in enumerate(ct_specs)
            ]
        else:
            cand_masks = None
            cand = [
                z.with_values(z.values - eta * g)
                for z, g in zip(state.estimates, grads)
            ]
        new_loss = _evaluate(cand, ct_specs, ff_specs, filters, cfg,
                             activity, ct_waves)
        enough = current.total - cfg.sufficient_decrease * eta * gnorm2
        if new_loss.total <= enough or not cfg.backtracking:
            state.estimates = cand
            state.masks = cand_masks
            state.step_size = eta * cfg.grow
            return new_loss
        eta *= cfg.shrink
        if eta < floor:
            state.status = "converged-with-warning"
            return current


def solve(
    ct_specs: list[Spectrogram],
    ff_specs: list[Spectrogram],
    activity: np.ndarray | None = None,
    cfg: SolveConfig = SolveConfig(),
) -> SolveResult:
    """Alternate filter refits and source steps until convergence.

    Args:
        ct_specs: close-talk mixture spectrograms, one per speaker.
        ff_specs: far-field mixture spectrograms (may be empty when
            alpha is given explicitly).
        activity: (C, N) sample-domain activity, required in
            weakly-supervised mode.
        cfg: solver configuration.

    Returns:
        `SolveResult` whose estimates are muted by the activity in
        weakly-supervised mode.
    """
    weak = cfg.mode == "weakly-supervised"
    if weak and activity is None:
        raise ConfigurationError("weakly-supervised mode needs activity timestamps")
    act = np.atleast_2d(np.asarray(activity)) if weak else None
    ct_waves = [istft(s).samples for s in ct_specs] if weak else None

    def run_inner(filters, current):
        state.step_size = 0.0  # re-derive the step scale each round
        state.status = "running"
        for _ in range(cfg.inner_steps):
            current = source_step(state, ct_specs, ff_specs, filters, cfg,
                                  current, act, ct_waves)
            if state.status != "running":
                break
        return current

    state = init_estimates(ct_specs, cfg)
    filters = None
    current = None
    trace: list[LossBreakdown] = []
    status = "max-iters"
    for it in range(cfg.max_iters):
        state.iteration = it
        # refit provisionally; an outer round that ends worse than the
        # previous trace entry is rolled back, keeping the trace monotone
        new_filters = filter_step(state.estimates, ct_specs, ff_specs, cfg, act)
        cand = _evaluate(state.estimates, ct_specs, ff_specs, new_filters,
                         cfg, act, ct_waves)
        backup = [z.copy() for z in state.estimates]
        backup_masks = [m.copy() for m in state.masks] if state.masks else None
        tried = run_inner(new_filters, cand)
        if current is None or tried.total <= current.total:
            filters, current = new_filters, tried
        else:
            state.estimates = backup
            state.masks = backup_masks
            current = run_inner(filters, current)
        trace.append(current)
        if state.status == "converged-with-warning":
            status = "converged-with-warning"
            break
        if state.status == "stationary":
            status = "converged"
            break
        if len(trace) > cfg.tol_window:
            ref = trace[-1 - cfg.tol_window].total
            if ref == 0.0 or (ref - trace[-1].total) / abs(ref) < cfg.tol:
                status = "converged"
                break
    state.loss_trace = trace

    out = state.estimates
    if weak:
        out = [
            mute(z, act[c], cfg.min_active_s) for c, z in enumerate(state.estimates)
        ]
    return SolveResult(out, trace, status, len(trace))


def solve_scene(scene, cfg: SolveConfig = SolveConfig()) -> SolveResult:
    """Run the separator on a simulated scene's mixture spectrograms."""
    activity = scene.activity if cfg.mode == "weakly-supervised" else None
    return solve(scene.ct_mix_specs, scene.ff_mix_specs, activity, cfg)
