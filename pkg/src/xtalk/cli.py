"""Command-line interface: simulate | separate | evaluate | loss | fcp-check.

Configuration values can come from a JSON file (``--config``), either
nested or with dotted keys; individual command-line flags override file
values.  Errors are reported to stderr as single-line JSON records and
mapped to exit codes: 0 success, 1 usage, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .blocks import BlockPlan, blockwise_separate
from .errors import ConfigurationError, DataError, XtalkError
from .fcp import FcpConfig, estimate_filter, fcp_weights
from .losses import mute, total_loss
from .manifest import load_manifest, save_scene
from .metrics import permute_resolve, sdr_proj, si_sdr
from .scenes import SceneConfig, synth_scene
from .solver import SolveConfig, filter_step, solve
from .stft import StftConfig, istft, stft
from .wavio import read_wav, write_wav

__all__ = ["cli_dispatch", "main"]

_KNOWN_KEYS: dict[str, type] = {
    "stft.win_ms": float,
    "stft.hop_ms": float,
    "fcp.past_taps": int,
    "fcp.future_taps": int,
    "fcp.xi": float,
    "fcp.diag_load": float,
    "loss.alpha": float,
    "loss.beta": float,
    "solver.max_iters": int,
    "solver.inner_steps": int,
    "solver.mode": str,
    "solver.objective": str,
    "solver.parametrization": str,
    "solver.step_size": float,
    "solver.backtracking": bool,
    "solver.shrink": float,
    "solver.grow": float,
    "solver.sufficient_decrease": float,
    "solver.epsilon_mag": float,
    "solver.tol": float,
    "solver.tol_window": int,
    "solver.min_active_s": float,
    "block.len_s": float,
    "block.context_s": float,
}

_DEFAULTS: dict = {
    "stft.win_ms": 16.0,
    "stft.hop_ms": 8.0,
    "fcp.past_taps": 30,
    "fcp.future_taps": 0,
    "fcp.xi": 1e-3,
    "fcp.diag_load": 1e-5,
    "loss.alpha": None,  # 1/P
    "loss.beta": 1.0,
    "solver.max_iters": 30,
    "solver.inner_steps": 8,
    "solver.mode": "unsupervised",
    "solver.objective": "f-abs",
    "solver.parametrization": "direct",
    "solver.step_size": 0.5,
    "solver.backtracking": True,
    "solver.shrink": 0.5,
    "solver.grow": 1.5,
    "solver.sufficient_decrease": 1e-4,
    "solver.epsilon_mag": 1e-8,
    "solver.tol": 1e-6,
    "solver.tol_window": 5,
    "solver.min_active_s": 0.1,
    "block.len_s": 8.0,
    "block.context_s": 0.96,
}


def _error_record(kind: str, message: str) -> None:
    print(json.dumps({"error": {"kind": kind, "message": message}}),
          file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems -> exit code 1
        _error_record("usage", message)
        raise SystemExit(1)


def _flatten(obj, prefix="") -> dict:
    flat = {}
    for key, value in obj.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _load_settings(config_path: str | None) -> dict:
    settings = dict(_DEFAULTS)
    if config_path is None:
        return settings
    try:
        with open(config_path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{config_path}: invalid JSON ({exc})") from exc
    for key, value in _flatten(raw).items():
        if key not in _KNOWN_KEYS:
            raise ConfigurationError(f"unknown config key {key!r}")
        want = _KNOWN_KEYS[key]
        if value is None and key == "loss.alpha":
            settings[key] = None
            continue
        try:
            settings[key] = want(value)
        except (TypeError, ValueError):
            raise ConfigurationError(
                f"config key {key!r} expects {want.__name__}, got {value!r}"
            ) from None
    return settings


def _apply_overrides(settings: dict, pairs: list[tuple[str, object]]) -> None:
    for key, value in pairs:
        if value is not None:
            settings[key] = value


def _stft_config(settings) -> StftConfig:
    return StftConfig(settings["stft.win_ms"], settings["stft.hop_ms"])


def _fcp_config(settings) -> FcpConfig:
    return FcpConfig(
        past_taps=settings["fcp.past_taps"],
        future_taps=settings["fcp.future_taps"],
        xi=settings["fcp.xi"],
        diag_load=settings["fcp.diag_load"],
    )


def _solve_config(settings, threads: int) -> SolveConfig:
    return SolveConfig(
        max_iters=settings["solver.max_iters"],
        inner_steps=settings["solver.inner_steps"],
        fcp=_fcp_config(settings),
        alpha=settings["loss.alpha"],
        beta=settings["loss.beta"],
        mode=settings["solver.mode"],
        objective=settings["solver.objective"],
        parametrization=settings["solver.parametrization"],
        step_size=settings["solver.step_size"],
        backtracking=settings["solver.backtracking"],
        shrink=settings["solver.shrink"],
        grow=settings["solver.grow"],
        sufficient_decrease=settings["solver.sufficient_decrease"],
        epsilon_mag=settings["solver.epsilon_mag"],
        tol=settings["solver.tol"],
        tol_window=settings["solver.tol_window"],
        min_active_s=settings["solver.min_active_s"],
        threads=threads,
    )


def _block_plan(settings) -> BlockPlan:
    return BlockPlan(settings["block.len_s"], settings["block.context_s"])


def _build_parser() -> _Parser:
    parser = _Parser(prog="xtalk",
                     description="Cross-talk reduction toolkit")
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--seed", type=int, default=0, help="random seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for per-frequency solves")
    sub = parser.add_subparsers(dest="command", metavar="command")

    sim = sub.add_parser("simulate", help="render a synthetic scene",
                         parents=[], add_help=True)
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--stem", default="scene", help="file name stem")
    sim.add_argument("--speakers", type=int, default=2)
    sim.add_argument("--far-mics", type=int, default=2)
    sim.add_argument("--duration", type=float, default=4.0, help="seconds")
    sim.add_argument("--sample-rate", type=int, default=8000)
    sim.add_argument("--scene-mode", default="subband-exact",
                     choices=["subband-exact", "time-domain"])
    sim.add_argument("--overlap-style", default="full",
                     choices=["full", "sparse"])
    sim.add_argument("--overlap", type=float, default=0.25)
    sim.add_argument("--source-kind", default="white")
    sim.add_argument("--t60", type=float, nargs=2, default=[0.2, 0.5],
                     metavar=("LO", "HI"))
    sim.add_argument("--close-dist", type=float, nargs=2, default=[0.1, 0.3],
                     metavar=("LO", "HI"))
    sim.add_argument("--far-dist", type=float, nargs=2, default=[1.0, 2.0],
                     metavar=("LO", "HI"))
    sim.add_argument("--snr", type=float, nargs=2, default=[20.0, 30.0],
                     metavar=("LO", "HI"))
    sim.add_argument("--scene-taps", type=int, nargs=2, default=[6, 0],
                     metavar=("PAST", "FUTURE"))

    sep = sub.add_parser("separate", help="separate a session manifest")
    sep.add_argument("manifest")
    sep.add_argument("--out", required=True, help="output directory")
    sep.add_argument("--mode", choices=["unsupervised", "weakly-supervised"])
    sep.add_argument("--iters", type=int, help="outer solver iterations")
    sep.add_argument("--inner-steps", type=int)
    sep.add_argument("--alpha", type=float, help="far-field loss weight")
    sep.add_argument("--beta", type=float, help="speaker-activity loss weight")
    sep.add_argument("-I", "--past-taps", type=int)
    sep.add_argument("-J", "--future-taps", type=int)
    sep.add_argument("--xi", type=float, help="weighting floor")
    sep.add_argument("--objective", choices=["f-abs", "l2"])
    sep.add_argument("--parametrization", choices=["direct", "mask"])
    sep.add_argument("--block-len", type=float, help="block length (s)")
    sep.add_argument("--block-context", type=float, help="block context (s)")

    ev = sub.add_parser("evaluate", help="score estimates against references")
    ev.add_argument("manifest")
    ev.add_argument("--estimates", required=True,
                    help="directory with est_<speaker>.wav files")
    ev.add_argument("--csv", help="also write a CSV table")
    ev.add_argument("--permute", action="store_true",
                    help="resolve the speaker assignment exhaustively")

    lo = sub.add_parser("loss", help="loss breakdown for given estimates")
    lo.add_argument("manifest")
    lo.add_argument("--estimates", required=True,
                    help="directory with est_<speaker>.wav files")
    lo.add_argument("--mode", choices=["unsupervised", "weakly-supervised"])
    lo.add_argument("--alpha", type=float)
    lo.add_argument("--beta", type=float)
    lo.add_argument("-I", "--past-taps", type=int)
    lo.add_argument("-J", "--future-taps", type=int)
    lo.add_argument("--xi", type=float)

    fc = sub.add_parser("fcp-check",
                        help="filter recovery statistics on a ground-truth scene")
    fc.add_argument("manifest")
    fc.add_argument("-I", "--past-taps", type=int)
    fc.add_argument("-J", "--future-taps", type=int)
    fc.add_argument("--xi", type=float)
    fc.add_argument("--diag-load", type=float)
    return parser


def _cmd_simulate(args, settings) -> int:
    cfg = SceneConfig(
        num_speakers=args.speakers,
        num_far_mics=args.far_mics,
        duration_s=args.duration,
        sample_rate=args.sample_rate,
        mode=args.scene_mode,
        t60_range=tuple(args.t60),
        close_talk_dist_range=tuple(args.close_dist),
        far_dist_range=tuple(args.far_dist),
        noise_snr_range=tuple(args.snr),
        overlap_style=args.overlap_style,
        overlap=args.overlap,
        source_kind=args.source_kind,
        past_taps=args.scene_taps[0],
        future_taps=args.scene_taps[1],
        stft=_stft_config(settings),
        seed=args.seed,
    )
    scene = synth_scene(cfg)
    manifest_path = save_scene(scene, args.out, args.stem)
    print(json.dumps({"manifest": str(manifest_path)}))
    return 0


def _load_session(args, settings):
    manifest = load_manifest(args.manifest)
    stft_cfg = _stft_config(settings)
    ct = manifest.load_close_talk()
    ff = manifest.load_far_field()
    return manifest, stft_cfg, ct, ff


def _cmd_separate(args, settings, threads) -> int:
    _apply_overrides(settings, [
        ("solver.mode", args.mode),
        ("solver.max_iters", args.iters),
        ("solver.inner_steps", args.inner_steps),
        ("loss.alpha", args.alpha),
        ("loss.beta", args.beta),
        ("fcp.past_taps", args.past_taps),
        ("fcp.future_taps", args.future_taps),
        ("fcp.xi", args.xi),
        ("solver.objective", args.objective),
        ("solver.parametrization", args.parametrization),
        ("block.len_s", args.block_len),
        ("block.context_s", args.block_context),
    ])
    manifest, stft_cfg, ct, ff = _load_session(args, settings)
    solve_cfg = _solve_config(settings, threads)
    plan = _block_plan(settings)
    activity = manifest.activity()
    traces: list[dict] = []

    def separator(ct_blocks, ff_blocks, act_block):
        ct_specs = [stft(w, stft_cfg) for w in ct_blocks]
        ff_specs = [stft(w, stft_cfg) for w in ff_blocks]
        act = act_block if solve_cfg.mode == "weakly-supervised" else None
        result = solve(ct_specs, ff_specs, act, solve_cfg)
        traces.append({
            "block": len(traces),
            "status": result.status,
            "iterations": result.iterations,
            "loss_trace": [b.as_dict() for b in result.loss_trace],
        })
        n = ct_blocks[0].samples.size
        return [istft(z, n) for z in result.estimates]

    estimates = blockwise_separate(ct, ff, separator, plan, activity)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for c, spk in enumerate(manifest.speaker_ids):
        path = out_dir / f"est_{spk}.wav"
        write_wav(path, estimates[c])
        paths[spk] = str(path)
    with open(out_dir / "loss_trace.json", "w") as fh:
        json.dump({"blocks": traces}, fh, indent=2, sort_keys=True)
    print(json.dumps({"estimates": paths,
                      "loss_trace": str(out_dir / "loss_trace.json")},
                     sort_keys=True))
    return 0


def _read_estimates(manifest, est_dir) -> list:
    est_dir = Path(est_dir)
    waves = []
    for spk in manifest.speaker_ids:
        path = est_dir / f"est_{spk}.wav"
        if not path.exists():
            raise DataError(f"missing estimate WAV: {path}")
        w = read_wav(path)
        if w.samples.size != manifest.num_samples:
            raise DataError(
                f"{path}: length {w.samples.size} != session length "
                f"{manifest.num_samples}"
            )
        waves.append(w)
    return waves


def _cmd_evaluate(args, settings) -> int:
    manifest = load_manifest(args.manifest)
    refs = manifest.load_references()
    ests = _read_estimates(manifest, args.estimates)
    mixes = manifest.load_close_talk()
    if args.permute:
        report = permute_resolve(ests, refs, mixtures=mixes)
    else:
        from .metrics import ScoreReport

        scores_si = [si_sdr(e, r) for e, r in zip(ests, refs)]
        scores_sdr = [sdr_proj(e, r) for e, r in zip(ests, refs)]
        delta_si = [
            s - si_sdr(m, r) for s, m, r in zip(scores_si, mixes, refs)
        ]
        delta_sdr = [
            s - sdr_proj(m, r) for s, m, r in zip(scores_sdr, mixes, refs)
        ]
        report = ScoreReport(scores_si, scores_sdr,
                             tuple(range(len(refs))), delta_si, delta_sdr)
    payload = {"speakers": manifest.speaker_ids, **report.as_dict()}
    print(json.dumps(payload, sort_keys=True))
    if args.csv:
        import csv as _csv

        with open(args.csv, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["speaker", "si_sdr", "sdr",
                             "delta_si_sdr", "delta_sdr"])
            for i, spk in enumerate(manifest.speaker_ids):
                writer.writerow([
                    spk, report.si_sdr[i], report.sdr[i],
                    report.delta_si_sdr[i], report.delta_sdr[i],
                ])
    return 0


def _cmd_loss(args, settings, threads) -> int:
    _apply_overrides(settings, [
        ("solver.mode", args.mode),
        ("loss.alpha", args.alpha),
        ("loss.beta", args.beta),
        ("fcp.past_taps", args.past_taps),
        ("fcp.future_taps", args.future_taps),
        ("fcp.xi", args.xi),
    ])
    manifest, stft_cfg, ct, ff = _load_session(args, settings)
    ests = _read_estimates(manifest, args.estimates)
    ct_specs = [stft(w, stft_cfg) for w in ct]
    ff_specs = [stft(w, stft_cfg) for w in ff]
    est_specs = [stft(w, stft_cfg) for w in ests]
    solve_cfg = _solve_config(settings, threads)
    weak = solve_cfg.mode == "weakly-supervised"
    activity = manifest.activity() if weak else None
    filters = filter_step(est_specs, ct_specs, ff_specs, solve_cfg, activity)
    breakdown = total_loss(
        est_specs, ct_specs, ff_specs, filters,
        alpha=solve_cfg.alpha, beta=solve_cfg.beta if weak else 0.0,
        activity=activity, ct_waves=[w.samples for w in ct] if weak else None,
        min_active_s=solve_cfg.min_active_s, objective=solve_cfg.objective,
    )
    print(json.dumps(breakdown.as_dict(), sort_keys=True))
    return 0


def _cmd_fcp_check(args, settings, threads) -> int:
    _apply_overrides(settings, [
        ("fcp.past_taps", args.past_taps),
        ("fcp.future_taps", args.future_taps),
        ("fcp.xi", args.xi),
        ("fcp.diag_load", args.diag_load),
    ])
    manifest, stft_cfg, ct, ff = _load_session(args, settings)
    true_ct, true_ff, past_true, future_true = manifest.load_true_filters()
    cfg = _fcp_config(settings)
    if cfg.past_taps < past_true or cfg.future_taps < future_true:
        raise ConfigurationError(
            f"estimation window (past {cfg.past_taps}, future "
            f"{cfg.future_taps}) cannot contain the true filters "
            f"(past {past_true}, future {future_true})"
        )
    dry = manifest.load_dry_sources()
    dry_specs = [stft(w, stft_cfg) for w in dry]
    ct_specs = [stft(w, stft_cfg) for w in ct]
    ff_specs = [stft(w, stft_cfg) for w in ff]

    def embed(taps):
        f_bins, _ = taps.shape
        out = np.zeros((f_bins, cfg.num_taps), dtype=complex)
        lo = cfg.past_taps - past_true
        out[:, lo : lo + taps.shape[1]] = taps
        return out

    def stats(est, true):
        true_norm = np.linalg.norm(true, axis=1)
        err = np.linalg.norm(est - true, axis=1)
        rel = np.divide(err, true_norm, out=np.full_like(err, np.nan),
                        where=true_norm > 0)
        valid = rel[np.isfinite(rel)]
        return {
            "per_freq": [float(v) for v in rel],
            "mean": float(valid.mean()) if valid.size else None,
            "max": float(valid.max()) if valid.size else None,
        }

    report: dict = {"close_talk": {}, "far_field": {}}
    for mic in range(manifest.num_speakers):
        weights = fcp_weights(ct_specs[mic].values, cfg.xi)
        for src in range(manifest.num_speakers):
            if src == mic:
                continue
            est = estimate_filter(dry_specs[src].values, ct_specs[mic].values,
                                  weights, cfg, threads)
            key = f"{manifest.speaker_ids[mic]}<-{manifest.speaker_ids[src]}"
            report["close_talk"][key] = stats(est, embed(true_ct[mic, src]))
    for p in range(manifest.num_far_mics):
        weights = fcp_weights(ff_specs[p].values, cfg.xi)
        for src in range(manifest.num_speakers):
            est = estimate_filter(dry_specs[src].values, ff_specs[p].values,
                                  weights, cfg, threads)
            key = f"{manifest.far_mic_ids[p]}<-{manifest.speaker_ids[src]}"
            report["far_field"][key] = stats(est, embed(true_ff[p, src]))
    print(json.dumps(report, sort_keys=True))
    return 0


def cli_dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.error("a subcommand is required")
        settings = _load_settings(args.config)
        if args.command == "simulate":
            return _cmd_simulate(args, settings)
        if args.command == "separate":
            return _cmd_separate(args, settings, args.threads)
        if args.command == "evaluate":
            return _cmd_evaluate(args, settings)
        if args.command == "loss":
            return _cmd_loss(args, settings, args.threads)
        if args.command == "fcp-check":
            return _cmd_fcp_check(args, settings, args.threads)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except XtalkError as exc:
        kinds = {1: "usage", 2: "data", 3: "numerical"}
        _error_record(kinds.get(exc.exit_code, "data"), str(exc))
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - defensive
        _error_record("internal", f"{type(exc).__name__}: {exc}")
        return 3
    return 0


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
