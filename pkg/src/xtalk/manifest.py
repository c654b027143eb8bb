"""Session manifests: JSON descriptions of recorded or simulated sessions.

A manifest lists the close-talk WAV of every speaker, the far-field WAVs,
per-speaker activity as half-open [on, off) sample intervals, and an
optional ground-truth block (dry sources, reference close-talk speech,
subband filters) for simulated scenes.  WAV paths are stored relative to
the manifest file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .scenes import Scene
from .stft import Waveform
from .wavio import read_wav, write_wav

__all__ = [
    "SessionManifest",
    "load_manifest",
    "save_scene",
    "intervals_to_mask",
    "mask_to_intervals",
]


def intervals_to_mask(intervals, num_samples: int) -> np.ndarray:
    """[on, off) sample pairs -> binary vector of length num_samples."""
    d = np.zeros(num_samples, dtype=np.uint8)
    last_off = 0
    for pair in intervals:
        if len(pair) != 2:
            raise DataError(f"activity interval {pair!r} is not an [on, off) pair")
        on, off = int(pair[0]), int(pair[1])
        if on < last_off or off <= on or off > num_samples:
            raise DataError(
                f"activity intervals must be sorted, disjoint and within "
                f"[0, {num_samples}); got {pair!r}"
            )
        d[on:off] = 1
        last_off = off
    return d


def mask_to_intervals(d: np.ndarray) -> list[list[int]]:
    """Binary vector -> sorted list of [on, off) sample pairs."""
    d = np.asarray(d).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], d, [0]))))
    return [[int(edges[i]), int(edges[i + 1])] for i in range(0, edges.size, 2)]


@dataclass
class SessionManifest:
    speaker_ids: list[str]
    close_talk_paths: list[Path]
    far_mic_ids: list[str]
    far_field_paths: list[Path]
    sample_rate: int
    num_samples: int
    activity_intervals: dict[str, list[list[int]]]
    ground_truth: dict | None = None
    base_dir: Path = field(default_factory=Path)

    @property
    def num_speakers(self) -> int:
        return len(self.speaker_ids)

    @property
    def num_far_mics(self) -> int:
        return len(self.far_mic_ids)

    def activity(self) -> np.ndarray:
        """(C, N) binary activity matrix in manifest speaker order."""
        rows = [
            intervals_to_mask(self.activity_intervals.get(s, [[0, self.num_samples]]),
                              self.num_samples)
            for s in self.speaker_ids
        ]
        return np.stack(rows)

    def load_close_talk(self) -> list[Waveform]:
        return [self._load(p) for p in self.close_talk_paths]

    def load_far_field(self) -> list[Waveform]:
        return [self._load(p) for p in self.far_field_paths]

    def load_references(self) -> list[Waveform]:
        """Ground-truth close-talk speech, one per speaker."""
        if not self.ground_truth or "close_talk_speech" not in self.ground_truth:
            raise DataError("manifest has no ground-truth close-talk speech")
        return [
            self._load(Path(self.ground_truth["close_talk_speech"][s]))
            for s in self.speaker_ids
        ]

    def load_dry_sources(self) -> list[Waveform]:
        if not self.ground_truth or "dry_sources" not in self.ground_truth:
            raise DataError("manifest has no ground-truth dry sources")
        return [
            self._load(Path(self.ground_truth["dry_sources"][s]))
            for s in self.speaker_ids
        ]

    def load_true_filters(self):
        """(ct, ff, past, future) complex tap arrays from the sidecar."""
        if not self.ground_truth or "filters" not in self.ground_truth:
            raise DataError("manifest has no ground-truth filters")
        path = self.base_dir / self.ground_truth["filters"]
        with open(path) as fh:
            raw = json.load(fh)

        def decode(entry):
            return np.asarray(entry["real"]) + 1j * np.asarray(entry["imag"])

        ct = np.stack([np.stack([decode(e) for e in row]) for row in raw["close_talk"]])
        ff_rows = raw.get("far_field", [])
        if ff_rows:
            ff = np.stack([np.stack([decode(e) for e in row]) for row in ff_rows])
        else:
            ff = np.zeros((0, ct.shape[1], ct.shape[2], ct.shape[3]), dtype=complex)
        return ct, ff, int(raw["past_taps"]), int(raw["future_taps"])

    def _load(self, rel: Path) -> Waveform:
        w = read_wav(self.base_dir / rel)
        if w.sample_rate != self.sample_rate:
            raise DataError(
                f"{rel}: sample rate {w.sample_rate} != manifest rate "
                f"{self.sample_rate}"
            )
        if w.samples.size != self.num_samples:
            raise DataError(
                f"{rel}: length {w.samples.size} != manifest length "
                f"{self.num_samples}"
            )
        return w


def load_manifest(path) -> SessionManifest:
    path = Path(path)
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    try:
        close = raw["close_talk"]
        sample_rate = int(raw["sample_rate"])
        num_samples = int(raw["num_samples"])
    except KeyError as exc:
        raise DataError(f"{path}: missing manifest key {exc}") from exc
    if not close:
        raise DataError(f"{path}: at least one close-talk microphone is required")
    manifest = SessionManifest(
        speaker_ids=[e["speaker_id"] for e in close],
        close_talk_paths=[Path(e["wav_path"]) for e in close],
        far_mic_ids=[e["mic_id"] for e in raw.get("far_field", [])],
        far_field_paths=[Path(e["wav_path"]) for e in raw.get("far_field", [])],
        sample_rate=sample_rate,
        num_samples=num_samples,
        activity_intervals=raw.get("activity", {}),
        ground_truth=raw.get("ground_truth"),
        base_dir=path.parent,
    )
    for spk, intervals in manifest.activity_intervals.items():
        intervals_to_mask(intervals, num_samples)  # validates
    return manifest


def _encode_taps(taps: np.ndarray) -> dict:
    return {"real": taps.real.tolist(), "imag": taps.imag.tolist()}


def save_scene(scene: Scene, out_dir, stem: str = "scene") -> Path:
    """Write a scene's WAVs, manifest and ground-truth sidecar; return the
    manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sr = scene.config.sample_rate
    speakers = [f"spk{c}" for c in range(scene.num_speakers)]
    mics = [f"ff{p}" for p in range(scene.num_far_mics)]

    close_entries = []
    for c, spk in enumerate(speakers):
        name = f"{stem}_ct_{spk}.wav"
        write_wav(out_dir / name, scene.ct_mix[c])
        close_entries.append({"speaker_id": spk, "wav_path": name})
    far_entries = []
    for p, mic in enumerate(mics):
        name = f"{stem}_{mic}.wav"
        write_wav(out_dir / name, scene.ff_mix[p])
        far_entries.append({"mic_id": mic, "wav_path": name})

    activity = {
        spk: mask_to_intervals(scene.activity[c]) for c, spk in enumerate(speakers)
    }

    gt: dict = {"mode": scene.config.mode, "seed": scene.config.seed}
    gt["dry_sources"] = {}
    gt["close_talk_speech"] = {}
    for c, spk in enumerate(speakers):
        dry_name = f"{stem}_dry_{spk}.wav"
        write_wav(out_dir / dry_name, scene.dry_sources[c])
        gt["dry_sources"][spk] = dry_name
        ref_name = f"{stem}_ref_{spk}.wav"
        write_wav(out_dir / ref_name, scene.close_talk_speech(c))
        gt["close_talk_speech"][spk] = ref_name
    if scene.config.mode == "subband-exact":
        filters = {
            "past_taps": scene.config.past_taps,
            "future_taps": scene.config.future_taps,
            "close_talk": [
                [_encode_taps(scene.ct_filters[mic, src])
                 for src in range(scene.num_speakers)]
                for mic in range(scene.num_speakers)
            ],
            "far_field": [
                [_encode_taps(scene.ff_filters[p, src])
                 for src in range(scene.num_speakers)]
                for p in range(scene.num_far_mics)
            ],
        }
        filters_name = f"{stem}_filters.json"
        with open(out_dir / filters_name, "w") as fh:
            json.dump(filters, fh, sort_keys=True)
        gt["filters"] = filters_name

    manifest = {
        "sample_rate": sr,
        "num_samples": scene.num_samples,
        "close_talk": close_entries,
        "far_field": far_entries,
        "activity": activity,
        "ground_truth": gt,
    }
    manifest_path = out_dir / f"{stem}_manifest.json"
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest_path
