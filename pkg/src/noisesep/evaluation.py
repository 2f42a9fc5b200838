"""Separation metrics, per-item evaluation reports, and spectrogram export."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import get_window

from .autodiff import Tensor, no_grad
from .errors import ConfigError, ContractError, DegenerateInputError, ParameterError
from .objective import METRIC_CAP_DB, _arr, si_snr, upit_si_snr_loss
from .separator import SeparatorModel, load_checkpoint, separate
from .signals import AudioSignal, DatasetManifest, read_manifest

EVAL_HEADER = ["item", "perm", "si_snri_db", "sdri_db", "noise_si_snr_db"]


def sdr(est, ref, cap_db: float = METRIC_CAP_DB) -> float:
    """Plain signal-to-distortion ratio 10·log10(|ref|² / |ref - est|²), clipped.

    Unlike SI-SNR this is not invariant to rescaling the estimate.
    """
    e, r = _arr(est), _arr(ref)
    if e.shape != r.shape:
        raise ContractError(f"sdr: length mismatch {e.shape} vs {r.shape}")
    num = float(np.dot(r, r))
    if num == 0.0:
        raise DegenerateInputError("sdr: reference is all zeros")
    d = e - r
    den = float(np.dot(d, d))
    if den == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def si_snri(est, ref, mixture) -> float:
    """SI-SNR improvement of ``est`` over the unprocessed mixture."""
    return si_snr(est, ref) - si_snr(mixture, ref)


def sdri(est, ref, mixture) -> float:
    return sdr(est, ref) - sdr(mixture, ref)


def upit_permutation(ests: Sequence, refs: Sequence) -> tuple[int, ...]:
    """The training-time assignment: ``perm[t]`` is the estimate matched to ref ``t``."""
    with no_grad():
        res = upit_si_snr_loss([Tensor(_arr(e)) for e in ests], [_arr(r) for r in refs])
    return res.permutation


@dataclass
class ItemScore:
    item: int
    perm: tuple[int, ...]
    si_snri_db: float
    sdri_db: float
    noise_si_snr_db: float | None


@dataclass
class EvalReport:
    items: list[ItemScore]

    @property
    def mean_si_snri(self) -> float:
        return float(np.mean([s.si_snri_db for s in self.items]))

    @property
    def mean_sdri(self) -> float:
        return float(np.mean([s.sdri_db for s in self.items]))

    @property
    def mean_noise_si_snr(self) -> float | None:
        vals = [s.noise_si_snr_db for s in self.items if s.noise_si_snr_db is not None]
        return float(np.mean(vals)) if vals else None

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(EVAL_HEADER)
            for s in self.items:
                w.writerow([s.item, " ".join(str(p) for p in s.perm), f"{s.si_snri_db:.6f}",
                            f"{s.sdri_db:.6f}", "" if s.noise_si_snr_db is None else f"{s.noise_si_snr_db:.6f}"])
            ns = self.mean_noise_si_snr
            w.writerow(["mean", "", f"{self.mean_si_snri:.6f}", f"{self.mean_sdri:.6f}",
                        "" if ns is None else f"{ns:.6f}"])
        return path


def score_item(model: SeparatorModel, item, index: int = 0) -> ItemScore:
    if item.num_speakers != model.config.C:
        raise ConfigError(f"item has {item.num_speakers} speakers, model expects {model.config.C}")
    with no_grad():
        sep = separate(model, item.mixture)
    noise = sep.noise.data if sep.noise is not None else None
    return score_outputs([s.data for s in sep.speakers], noise, item, index)


def score_outputs(ests: Sequence, noise_est, item, index: int = 0) -> ItemScore:
    """Score already-separated outputs against an item's stems (speakers only
    enter the SI-SNRi / SDRi averages)."""
    refs = [s.samples for s in item.speakers]
    mix = item.mixture.samples
    perm = upit_permutation(ests, refs)
    C = len(refs)
    si = float(np.mean([si_snri(ests[perm[t]], refs[t], mix) for t in range(C)]))
    sd = float(np.mean([sdri(ests[perm[t]], refs[t], mix) for t in range(C)]))
    ns = si_snr(noise_est, item.noise.samples) if noise_est is not None else None
    return ItemScore(index, perm, si, sd, ns)


def evaluate_items(model: SeparatorModel, items: Sequence, workers: int = 1) -> EvalReport:
    """Rows come back in item order whatever the worker count."""
    for it in items:
        if it.num_speakers != model.config.C:
            raise ConfigError(f"item has {it.num_speakers} speakers, model expects {model.config.C}")
    if workers <= 1:
        rows = [score_item(model, it, i) for i, it in enumerate(items)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda a: score_item(model, a[1], a[0]), enumerate(items)))
    return EvalReport(rows)


def evaluate(checkpoint, manifest, out_csv=None, workers: int = 1) -> EvalReport:
    """Score a checkpoint on every item of a manifest (path or loaded)."""
    model, _, _ = load_checkpoint(checkpoint)
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    report = evaluate_items(model, manifest.load_all(), workers)
    if out_csv is not None:
        report.write_csv(out_csv)
    return report


# -- spectrograms ------------------------------------------------------------------

@dataclass
class Spectrogram:
    magnitude: np.ndarray  # (frames, frame // 2 + 1)
    sample_rate: int
    frame: int
    hop: int

    def bin_hz(self, k: int) -> float:
        return k * self.sample_rate / self.frame


def num_frames(T: int, frame: int, hop: int) -> int:
    return (T - frame) // hop + 1


def spectrogram(signal: AudioSignal, frame: int = 256, hop: int = 64) -> Spectrogram:
    """Hann-windowed STFT magnitude, one row per frame, no padding."""
    if frame < 2 or hop < 1:
        raise ParameterError("need frame >= 2 and hop >= 1")
    x = signal.samples
    if len(x) < frame:
        raise ParameterError(f"signal has {len(x)} samples, shorter than one frame ({frame})")
    frames = np.lib.stride_tricks.sliding_window_view(x, frame)[::hop]
    mag = np.abs(np.fft.rfft(frames * get_window("hann", frame), axis=1))
    return Spectrogram(mag, signal.sample_rate, frame, hop)


def _to_bytes(mag: np.ndarray, floor_db: float = -100.0) -> np.ndarray:
    db = 20.0 * np.log10(np.maximum(mag, 10.0 ** (floor_db / 20.0)))
    lo, hi = float(db.min()), float(db.max())
    if hi <= lo:
        return np.zeros(db.shape, dtype=np.uint8)
    return np.round((db - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_spectrogram(signal: AudioSignal, out_prefix, frame: int = 256, hop: int = 64
                       ) -> tuple[Path, Path, Spectrogram]:
    """Write ``<prefix>.pgm`` (8-bit log magnitude; time runs left to right,
    low frequencies at the bottom) and ``<prefix>.csv`` (raw magnitudes, one
    row per frame)."""
    spec = spectrogram(signal, frame, hop)
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    img = _to_bytes(spec.magnitude).T[::-1]
    h, w = img.shape
    pgm = prefix.with_suffix(".pgm")
    with open(pgm, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    csv_path = prefix.with_suffix(".csv")
    np.savetxt(csv_path, spec.magnitude, delimiter=",", fmt="%.8g")
    return pgm, csv_path, spec


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise ContractError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ContractError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
