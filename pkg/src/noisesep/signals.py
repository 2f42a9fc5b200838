"""Audio containers, WAV I/O, synthetic sources and noise, SNR mixing, datasets."""

from __future__ import annotations

import logging
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

from .errors import DegenerateInputError, FormatError, ParameterError

log = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 8000
SOURCE_KINDS = ("harmonic", "am_tone", "chirp")
NOISE_KINDS = ("white", "pink", "babble_like")


@dataclass
class AudioSignal:
    """Mono waveform with its sample rate (Hz)."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise ParameterError("AudioSignal needs at least one sample")
        if int(self.sample_rate) <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)
        if not np.all(np.isfinite(self.samples)):
            raise ParameterError("AudioSignal samples must be finite")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def power(self) -> float:
        return float(np.mean(self.samples ** 2))


@dataclass
class MixtureItem:
    mixture: AudioSignal
    speakers: list[AudioSignal]
    noise: AudioSignal
    snr_db: float

    def __post_init__(self):
        sigs = [self.mixture, *self.speakers, self.noise]
        if len({len(s) for s in sigs}) != 1 or len({s.sample_rate for s in sigs}) != 1:
            raise ParameterError("mixture, speakers and noise must share length and sample rate")

    @property
    def num_speakers(self) -> int:
        return len(self.speakers)

    @property
    def sample_rate(self) -> int:
        return self.mixture.sample_rate


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


# -- synthesis ---------------------------------------------------------------

def _check_duration(duration_s: float, sample_rate: int) -> int:
    if not duration_s > 0:
        raise ParameterError(f"duration must be positive, got {duration_s}")
    if sample_rate <= 0:
        raise ParameterError(f"sample_rate must be positive, got {sample_rate}")
    n = int(round(duration_s * sample_rate))
    if n < 1:
        raise ParameterError(f"duration {duration_s}s yields no samples at {sample_rate} Hz")
    return n


def _peak_normalize(x: np.ndarray, peak: float = 0.5) -> np.ndarray:
    m = np.max(np.abs(x))
    if m == 0:
        raise DegenerateInputError("synthesized signal is silent")
    return x * (peak / m)


def synth_source(
    kind: str,
    duration_s: float,
    f0_hz: float,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
) -> AudioSignal:
    """Deterministic speech stand-in, peak-normalized to 0.5.

    ``harmonic`` is a vibrato harmonic series, ``am_tone`` an amplitude
    modulated sinusoid, ``chirp`` a linear sweep from f0 towards 2*f0.
    """
    n = _check_duration(duration_s, sample_rate)
    nyq = sample_rate / 2
    if not 0 < f0_hz < nyq:
        raise ParameterError(f"f0 must lie in (0, {nyq}) Hz, got {f0_hz}")
    if kind not in SOURCE_KINDS:
        raise ParameterError(f"unknown source kind {kind!r}; expected one of {SOURCE_KINDS}")
    rng = np.random.default_rng(seed)
    t = np.arange(n) / sample_rate

    if kind == "harmonic":
        vib_rate = rng.uniform(3.0, 6.0)
        vib_depth = 0.01
        inst_f = f0_hz * (1.0 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
        phase = 2 * np.pi * np.cumsum(inst_f) / sample_rate
        x = np.zeros(n)
        for k in range(1, 11):
            if k * f0_hz * (1 + vib_depth) >= nyq:
                break
            x += rng.uniform(0.5, 1.0) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        env = 0.7 + 0.3 * np.sin(2 * np.pi * rng.uniform(1.0, 3.0) * t + rng.uniform(0, 2 * np.pi))
        x *= env
    elif kind == "am_tone":
        fm = rng.uniform(2.0, 6.0)
        x = np.sin(2 * np.pi * f0_hz * t + rng.uniform(0, 2 * np.pi))
        x *= 0.6 + 0.4 * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))
    else:
        f1 = min(2.0 * f0_hz, 0.9 * nyq)
        dur = n / sample_rate
        phase = 2 * np.pi * (f0_hz * t + (f1 - f0_hz) * t ** 2 / (2 * dur))
        x = np.sin(phase + rng.uniform(0, 2 * np.pi))
    return AudioSignal(_peak_normalize(x), sample_rate)


def synth_noise(
    kind: str,
    duration_s: float,
    seed: int,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    rms: float = 0.1,
) -> AudioSignal:
    """Zero-mean background noise at the given RMS."""
    n = _check_duration(duration_s, sample_rate)
    if kind not in NOISE_KINDS:
        raise ParameterError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spec = np.fft.rfft(rng.standard_normal(n))
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        shaping = np.zeros_like(f)
        shaping[1:] = 1.0 / np.sqrt(f[1:])
        x = np.fft.irfft(spec * shaping, n=n)
    else:
        t = np.arange(n) / sample_rate
        x = 0.05 * rng.standard_normal(n)
        for _ in range(6):
            f0 = rng.uniform(90.0, 300.0)
            voice = np.zeros(n)
            for k in range(1, 6):
                if k * f0 >= sample_rate / 2:
                    break
                voice += np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi)) / k
            env = np.maximum(0.0, np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
            x += voice * env
    x = x - x.mean()
    cur = np.sqrt(mean_power(x))
    if cur == 0:
        raise DegenerateInputError("synthesized noise is silent")
    return AudioSignal(x * (rms / cur), sample_rate)


def mix_at_snr(speakers: Sequence[AudioSignal], noise: AudioSignal, snr_db: float) -> MixtureItem:
    """Rescale ``noise`` so the loudest speaker sits ``snr_db`` above it, then sum.

    Loudness is mean-square power; ties go to the lowest speaker index.
    Speakers are returned unscaled.
    """
    if len(speakers) < 1:
        raise ParameterError("need at least one speaker")
    n = len(noise)
    sr = noise.sample_rate
    for s in speakers:
        if len(s) != n or s.sample_rate != sr:
            raise ParameterError("speakers and noise must share length and sample rate")
    powers = [s.power for s in speakers]
    loudest = int(np.argmax(powers))
    p_speech = powers[loudest]
    p_noise = noise.power
    if p_speech == 0:
        raise DegenerateInputError("loudest speaker is silent")
    if p_noise == 0:
        raise DegenerateInputError("noise is silent")
    gain = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0)))
    scaled = AudioSignal(noise.samples * gain, sr)
    mix = np.sum([s.samples for s in speakers], axis=0) + scaled.samples
    return MixtureItem(AudioSignal(mix, sr), list(speakers), scaled, float(snr_db))


def measured_snr_db(item: MixtureItem) -> float:
    p_loud = max(s.power for s in item.speakers)
    return 10.0 * np.log10(p_loud / item.noise.power)


# -- WAV I/O -----------------------------------------------------------------

@dataclass
class WavWriteInfo:
    path: Path
    bit_depth: str
    clipped_samples: int = 0
    warnings: list[str] = field(default_factory=list)


def write_wav(path, signal: AudioSignal, bit_depth: str = "pcm16") -> WavWriteInfo:
    """Write a mono RIFF/WAVE file as PCM16 or IEEE float32.

    PCM16 values outside [-1, 1] saturate; the count is reported in the
    returned info rather than raised.
    """
    path = Path(path)
    info = WavWriteInfo(path, bit_depth)
    x = signal.samples
    if bit_depth == "pcm16":
        clipped = int(np.count_nonzero(np.abs(x) > 1.0))
        if clipped:
            msg = f"{clipped} samples outside [-1, 1] saturated"
            info.clipped_samples = clipped
            info.warnings.append(msg)
            warnings.warn(f"{path}: {msg}", RuntimeWarning, stacklevel=2)
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    elif bit_depth == "float32":
        data = x.astype("<f4")
    else:
        raise ParameterError(f"unsupported bit depth {bit_depth!r}; use pcm16 or float32")
    wavfile.write(path, signal.sample_rate, data)
    return info


def read_wav(path) -> AudioSignal:
    """Read a mono PCM16 or float32 WAV file into float64 samples."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, EOFError, IndexError, struct.error) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from None
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}; expected PCM16 or float32")
    if samples.size == 0:
        raise FormatError(f"{path}: no audio samples")
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite samples")
    return AudioSignal(samples, int(rate))


# -- datasets ----------------------------------------------------------------

@dataclass
class DatasetConfig:
    out_dir: Path
    num_speakers: int = 2
    num_items: int = 8
    duration_s: float = 1.0
    snr_range: tuple[float, float] = (-6.0, 3.0)
    seed: int = 0
    sample_rate: int = DEFAULT_SAMPLE_RATE
    split: str = "train"


@dataclass
class ManifestEntry:
    mixture: Path
    speakers: list[Path]
    noise: Path
    snr_db: float | None = None


@dataclass
class DatasetManifest:
    items: list[ManifestEntry]
    sample_rate: int
    num_speakers: int
    split: str
    path: Path | None = None

    def __len__(self) -> int:
        return len(self.items)

    def load_item(self, index: int) -> MixtureItem:
        e = self.items[index]
        mix = read_wav(e.mixture)
        spk = [read_wav(p) for p in e.speakers]
        noise = read_wav(e.noise)
        p_loud = max(s.power for s in spk)
        snr = e.snr_db if e.snr_db is not None else 10 * np.log10(p_loud / noise.power)
        return MixtureItem(mix, spk, noise, float(snr))

    def load_all(self) -> list[MixtureItem]:
        return [self.load_item(i) for i in range(len(self.items))]


def _draw_f0s(rng: np.random.Generator, count: int) -> list[float]:
    # keep fundamentals at least 15% apart so stems stay distinguishable
    f0s: list[float] = []
    while len(f0s) < count:
        f = rng.uniform(100.0, 400.0)
        if all(abs(np.log(f / g)) > np.log(1.15) for g in f0s):
            f0s.append(f)
    return f0s


def make_item(cfg: DatasetConfig, index: int) -> MixtureItem:
    """Build one synthetic mixture from an RNG derived from (seed, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    f0s = _draw_f0s(rng, cfg.num_speakers)
    kinds = rng.permutation(SOURCE_KINDS)
    speakers = [
        synth_source(str(kinds[c % len(kinds)]), cfg.duration_s, f0s[c], int(rng.integers(2**31)), cfg.sample_rate)
        for c in range(cfg.num_speakers)
    ]
    noise_kind = NOISE_KINDS[int(rng.integers(len(NOISE_KINDS)))]
    noise = synth_noise(noise_kind, cfg.duration_s, int(rng.integers(2**31)), cfg.sample_rate)
    lo, hi = cfg.snr_range
    snr = float(rng.uniform(lo, hi))
    return mix_at_snr(speakers, noise, snr)


def make_dataset(cfg: DatasetConfig) -> DatasetManifest:
    """Write synthetic stems and mixtures as float32 WAVs plus a manifest.

    Output is a pure function of ``cfg``: reruns produce identical bytes.
    """
    lo, hi = cfg.snr_range
    if not -20.0 <= lo <= hi <= 20.0:
        raise ParameterError(f"snr range must lie within [-20, 20] dB, got {cfg.snr_range}")
    if cfg.num_speakers not in (2, 3):
        raise ParameterError(f"num_speakers must be 2 or 3, got {cfg.num_speakers}")
    if cfg.num_items < 1:
        raise ParameterError("num_items must be >= 1")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory {out} is not writable")
    audio_dir = out / cfg.split
    audio_dir.mkdir(exist_ok=True)
    entries = []
    for i in range(cfg.num_items):
        item = make_item(cfg, i)
        stem = f"item{i:04d}"
        mix_p = audio_dir / f"{stem}_mix.wav"
        write_wav(mix_p, item.mixture, "float32")
        spk_p = []
        for c, s in enumerate(item.speakers, start=1):
            p = audio_dir / f"{stem}_s{c}.wav"
            write_wav(p, s, "float32")
            spk_p.append(p)
        noise_p = audio_dir / f"{stem}_noise.wav"
        write_wav(noise_p, item.noise, "float32")
        entries.append(ManifestEntry(mix_p, spk_p, noise_p, item.snr_db))
    manifest = DatasetManifest(entries, cfg.sample_rate, cfg.num_speakers, cfg.split,
                               out / f"{cfg.split}.tsv")
    write_manifest(manifest, manifest.path)
    log.info("wrote %d items to %s", len(entries), manifest.path)
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> Path:
    """Header line ``# sample_rate=..\\tnum_speakers=..\\tsplit=..`` then one
    tab-separated row per item: mixture, speaker stems, noise (paths relative
    to the manifest's directory)."""
    path = Path(path)
    base = path.parent
    lines = [f"# sample_rate={manifest.sample_rate}\tnum_speakers={manifest.num_speakers}\tsplit={manifest.split}"]
    for e in manifest.items:
        cols = [e.mixture, *e.speakers, e.noise]
        lines.append("\t".join(os.path.relpath(c, base) for c in cols))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("#"):
        raise FormatError(f"{path}: missing manifest header line")
    header = {}
    for tok in text[0].lstrip("#").strip().split("\t"):
        if "=" in tok:
            k, v = tok.split("=", 1)
            header[k.strip()] = v.strip()
    try:
        sr = int(header["sample_rate"])
        C = int(header["num_speakers"])
        split = header.get("split", "train")
    except (KeyError, ValueError):
        raise FormatError(f"{path}: header must carry sample_rate, num_speakers, split") from None
    base = path.parent
    items = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != C + 2:
            raise FormatError(f"{path}:{lineno}: expected {C + 2} columns, got {len(cols)}")
        paths = [base / c for c in cols]
        if check_files:
            for p in paths:
                if not p.exists():
                    raise FileNotFoundError(f"{path}:{lineno}: missing file {p}")
        items.append(ManifestEntry(paths[0], paths[1:-1], paths[-1]))
    return DatasetManifest(items, sr, C, split, path)
