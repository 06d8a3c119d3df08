"""WAV ingestion, dataset manifests, the toy-corpus generator, PGM export.

The toy corpus stands in for a real anti-spoofing dataset: every clip is a
harmonic "voice" with vibrato over a broadband noise floor, and each
synthetic family stamps a distinct artifact on top (hard low-pass,
frame-repeat buzz, or a high-frequency tone).  One family can be held out
of the training and dev splits so the eval split probes an unseen
generator.  Generation is a pure function of the config: every clip's
random stream is spawned from (master seed, roster index), so output bytes
are reproducible clip by clip.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass

import numpy as np

from .dsp import Waveform
from .errors import ContractError, FormatError, InputError
from .rng import Stream

LABELS = ("bonafide", "synthetic")
SPLITS = ("train", "dev", "eval")
BONAFIDE_ID = "bonafide"
MANIFEST_COLUMNS = ("path", "label", "synthesizer_id", "split")


# ---- WAV --------------------------------------------------------------------

def load_wav(path) -> Waveform:
    """Read a mono PCM-16 RIFF/WAVE file; samples are scaled by 1/32768."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != b"RIFF":
        raise FormatError(f"{path}: missing RIFF chunk at byte 0")
    if buf[8:12] != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is {buf[8:12]!r}, not b'WAVE'")
    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(buf):
        cid = buf[offset:offset + 4]
        (size,) = struct.unpack_from("<I", buf, offset + 4)
        body = buf[offset + 8:offset + 8 + size]
        if len(body) < size:
            raise FormatError(
                f"{path}: chunk {cid!r} claims {size} bytes at byte {offset}, "
                f"file ends at byte {len(buf)}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        offset += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt is None:
        raise FormatError(f"{path}: no 'fmt ' chunk found")
    if data is None:
        raise FormatError(f"{path}: no 'data' chunk found")
    if len(fmt) < 16:
        raise FormatError(f"{path}: 'fmt ' chunk too short ({len(fmt)} bytes)")
    audio_format, channels, sample_rate, _, _, bits = struct.unpack_from(
        "<HHIIHH", fmt, 0)
    if audio_format != 1:
        raise FormatError(
            f"{path}: unsupported encoding {audio_format} in 'fmt ' chunk "
            f"(only PCM = 1)")
    if channels != 1:
        raise FormatError(
            f"{path}: unsupported channel count {channels} in 'fmt ' chunk "
            f"(only mono)")
    if bits != 16:
        raise FormatError(
            f"{path}: unsupported sample width {bits} bits in 'fmt ' chunk "
            f"(only 16)")
    samples = np.frombuffer(data[:len(data) - (len(data) & 1)], dtype="<i2")
    return Waveform(samples=samples.astype(np.float64) / 32768.0,
                    sample_rate=int(sample_rate))


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono PCM-16; values are quantized exactly once, right here."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"write_wav needs a 1-d signal, got shape {x.shape}")
    q = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")
    body = q.tobytes()
    with open(path, "wb") as fh:
        fh.write(b"RIFF")
        fh.write(struct.pack("<I", 36 + len(body)))
        fh.write(b"WAVEfmt ")
        fh.write(struct.pack("<IHHIIHH", 16, 1, 1, sample_rate,
                             sample_rate * 2, 2, 16))
        fh.write(b"data")
        fh.write(struct.pack("<I", len(body)))
        fh.write(body)


# ---- manifests --------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRecord:
    """One dataset row; path is absolute after parsing."""

    path: str
    label: str
    synthesizer_id: str
    split: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise InputError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.split not in SPLITS:
            raise InputError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.label == "bonafide" and self.synthesizer_id != BONAFIDE_ID:
            raise InputError(
                f"bonafide rows must use synthesizer_id {BONAFIDE_ID!r}, "
                f"got {self.synthesizer_id!r}")

    @property
    def clip_id(self) -> str:
        return os.path.splitext(os.path.basename(self.path))[0]


def parse_manifest(path) -> list:
    """Read a manifest CSV; relative clip paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty manifest, expected header row")
        if tuple(header) != MANIFEST_COLUMNS:
            raise InputError(
                f"{path}: line 1: header must be {','.join(MANIFEST_COLUMNS)}, "
                f"got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(
                    f"{path}: line {lineno}: expected 4 columns, got {len(row)}")
            clip, label, synth, split = (c.strip() for c in row)
            try:
                rec = ManifestRecord(
                    path=clip if os.path.isabs(clip) else os.path.join(base, clip),
                    label=label, synthesizer_id=synth, split=split)
            except InputError as exc:
                raise InputError(f"{path}: line {lineno}: {exc}") from exc
            records.append(rec)
    return records


def write_manifest(records, path) -> None:
    """Write records as CSV; paths under the manifest dir become relative."""
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for rec in records:
            clip = rec.path
            if os.path.isabs(clip):
                try:
                    rel = os.path.relpath(clip, base)
                except ValueError:
                    rel = clip
                if not rel.startswith(".."):
                    clip = rel
            writer.writerow([clip, rec.label, rec.synthesizer_id, rec.split])


# ---- toy corpus -------------------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    """Everything that determines the generated corpus, bytes included.

    Counts are clips per class per split; the synthetic side is scaled by
    `imbalance` (synthetic = round(count * imbalance)).  `holdout_family`
    appears only in the eval split; None means the last family listed.
    """

    clips_train: int = 200
    clips_dev: int = 50
    clips_eval: int = 100
    clip_seconds: float = 1.0
    sample_rate: int = 16000
    families: tuple = ("G01", "G02", "G03")
    holdout_family: str | None = None
    imbalance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("clips_train", "clips_dev", "clips_eval"):
            if getattr(self, name) < 0:
                raise InputError(f"{name} must be >= 0")
        if self.clip_seconds <= 0:
            raise InputError("clip_seconds must be positive")
        if self.sample_rate <= 0:
            raise InputError("sample_rate must be positive")
        if self.imbalance <= 0:
            raise InputError("imbalance must be positive")
        if not self.families:
            raise InputError("at least one synthetic family is required")
        unknown = [f for f in self.families if f not in FAMILY_SYNTHS]
        if unknown:
            raise InputError(
                f"unknown families {unknown}; available: {sorted(FAMILY_SYNTHS)}")
        if len(set(self.families)) != len(self.families):
            raise InputError("duplicate family ids")
        hold = self.effective_holdout
        if hold not in self.families:
            raise InputError(
                f"holdout_family {hold!r} not in families {self.families}")
        if len(self.families) < 2 and (self.clips_train or self.clips_dev):
            raise InputError(
                "train/dev need at least one non-holdout synthetic family")

    @property
    def effective_holdout(self) -> str:
        return self.families[-1] if self.holdout_family is None else self.holdout_family

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    def to_dict(self) -> dict:
        return {
            "clips_train": self.clips_train,
            "clips_dev": self.clips_dev,
            "clips_eval": self.clips_eval,
            "clip_seconds": self.clip_seconds,
            "sample_rate": self.sample_rate,
            "families": list(self.families),
            "holdout_family": self.holdout_family,
            "imbalance": self.imbalance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown toy config keys: {sorted(extra)}")
        d = dict(d)
        if "families" in d:
            d["families"] = tuple(d["families"])
        return cls(**d)


def _voice_base(stream: Stream, n: int, sample_rate: int) -> np.ndarray:
    """Harmonic stack with vibrato over a breathing pink+white noise floor.

    The floor level drifts slowly (log-normal AM band-limited to 4..20 Hz)
    and its overall RMS is drawn per clip, so a detector cannot key on how
    bright or dark the floor is, only on how it moves.  Every artifact
    family freezes or compresses that motion in its own way, which is the
    regularity that carries over to generator families absent from train.
    """
    t = np.arange(n, dtype=np.float64) / sample_rate
    f0 = stream.uniform(100.0, 300.0)
    n_harm = int(stream.randint(3, 6))
    amps = stream.uniform(0.5, 1.0, (n_harm,)) / np.arange(1, n_harm + 1)
    phases = stream.uniform(0.0, 2.0 * np.pi, (n_harm,))
    depth = stream.uniform(0.02, 0.05)
    rate = stream.uniform(4.0, 7.0)
    # integral of f0*(1 + depth*sin(2 pi rate t)) gives the vibrato phase
    theta = 2.0 * np.pi * f0 * t - (f0 * depth / rate) * np.cos(2.0 * np.pi * rate * t)
    voice = np.zeros(n)
    for k in range(n_harm):
        voice += amps[k] * np.sin((k + 1) * theta + phases[k])
    voice *= 0.22 / max(float(np.sqrt(np.mean(voice ** 2))), 1e-12)

    white = stream.normal(shape=(n,))
    shaped = np.fft.rfft(stream.normal(shape=(n,)))
    freqs = np.arange(shaped.size) * sample_rate / n
    pink = np.fft.irfft(shaped / np.sqrt(np.maximum(freqs, 40.0)), n=n)
    noise = np.zeros(n)
    for part, power in ((pink, 0.4), (white, 0.6)):
        noise += np.sqrt(power) * part / max(float(np.sqrt(np.mean(part ** 2))), 1e-12)
    am_spec = np.fft.rfft(stream.normal(shape=(n,)))
    breathe = (freqs >= 4.0) & (freqs <= 20.0)
    drift = np.fft.irfft(np.where(breathe, am_spec, 0.0), n=n)
    drift /= max(float(np.std(drift)), 1e-12)
    noise *= np.exp(stream.uniform(0.4, 0.7) * drift)
    # floor RMS above 0.18 keeps >15% of every clip's energy above 3 kHz
    level = np.exp(stream.uniform(np.log(0.18), np.log(0.5)))
    noise *= level / max(float(np.sqrt(np.mean(noise ** 2))), 1e-12)
    return voice + noise


def _g01_lowpass(stream: Stream, x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Hard FFT low-pass at 3 kHz; everything above is zeroed."""
    spec = np.fft.rfft(x)
    freqs = np.arange(spec.size) * sample_rate / x.size
    spec[freqs >= 3000.0] = 0.0
    return np.fft.irfft(spec, n=x.size)


def _g02_frame_repeat(stream: Stream, x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Buzz from looping 160-sample blocks, each held 8 to 16 block periods.

    The buzz pitch is set by the block period (10 ms at 16 kHz); the hold
    count only varies how long each loop persists.
    """
    hop = 160
    repeat = 2 * int(stream.randint(4, 9))
    idx = np.arange(x.size)
    block = idx // hop
    src = (block // repeat) * repeat * hop + idx % hop
    return x[np.minimum(src, x.size - 1)]


def _g03_tone(stream: Stream, x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Additive fixed 4 kHz tone, 2x to 4x the clip's RMS."""
    amp = stream.uniform(2.0, 4.0) * float(np.sqrt(np.mean(x ** 2)))
    t = np.arange(x.size, dtype=np.float64) / sample_rate
    return x + amp * np.sin(2.0 * np.pi * 4000.0 * t)


FAMILY_SYNTHS = {
    "G01": _g01_lowpass,
    "G02": _g02_frame_repeat,
    "G03": _g03_tone,
}


def _roster(cfg: ToyConfig) -> list:
    """Deterministic clip plan: (split, label, synthesizer_id, filename)."""
    rows = []
    counts = {"train": cfg.clips_train, "dev": cfg.clips_dev,
              "eval": cfg.clips_eval}
    hold = cfg.effective_holdout
    for split in SPLITS:
        n_bona = counts[split]
        n_syn = int(round(n_bona * cfg.imbalance))
        fams = list(cfg.families) if split == "eval" else \
            [f for f in cfg.families if f != hold]
        for i in range(n_bona):
            rows.append((split, "bonafide", BONAFIDE_ID,
                         f"{split}_bonafide_{i:04d}.wav"))
        for i in range(n_syn):
            fam = fams[i % len(fams)]
            rows.append((split, "synthetic", fam,
                         f"{split}_{fam}_{i:04d}.wav"))
    return rows


def generate_toy_dataset(cfg: ToyConfig, out_dir) -> str:
    """Write the toy corpus under out_dir; returns the manifest path."""
    wav_dir = os.path.abspath(os.path.join(out_dir, "wavs"))
    os.makedirs(wav_dir, exist_ok=True)
    master = Stream(cfg.seed)
    n = cfg.clip_samples
    records = []
    for index, (split, label, synth, fname) in enumerate(_roster(cfg)):
        stream = master.spawn(index)
        x = _voice_base(stream, n, cfg.sample_rate)
        if label == "synthetic":
            x = FAMILY_SYNTHS[synth](stream, x, cfg.sample_rate)
        x = x / max(1.0, float(np.max(np.abs(x))) / 0.95)
        path = os.path.join(wav_dir, fname)
        write_wav(path, x, cfg.sample_rate)
        records.append(ManifestRecord(path=path, label=label,
                                      synthesizer_id=synth, split=split))
    manifest = os.path.abspath(os.path.join(out_dir, "manifest.csv"))
    write_manifest(records, manifest)
    return manifest


# ---- PGM export -------------------------------------------------------------

def export_pgm(matrix: np.ndarray, path, scaling="minmax") -> None:
    """Write a matrix as binary PGM (P5, maxval 255), rows as given.

    `scaling` is "minmax" or a ("fixed", lo, hi) tuple.  Values map through
    v -> rint(255*(v-lo)/(hi-lo)), clamped to [0, 255]; rounding is
    nearest-even.  Under minmax a constant matrix maps to all zeros; under
    fixed scaling lo == hi is a contract violation.
    """
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ContractError(f"export_pgm needs a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError("export_pgm needs finite values")
    if scaling == "minmax":
        lo, hi = float(m.min()), float(m.max())
        if hi == lo:
            pixels = np.zeros(m.shape, dtype=np.uint8)
        else:
            pixels = None
    elif isinstance(scaling, tuple) and len(scaling) == 3 and scaling[0] == "fixed":
        lo, hi = float(scaling[1]), float(scaling[2])
        if hi == lo:
            raise ContractError("fixed scaling requires lo != hi")
        pixels = None
    else:
        raise ContractError(f"unknown scaling {scaling!r}")
    if pixels is None:
        scaled = np.clip(255.0 * (m - lo) / (hi - lo), 0.0, 255.0)
        pixels = np.rint(scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Parse a binary PGM written by export_pgm; returns uint8 (rows, cols)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {buf[:2]!r})")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    data = buf[pos:pos + width * height]
    if len(data) != width * height:
        raise FormatError(f"{path}: pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width)
