"""WAV ingestion, duration alignment, protocol parsing, batching, and a
synthetic corpus generator for desk-scale experiments.

Audio is 16 kHz mono PCM16 throughout. Labels follow the project-wide
convention 0 = spoof, 1 = bonafide. Protocol files use the
whitespace-separated five-field line

    SPEAKER UTT_ID - SYSTEM_ID KEY

with KEY either ``bonafide`` or ``spoof``.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
DEFAULT_TARGET_LENGTH = 96000

LABEL_TO_INDEX = {"spoof": 0, "bonafide": 1}
INDEX_TO_LABEL = {0: "spoof", 1: "bonafide"}


class AudioError(Exception):
    pass


class ProtocolError(Exception):
    pass


@dataclass
class Utterance:
    id: str
    samples: np.ndarray
    label: str = "unknown"


@dataclass
class ProtocolEntry:
    speaker_id: str
    utterance_id: str
    system_id: str
    key: str


def read_wav(path) -> np.ndarray:
    """Load a mono 16-bit 16 kHz PCM WAV file as float32 in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wav:
            if wav.getcomptype() != "NONE":
                raise AudioError(f"{path}: unsupported encoding {wav.getcomptype()!r}")
            if wav.getnchannels() != 1:
                raise AudioError(f"{path}: unsupported channel count {wav.getnchannels()}")
            if wav.getsampwidth() != 2:
                raise AudioError(f"{path}: unsupported sample width {wav.getsampwidth()}")
            if wav.getframerate() != SAMPLE_RATE:
                raise AudioError(f"{path}: unsupported sample rate {wav.getframerate()}")
            raw = wav.readframes(wav.getnframes())
    except wave.Error as exc:
        raise AudioError(f"{path}: malformed WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return samples


def write_wav(path, samples: np.ndarray):
    """Write float samples in [-1, 1] as mono 16-bit 16 kHz PCM."""
    quantized = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0),
                        -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(SAMPLE_RATE)
        wav.writeframes(quantized.tobytes())


def align_duration(samples: np.ndarray, target: int = DEFAULT_TARGET_LENGTH) -> np.ndarray:
    """Fix the sample count: truncate long signals, tile short ones.

    Short signals are repeated whole, end to end, then cut at target.
    """
    n = len(samples)
    if n == 0:
        raise AudioError("cannot align an empty signal")
    if n == target:
        return samples
    if n > target:
        return samples[:target]
    reps = -(-target // n)
    return np.tile(samples, reps)[:target]


def parse_protocol(path, require_key: bool = True) -> list[ProtocolEntry]:
    """Read a protocol file; order preserved, utterance ids unique.

    With require_key=False a ``-`` key is accepted and mapped to the
    ``unknown`` label (scoring-only protocols).
    """
    entries = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 5:
                raise ProtocolError(
                    f"{path}:{lineno}: expected 5 fields, got {len(fields)}: {raw.rstrip()!r}")
            speaker, utt_id, _, system, key = fields
            if key not in LABEL_TO_INDEX:
                if require_key or key != "-":
                    raise ProtocolError(f"{path}:{lineno}: unknown key {key!r}")
                key = "unknown"
            if utt_id in seen:
                raise ProtocolError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            entries.append(ProtocolEntry(speaker, utt_id, system, key))
    return entries


def audio_path(root, utt_id: str) -> Path:
    root = Path(root)
    candidate = root / "wav" / f"{utt_id}.wav"
    if candidate.exists():
        return candidate
    return root / f"{utt_id}.wav"


def load_utterances(entries: list[ProtocolEntry], audio_root,
                    target_length: int | None = None) -> list[Utterance]:
    utts = []
    for entry in entries:
        path = audio_path(audio_root, entry.utterance_id)
        if not path.exists():
            raise AudioError(f"missing audio file for {entry.utterance_id!r}: {path}")
        samples = read_wav(path)
        if target_length is not None:
            samples = align_duration(samples, target_length)
        utts.append(Utterance(entry.utterance_id, samples, entry.key))
    return utts


def batches_from_utterances(utts: list[Utterance], batch_size: int = 32,
                            rng: np.random.Generator | None = None):
    """Yield (x, y) batches; x is (B, 1, L) float32, y is int64 labels.

    With an rng the order is a fresh permutation; the final short batch
    is emitted as-is.
    """
    order = np.arange(len(utts))
    if rng is not None:
        order = rng.permutation(len(utts))
    for start in range(0, len(order), batch_size):
        chosen = [utts[i] for i in order[start : start + batch_size]]
        x = np.stack([u.samples for u in chosen])[:, None, :].astype(np.float32)
        y = np.array([LABEL_TO_INDEX[u.label] for u in chosen], dtype=np.int64)
        yield x, y


def make_batches(entries: list[ProtocolEntry], audio_root, batch_size: int = 32,
                 seed: int = 0, target_length: int = DEFAULT_TARGET_LENGTH):
    """Load, align, and batch a protocol's audio with a seeded shuffle."""
    utts = load_utterances(entries, audio_root, target_length)
    yield from batches_from_utterances(utts, batch_size, np.random.default_rng(seed))


# --- synthetic corpus ----------------------------------------------------
#
# Bona fide examples are harmonic tone stacks with a slow amplitude
# envelope plus 20 dB-SNR noise. Spoofs run the same generator through
# one of three artifact channels, chosen per file: hard clipping (A01),
# 4-bit requantization (A02), or a moving-average lowpass (A03). The
# artifacts are local in time so small receptive fields can learn them.

_SYNTH_SYSTEMS = ("A01", "A02", "A03")
_PEAK = 0.8
_CLIP_RATIO = 0.6


def _base_signal(rng: np.random.Generator) -> np.ndarray:
    duration = rng.uniform(1.0, 8.0)
    n = int(duration * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f0 = rng.uniform(80.0, 300.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, 6)
    sig = np.zeros(n)
    for k in range(1, 7):
        sig += (1.0 / k) * np.sin(2.0 * np.pi * k * f0 * t + phases[k - 1])
    knots = rng.uniform(0.5, 1.0, 8)
    envelope = np.interp(np.linspace(0.0, 7.0, n), np.arange(8.0), knots)
    sig *= envelope
    noise = rng.standard_normal(n)
    noise *= np.sqrt(np.mean(sig ** 2) / 100.0)  # 20 dB SNR
    sig += noise
    return _PEAK * sig / np.abs(sig).max()


def _apply_artifact(sig: np.ndarray, which: int) -> np.ndarray:
    if which == 0:
        limit = _CLIP_RATIO * np.abs(sig).max()
        return np.clip(sig, -limit, limit)
    if which == 1:
        return np.clip(np.round(sig * 8.0), -8, 7) / 8.0
    return np.convolve(sig, np.full(8, 1.0 / 8.0), mode="same")


def synth_dataset(n_per_class: int, seed: int, out_dir) -> Path:
    """Generate n bona fide + n spoof WAVs and a protocol file.

    Returns the protocol path. Regeneration with the same seed is
    byte-identical.
    """
    if n_per_class < 1:
        raise ValueError("need at least one example per class")
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    lines = []
    for i in range(n_per_class):
        utt_id = f"SYN_B_{i:06d}"
        write_wav(wav_dir / f"{utt_id}.wav", _base_signal(rng))
        lines.append(f"SYN_{i % 20:04d} {utt_id} - - bonafide")
    for i in range(n_per_class):
        utt_id = f"SYN_S_{i:06d}"
        sig = _base_signal(rng)
        which = int(rng.integers(0, 3))
        write_wav(wav_dir / f"{utt_id}.wav", _apply_artifact(sig, which))
        lines.append(f"SYN_{i % 20:04d} {utt_id} - {_SYNTH_SYSTEMS[which]} spoof")

    protocol_path = out_dir / "protocol.txt"
    with open(protocol_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return protocol_path
