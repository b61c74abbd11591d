"""Deterministic synthetic stand-in for a weakly labelled 12-class music corpus.

Each class has a fixed timbre recipe (a harmonic or inharmonic partial stack
with its own pitch range, partial weights and envelope; the two singing
classes are amplitude-modulated noise bands). A clip mixes one or two class
sources. Noisy-split clips also get background noise at a fixed SNR and, with
probability ``p_noise``, one of their tags swapped for a wrong one.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from .dataset import ClipRecord, Manifest, TagVocabulary, save_manifest
from .dsp import Waveform, write_wav

SPLITS = ("curated_train", "noisy_train", "test")


@dataclass(frozen=True)
class SynthSpec:
    clips_per_class: int = 20
    noisy_per_class: int = 80
    test_per_class: int = 10
    multi_label_rate: float = 0.2
    p_noise: float = 0.5
    noise_snr_db: float = 0.0
    min_duration: float = 1.0
    max_duration: float = 8.0
    sample_rate: int = 16000


@dataclass(frozen=True)
class Timbre:
    f0: tuple                      # (low, high) Hz, drawn log-uniformly
    partials: tuple                # frequency ratios
    weights: tuple                 # partial amplitudes
    decay: float = 0.0             # seconds; 0 means sustained
    note_rate: float = 0.0         # re-strikes per second for decaying sounds
    tremolo: float = 0.0           # AM rate in Hz
    detune: float = 0.0            # relative detune of a second copy (beating)
    noise_band: tuple = ()         # (low, high) Hz for noise-band sources


def _harm(n, power):
    return tuple(float(k) for k in range(1, n + 1)), tuple(1.0 / k**power for k in range(1, n + 1))


TIMBRES = (
    Timbre((110, 165), *_harm(8, 1.2), decay=0.4, note_rate=2.0),                 # acoustic guitar
    Timbre((41, 62), *_harm(6, 2.0), decay=0.7, note_rate=1.5),                  # bass guitar
    Timbre((165, 247), (1.0, 1.26, 1.5, 2.0, 2.52, 3.0), (1, .9, .8, .5, .4, .3),
           decay=0.25, note_rate=3.0),                                            # strum
    Timbre((262, 392), (1.0, 2.003, 3.009, 4.02, 5.03), (1, .5, .3, .2, .1),
           decay=0.9, note_rate=1.2),                                             # piano
    Timbre((131, 175), (1.0, 2.0, 4.0, 8.0, 16.0), (1, 1, 1, 1, 1)),                    # organ
    Timbre((587, 880), *_harm(6, 0.8), tremolo=6.0),                             # harmonica
    Timbre((330, 494), *_harm(10, 1.0), detune=0.01),                             # accordion
    Timbre((988, 1480), (1.0, 2.0, 3.0), (1, .3, .1), tremolo=5.0),               # flute
    Timbre((196, 294), _harm(8, 0)[0], (.3, .6, .9, 1, .8, .6, .4, .3)),          # trumpet
    Timbre((1568, 2349), (1.0, 2.76, 5.40, 8.93), (1, .6, .3, .15),
           decay=0.5, note_rate=2.5),                                             # glockenspiel
    Timbre((0, 0), (), (), tremolo=4.0, noise_band=(150, 900)),                   # male singing
    Timbre((0, 0), (), (), tremolo=5.0, noise_band=(500, 3000)),                  # female singing
)


def render_source(cls, n, sr, rng):
    """One class source of ``n`` samples, scaled to unit RMS."""
    t = np.arange(n) / sr
    tb = TIMBRES[cls]
    if tb.noise_band:
        sos = butter(4, tb.noise_band, btype="bandpass", fs=sr, output="sos")
        x = sosfilt(sos, rng.standard_normal(n))
    else:
        lo, hi = tb.f0
        f0 = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        x = np.zeros(n)
        for ratio, amp in zip(tb.partials, tb.weights):
            f = f0 * ratio
            if f >= sr / 2:
                continue
            phase = rng.uniform(0, 2 * np.pi)
            x += amp * np.sin(2 * np.pi * f * t + phase)
            if tb.detune:
                x += amp * np.sin(2 * np.pi * f * (1 + tb.detune) * t + phase)
        if tb.decay:
            period = 1.0 / tb.note_rate
            since = (t + rng.uniform(0, period)) % period
            x *= np.exp(-since / tb.decay)
    if tb.tremolo:
        x *= 1.0 + 0.5 * np.sin(2 * np.pi * tb.tremolo * t + rng.uniform(0, 2 * np.pi))
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


def render_clip(tags, duration, sr, rng, noise_snr_db=None):
    n = max(1, int(round(duration * sr)))
    x = sum(render_source(c, n, sr, rng) for c in sorted(tags))
    if noise_snr_db is not None:
        # pink-ish background: white noise through a one-pole lowpass
        bg = sosfilt(butter(1, 1000, fs=sr, output="sos"), rng.standard_normal(n))
        sig_p = np.mean(x**2)
        bg *= np.sqrt(sig_p / (np.mean(bg**2) * 10 ** (noise_snr_db / 10)))
        x = x + bg
    peak = np.max(np.abs(x))
    return Waveform(0.9 * x / peak if peak > 0 else x, sr)


def _replace_one_tag(tags, rng, n_classes=12):
    tags = set(tags)
    removed = sorted(tags)[int(rng.integers(len(tags)))]
    choices = [c for c in range(n_classes) if c not in tags]
    inserted = choices[int(rng.integers(len(choices)))]
    tags.discard(removed)
    tags.add(inserted)
    return frozenset(tags)


def plan_split(spec, seed, split):
    """Clip ids, true tags, observed tags and durations for one split (no audio)."""
    split_idx = SPLITS.index(split)
    per_class = {
        "curated_train": spec.clips_per_class,
        "noisy_train": spec.noisy_per_class,
        "test": spec.test_per_class,
    }[split]
    prefix = {"curated_train": "cur", "noisy_train": "noi", "test": "tst"}[split]
    plans = []
    for c in range(12):
        for k in range(per_class):
            rng = np.random.default_rng([seed, split_idx, c, k])
            tags = {c}
            if rng.random() < spec.multi_label_rate:
                others = [o for o in range(12) if o != c]
                tags.add(others[int(rng.integers(len(others)))])
            duration = float(rng.uniform(spec.min_duration, spec.max_duration))
            observed = frozenset(tags)
            if split == "noisy_train" and rng.random() < spec.p_noise:
                observed = _replace_one_tag(tags, rng)
            audio_seed = int(rng.integers(2**63))
            plans.append((f"{prefix}-{c:02d}-{k:03d}", frozenset(tags), observed, duration, audio_seed))
    return plans


def synth_split(spec, seed, split, out_dir=None, keep_audio=False):
    """Render one split and return ``(manifest, waveforms)``.

    WAVs are written when ``out_dir`` is set; the waveform dict is only
    filled with ``keep_audio`` (a full noisy split does not fit comfortably
    in memory).
    """
    source = "noisy" if split == "noisy_train" else "curated"
    role = "test" if split == "test" else "train"
    records, waves = [], {}
    for cid, true_tags, observed, duration, audio_seed in plan_split(spec, seed, split):
        rng = np.random.default_rng(audio_seed)
        snr = spec.noise_snr_db if split == "noisy_train" else None
        w = render_clip(true_tags, duration, spec.sample_rate, rng, snr)
        ref = f"audio/{split}/{cid}.wav"
        if out_dir is not None:
            path = Path(out_dir) / ref
            path.parent.mkdir(parents=True, exist_ok=True)
            write_wav(path, w)
        if keep_audio:
            waves[cid] = w
        records.append(ClipRecord(cid, ref, observed, source))
    return Manifest(records, role), waves


def synth_corpus(spec=SynthSpec(), seed=0, out_dir=None, vocab=TagVocabulary()):
    """Render all three splits; with ``out_dir`` also write manifests and vocabulary."""
    manifests = {}
    for split in SPLITS:
        m, _ = synth_split(spec, seed, split, out_dir)
        manifests[split] = m
        if out_dir is not None:
            save_manifest(m, Path(out_dir) / f"{split}.csv", vocab)
    if out_dir is not None:
        vocab.save(Path(out_dir) / "vocabulary.txt")
    return manifests
