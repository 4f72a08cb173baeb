"""Synthetic speaker corpus for hermetic end-to-end runs.

Each speaker gets a distinct harmonic voice (fundamental, harmonic tilt,
resonant coloring); utterances of one speaker vary in envelope, vibrato and
noise floor. Attribute profiles are deliberately shared between pairs of
speakers: captions for a pair are identical, so caption supervision alone
cannot separate pair members — the speaker classification loss can. That is
the geometry the clustering ablation measures.

Also provides the prompt-generalization split: held-out examples pair an
utterance with prompt surface forms it never saw during training, while
every surface form appears somewhere in the training set.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .audio import PIPELINE_RATE
from .corpus import TemplateSet, Triplet, default_templates, render, write_metadata

ATTRIBUTE_PROFILES = [
    {"gender": "female", "age_group": "26-35", "ethnicity": "asian", "dialect": "northern"},
    {"gender": "male", "age_group": "46-60", "ethnicity": "white", "dialect": "southern"},
    {"gender": "female", "age_group": "18-25", "ethnicity": "hispanic", "dialect": "western"},
    {"gender": "male", "age_group": "36-45", "ethnicity": "black", "dialect": "midland"},
]


def _speaker_voice(index: int, total: int, rng: np.random.Generator) -> dict:
    # stratified voice slots: fundamentals and resonances are spread over
    # disjoint grids so no two synthetic speakers collapse onto the same
    # embedding region by chance
    f0_grid = np.linspace(90.0, 250.0, total)
    resonance_grid = 600.0 + 2600.0 * ((np.arange(total) * 7) % total) / max(total - 1, 1)
    return {
        "f0": float(f0_grid[index] + rng.uniform(-4.0, 4.0)),
        "tilt": float(rng.uniform(0.55, 0.85)),      # harmonic amplitude decay
        "resonance_hz": float(resonance_grid[index] + rng.uniform(-80.0, 80.0)),
        "resonance_gain": float(rng.uniform(0.3, 0.6)),
        "noise_floor": float(rng.uniform(0.004, 0.012)),
    }


def synth_utterance(voice: dict, rng: np.random.Generator, duration_s: float,
                    sample_rate: int = PIPELINE_RATE) -> np.ndarray:
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    vibrato = 1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(3.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    phase = 2 * np.pi * voice["f0"] * np.cumsum(vibrato) / sample_rate
    signal = np.zeros(n)
    for h in range(1, 9):
        amp = voice["tilt"] ** (h - 1)
        # speaker-specific resonance emphasizes harmonics near resonance_hz
        amp *= 1.0 + voice["resonance_gain"] * np.exp(
            -((h * voice["f0"] - voice["resonance_hz"]) / 500.0) ** 2
        )
        signal += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    # syllable-like amplitude envelope, different every utterance
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(1.5, 4.0) * t + rng.uniform(0, 2 * np.pi))
    signal *= envelope
    signal += voice["noise_floor"] * rng.standard_normal(n)
    peak = np.max(np.abs(signal))
    return (0.35 / peak) * signal


def generate_corpus(out_dir, n_speakers: int = 8, utterances_per_speaker: int = 4,
                    probe_utterances_per_speaker: int = 2, seed: int = 0,
                    duration_range=(1.8, 3.0), probe_voice_jitter: float = 0.03):
    """Write WAVs plus metadata.jsonl (training) and probe.jsonl (held-out
    utterances of the same speakers, for representation probing).

    Probe utterances perturb the speaker's voice by probe_voice_jitter
    (relative fundamental/resonance drift), so probing them measures how
    robustly a representation clusters by speaker rather than memorizes
    training points.

    Returns (metadata_path, probe_path).
    """
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records, probe_records = [], []
    for s in range(n_speakers):
        speaker_id = f"spk{s:02d}"
        profile = ATTRIBUTE_PROFILES[s % len(ATTRIBUTE_PROFILES)]
        voice = _speaker_voice(s, n_speakers, rng)
        total = utterances_per_speaker + probe_utterances_per_speaker
        for u in range(total):
            is_probe = u >= utterances_per_speaker
            utt_voice = dict(voice)
            if is_probe and probe_voice_jitter > 0:
                utt_voice["f0"] *= 1.0 + rng.uniform(-probe_voice_jitter, probe_voice_jitter)
                utt_voice["resonance_hz"] *= 1.0 + rng.uniform(-2 * probe_voice_jitter,
                                                               2 * probe_voice_jitter)
            duration = float(rng.uniform(*duration_range))
            wav = synth_utterance(utt_voice, rng, duration)
            utt_id = f"{speaker_id}_utt{u:02d}"
            path = wav_dir / f"{utt_id}.wav"
            wavfile.write(path, PIPELINE_RATE, (wav * 32767.0).astype(np.int16))
            record = {
                "utterance_id": utt_id,
                "audio_path": str(path),
                "speaker_id": speaker_id,
                "duration_s": round(len(wav) / PIPELINE_RATE, 3),
                "attributes": dict(profile),
            }
            (probe_records if is_probe else records).append(record)
    metadata_path = out_dir / "metadata.jsonl"
    probe_path = out_dir / "probe.jsonl"
    write_metadata(metadata_path, records)
    write_metadata(probe_path, probe_records)
    return metadata_path, probe_path


def build_prompt_split(metadata, templates: TemplateSet | None = None, seed: int = 0,
                       train_surfaces_per_kind: int = 2):
    """Train/held-out triplets for the prompt-generalization probe.

    Each (utterance, prompt kind) pair trains on train_surfaces_per_kind
    surface forms, rotated round-robin over utterances so every surface
    appears in training; its held-out triplet uses a surface the pair never
    trained on.
    """
    templates = templates or default_templates()
    metadata = list(metadata)
    rng = np.random.default_rng(seed)
    train, heldout = [], []
    for i, record in enumerate(metadata):
        attrs = dict(record["attributes"])
        common = dict(
            utterance_id=record["utterance_id"],
            audio_path=record["audio_path"],
            speaker_id=record["speaker_id"],
            attributes=attrs,
            duration_s=float(record["duration_s"]),
        )
        kinds = ["full"] + sorted(k for k in attrs if k in templates.attribute_prompts)
        for j, kind in enumerate(kinds):
            if kind == "full":
                prompts, responses = templates.full_prompts, templates.full_responses
            else:
                prompts = templates.attribute_prompts[kind]
                responses = templates.attribute_responses[kind]
            k_train = min(train_surfaces_per_kind, len(prompts) - 1)
            train_idx = [(i + j + n) % len(prompts) for n in range(k_train)]
            held_pool = [n for n in range(len(prompts)) if n not in train_idx]
            held_idx = held_pool[int(rng.integers(len(held_pool)))]
            for idx in train_idx:
                train.append(Triplet(
                    prompt=prompts[idx],
                    description=render(responses[int(rng.integers(len(responses)))], attrs),
                    prompt_kind=kind, **common,
                ))
            heldout.append(Triplet(
                prompt=prompts[held_idx],
                description=render(responses[int(rng.integers(len(responses)))], attrs),
                prompt_kind=kind, **common,
            ))
    return train, heldout
