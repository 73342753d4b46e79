"""Two-speaker mixture synthesis and dataset building.

Each example places a microphone array and two speakers in a simulated
room, renders partially overlapped utterances, mixes them at an exact
energy ratio, adds isotropic noise, and derives per-speaker reference
signals by steering the true-angle beamformer at each speaker's clean
reverberant image. References are what training optimizes toward, so
they come from the same fixed beam bank the models select from.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram, MultiChannelWave, StftConfig, istft, stft
from .localize import nearest_beam_index
from .manifest import ManifestEntry, write_manifest
from .room import apply_rir, isotropic_noise, simulate_rir
from .sources import (frame_activity, overlap_ratio, synthesize_utterance,
                      voice_pool)
from .spatial import apply_beamformer, circular_array, design_beamformer_bank
from .wavio import write_wav


@dataclass
class Scene:
    """Fully instantiated parameters of one two-speaker mixture."""

    room_dim: np.ndarray
    t60: float
    array_center: np.ndarray
    angles_deg: np.ndarray      # 2 source azimuths, array-relative
    distances_m: np.ndarray     # 2 source distances
    snr_db: float               # speaker 1 over speaker 2, energy ratio
    noise_snr_db: float         # total speech over noise
    overlap_target: float
    duration_s: float


@dataclass
class MixtureExample:
    mixture: np.ndarray          # M x S
    source_images: list          # two M x S clean reverberant images
    noise: np.ndarray            # M x S
    targets: list                # two 1D beamformed references
    angles_deg: np.ndarray
    overlap_ratio: float
    snr_db: float
    sample_rate: int = 16000


@dataclass
class DatasetConfig:
    duration_s: float = 2.5
    overlap_target: float = 0.35
    overlap_tolerance: float = 0.05
    mixing_snr_range: tuple = (-5.0, 5.0)
    noise_snr_range: tuple = (10.0, 20.0)
    t60_range: tuple = (0.2, 0.4)
    room_x_range: tuple = (4.0, 7.0)
    room_y_range: tuple = (3.5, 6.0)
    room_z_range: tuple = (2.6, 3.2)
    source_distance_range: tuple = (0.5, 2.0)
    min_angle_separation_deg: float = 20.0
    voices_per_split: dict = field(default_factory=lambda: {
        "train": 20, "valid": 6, "test": 6})


def _search_offset(total_samples, dry_a, dry_b, target, hop=256, step=512):
    """
    Best placement of utterance B against utterance A (anchored at 0)
    Return:
        (offset_samples, achieved_overlap)
    """
    num_frames = -(-total_samples // hop)
    act_a = np.zeros(num_frames, dtype=bool)
    act_a[:len(frame_activity(dry_a, hop))] = frame_activity(dry_a, hop)
    act_b = frame_activity(dry_b, hop)
    best = (0, -1.0)
    for offset in range(0, total_samples - len(dry_b) + 1, step):
        shifted = np.zeros(num_frames, dtype=bool)
        start = offset // hop
        shifted[start:start + len(act_b)] = act_b[:num_frames - start]
        achieved = overlap_ratio(act_a, shifted)
        if best[1] < 0 or abs(achieved - target) < abs(best[1] - target):
            best = (offset, achieved)
    return best


def _render_overlapped_pair(voices, scene, rng):
    """Two dry signals of the mixture length with the target overlap."""
    total = int(round(scene.duration_s * 16000))
    dry_a = synthesize_utterance(voices[0], scene.duration_s, rng)
    x_a = np.zeros(total)
    x_a[:len(dry_a)] = dry_a

    best = None
    for factor in (0.7, 0.6, 0.8, 0.5, 0.9, 0.75):
        dry_b = synthesize_utterance(voices[1], factor * scene.duration_s, rng)
        offset, achieved = _search_offset(total, dry_a, dry_b,
                                          scene.overlap_target)
        if best is None or abs(achieved - scene.overlap_target) < \
                abs(best[2] - scene.overlap_target):
            best = (dry_b, offset, achieved)
        if abs(achieved - scene.overlap_target) <= 0.05:
            break
    dry_b, offset, achieved = best
    x_b = np.zeros(total)
    x_b[offset:offset + len(dry_b)] = dry_b
    return x_a, x_b, achieved


def beamformed_reference(image, angle_deg, bank, cfg=None):
    """True-angle fixed beam applied to one clean source image."""
    cfg = cfg or StftConfig()
    spec = stft(MultiChannelWave(image, bank.sample_rate), cfg)
    out = apply_beamformer(bank.weights[nearest_beam_index(angle_deg, bank)],
                           spec)
    ref = istft(ComplexSpectrogram(out, cfg.hop, cfg.fft_size), cfg,
                length=image.shape[-1])
    return ref.samples[0]


def synthesize_mixture(scene, voices, rng, geom=None, bank=None, cfg=None):
    """
    Render one two-speaker mixture with references
    Arguments:
        scene: Scene
        voices: two Voice objects
        rng: numpy Generator driving every random choice
    Return:
        MixtureExample; mixture equals the sum of its parts exactly
    """
    geom = geom or circular_array()
    bank = bank or design_beamformer_bank(geom)
    cfg = cfg or StftConfig()
    if len(voices) != 2 or len(scene.angles_deg) != 2:
        raise ValueError("exactly two speakers per mixture")

    mics = geom.mic_positions - geom.mic_positions.mean(axis=0) + \
        scene.array_center
    x_a, x_b, achieved = _render_overlapped_pair(voices, scene, rng)

    images = []
    for angle, dist, dry in zip(scene.angles_deg, scene.distances_m,
                                (x_a, x_b)):
        rad = np.deg2rad(angle)
        pos = scene.array_center + dist * np.array([np.cos(rad),
                                                    np.sin(rad), 0.0])
        rir = simulate_rir(scene.room_dim, pos, mics, scene.t60)
        images.append(apply_rir(rir, dry))

    # exact mixing ratio: scale speaker 2 so the all-channel energy
    # ratio hits snr_db
    e_a = np.sum(images[0] ** 2)
    e_b = np.sum(images[1] ** 2)
    if e_a <= 0 or e_b <= 0:
        raise ValueError("a source image is silent, cannot set the ratio")
    images[1] = images[1] * np.sqrt(e_a / (e_b * 10.0 ** (scene.snr_db / 10)))

    total = x_a.shape[-1]
    noise = isotropic_noise(geom, total, rng)
    e_speech = e_a + np.sum(images[1] ** 2)
    e_noise = np.sum(noise ** 2)
    noise = noise * np.sqrt(e_speech /
                            (e_noise * 10.0 ** (scene.noise_snr_db / 10)))

    mixture = images[0] + images[1] + noise
    targets = [beamformed_reference(img, angle, bank, cfg)
               for img, angle in zip(images, scene.angles_deg)]
    return MixtureExample(mixture=mixture, source_images=images, noise=noise,
                          targets=targets,
                          angles_deg=np.asarray(scene.angles_deg,
                                                dtype=np.float64),
                          overlap_ratio=achieved, snr_db=scene.snr_db)


def sample_scene(config, rng):
    """Draw one Scene from the dataset configuration."""
    room = np.array([rng.uniform(*config.room_x_range),
                     rng.uniform(*config.room_y_range),
                     rng.uniform(*config.room_z_range)])
    center = np.array([room[0] / 2 + rng.uniform(-0.3, 0.3),
                       room[1] / 2 + rng.uniform(-0.3, 0.3),
                       rng.uniform(1.0, 1.4)])
    margin = 0.3
    for _ in range(200):
        base = rng.uniform(0.0, 360.0)
        separation = rng.uniform(config.min_angle_separation_deg,
                                 360.0 - config.min_angle_separation_deg)
        angles = np.array([base, (base + separation) % 360.0])
        dists = rng.uniform(*config.source_distance_range, size=2)
        ok = True
        for angle, dist in zip(angles, dists):
            rad = np.deg2rad(angle)
            pos = center + dist * np.array([np.cos(rad), np.sin(rad), 0.0])
            if np.any(pos < margin) or np.any(pos > room - margin):
                ok = False
        if ok:
            break
    else:
        raise RuntimeError("could not place sources inside the room")
    return Scene(room_dim=room, t60=rng.uniform(*config.t60_range),
                 array_center=center, angles_deg=angles, distances_m=dists,
                 snr_db=rng.uniform(*config.mixing_snr_range),
                 noise_snr_db=rng.uniform(*config.noise_snr_range),
                 overlap_target=config.overlap_target,
                 duration_s=config.duration_s)


def build_dataset(out_dir, counts, seed, config=None, geom=None, bank=None):
    """
    Render a dataset of two-speaker mixtures to disk
    Arguments:
        out_dir: output directory, created if needed
        counts: examples per split, e.g. {"train": 200, "valid": 20}
        seed: master seed; every example derives its own generator from
              (seed, split, index), so any prefix of the dataset is
              reproducible independently of the rest
    Return:
        summary dict with per-split example ids and voice assignments
    """
    config = config or DatasetConfig()
    geom = geom or circular_array()
    bank = bank or design_beamformer_bank(geom)
    os.makedirs(out_dir, exist_ok=True)

    split_order = [s for s in ("train", "valid", "test") if s in counts]
    for split in counts:
        if split not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {split!r}")

    # speaker pools are disjoint across splits by construction
    pools = {}
    voice_rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    for split in ("train", "valid", "test"):
        pools[split] = voice_pool(config.voices_per_split[split], voice_rng)

    entries = []
    summary = {"seed": seed, "splits": {}}
    for split_idx, split in enumerate(split_order):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        ids, assignments = [], []
        for index in range(counts[split]):
            rng = np.random.default_rng(
                np.random.SeedSequence((seed, 1 + split_idx, index)))
            scene = sample_scene(config, rng)
            pool = pools[split]
            va, vb = rng.choice(len(pool), size=2, replace=False)
            example = synthesize_mixture(scene, (pool[va], pool[vb]), rng,
                                         geom=geom, bank=bank)

            ex_id = f"{split[:2]}_{index:06d}"
            mix_rel = f"{split}/{ex_id}_mix.wav"
            tgt_rel = [f"{split}/{ex_id}_ref{h}.wav" for h in range(2)]
            src_rel = [f"{split}/{ex_id}_src{h}.wav" for h in range(2)]
            write_wav(os.path.join(out_dir, mix_rel), example.mixture, 16000)
            for rel, target in zip(tgt_rel, example.targets):
                write_wav(os.path.join(out_dir, rel), target, 16000)
            for rel, image in zip(src_rel, example.source_images):
                write_wav(os.path.join(out_dir, rel), image[0], 16000)
            entries.append(ManifestEntry(
                id=ex_id, mixture_path=mix_rel, target_paths=tgt_rel,
                source_paths=src_rel,
                angles_deg=list(example.angles_deg),
                overlap_ratio=example.overlap_ratio,
                snr_db=example.snr_db, split=split))
            ids.append(ex_id)
            assignments.append((int(va), int(vb)))
        summary["splits"][split] = {"ids": ids,
                                    "voice_indices": assignments,
                                    "voice_f0": [v.f0_hz
                                                 for v in pools[split]]}
    write_manifest(os.path.join(out_dir, "manifest.jsonl"), entries)
    return summary
