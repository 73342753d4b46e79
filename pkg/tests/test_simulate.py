import json

import numpy as np
import pytest

from ufe.manifest import FIELD_ORDER, ManifestEntry, read_manifest, write_manifest
from ufe.simulate import (DatasetConfig, Scene, build_dataset, sample_scene,
                          synthesize_mixture)
from ufe.sources import voice_pool
from ufe.spatial import design_beamformer_bank
from ufe.wavio import read_wav


def small_config():
    return DatasetConfig(duration_s=1.2, t60_range=(0.15, 0.2),
                         voices_per_split={"train": 4, "valid": 3, "test": 3})


def small_scene():
    return Scene(room_dim=np.array([5.0, 4.0, 3.0]), t60=0.18,
                 array_center=np.array([2.4, 2.1, 1.2]),
                 angles_deg=np.array([40.0, 205.0]),
                 distances_m=np.array([1.0, 1.3]),
                 snr_db=2.5, noise_snr_db=15.0,
                 overlap_target=0.35, duration_s=1.2)


@pytest.fixture(scope="module")
def bank(geom):
    return design_beamformer_bank(geom)


@pytest.fixture(scope="module")
def example(geom, bank):
    voices = voice_pool(2, np.random.default_rng(21))
    return synthesize_mixture(small_scene(), voices,
                              np.random.default_rng(99), geom=geom, bank=bank)


class TestManifest:
    def entry(self):
        return ManifestEntry(id="tr_000000", mixture_path="train/a.wav",
                             target_paths=["train/r0.wav", "train/r1.wav"],
                             source_paths=["train/s0.wav", "train/s1.wav"],
                             angles_deg=[40.0, 205.0], overlap_ratio=0.34,
                             snr_db=2.5, split="train")

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [self.entry()])
        back = read_manifest(path)
        assert back == [self.entry()]

    def test_field_order_on_disk(self, tmp_path):
        path = tmp_path / "m.jsonl"
        write_manifest(path, [self.entry()])
        record = json.loads(path.read_text().splitlines()[0])
        assert tuple(record.keys()) == FIELD_ORDER

    def test_split_filter(self, tmp_path):
        e1 = self.entry()
        e2 = self.entry()
        e2.split = "valid"
        path = tmp_path / "m.jsonl"
        write_manifest(path, [e1, e2])
        assert len(read_manifest(path, split="valid")) == 1

    def test_missing_field_named(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"id": "x"}\n')
        with pytest.raises(ValueError, match="mixture_path"):
            read_manifest(path)


class TestSynthesizeMixture:
    def test_additivity(self, example):
        total = example.source_images[0] + example.source_images[1] + \
            example.noise
        err = np.linalg.norm(example.mixture - total) / \
            np.linalg.norm(total)
        assert err < 1e-6

    def test_exact_mixing_ratio(self, example):
        e_a = np.sum(example.source_images[0] ** 2)
        e_b = np.sum(example.source_images[1] ** 2)
        np.testing.assert_allclose(10 * np.log10(e_a / e_b), 2.5, atol=0.1)

    def test_shapes(self, example):
        samples = int(1.2 * 16000)
        assert example.mixture.shape == (7, samples)
        for image in example.source_images:
            assert image.shape == (7, samples)
        for target in example.targets:
            assert target.shape == (samples,)

    def test_targets_nonsilent_and_distinct(self, example):
        a, b = example.targets
        assert np.sum(a ** 2) > 0 and np.sum(b ** 2) > 0
        denom = np.linalg.norm(a) * np.linalg.norm(b)
        assert abs(np.dot(a, b)) / denom < 0.9

    def test_deterministic(self, geom, bank):
        voices = voice_pool(2, np.random.default_rng(21))
        a = synthesize_mixture(small_scene(), voices,
                               np.random.default_rng(99), geom=geom, bank=bank)
        b = synthesize_mixture(small_scene(), voices,
                               np.random.default_rng(99), geom=geom, bank=bank)
        np.testing.assert_array_equal(a.mixture, b.mixture)

    def test_overlap_in_band(self, example):
        assert 0.2 <= example.overlap_ratio <= 0.5

    def test_needs_two_speakers(self, geom, bank):
        voices = voice_pool(3, np.random.default_rng(21))
        with pytest.raises(ValueError, match="two speakers"):
            synthesize_mixture(small_scene(), voices[:1],
                               np.random.default_rng(0), geom=geom, bank=bank)


class TestSampleScene:
    def test_sources_inside_room(self):
        config = small_config()
        for seed in range(5):
            scene = sample_scene(config, np.random.default_rng(seed))
            for angle, dist in zip(scene.angles_deg, scene.distances_m):
                rad = np.deg2rad(angle)
                pos = scene.array_center + dist * np.array(
                    [np.cos(rad), np.sin(rad), 0.0])
                assert np.all(pos > 0) and np.all(pos < scene.room_dim)

    def test_angle_separation(self):
        config = small_config()
        for seed in range(5):
            scene = sample_scene(config, np.random.default_rng(seed))
            diff = np.abs((scene.angles_deg[0] - scene.angles_deg[1] + 180)
                          % 360 - 180)
            assert diff >= config.min_angle_separation_deg


class TestBuildDataset:
    def test_build_and_manifest(self, tmp_path, geom, bank):
        summary = build_dataset(tmp_path / "d", {"train": 2, "valid": 1},
                                seed=5, config=small_config(), geom=geom,
                                bank=bank)
        entries = read_manifest(tmp_path / "d" / "manifest.jsonl")
        assert len(entries) == 3
        assert [e.split for e in entries] == ["train", "train", "valid"]
        for entry in entries:
            mix, rate = read_wav(tmp_path / "d" / entry.mixture_path)
            assert mix.shape[0] == 7 and rate == 16000
            for rel in entry.target_paths:
                ref, _ = read_wav(tmp_path / "d" / rel)
                assert ref.shape[0] == 1
            assert 0.2 <= entry.overlap_ratio <= 0.5
        assert summary["splits"]["train"]["ids"] == ["tr_000000", "tr_000001"]

    def test_rebuild_is_byte_identical(self, tmp_path, geom, bank):
        for name in ("a", "b"):
            build_dataset(tmp_path / name, {"train": 1}, seed=9,
                          config=small_config(), geom=geom, bank=bank)
        m_a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        m_b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert m_a == m_b
        w_a = (tmp_path / "a" / "train" / "tr_000000_mix.wav").read_bytes()
        w_b = (tmp_path / "b" / "train" / "tr_000000_mix.wav").read_bytes()
        assert w_a == w_b

    def test_zero_count(self, tmp_path, geom, bank):
        build_dataset(tmp_path / "d", {"train": 0}, seed=1,
                      config=small_config(), geom=geom, bank=bank)
        assert read_manifest(tmp_path / "d" / "manifest.jsonl") == []

    def test_speaker_pools_disjoint(self, tmp_path, geom, bank):
        summary = build_dataset(tmp_path / "d", {"train": 0, "valid": 0},
                                seed=2, config=small_config(), geom=geom,
                                bank=bank)
        train_f0 = set(summary["splits"]["train"]["voice_f0"])
        valid_f0 = set(summary["splits"]["valid"]["voice_f0"])
        assert train_f0 and valid_f0
        assert not train_f0 & valid_f0

    def test_unknown_split_rejected(self, tmp_path, geom, bank):
        with pytest.raises(ValueError, match="unknown split"):
            build_dataset(tmp_path / "d", {"dev": 1}, seed=1,
                          config=small_config(), geom=geom, bank=bank)
