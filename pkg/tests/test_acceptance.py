"""
Acceptance battery. One test per shipped guarantee, each asserting its
stated tolerance. The trained-model checks at the bottom build a
200-utterance corpus and train both pipelines at desk widths, so this
file dominates the suite's runtime.
"""

import itertools
import os
import time

import numpy as np
import pytest

from conftest import make_plane_wave
from ufe import autograd as ag
from ufe.autograd import Tensor, check_gradient
from ufe.cli import dispatch
from ufe.dsp import MultiChannelWave, StftConfig, istft, stft
from ufe.evaluate import (EvalConfig, evaluate_offline, evaluate_online,
                          separate_offline, separate_online)
from ufe.localize import localize_sources
from ufe.losses import pit_loss, si_snr_value
from ufe.models import (AttentionalSelector, JointPipeline,
                        unmixing_features)
from ufe.room import apply_rir, simulate_rir
from ufe.simulate import DatasetConfig, build_dataset
from ufe.sources import random_voice, synthesize_utterance
from ufe.spatial import (angle_feature, build_steering_table,
                         circular_array, design_beamformer_bank,
                         distortionless_error, uniform_angle_grid)
from ufe.training import load_examples, pretrain_then_joint, train_modular

SAMPLE_RATE = 16000


@pytest.fixture(scope="module")
def desk():
    cfg = StftConfig(fft_size=512, hop=256)
    geom = circular_array()
    bank = design_beamformer_bank(geom, num_beams=18,
                                  design="superdirective",
                                  diagonal_loading=0.01, cfg=cfg)
    return cfg, geom, bank


def test_stft_perfect_reconstruction(rng):
    cfg = StftConfig(fft_size=512, hop=256)
    worst = 0.0
    for _ in range(100):
        channels = int(rng.integers(1, 8))
        length = int(rng.integers(900, 24000))
        wave = MultiChannelWave(rng.standard_normal((channels, length)),
                                SAMPLE_RATE)
        back = istft(stft(wave, cfg), cfg, length=length)
        err = np.linalg.norm(back.samples - wave.samples) / \
            np.linalg.norm(wave.samples)
        worst = max(worst, err)
    assert worst < 1e-6


def test_gradient_integrity_every_op_and_assembled_graph(rng):
    start = time.time()
    tol = 1e-4

    def t(shape, lo=-1.0, hi=1.0, positive=False):
        data = rng.uniform(lo, hi, size=shape)
        if positive:
            data = np.abs(data) + 0.5
        return Tensor(data, requires_grad=True)

    # values away from the clip corners keep central differences valid
    clipped = rng.uniform(-1.0, 1.0, size=(4, 5))
    clipped[np.abs(np.abs(clipped) - 0.5) < 1e-3] = 0.1

    # fixed companions so repeated calls see the same function
    w = rng.standard_normal((4, 5))
    w_half = rng.standard_normal((2, 10))
    w_flip = rng.standard_normal((5, 4))
    w_col = rng.standard_normal((4, 1))
    w_row = rng.standard_normal(5)
    w_cat = rng.standard_normal((4, 8))
    w_stk = rng.standard_normal((2, 4, 5))
    w_ola = rng.standard_normal(20)

    battery = [
        ("add", lambda x, y: (x + y).sum(), [t((4, 5)), t((4, 5))]),
        ("add broadcast", lambda x, y: (x + y).sum(), [t((4, 5)), t((5,))]),
        ("neg", lambda x: (-x).sum(), [t((4, 5))]),
        ("sub", lambda x, y: (x - y).sum(), [t((4, 5)), t((4, 5))]),
        ("rsub", lambda x: (1.5 - x).sum(), [t((4, 5))]),
        ("mul", lambda x, y: (x * y).sum(), [t((4, 5)), t((4, 5))]),
        ("div", lambda x, y: (x / y).sum(), [t((4, 5)),
                                             t((4, 5), positive=True)]),
        ("rdiv", lambda x: (2.0 / x).sum(), [t((4, 5), positive=True)]),
        ("pow", lambda x: (x ** 3).sum(), [t((4, 5))]),
        ("matmul", lambda x, y: (x @ y).sum(), [t((4, 6)), t((6, 3))]),
        ("getitem", lambda x: (x[1:3, ::2] + x[0, ::2]).sum(),
         [t((4, 5))]),
        ("reshape", lambda x: (x.reshape(2, 10) * w_half).sum(),
         [t((4, 5))]),
        ("transpose", lambda x: (x.transpose(1, 0) * w_flip).sum(),
         [t((4, 5))]),
        ("sum axis", lambda x: (x.sum(axis=1, keepdims=True) *
                                w_col).sum(), [t((4, 5))]),
        ("mean", lambda x: (x.mean(axis=0) * w_row).sum(), [t((4, 5))]),
        ("sigmoid", lambda x: (x.sigmoid() * w).sum(), [t((4, 5))]),
        ("tanh", lambda x: (x.tanh() * w).sum(), [t((4, 5))]),
        ("exp", lambda x: (x.exp() * w).sum(), [t((4, 5))]),
        ("log", lambda x: (x.log() * w).sum(),
         [t((4, 5), positive=True)]),
        ("sqrt", lambda x: (x.sqrt() * w).sum(),
         [t((4, 5), positive=True)]),
        ("clip", lambda x: (x.clip(-0.5, 0.5) * w).sum(),
         [Tensor(clipped, requires_grad=True)]),
        ("softmax", lambda x: (x.softmax(axis=-1) * w).sum(), [t((4, 5))]),
        ("concat", lambda x, y: (ag.concat([x, y], axis=1) * w_cat).sum(),
         [t((4, 5)), t((4, 3))]),
        ("stack", lambda x, y: (ag.stack([x, y], axis=0) * w_stk).sum(),
         [t((4, 5)), t((4, 5))]),
        ("trailing_mean", lambda x: (ag.trailing_mean(x, 3) * w.T).sum(),
         [t((5, 4))]),
        ("overlap_add", lambda re, im: (ag.overlap_add_synthesis(
            re, im, StftConfig(fft_size=8, hop=4), length=20) *
            w_ola).sum(), [t((5, 5)), t((5, 5))]),
    ]
    failures = []
    for name, fn, tensors in battery:
        for index in range(len(tensors)):
            err = check_gradient(fn, tensors, index)
            if not err < tol:
                failures.append(f"{name}[{index}]: {err:.2e}")
    assert not failures, failures

    # the fully assembled pipeline, probed at 56 random coordinates
    cfg = StftConfig(fft_size=64, hop=32)
    geom = circular_array()
    bank = design_beamformer_bank(geom, num_beams=6, cfg=cfg)
    model = JointPipeline(geom, bank, stft_cfg=cfg, num_angles=8,
                          hidden=6, num_layers=1, embedding_dim=8,
                          projection_dim=6, dropout=0.0,
                          rng=np.random.default_rng(3))
    wave = MultiChannelWave(rng.standard_normal((7, 1600)) * 0.1,
                            SAMPLE_RATE)
    # clearly distinct references keep the winning assignment stable
    # under the finite-difference probes
    refs = [wave.samples[0] + 0.02 * rng.standard_normal(1600),
            rng.standard_normal(1600)]
    params = dict(model.named_parameters())
    probed = ["presep.stack.layers.0.w_input", "presep.heads.0.weight",
              "beam_select.w_embed", "angle_select.w_pool",
              "extract.stack.layers.0.w_hidden", "extract.head.weight",
              "presep.heads.1.bias"]

    def loss_fn(*_):
        out = model(wave)
        loss, _ = pit_loss(list(out.waves), refs)
        return loss

    # the loss is O(10) while some pooling-path gradients are O(1e-5),
    # so tiny steps cancel catastrophically; a wider step keeps the
    # central difference inside its truncation-dominated regime
    for name in probed:
        err = check_gradient(loss_fn, [params[name]], 0, coords=8,
                             epsilon=1e-3, rng=np.random.default_rng(5))
        assert err < tol, f"{name}: {err:.2e}"
    assert time.time() - start < 300


def test_beamformer_distortionless_and_white_noise_gain(desk):
    cfg, geom, bank = desk
    assert bank.weights.shape == (18, 257, 7)
    assert distortionless_error(bank) < 1e-6

    dsb = design_beamformer_bank(geom, num_beams=18,
                                 design="delay_and_sum", cfg=cfg)
    wng = 1.0 / np.sum(np.abs(dsb.weights) ** 2, axis=-1)
    assert np.max(np.abs(wng - geom.num_mics)) < 1e-9


def test_localization_oracle_accuracy(rng, desk):
    cfg, geom, _ = desk
    grid = uniform_angle_grid(36)
    table = build_steering_table(geom, grid, cfg, sample_rate=SAMPLE_RATE)

    # anechoic plane waves, unit masks: exact recovery at every angle
    hits = 0
    for truth in grid:
        wave = make_plane_wave(geom, truth, rng.standard_normal(12000))
        spec = stft(wave, cfg)
        ones = np.ones((1, spec.num_frames, spec.num_bins))
        result = localize_sources(ones, spec, table)
        hits += result.angles_deg[0] == truth
    assert hits == 36

    # moderate reverberation: at least 90% of angles within 10 degrees
    room = np.array([6.0, 4.0, 3.0])
    center = np.array([3.0, 2.0, 1.2])
    mics = geom.mic_positions - geom.centroid + center
    good = 0
    for truth in grid:
        rad = np.deg2rad(truth)
        pos = center + np.array([1.5 * np.cos(rad), 1.5 * np.sin(rad),
                                 0.1])
        rir = simulate_rir(room, pos, mics, 0.3, sample_rate=SAMPLE_RATE)
        dry = synthesize_utterance(random_voice(rng), 1.5, rng)
        wet = apply_rir(rir, dry)
        spec = stft(MultiChannelWave(wet, SAMPLE_RATE), cfg)
        ones = np.ones((1, spec.num_frames, spec.num_bins))
        result = localize_sources(ones, spec, table)
        err = abs(result.angles_deg[0] - truth)
        good += min(err, 360.0 - err) <= 10.0
    assert good / 36.0 >= 0.9


def test_angle_feature_contrast(rng, desk):
    cfg, geom, _ = desk
    voice = synthesize_utterance(random_voice(rng), 1.5, rng)
    spec = stft(make_plane_wave(geom, 70.0, voice), cfg)
    mag = np.abs(spec.data[0])
    active = mag > 0.01 * mag.max()

    ahead = angle_feature(spec, geom, 70.0)
    behind = angle_feature(spec, geom, 250.0)
    assert np.mean(ahead[active]) >= 0.99
    assert np.mean(behind[active]) < np.mean(ahead[active])


def test_attention_selection_matches_naive_reference(rng):
    heads, rows, frames, dim = 2, 18, 50, 32
    bins, width = 64, 40
    selector = AttentionalSelector(width, bins, dim,
                                   rng=np.random.default_rng(8))
    embedding = rng.standard_normal((heads, frames, width))
    pool = (rng.standard_normal((rows, frames, bins)) +
            1j * rng.standard_normal((rows, frames, bins)))

    (got_re, got_im), weights = selector(embedding, pool)
    w_embed = selector.w_embed.data
    w_pool = selector.w_pool.data

    # independent reference: explicit loops, no shared tensor code
    scores = np.zeros((heads, rows, frames))
    for h in range(heads):
        for n in range(rows):
            for f in range(frames):
                left = embedding[h, f] @ w_embed
                right = np.abs(pool[n, f]) @ w_pool
                scores[h, n, f] = left @ right / np.sqrt(dim)
    averaged = scores.mean(axis=2)
    expected_w = np.exp(averaged - averaged.max(axis=1, keepdims=True))
    expected_w /= expected_w.sum(axis=1, keepdims=True)
    combined = np.zeros((heads, frames, bins), dtype=complex)
    for h in range(heads):
        for n in range(rows):
            combined[h] += expected_w[h, n] * pool[n]

    np.testing.assert_allclose(weights.data, expected_w, atol=1e-9)
    np.testing.assert_allclose(got_re.data, combined.real, atol=1e-9)
    np.testing.assert_allclose(got_im.data, combined.imag, atol=1e-9)
    assert np.all(weights.data > -1e-6)
    assert np.max(np.abs(weights.data.sum(axis=1) - 1.0)) < 1e-6


def test_si_snr_and_pit_properties(rng):
    ref = rng.standard_normal(2000)
    est = rng.standard_normal(2000)

    # scale invariance, exact for lossless power-of-two gains
    base = si_snr_value(est, ref)
    assert si_snr_value(4.0 * est, ref) == base
    assert si_snr_value(est, 0.25 * ref) == base

    # permutation invariance: relabeling speakers relabels the score
    refs = [ref, rng.standard_normal(2000)]
    ests = [Tensor(est), Tensor(rng.standard_normal(2000))]
    loss_ab, perm_ab = pit_loss(ests, refs)
    loss_ba, perm_ba = pit_loss(ests[::-1], refs)
    assert float(loss_ab.data) == float(loss_ba.data)
    assert perm_ba[0] == perm_ab[1] and perm_ba[1] == perm_ab[0]

    # the reported loss equals a brute-force assignment enumeration
    best = max(sum(si_snr_value(e.data, refs[p[i]])
                   for i, e in enumerate(ests))
               for p in itertools.permutations(range(2)))
    assert float(-loss_ab.data) == pytest.approx(best, abs=1e-12)


def test_training_determinism_bitwise(tmp_path, capsys):
    data = str(tmp_path / "toy")
    assert dispatch(["simulate", "--count", "3", "--valid-count", "2",
                     "--duration-s", "1.2", "--seed", "23",
                     "--out-dir", data]) == 0
    runs = []
    for tag in ("a", "b"):
        out = str(tmp_path / tag)
        code = dispatch(["train", "--manifest",
                         os.path.join(data, "manifest.jsonl"),
                         "--out-dir", out, "--hidden", "8",
                         "--num-layers", "1", "--fft-size", "64",
                         "--hop", "32", "--num-beams", "6",
                         "--num-angles", "8", "--projection-dim", "8",
                         "--dropout", "0.2", "--epochs", "1",
                         "--pretrain-epochs", "1", "--seed", "5"])
        assert code == 0
        runs.append(out)
    capsys.readouterr()
    names = sorted(n for n in os.listdir(runs[0]) if ".ckpt" in n)
    assert "joint.ckpt" in names
    for name in names:
        with open(os.path.join(runs[0], name), "rb") as fa, \
                open(os.path.join(runs[1], name), "rb") as fb:
            assert fa.read() == fb.read(), name


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("acceptance") / "ov35")
    build_dataset(out, {"train": 160, "valid": 16, "test": 24}, seed=11,
                  config=DatasetConfig())
    return os.path.join(out, "manifest.jsonl")


def test_online_offline_consistency_with_full_history(corpus, desk):
    cfg, geom, bank = desk
    model = JointPipeline(geom, bank, stft_cfg=cfg, num_angles=36,
                          hidden=16, num_layers=1,
                          embedding_dim=cfg.num_bins, projection_dim=16,
                          dropout=0.0, rng=np.random.default_rng(29))
    model.set_training(False)
    examples = load_examples(corpus, split="test")[:20]
    assert len(examples) == 20
    stream = EvalConfig(mode="online", block_s=4.0, history_s=4.0,
                        hop_s=4.0)
    for example in examples:
        offline = separate_offline(model, example.mixture)
        online, _ = separate_online(model, example.mixture, stream)
        for a, b in zip(online, offline):
            assert np.max(np.abs(a - b)) < 1e-6


@pytest.fixture(scope="module")
def e2e_trained(corpus, desk, tmp_path_factory):
    cfg, geom, bank = desk
    train = load_examples(corpus, split="train")
    valid = load_examples(corpus, split="valid")
    out = str(tmp_path_factory.mktemp("e2e_run"))
    start = time.time()
    model, results = pretrain_then_joint(
        geom, bank, train, valid, out, stft_cfg=cfg, num_angles=36,
        hidden=128, num_layers=3, projection_dim=64, dropout=0.2,
        pretrain_epochs=2, joint_epochs=4, seed=0)
    model.set_training(False)
    return model, results, time.time() - start


@pytest.fixture(scope="module")
def modular_trained(corpus, desk, tmp_path_factory):
    cfg, geom, bank = desk
    train = load_examples(corpus, split="train")
    valid = load_examples(corpus, split="valid")
    out = str(tmp_path_factory.mktemp("modular_run"))
    model, results = train_modular(
        geom, bank, train, valid, out, stft_cfg=cfg, num_angles=36,
        hidden=128, num_layers=3, dropout=0.2, max_epochs=2, seed=1)
    model.set_training(False)
    return model, results


def test_toy_end_to_end_training_gains(corpus, e2e_trained,
                                       modular_trained):
    e2e, _, seconds = e2e_trained
    assert seconds < 7200.0

    offline_e2e = evaluate_offline(e2e, corpus, split="test")
    assert offline_e2e.num_errors == 0
    assert offline_e2e.mean_improvement_db >= 3.0

    stream = EvalConfig(mode="online", block_s=1.0, history_s=1.0,
                        hop_s=1.0)
    online_e2e = evaluate_online(e2e, corpus, cfg=stream, split="test")
    modular, _ = modular_trained
    offline_mod = evaluate_offline(modular, corpus, split="test")
    online_mod = evaluate_online(modular, corpus, cfg=stream,
                                 split="test")
    gap_e2e = offline_e2e.mean_si_snr_db - online_e2e.mean_si_snr_db
    gap_mod = offline_mod.mean_si_snr_db - online_mod.mean_si_snr_db
    assert gap_e2e < gap_mod, (gap_e2e, gap_mod)


@pytest.fixture(scope="module")
def lone_speaker(desk):
    cfg, geom, _ = desk
    rng = np.random.default_rng(41)
    room = np.array([6.0, 4.0, 3.0])
    center = np.array([3.0, 2.0, 1.2])
    mics = geom.mic_positions - geom.centroid + center
    pos = center + np.array([1.5 * np.cos(np.deg2rad(40.0)),
                             1.5 * np.sin(np.deg2rad(40.0)), 0.1])
    rir = simulate_rir(room, pos, mics, 0.3, sample_rate=SAMPLE_RATE)
    dry = synthesize_utterance(random_voice(rng), 2.5, rng)
    wet = apply_rir(rir, dry)[:, :len(dry)]
    return MultiChannelWave(wet, SAMPLE_RATE)


def test_single_speaker_mask_dominance(modular_trained, lone_speaker,
                                       desk):
    cfg, _, _ = desk
    model, _ = modular_trained
    spec = stft(lone_speaker, cfg)
    masks, _ = model.unmix(unmixing_features(spec))
    frame_energy = np.sum(np.abs(spec.data[0]) ** 2, axis=-1)
    active = frame_energy > 0.05 * frame_energy.max()
    means = sorted(float(np.mean(m[active])) for m in masks.data)
    assert means[1] > means[0]


def test_single_speaker_second_output_near_silent(e2e_trained,
                                                  lone_speaker):
    model, _, _ = e2e_trained
    waves = separate_offline(model, lone_speaker)
    energies = sorted(float(np.mean(np.square(w))) for w in waves)
    assert energies[0] < 0.01 * energies[1], energies
