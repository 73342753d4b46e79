"""Synthetic speech-like test sources.

Harmonic excitation with a slowly wandering pitch, a formant-shaped
spectral envelope, breath noise and a syllabic on/off gate. Nothing
here tries to sound natural; the point is speech-like structure:
wideband harmonics for spatial cues, amplitude modulation for masks,
and real pauses so overlap ratios mean something.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Voice:
    """One synthetic speaker."""

    f0_hz: float
    formants_hz: tuple
    bandwidths_hz: tuple
    syllable_rate_hz: float
    breathiness: float


def random_voice(rng):
    """Draw a distinct speaker: pitch, three formants, timing."""
    f0 = rng.uniform(85.0, 250.0)
    f1 = rng.uniform(300.0, 800.0)
    f2 = rng.uniform(900.0, 2200.0)
    f3 = rng.uniform(2300.0, 3200.0)
    widths = tuple(rng.uniform(80.0, 160.0) for _ in range(3))
    return Voice(f0_hz=f0, formants_hz=(f1, f2, f3), bandwidths_hz=widths,
                 syllable_rate_hz=rng.uniform(2.5, 5.0),
                 breathiness=rng.uniform(0.02, 0.08))


def voice_pool(num_voices, rng):
    return [random_voice(rng) for _ in range(num_voices)]


def _lowpass_noise(rng, num, sample_rate, bandwidth_hz):
    """Zero-mean unit-variance noise band-limited by spectral masking."""
    spectrum = np.fft.rfft(rng.standard_normal(num))
    freqs = np.fft.rfftfreq(num, d=1.0 / sample_rate)
    spectrum[freqs > bandwidth_hz] = 0.0
    x = np.fft.irfft(spectrum, n=num)
    return x / max(np.std(x), 1e-12)


def _formant_envelope(voice, freqs_hz):
    """Spectral weight at the given frequencies, peaks at the formants."""
    env = np.full(freqs_hz.shape, 0.03)
    for fc, bw in zip(voice.formants_hz, voice.bandwidths_hz):
        env = env + np.exp(-0.5 * ((freqs_hz - fc) / bw) ** 2)
    # gentle radiation tilt keeps highs present but weaker
    return env / (1.0 + freqs_hz / 3000.0)


def synthesize_utterance(voice, duration_s, rng, sample_rate=16000):
    """
    Render one utterance of the given voice
    Return:
        1D float array, unit RMS over its active part
    """
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    num = int(round(duration_s * sample_rate))

    # pitch contour wanders a few percent around the base
    f0 = voice.f0_hz * (1.0 + 0.06 * _lowpass_noise(rng, num, sample_rate, 3.0))
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate

    max_harmonic = int(7000.0 // voice.f0_hz)
    harmonics = np.arange(1, max(max_harmonic, 2) + 1)
    weights = _formant_envelope(voice, harmonics * voice.f0_hz)
    voiced = np.zeros(num)
    for k, w in zip(harmonics, weights):
        voiced += w * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    voiced /= np.max(np.abs(voiced)) + 1e-12

    breath = voice.breathiness * _lowpass_noise(rng, num, sample_rate, 6000.0)

    # syllabic gate: smooth positive envelope, silenced below a floor
    raw = _lowpass_noise(rng, num, sample_rate, voice.syllable_rate_hz)
    envelope = np.maximum(raw - np.quantile(raw, 0.25), 0.0)
    envelope /= np.max(envelope) + 1e-12

    x = (voiced + breath) * envelope
    active = np.abs(x) > 1e-4 * np.max(np.abs(x))
    rms = np.sqrt(np.mean(x[active] ** 2)) if np.any(active) else 1.0
    return x / max(rms, 1e-12)


def frame_activity(x, hop=256, threshold_db=-40.0):
    """
    Frame-level energy VAD
    Arguments:
        x: 1D signal
        threshold_db: active when a frame is within this many dB of the
                      loudest frame
    Return:
        boolean array, ceil(len(x) / hop) frames
    """
    num_frames = -(-len(x) // hop)
    padded = np.zeros(num_frames * hop)
    padded[:len(x)] = x
    energy = np.sum(padded.reshape(num_frames, hop) ** 2, axis=1)
    peak = np.max(energy)
    if peak <= 0:
        return np.zeros(num_frames, dtype=bool)
    return energy > peak * 10.0 ** (threshold_db / 10.0)


def overlap_ratio(activity_a, activity_b):
    """duration(both active) / duration(either active), 0 when silent."""
    both = np.sum(activity_a & activity_b)
    either = np.sum(activity_a | activity_b)
    return both / either if either > 0 else 0.0
