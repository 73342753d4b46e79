import numpy as np
import pytest

from ufe.dsp import MultiChannelWave, StftConfig, stft
from ufe.spatial import circular_array


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)


@pytest.fixture(scope="session")
def geom():
    return circular_array()


@pytest.fixture(scope="session")
def stft_cfg():
    return StftConfig()


def make_plane_wave(geom, angle_deg, source, sample_rate=16000):
    """
    Far-field anechoic multi-channel capture of a mono source from the
    given azimuth, realized with exact fractional delays in the frequency
    domain. Independent of the room simulator.
    Arguments:
        source: 1D mono signal
    Return:
        MultiChannelWave, M x S
    """
    from ufe.spatial import propagation_delays

    source = np.asarray(source, dtype=np.float64)
    num = len(source)
    spectrum = np.fft.rfft(source)
    freqs = np.fft.rfftfreq(num, d=1.0 / sample_rate)
    tau = propagation_delays(geom, angle_deg)
    shifted = spectrum[None, :] * np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])
    return MultiChannelWave(np.fft.irfft(shifted, n=num, axis=-1), sample_rate)


def plane_wave_spec(geom, angle_deg, rng, duration_s=1.0, cfg=None):
    """Spectrogram of a white-noise plane wave from the given azimuth."""
    cfg = cfg or StftConfig()
    num = int(duration_s * 16000)
    wave = make_plane_wave(geom, angle_deg, rng.standard_normal(num))
    return stft(wave, cfg)
