"""Time-frequency analysis and synthesis shared by every other module.

Conventions fixed here and relied on downstream:
  * frames are taken from a signal reflect-padded by fft_size/2 on both
    ends, so num_frames = ceil(num_samples / hop)
  * "sqrt_hann" uses the square root of a periodic Hann window for both
    analysis and synthesis (constant overlap-add at 50% overlap);
    "hann" pairs a periodic Hann analysis window with a flat synthesis
    window
  * spectrograms are [channels x frames x bins] with bins = fft_size/2 + 1
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

_WINDOWS = ("hann", "sqrt_hann")


@dataclass
class MultiChannelWave:
    """Time-domain audio, [M channels x S samples] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 2:
            raise ValueError(f"samples must be 1D or 2D, got {self.samples.ndim}D")
        if self.samples.shape[0] < 1:
            raise ValueError("need at least one channel")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def num_channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]

    @property
    def duration(self):
        return self.num_samples / self.sample_rate


@dataclass
class ComplexSpectrogram:
    """STFT tensor, [C channels x T frames x F bins], complex-valued."""

    data: np.ndarray
    frame_shift: int
    fft_size: int

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim == 2:
            self.data = self.data[None]
        if self.data.ndim != 3:
            raise ValueError(f"expect [C x T x F] data, got {self.data.ndim}D")
        if self.data.shape[-1] != self.fft_size // 2 + 1:
            raise ValueError(
                f"bin count {self.data.shape[-1]} inconsistent with "
                f"fft_size {self.fft_size}")

    @property
    def num_channels(self):
        return self.data.shape[0]

    @property
    def num_frames(self):
        return self.data.shape[1]

    @property
    def num_bins(self):
        return self.data.shape[2]


@dataclass
class StftConfig:
    """Analysis/synthesis parameters: FFT size, hop and window family."""

    fft_size: int = 512
    hop: int = 256
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.fft_size % 2:
            raise ValueError(f"fft_size must be a positive even number, "
                             f"got {self.fft_size}")
        if self.hop <= 0 or self.hop > self.fft_size:
            raise ValueError(f"hop must satisfy 0 < hop <= fft_size, "
                             f"got hop={self.hop} fft_size={self.fft_size}")
        if self.window not in _WINDOWS:
            raise ValueError(f"unknown window {self.window!r}, "
                             f"expect one of {_WINDOWS}")

    @property
    def num_bins(self):
        return self.fft_size // 2 + 1

    def num_frames(self, num_samples):
        """Frame count for a signal of the given length: ceil(S / hop)."""
        return -(-num_samples // self.hop)

    def analysis_window(self):
        hann = get_window("hann", self.fft_size, fftbins=True)
        return np.sqrt(hann) if self.window == "sqrt_hann" else hann

    def synthesis_window(self):
        if self.window == "sqrt_hann":
            return self.analysis_window()
        return np.ones(self.fft_size)


def cola_deviation(cfg):
    """
    Max deviation of the overlap-added analysis*synthesis window product
    from a constant, over the steady-state region. Zero (to rounding)
    means exact reconstruction after normalization is guaranteed.
    """
    prod = cfg.analysis_window() * cfg.synthesis_window()
    span = cfg.fft_size * 4
    acc = np.zeros(span + cfg.fft_size)
    for start in range(0, span, cfg.hop):
        acc[start:start + cfg.fft_size] += prod
    interior = acc[cfg.fft_size:span]
    return np.max(np.abs(interior - np.mean(interior)))


def _frame_indices(num_samples, cfg):
    num_frames = cfg.num_frames(num_samples)
    return cfg.hop * np.arange(num_frames)[:, None] + np.arange(cfg.fft_size)


def stft(wave, cfg):
    """
    Multi-channel short-time Fourier transform
    Arguments:
        wave: MultiChannelWave, M x S
        cfg: StftConfig
    Return:
        ComplexSpectrogram, M x T x F with T = ceil(S / hop)
    """
    pad = cfg.fft_size // 2
    if wave.num_samples == 0:
        raise ValueError("cannot transform an empty signal")
    if wave.num_samples <= pad:
        raise ValueError(f"signal too short: {wave.num_samples} samples, "
                         f"need more than {pad}")
    padded = np.pad(wave.samples, ((0, 0), (pad, pad)), mode="reflect")
    frames = padded[:, _frame_indices(wave.num_samples, cfg)]
    frames = frames * cfg.analysis_window()
    return ComplexSpectrogram(np.fft.rfft(frames, axis=-1),
                              frame_shift=cfg.hop, fft_size=cfg.fft_size)


def synthesis_norm(num_frames, cfg):
    """
    Overlap-added analysis*synthesis window product, the per-sample
    normalizer that makes istft(stft(x)) exact wherever it is nonzero.
    Return:
        norm: 1D array of length (num_frames - 1) * hop + fft_size
    """
    prod = cfg.analysis_window() * cfg.synthesis_window()
    acc = np.zeros((num_frames - 1) * cfg.hop + cfg.fft_size)
    for t in range(num_frames):
        acc[t * cfg.hop:t * cfg.hop + cfg.fft_size] += prod
    return acc


def overlap_add(frames, hop):
    """
    Overlap-add time-domain frames
    Arguments:
        frames: ... x T x L array
        hop: frame shift in samples
    Return:
        ... x ((T - 1) * hop + L) array
    """
    *lead, num_frames, flen = frames.shape
    out = np.zeros((*lead, (num_frames - 1) * hop + flen))
    for t in range(num_frames):
        out[..., t * hop:t * hop + flen] += frames[..., t, :]
    return out


def istft(spec, cfg, length=None):
    """
    Inverse STFT via windowed overlap-add with COLA normalization
    Arguments:
        spec: ComplexSpectrogram produced with a matching cfg
        cfg: StftConfig
        length: output sample count; None keeps everything the frames cover
    Return:
        MultiChannelWave, M x length (sample rate unknown here, set to 16000)
    """
    if spec.fft_size != cfg.fft_size:
        raise ValueError(f"fft_size mismatch: spectrogram has {spec.fft_size}, "
                         f"config has {cfg.fft_size}")
    if spec.frame_shift != cfg.hop:
        raise ValueError(f"hop mismatch: spectrogram has {spec.frame_shift}, "
                         f"config has {cfg.hop}")
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=-1)
    frames *= cfg.synthesis_window()
    out = overlap_add(frames, cfg.hop)
    norm = synthesis_norm(spec.num_frames, cfg)
    out = out / np.maximum(norm, 1e-12)
    pad = cfg.fft_size // 2
    if length is None:
        length = out.shape[-1] - 2 * pad
    if length > out.shape[-1] - pad:
        raise ValueError(f"requested {length} samples but frames only "
                         f"cover {out.shape[-1] - pad}")
    return MultiChannelWave(out[:, pad:pad + length], sample_rate=16000)


def cos_ipd(spec, pairs):
    """
    Cosine inter-microphone phase difference features
    Arguments:
        spec: ComplexSpectrogram, M x T x F
        pairs: list of (i, j) channel index pairs
    Return:
        ipd: real array, P x T x F, cos(phase_i - phase_j) in [-1, 1]
    """
    num_channels = spec.num_channels
    for i, j in pairs:
        if not (0 <= i < num_channels and 0 <= j < num_channels):
            raise ValueError(f"pair ({i}, {j}) out of range for "
                             f"{num_channels} channels")
    out = np.empty((len(pairs), spec.num_frames, spec.num_bins))
    for p, (i, j) in enumerate(pairs):
        out[p] = np.cos(np.angle(spec.data[i] * np.conj(spec.data[j])))
    return out
