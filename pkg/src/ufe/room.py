"""Shoebox room impulse responses by the image method, plus spherically
isotropic noise synthesis.

Early images (low reflection order) are placed with Hanning-windowed
sinc fractional-delay filters so the phase relations across microphones
are exact; the dense tail is placed at nearest-integer delays, which is
orders of magnitude faster and only affects the late energy envelope.
"""

import itertools

import numpy as np
from scipy.signal import fftconvolve

from .spatial import SPEED_OF_SOUND

SABINE_CONSTANT = 0.161


def sabine_absorption(dimensions, t60):
    """
    Uniform wall absorption that realizes a target reverberation time
    Arguments:
        dimensions: room extents [Lx, Ly, Lz] in meters
        t60: target reverberation time in seconds
    Return:
        alpha in (0, 1)
    """
    lx, ly, lz = np.asarray(dimensions, dtype=np.float64)
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = SABINE_CONSTANT * volume / (t60 * surface)
    if alpha >= 1.0:
        raise ValueError(
            f"t60 {t60} s is unreachable in a "
            f"{lx} x {ly} x {lz} m room (absorption {alpha:.3f} >= 1)")
    return alpha


def reflection_coefficient(dimensions, t60):
    """Pressure reflection coefficient, negative sign convention."""
    return -np.sqrt(1.0 - sabine_absorption(dimensions, t60))


def _windowed_sinc_place(h, mic_index, delay_samples, amplitude, half_width,
                         cutoff_cycles):
    """Add one fractional-delay arrival to h[mic_index]."""
    npts = h.shape[1]
    lo = max(int(np.ceil(delay_samples - half_width)), 0)
    hi = min(int(np.floor(delay_samples + half_width)), npts - 1)
    if hi < lo:
        return
    n = np.arange(lo, hi + 1)
    t = n - delay_samples
    taps = 0.5 * (1.0 + np.cos(np.pi * t / half_width)) * \
        np.sinc(cutoff_cycles * t)
    h[mic_index, n] += amplitude * taps


def simulate_rir(room_dim, source_pos, mic_positions, t60, sample_rate=16000,
                 rir_seconds=None, sinc_order=2, sinc_width=40,
                 speed_of_sound=SPEED_OF_SOUND):
    """
    Image-method impulse responses from one source to M microphones
    Arguments:
        room_dim: [Lx, Ly, Lz] in meters
        source_pos: 3 source coordinates in meters
        mic_positions: M x 3 microphone coordinates in meters
        t60: reverberation time in seconds; 0 gives the free-field
             direct path only
        rir_seconds: response length; defaults to max(t60, 50 ms)
        sinc_order: reflections up to this total order get exact
                    fractional delays, the rest nearest-integer placement
        sinc_width: length of the fractional-delay filter in samples
    Return:
        h: M x L array, L = ceil(rir_seconds * sample_rate)
    """
    room_dim = np.asarray(room_dim, dtype=np.float64)
    source_pos = np.asarray(source_pos, dtype=np.float64)
    mic_positions = np.atleast_2d(np.asarray(mic_positions, dtype=np.float64))
    if np.any(source_pos <= 0) or np.any(source_pos >= room_dim):
        raise ValueError(f"source {source_pos} outside room {room_dim}")
    if np.any(mic_positions <= 0) or np.any(mic_positions >= room_dim):
        raise ValueError("microphones must lie strictly inside the room")
    if t60 < 0:
        raise ValueError(f"t60 must be non-negative, got {t60}")

    if rir_seconds is None:
        rir_seconds = max(t60, 0.05)
    npts = int(np.ceil(rir_seconds * sample_rate))
    num_mics = mic_positions.shape[0]
    h = np.zeros((num_mics, npts))
    half_width = sinc_width / 2
    cutoff_cycles = 0.9  # sinc cutoff at 0.9 of Nyquist

    if t60 == 0:
        beta = 0.0
        max_order = np.zeros(3, dtype=int)
    else:
        beta = reflection_coefficient(room_dim, t60)
        max_order = np.ceil(rir_seconds * speed_of_sound /
                            (2.0 * room_dim)).astype(int)

    parities = np.array(list(itertools.product((0, 1), repeat=3)))
    grids = np.meshgrid(*(np.arange(-m, m + 1) for m in max_order),
                        indexing="ij")
    orders = np.stack([g.ravel() for g in grids], axis=1)  # R x 3

    late_idx = []
    late_amp = []
    for p in parities:
        # R x 3 mirrored positions and their per-dimension hit counts
        images = (1 - 2 * p) * (source_pos + 2.0 * orders * room_dim)
        hits = np.abs(orders + p) + np.abs(orders)
        total_order = hits.sum(axis=1)
        if t60 == 0:
            keep = total_order == 0
        else:
            keep = np.ones(len(images), dtype=bool)
        gains = beta ** hits[keep].sum(axis=1) if t60 > 0 else \
            np.ones(keep.sum())
        img = images[keep]
        tord = total_order[keep]

        # M x R distances
        dist = np.linalg.norm(img[None, :, :] - mic_positions[:, None, :],
                              axis=-1)
        if np.any(dist < 1e-6):
            raise ValueError("a microphone coincides with the source")
        delays = dist / speed_of_sound * sample_rate
        amps = gains[None, :] / (4.0 * np.pi * dist)

        early = tord <= sinc_order
        for r in np.nonzero(early)[0]:
            for m in range(num_mics):
                _windowed_sinc_place(h, m, delays[m, r], amps[m, r],
                                     half_width, cutoff_cycles)
        late = ~early
        if np.any(late):
            idx = np.rint(delays[:, late]).astype(np.int64)
            keep_tap = idx < npts
            flat = (np.arange(num_mics)[:, None] * npts + idx)[keep_tap]
            late_idx.append(flat)
            late_amp.append(amps[:, late][keep_tap])

    if late_idx:
        flat = np.concatenate(late_idx)
        amp = np.concatenate(late_amp)
        h += np.bincount(flat, weights=amp,
                         minlength=num_mics * npts).reshape(num_mics, npts)
    return h


def apply_rir(rir, source):
    """
    Convolve a mono source with an M-channel impulse response
    Arguments:
        rir: M x L
        source: S samples
    Return:
        M x S array (tail truncated)
    """
    source = np.asarray(source, dtype=np.float64)
    out = fftconvolve(rir, source[None, :], axes=-1)
    return out[:, :source.shape[-1]]


def schroeder_t60(rir_channel, sample_rate=16000, fit_range_db=(-5.0, -25.0)):
    """
    Reverberation time from backward-integrated energy decay
    Arguments:
        rir_channel: 1D impulse response
        fit_range_db: decay window for the straight-line fit
    Return:
        t60 estimate in seconds
    """
    energy = np.cumsum(rir_channel[::-1] ** 2)[::-1]
    energy = energy / energy[0]
    with np.errstate(divide="ignore"):
        decay_db = 10.0 * np.log10(energy)
    hi, lo = fit_range_db
    sel = (decay_db <= hi) & (decay_db >= lo)
    if sel.sum() < 2:
        raise ValueError("impulse response too short for the decay fit")
    t = np.nonzero(sel)[0] / sample_rate
    slope, _ = np.polyfit(t, decay_db[sel], 1)
    return -60.0 / slope


def fibonacci_sphere(num_points):
    """num_points near-uniform unit vectors on the sphere, N x 3."""
    i = np.arange(num_points)
    z = 1.0 - 2.0 * (i + 0.5) / num_points
    azimuth = np.pi * (3.0 - np.sqrt(5.0)) * i
    r = np.sqrt(1.0 - z ** 2)
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth), z], axis=1)


def isotropic_noise(geom, num_samples, rng, sample_rate=16000, num_points=64):
    """
    Spherically isotropic noise: independent white plane waves from
    num_points directions uniform on the sphere, delayed per microphone
    in the frequency domain
    Arguments:
        geom: ArrayGeometry
        rng: numpy Generator
    Return:
        MultiChannelWave-compatible M x num_samples array, unit power
        per channel in expectation
    """
    if num_samples < 2:
        raise ValueError(f"need at least 2 samples, got {num_samples}")
    directions = fibonacci_sphere(num_points)
    centered = geom.mic_positions - geom.mic_positions.mean(axis=0)
    freqs = np.fft.rfftfreq(num_samples, d=1.0 / sample_rate)
    out = np.zeros((geom.num_mics, num_samples))
    for v in directions:
        tau = -centered @ v / geom.speed_of_sound  # M delays
        spectrum = np.fft.rfft(rng.standard_normal(num_samples))
        shifted = spectrum[None, :] * np.exp(-2j * np.pi *
                                             freqs[None, :] * tau[:, None])
        out += np.fft.irfft(shifted, n=num_samples, axis=-1)
    return out / np.sqrt(num_points)
