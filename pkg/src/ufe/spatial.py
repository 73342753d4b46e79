"""Array geometry, steering vectors, fixed-beamformer banks and the
beam / angle-feature pools computed from them.

Sign conventions (used consistently everywhere):
  * azimuth is measured counterclockwise from the array x-axis, in the
    horizontal plane; the unit vector toward a source at azimuth a is
    v = [cos a, sin a, 0]
  * a far-field plane wave from azimuth a reaches microphone m with
    relative delay tau_m = -v . p_m / c, so its relative channel
    response is d_m = exp(-j 2 pi f tau_m) = exp(+j 2 pi f v . p_m / c)
  * the ground-truth phase difference between channels i and j equals
    angle(d_i) - angle(d_j), kept unwrapped
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .container import read_tensors, write_tensors
from .dsp import StftConfig

SPEED_OF_SOUND = 343.0


def _positions_digest(positions, speed_of_sound):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(positions).tobytes())
    digest.update(np.float64(speed_of_sound).tobytes())
    return digest.hexdigest()[:16]


@dataclass
class ArrayGeometry:
    """Microphone positions in meters, kept exactly as given. Plane-wave
    delays are measured relative to the array centroid, so translating
    the whole array changes nothing downstream."""

    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.mic_positions, dtype=np.float64))
        if pos.shape[1] != 3:
            raise ValueError(f"positions must be M x 3, got {pos.shape}")
        self.mic_positions = pos

    @property
    def centroid(self):
        return self.mic_positions.mean(axis=0)

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]

    def pair_distances(self):
        """M x M matrix of inter-microphone distances."""
        diff = self.mic_positions[:, None, :] - self.mic_positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def fingerprint(self):
        """Stable hash of positions and speed of sound, for serialization."""
        return _positions_digest(self.mic_positions, self.speed_of_sound)


def circular_array(num_ring=6, radius=0.0425, center_mic=True):
    """
    The reference capture geometry: num_ring microphones evenly spaced on
    a horizontal circle, optionally plus one at the center. Ring mics come
    first (index 0 at azimuth 0), the center mic last.
    """
    azimuths = 2 * np.pi * np.arange(num_ring) / num_ring
    ring = np.stack([radius * np.cos(azimuths),
                     radius * np.sin(azimuths),
                     np.zeros(num_ring)], axis=1)
    if center_mic:
        ring = np.concatenate([ring, np.zeros((1, 3))], axis=0)
    return ArrayGeometry(ring)


REFERENCE_IPD_PAIRS = ((0, 3), (1, 4), (2, 5))


def direction_vector(angle_deg):
    """Unit vector toward a source at the given azimuth (degrees)."""
    rad = np.deg2rad(angle_deg)
    return np.array([np.cos(rad), np.sin(rad), 0.0])


def propagation_delays(geom, angle_deg):
    """
    Per-microphone plane-wave delays for a source at the given azimuth
    Return:
        tau: M array in seconds, relative to the array centroid
    """
    centered = geom.mic_positions - geom.centroid
    return -centered @ direction_vector(angle_deg) / geom.speed_of_sound


def plane_wave_response(geom, angle_deg, f_hz):
    """
    Relative channel response d of a far-field plane wave, |d_m| = 1
    Arguments:
        f_hz: scalar or array of frequencies
    Return:
        d: complex array, shape f_hz.shape + (M,)
    """
    tau = propagation_delays(geom, angle_deg)
    f_hz = np.asarray(f_hz, dtype=np.float64)
    return np.exp(-2j * np.pi * f_hz[..., None] * tau)


def steering_vector(geom, angle_deg, f_hz):
    """Unit-L2-norm steering vector(s) at the given azimuth and frequency."""
    return plane_wave_response(geom, angle_deg, f_hz) / np.sqrt(geom.num_mics)


def truth_phase_difference(geom, angle_deg, pair, f_hz):
    """
    Ground-truth inter-channel phase difference for a plane wave
    Arguments:
        pair: (i, j) channel indices
    Return:
        delta: radians, unwrapped, antisymmetric in (i, j)
    """
    i, j = pair
    v = direction_vector(angle_deg)
    baseline = geom.mic_positions[i] - geom.mic_positions[j]
    return 2 * np.pi * np.asarray(f_hz, dtype=np.float64) * (
        v @ baseline) / geom.speed_of_sound


def fft_bin_frequencies(cfg, sample_rate):
    """Frequencies in Hz of the F = fft_size/2 + 1 non-negative bins."""
    return np.arange(cfg.num_bins) * sample_rate / cfg.fft_size


def uniform_angle_grid(num_angles):
    """num_angles azimuths uniform over 360 degrees, starting at 0."""
    return 360.0 * np.arange(num_angles) / num_angles


@dataclass
class SteeringTable:
    """Steering vectors over a fixed azimuth grid, [A x F x M], unit norm."""

    h: np.ndarray
    angles_deg: np.ndarray
    freqs_hz: np.ndarray


def build_steering_table(geom, angles_deg, cfg=None, sample_rate=16000):
    cfg = cfg or StftConfig()
    freqs = fft_bin_frequencies(cfg, sample_rate)
    angles_deg = np.asarray(angles_deg, dtype=np.float64)
    h = np.stack([steering_vector(geom, a, freqs) for a in angles_deg])
    return SteeringTable(h=h, angles_deg=angles_deg, freqs_hz=freqs)


def diffuse_coherence(geom, f_hz):
    """
    Spherically-isotropic noise coherence matrix sinc(2 pi f d_ij / c)
    Return:
        gamma: real array, f_hz.shape + (M, M)
    """
    dist = geom.pair_distances()
    f_hz = np.asarray(f_hz, dtype=np.float64)
    return np.sinc(2.0 * f_hz[..., None, None] * dist / geom.speed_of_sound)


@dataclass
class BeamformerBank:
    """Fixed per-frequency filters [N_b x F x M] with their center angles."""

    weights: np.ndarray
    center_angles_deg: np.ndarray
    design: str
    fft_size: int
    sample_rate: int
    geometry: ArrayGeometry

    @property
    def num_beams(self):
        return self.weights.shape[0]

    @property
    def num_mics(self):
        return self.weights.shape[2]


def design_beamformer_bank(geom, num_beams=18, design="superdirective",
                           diagonal_loading=1e-2, cfg=None, sample_rate=16000):
    """
    Design a bank of fixed beamformers scanning the horizontal plane
    Arguments:
        design: "delay_and_sum" or "superdirective" (diffuse-noise MVDR
                with diagonal loading)
    Return:
        BeamformerBank with a distortionless response at each center angle
    """
    if num_beams < 1:
        raise ValueError(f"need at least one beam, got {num_beams}")
    if design not in ("delay_and_sum", "superdirective"):
        raise ValueError(f"unknown design {design!r}")
    cfg = cfg or StftConfig()
    freqs = fft_bin_frequencies(cfg, sample_rate)
    centers = uniform_angle_grid(num_beams)
    num_mics = geom.num_mics

    # F x M x M, shared by all beams
    if design == "superdirective":
        gamma = diffuse_coherence(geom, freqs)
        gamma = gamma + diagonal_loading * np.eye(num_mics)

    weights = np.empty((num_beams, len(freqs), num_mics), dtype=np.complex128)
    for n, angle in enumerate(centers):
        d = plane_wave_response(geom, angle, freqs)  # F x M
        if design == "delay_and_sum":
            weights[n] = d / num_mics
        else:
            try:
                num = np.linalg.solve(gamma, d[..., None])[..., 0]
            except np.linalg.LinAlgError as err:
                raise np.linalg.LinAlgError(
                    f"diffuse coherence matrix is singular ({err}); "
                    f"raise diagonal_loading (got {diagonal_loading})")
            den = np.einsum("fm,fm->f", d.conj(), num)
            weights[n] = num / den[:, None]
    return BeamformerBank(weights=weights, center_angles_deg=centers,
                          design=design, fft_size=cfg.fft_size,
                          sample_rate=sample_rate, geometry=geom)


def distortionless_error(bank):
    """Max |w^H d - 1| over beams and bins at each beam's center angle."""
    freqs = fft_bin_frequencies(StftConfig(fft_size=bank.fft_size,
                                           hop=bank.fft_size // 2),
                                bank.sample_rate)
    worst = 0.0
    for n in range(bank.num_beams):
        d = plane_wave_response(bank.geometry, bank.center_angles_deg[n], freqs)
        resp = np.einsum("fm,fm->f", bank.weights[n].conj(), d)
        worst = max(worst, np.max(np.abs(resp - 1.0)))
    return worst


def beam_response(weights_fm, geom, angles_deg, f_hz):
    """
    Beampattern of one beam's filters on an azimuth grid
    Arguments:
        weights_fm: F x M filters
        angles_deg: A azimuths
        f_hz: F frequencies matching weights_fm
    Return:
        response: complex array, A x F, w^H d(theta)
    """
    out = np.empty((len(angles_deg), len(f_hz)), dtype=np.complex128)
    for a, angle in enumerate(np.asarray(angles_deg)):
        d = plane_wave_response(geom, angle, f_hz)
        out[a] = np.einsum("fm,fm->f", weights_fm.conj(), d)
    return out


def apply_beamformer(weights_fm, spec):
    """
    Beamform a multi-channel spectrogram, one conjugate dot per TF bin
    Arguments:
        weights_fm: F x M per-frequency filters
        spec: ComplexSpectrogram, M x T x F
    Return:
        complex array, T x F
    """
    if spec.num_channels != weights_fm.shape[1]:
        raise ValueError(f"channel mismatch: filters expect "
                         f"{weights_fm.shape[1]}, spectrogram has "
                         f"{spec.num_channels}")
    if spec.num_bins != weights_fm.shape[0]:
        raise ValueError(f"bin mismatch: filters have {weights_fm.shape[0]}, "
                         f"spectrogram has {spec.num_bins}")
    return np.einsum("fm,mtf->tf", weights_fm.conj(), spec.data)


def compute_beam_pool(bank, spec):
    """
    Spectrograms of the signal through every beam in the bank.
    The complex products are realized as paired real multiplications,
    matching how the training graph consumes the pool.
    Return:
        beam_pool: complex array, N_b x T x F
    """
    if spec.num_channels != bank.num_mics:
        raise ValueError(f"channel mismatch: bank expects {bank.num_mics}, "
                         f"spectrogram has {spec.num_channels}")
    wr, wi = bank.weights.real, bank.weights.imag     # N x F x M
    yr, yi = spec.data.real, spec.data.imag           # M x T x F
    # conj(w) . y per bin: re = wr.yr + wi.yi, im = wr.yi - wi.yr
    re = np.einsum("nfm,mtf->ntf", wr, yr) + np.einsum("nfm,mtf->ntf", wi, yi)
    im = np.einsum("nfm,mtf->ntf", wr, yi) - np.einsum("nfm,mtf->ntf", wi, yr)
    return re + 1j * im


def _observed_ipd_trig(spec, pairs):
    """cos/sin of the observed IPD for each pair, two P x T x F arrays."""
    num_channels = spec.num_channels
    for i, j in pairs:
        if not (0 <= i < num_channels and 0 <= j < num_channels):
            raise ValueError(f"pair ({i}, {j}) out of range for "
                             f"{num_channels} channels")
    phase = np.stack([np.angle(spec.data[i] * np.conj(spec.data[j]))
                      for i, j in pairs])
    return np.cos(phase), np.sin(phase)


def compute_angle_pool(spec, geom, angles_deg, pairs=REFERENCE_IPD_PAIRS,
                       sample_rate=16000):
    """
    Angle-feature pool: per hypothesized azimuth, the pair-averaged cosine
    agreement between observed and geometry-predicted phase differences
    Arguments:
        spec: ComplexSpectrogram, M x T x F
        angles_deg: A hypothesized azimuths
    Return:
        angle_pool: real array, A x T x F, values in [-1, 1]
    """
    if len(pairs) < 1:
        raise ValueError("need at least one microphone pair")
    for i, j in pairs:
        if not (0 <= i < geom.num_mics and 0 <= j < geom.num_mics):
            raise ValueError(f"pair ({i}, {j}) out of range for "
                             f"{geom.num_mics} microphones")
    angles_deg = np.atleast_1d(np.asarray(angles_deg, dtype=np.float64))
    fft_size = 2 * (spec.num_bins - 1)
    freqs = np.arange(spec.num_bins) * sample_rate / fft_size
    # A x P x F ground-truth differences
    delta = np.stack([
        np.stack([truth_phase_difference(geom, angle, pair, freqs)
                  for pair in pairs])
        for angle in angles_deg])
    cos_obs, sin_obs = _observed_ipd_trig(spec, pairs)  # P x T x F
    # cos(obs - delta) = cos(obs) cos(delta) + sin(obs) sin(delta)
    pool = (np.einsum("apf,ptf->atf", np.cos(delta), cos_obs) +
            np.einsum("apf,ptf->atf", np.sin(delta), sin_obs))
    return pool / len(pairs)


def angle_feature(spec, geom, angle_deg, pairs=REFERENCE_IPD_PAIRS,
                  sample_rate=16000):
    """Single-direction angle feature, T x F (one row of the pool)."""
    return compute_angle_pool(spec, geom, [angle_deg], pairs,
                              sample_rate=sample_rate)[0]


def save_bank(path, bank):
    """Serialize a bank with a geometry fingerprint for later validation."""
    meta = {
        "kind": "beamformer_bank",
        "design": bank.design,
        "fft_size": bank.fft_size,
        "sample_rate": bank.sample_rate,
        "speed_of_sound": bank.geometry.speed_of_sound,
        "geometry_hash": bank.geometry.fingerprint(),
    }
    write_tensors(path, {
        "weights": bank.weights,
        "center_angles_deg": bank.center_angles_deg,
        "mic_positions": bank.geometry.mic_positions,
    }, meta=meta)


def load_bank(path):
    tensors, meta = read_tensors(path)
    if meta.get("kind") != "beamformer_bank":
        raise ValueError(f"{path}: not a beamformer bank file")
    geom = ArrayGeometry(tensors["mic_positions"],
                         speed_of_sound=meta["speed_of_sound"])
    if geom.fingerprint() != meta["geometry_hash"]:
        raise ValueError(f"{path}: geometry hash mismatch, file corrupted")
    return BeamformerBank(weights=tensors["weights"],
                          center_angles_deg=tensors["center_angles_deg"],
                          design=meta["design"], fft_size=meta["fft_size"],
                          sample_rate=meta["sample_rate"], geometry=geom)
