"""Mask-weighted maximum-likelihood source localization over a discrete
azimuth grid, and the hard beam selection driven by it.

Each TF bin's channel vector is normalized to unit L2 norm before the
alignment |y^H h|^2 is taken, so the alignment lies in [0, 1] (the
steering vectors are unit-norm). Silent bins contribute nothing.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class SslResult:
    """Per-source azimuth estimates with their full objective curves."""

    angles_deg: np.ndarray        # H
    objective_curves: np.ndarray  # H x A, one value per grid angle
    confidences: np.ndarray       # H, curve contrast; 0 for a flat curve
    selected_beam_indices: np.ndarray = None  # filled by select_beams


def _normalized_channel_vectors(spec):
    """Unit-norm per-bin channel vectors, M x T x F (zero where silent)."""
    norm = np.sqrt(np.sum(np.abs(spec.data) ** 2, axis=0, keepdims=True))
    return spec.data / np.maximum(norm, 1e-30)


def _alignment_curves(spec, table):
    """|y^H h|^2 on the angle grid, A x T x F."""
    y_hat = _normalized_channel_vectors(spec)
    inner = np.einsum("mtf,afm->atf", y_hat.conj(), table.h)
    return np.abs(inner) ** 2


def ssl_objective(mask, spec, table, angle_index, epsilon=1e-6):
    """
    Localization objective at one grid angle:
        -sum_tf mask * log(1 - |y^H h|^2 / (1 + eps))
    Arguments:
        mask: T x F weights in [0, 1]
        spec: ComplexSpectrogram, M x T x F
        table: SteeringTable over the angle grid
    Return:
        scalar objective (larger = better aligned)
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    h = table.h[angle_index]  # F x M
    y_hat = _normalized_channel_vectors(spec)
    align = np.abs(np.einsum("mtf,fm->tf", y_hat.conj(), h)) ** 2
    return -np.sum(mask * np.log1p(-align / (1.0 + epsilon)))


def localize_sources(masks, spec, table, epsilon=1e-6):
    """
    Estimate one azimuth per source from its TF mask
    Arguments:
        masks: H x T x F mask stack from unmixing
        spec: ComplexSpectrogram, M x T x F
        table: SteeringTable over the angle grid
    Return:
        SslResult; ties on the grid break toward the smaller angle index.
        An all-zero mask is flagged with confidence 0 (angle still the
        argmax of its flat curve, i.e. the first grid angle).
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    masks = np.asarray(masks)
    if masks.ndim == 2:
        masks = masks[None]
    align = _alignment_curves(spec, table)       # A x T x F
    penalty = -np.log1p(-align / (1.0 + epsilon))
    # H x A objective curves
    curves = np.einsum("htf,atf->ha", masks, penalty)
    best = np.argmax(curves, axis=1)
    confidences = curves.max(axis=1) - curves.mean(axis=1)
    return SslResult(angles_deg=table.angles_deg[best],
                     objective_curves=curves,
                     confidences=confidences)


def circular_distance_deg(a, b):
    """Absolute angular distance on the circle, in [0, 180] degrees."""
    return np.abs((np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0)


def nearest_beam_index(angle_deg, bank):
    """Bank index whose center is circularly nearest; ties toward smaller."""
    return int(np.argmin(circular_distance_deg(angle_deg,
                                               bank.center_angles_deg)))


def select_beams(result, bank):
    """
    Pick one bank beam per localized source
    Arguments:
        result: SslResult (or any object with .angles_deg)
    Return:
        indices: int array, one bank index per source; also stored on the
        result's selected_beam_indices field
    """
    angles = np.atleast_1d(result.angles_deg)
    indices = np.array([nearest_beam_index(a, bank) for a in angles])
    result.selected_beam_indices = indices
    return indices
