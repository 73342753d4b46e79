"""Scale-invariant SNR and its permutation-invariant training loss.

Both signals are mean-centered; the estimate is compared against its
projection onto the reference. Values are clamped to +-cap_db, which
also freezes gradients once an example saturates. A silent reference
cannot anchor the projection, so it scores the floor -cap_db and emits
a warning.
"""

import itertools
import warnings

import numpy as np

from .autograd import Tensor, as_tensor, overlap_add_synthesis

LOG10_SCALE = 10.0 / np.log(10.0)
# keeps the ratio defined when either energy is exactly zero; must stay
# large enough that its square does not underflow inside the backward pass
ENERGY_FLOOR = 1e-30


def si_snr(estimate, reference, cap_db=30.0):
    """
    Differentiable scale-invariant SNR in dB
    Arguments:
        estimate: 1D Tensor
        reference: 1D array (constant, no gradient)
    Return:
        scalar Tensor in [-cap_db, cap_db]
    """
    estimate = as_tensor(estimate)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape:
        raise ValueError(f"length mismatch: estimate {estimate.shape}, "
                         f"reference {reference.shape}")
    ref_centered = reference - reference.mean()
    ref_energy = np.sum(ref_centered ** 2)
    if ref_energy == 0.0:
        warnings.warn("silent reference, scoring the -cap_db floor")
        return Tensor(np.float64(-cap_db))
    est_centered = estimate - estimate.mean()
    ref_const = Tensor(ref_centered)
    alpha = (est_centered * ref_const).sum() * (1.0 / ref_energy)
    target_part = alpha * ref_const
    residual = est_centered - target_part
    num = (target_part * target_part).sum()
    den = (residual * residual).sum()
    ratio = (num + ENERGY_FLOOR) / (den + ENERGY_FLOOR)
    return (ratio.log() * LOG10_SCALE).clip(-cap_db, cap_db)


def si_snr_value(estimate, reference, cap_db=30.0):
    """Plain-numpy Si-SNR, same semantics as si_snr."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return float(si_snr(Tensor(np.asarray(estimate, dtype=np.float64)),
                            reference, cap_db=cap_db).data)


def pit_loss(estimates, references, cap_db=30.0):
    """
    Permutation-invariant separation loss
    Arguments:
        estimates: list of H 1D Tensors
        references: list of H 1D arrays
    Return:
        (loss, permutation): loss is -max over assignments of the summed
        pairwise Si-SNR; the gradient flows only through the winning
        assignment. permutation[i] is the reference index of estimate i.
    """
    if len(estimates) != len(references):
        raise ValueError("need as many estimates as references")
    best_perm, best_terms = None, None
    for perm in itertools.permutations(range(len(references))):
        terms = [si_snr(est, references[j], cap_db=cap_db)
                 for est, j in zip(estimates, perm)]
        total = sum(t.data for t in terms)
        if best_terms is None or total > best_total:
            best_perm, best_terms, best_total = perm, terms, total
    loss = -sum(best_terms[1:], best_terms[0])
    return loss, best_perm


def masked_synthesis(mask, spec_channel, cfg, length):
    """
    Time-domain signal from a mask applied to one complex spectrogram
    channel; fully differentiable in the mask
    Arguments:
        mask: T x F Tensor
        spec_channel: T x F complex array (constant)
    Return:
        1D Tensor of length samples
    """
    real = mask * Tensor(spec_channel.real)
    imag = mask * Tensor(spec_channel.imag)
    return overlap_add_synthesis(real, imag, cfg, length=length)
