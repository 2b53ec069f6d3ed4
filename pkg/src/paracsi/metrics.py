"""Reconstruction and link-level metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

NEG_INF_TEXT = "-inf"


def _frob2(x, axes):
    return np.sum(x.real**2 + x.imag**2, axis=axes)


def nmse(truth: np.ndarray, estimate: np.ndarray) -> float:
    """E[||H_hat - H||_F^2 / ||H||_F^2]; leading axes beyond the last two are averaged."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    if truth.ndim < 2:
        raise ValueError("expected at least a 2-D channel matrix")
    energy = _frob2(truth, (-2, -1))
    if np.any(energy == 0):
        raise ValueError("true channel has zero energy")
    return float(np.mean(_frob2(estimate - truth, (-2, -1)) / energy))


def to_db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def nmse_db(truth, estimate) -> float:
    return to_db(nmse(truth, estimate))


def format_db(x: float) -> str:
    """CSV form of a dB value; -inf becomes the string "-inf"."""
    return NEG_INF_TEXT if x == -math.inf else repr(float(x))


def cosine_similarity(truth: np.ndarray, estimate: np.ndarray) -> float:
    """Mean over subcarriers (and samples) of |h_hat^H h| / (||h_hat|| ||h||)."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {estimate.shape}")
    nt = np.sqrt(_frob2(truth, -1))
    ne = np.sqrt(_frob2(estimate, -1))
    if np.any(nt == 0) or np.any(ne == 0):
        raise ValueError("zero subcarrier vector")
    # rows are conjugated columns, which leaves |inner product| unchanged
    inner = np.abs(np.sum(estimate.conj() * truth, axis=-1))
    return float(np.mean(np.minimum(inner / (nt * ne), 1.0)))


def qpsk_ber_awgn(snr_linear) -> np.ndarray:
    """Gray-mapped QPSK bit error rate Q(sqrt(snr)) at symbol SNR ``snr``."""
    return 0.5 * erfc(np.sqrt(np.asarray(snr_linear, dtype=np.float64) / 2))


@dataclass(frozen=True)
class Metrics:
    nmse: float
    cosine_similarity: float
    ber: float
    snr_db: float
    noise_var: float

    def __post_init__(self):
        if self.nmse < 0 or not 0 <= self.cosine_similarity <= 1 + 1e-12 or not 0 <= self.ber <= 1:
            raise ValueError(f"metrics out of range: {self}")

    @property
    def nmse_db(self) -> float:
        return to_db(self.nmse)
