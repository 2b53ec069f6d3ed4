"""Uniform per-parameter codebooks and the feedback bitstream."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import AOD, DELAY, GAIN, PHASE, ParametricCsi, ScenarioConfig

ANGULAR = np.array([True, False, False, True])


class PayloadError(ValueError):
    pass


@dataclass(frozen=True)
class BitAllocation:
    bits_theta: int
    bits_tau: int
    bits_beta: int
    bits_phi: int

    def __post_init__(self):
        for b in self.as_tuple():
            if int(b) != b or b < 0:
                raise ValueError(f"bit counts must be non-negative integers, got {self.as_tuple()}")
            if b > 52:
                raise ValueError("more than 52 bits per parameter exceeds float64 resolution")

    @classmethod
    def uniform(cls, per_param: int) -> BitAllocation:
        return cls(per_param, per_param, per_param, per_param)

    @classmethod
    def from_seq(cls, bits) -> BitAllocation:
        return cls(*(int(b) for b in bits))

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.bits_theta, self.bits_tau, self.bits_beta, self.bits_phi)

    @property
    def total(self) -> int:
        return sum(self.as_tuple())


@dataclass(frozen=True)
class Codebooks:
    """The four uniform grids ``max * q / 2^Q`` for q = 0..2^Q-1."""

    alloc: BitAllocation
    maxima: tuple[float, float, float, float]

    @property
    def steps(self) -> np.ndarray:
        return np.array(self.maxima) / 2.0 ** np.array(self.alloc.as_tuple())

    @property
    def sizes(self) -> np.ndarray:
        return 2 ** np.array(self.alloc.as_tuple(), dtype=np.int64)

    def grid(self, k: int) -> np.ndarray:
        return self.steps[k] * np.arange(self.sizes[k])

    @property
    def theta(self) -> np.ndarray:
        return self.grid(AOD)

    @property
    def tau(self) -> np.ndarray:
        return self.grid(DELAY)

    @property
    def beta(self) -> np.ndarray:
        return self.grid(GAIN)

    @property
    def phi(self) -> np.ndarray:
        return self.grid(PHASE)

    def half_steps(self) -> np.ndarray:
        """Largest distortion the nearest-codeword rule can produce inside the grid span."""
        return self.steps / 2


@dataclass(frozen=True)
class FeedbackPayload:
    alloc: BitAllocation
    indices: np.ndarray  # (L, 4) int64

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 2 or idx.shape[1] != 4:
            raise PayloadError("indices must have shape (L, 4)")
        sizes = 2 ** np.array(self.alloc.as_tuple(), dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= sizes[None, :]):
            raise PayloadError("codeword index out of range")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def n_bits(self) -> int:
        return self.indices.shape[0] * self.alloc.total

    def __eq__(self, other):
        if not isinstance(other, FeedbackPayload):
            return NotImplemented
        return self.alloc == other.alloc and np.array_equal(self.indices, other.indices)

    __hash__ = None


def build_codebooks(cfg: ScenarioConfig, alloc: BitAllocation) -> Codebooks:
    return Codebooks(alloc, tuple(float(m) for m in cfg.param_max))


def nearest_indices(params: np.ndarray, books: Codebooks) -> np.ndarray:
    """Codeword indices for an (..., 4) parameter array.

    Delay and gain are clamped to their range first; angles are reduced
    mod 2*pi and matched with wrap-around distance. Ties go to the lower
    codeword.
    """
    p = np.asarray(params, dtype=np.float64)
    steps = books.steps
    sizes = books.sizes
    maxima = np.array(books.maxima)
    x = np.where(ANGULAR, np.mod(p, maxima), np.clip(p, 0.0, maxima))
    idx = np.ceil(x / steps - 0.5).astype(np.int64)
    idx = np.where(ANGULAR, np.mod(idx, sizes), np.clip(idx, 0, sizes - 1))
    return idx


def codeword_values(indices: np.ndarray, books: Codebooks) -> np.ndarray:
    return np.asarray(indices) * books.steps


def quantize_params(params: np.ndarray, books: Codebooks) -> np.ndarray:
    """Quantize-dequantize an (..., 4) parameter array."""
    return codeword_values(nearest_indices(params, books), books)


def quantize_csi(csi: ParametricCsi, books: Codebooks) -> tuple[FeedbackPayload, ParametricCsi]:
    payload = FeedbackPayload(books.alloc, nearest_indices(csi.matrix, books))
    return payload, dequantize(payload, books)


def dequantize(payload: FeedbackPayload, books: Codebooks) -> ParametricCsi:
    if payload.alloc != books.alloc:
        raise PayloadError("payload and codebooks use different bit allocations")
    return ParametricCsi.from_matrix(codeword_values(payload.indices, books))


def wrapped_error(true: np.ndarray, approx: np.ndarray) -> np.ndarray:
    """true - approx per column, with angle columns folded into [-pi, pi)."""
    d = np.asarray(true, dtype=np.float64) - np.asarray(approx, dtype=np.float64)
    folded = np.mod(d + math.pi, 2 * math.pi) - math.pi
    return np.where(ANGULAR, folded, d)


# --- bitstream ---------------------------------------------------------------


def encode_payload(payload: FeedbackPayload) -> bytes:
    """Pack indices MSB-first, path by path in (theta, tau, beta, phi) order.

    The stream is zero-padded to a whole number of bytes.
    """
    widths = payload.alloc.as_tuple()
    acc = 0
    n_bits = 0
    for row in payload.indices:
        for value, width in zip(row, widths):
            acc = (acc << width) | int(value)
            n_bits += width
    pad = (-n_bits) % 8
    acc <<= pad
    return acc.to_bytes((n_bits + pad) // 8, "big")


def decode_payload(data: bytes, alloc: BitAllocation, n_paths: int) -> FeedbackPayload:
    widths = alloc.as_tuple()
    n_bits = n_paths * alloc.total
    n_bytes = (n_bits + 7) // 8
    if len(data) < n_bytes:
        raise PayloadError(f"truncated payload: need {n_bytes} bytes, got {len(data)}")
    if len(data) > n_bytes:
        raise PayloadError(f"payload has {len(data) - n_bytes} trailing bytes")
    acc = int.from_bytes(data, "big")
    pad = n_bytes * 8 - n_bits
    if acc & ((1 << pad) - 1):
        raise PayloadError("non-zero padding bits")
    acc >>= pad
    out = np.zeros((n_paths, 4), dtype=np.int64)
    shift = n_bits
    for l in range(n_paths):
        for k, width in enumerate(widths):
            shift -= width
            out[l, k] = (acc >> shift) & ((1 << width) - 1)
    return FeedbackPayload(alloc, out)


def rvq_feedback_bits(n_f: int, n_t: int, snr_db: float) -> int:
    """Bits a random-vector-quantization codebook needs: (N_f*N_t - 1)/3 * SNR_dB."""
    if snr_db < 0:
        raise ValueError("snr_db must be >= 0")
    bits = (n_f * n_t - 1) * snr_db / 3
    return max(0, math.ceil(bits - 1e-9))
