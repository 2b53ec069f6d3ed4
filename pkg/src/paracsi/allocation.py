"""Feedback-bit allocation across the four parameter types.

The objective is the first-order expected distortion E||H - H_hat||_F^2,
written as four terms that each decay as 4^-Q in their own bit count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import ScenarioConfig
from .quantizer import BitAllocation

METHODS = ("closed", "brute", "equalize", "uniform")
BRUTE_FORCE_MAX_BITS = 64


@dataclass(frozen=True)
class DistortionTerms:
    c_theta: float
    c_tau: float
    c_beta: float
    c_phi: float

    @property
    def sum(self) -> float:
        return self.c_theta + self.c_tau + self.c_beta + self.c_phi

    def as_array(self) -> np.ndarray:
        return np.array([self.c_theta, self.c_tau, self.c_beta, self.c_phi])


def _freq_moment(cfg: ScenarioConfig) -> float:
    return float(np.sum(cfg.frequencies**2))


def distortion_coefficients(cfg: ScenarioConfig) -> np.ndarray:
    """Prefactors a_x such that C_x = a_x * 4^-Q_x (real bits allowed)."""
    L, nf, nt = cfg.n_paths, cfg.n_subcarriers, cfg.n_tx
    d, lam, bmax, tmax = cfg.antenna_spacing_m, cfg.wavelength_m, cfg.beta_max, cfg.tau_max_s
    pi = math.pi
    return np.array(
        [
            pi**4 * d**2 * L * nf * nt * (nt - 1) * bmax**2 / (36 * lam**2),
            pi**2 * L * nt * tmax**2 * bmax**2 * _freq_moment(cfg) / (9 * 4),
            L * nf * nt * bmax**2 / (3 * 4),
            pi**2 * L * nf * nt * bmax**2 / 36,
        ]
    )


def distortion_terms(cfg: ScenarioConfig, alloc) -> DistortionTerms:
    bits = np.asarray(alloc.as_tuple() if isinstance(alloc, BitAllocation) else alloc, dtype=np.float64)
    return DistortionTerms(*(distortion_coefficients(cfg) * 4.0**-bits))


def objective(cfg: ScenarioConfig, alloc) -> float:
    return distortion_terms(cfg, alloc).sum


def count_combinations(total_bits: int) -> int:
    """Number of (Q_theta, Q_tau, Q_beta, Q_phi) >= 0 summing to Q."""
    if total_bits < 0:
        raise ValueError("total_bits must be >= 0")
    return math.comb(total_bits + 3, 3)


def enumerate_allocations(total_bits: int) -> np.ndarray:
    """All 4-compositions of Q in lexicographic order, shape (count, 4)."""
    q = total_bits
    a, b, c = np.meshgrid(np.arange(q + 1), np.arange(q + 1), np.arange(q + 1), indexing="ij")
    a, b, c = a.ravel(), b.ravel(), c.ravel()
    ok = a + b + c <= q
    a, b, c = a[ok], b[ok], c[ok]
    return np.stack([a, b, c, q - a - b - c], axis=1)


@dataclass(frozen=True)
class BruteForceResult:
    alloc: BitAllocation
    objective: float
    n_candidates: int


def brute_force_allocation(cfg: ScenarioConfig, total_bits: int) -> BruteForceResult:
    if not 0 <= total_bits <= BRUTE_FORCE_MAX_BITS:
        raise ValueError(f"brute force is limited to 0 <= Q <= {BRUTE_FORCE_MAX_BITS}")
    cands = enumerate_allocations(total_bits)
    obj = (distortion_coefficients(cfg)[None, :] * 4.0 ** -cands.astype(np.float64)).sum(axis=1)
    # argmin returns the first minimum, and candidates are in lexicographic order
    best = int(np.argmin(obj))
    return BruteForceResult(BitAllocation.from_seq(cands[best]), float(obj[best]), len(cands))


def equalization_allocation(cfg: ScenarioConfig, total_bits: float) -> np.ndarray:
    """Real-valued bits making all four terms equal under the sum constraint.

    From a_x 4^-Q_x = const: Q_x = Q/4 + (log2 a_x - mean log2 a) / 2.
    """
    if total_bits < 4:
        raise ValueError("total_bits must be >= 4")
    lg = np.log2(distortion_coefficients(cfg))
    return total_bits / 4 + (lg - lg.mean()) / 2


def closed_form_offsets(cfg: ScenarioConfig, as_printed: bool = False) -> np.ndarray:
    """The Q-independent offsets in Q_x = Q/4 + log2(k_x)/8.

    ``as_printed=True`` reproduces the published expressions verbatim,
    including a missing N_f factor in the aod term and a first frequency
    moment where the gain term needs the second; those do not sum to zero
    and do not equalize the terms. The default is the corrected form,
    which coincides with :func:`equalization_allocation`.
    """
    pi = math.pi
    d, lam, tmax = cfg.antenna_spacing_m, cfg.wavelength_m, cfg.tau_max_s
    nf, nt1 = cfg.n_subcarriers, cfg.n_tx - 1
    s2 = _freq_moment(cfg)
    s1 = float(np.sum(cfg.frequencies))
    if nt1 == 0:
        # single antenna: the aod term vanishes and the closed form degenerates
        raise ValueError("closed form needs at least two antennas")
    k_theta = pi**8 * d**6 * nt1**3 / (3 * lam**6 * tmax**2 * s2)
    k_tau = lam**2 * tmax**6 * s2**3 / (3 * d**2 * nf**3 * nt1)
    k_beta = 27 * lam**2 * nf / (pi**8 * d**2 * tmax**2 * (s1 if as_printed else s2) * nt1)
    k_phi = lam**2 * nf / (3 * d**2 * tmax**2 * s2 * nt1)
    if not as_printed:
        k_theta *= nf
    return np.log2([k_theta, k_tau, k_beta, k_phi]) / 8


def _project_nonnegative(real_bits: np.ndarray, total: int) -> np.ndarray:
    """Shift onto sum == total, dropping negative coordinates to zero.

    The shift is uniform over the coordinates still positive, which keeps
    the additive Q/4 structure of the unconstrained solution.
    """
    x = np.asarray(real_bits, dtype=np.float64).copy()
    active = np.ones(4, dtype=bool)
    for _ in range(4):
        x[active] += (total - x[active].sum()) / active.sum()
        neg = active & (x < 0)
        if not neg.any():
            break
        x[neg] = 0.0
        active &= ~neg
    return x


def largest_remainder(real_bits: np.ndarray, total: int) -> BitAllocation:
    x = _project_nonnegative(real_bits, total)
    floors = np.floor(x + 1e-12).astype(np.int64)
    remainders = x - floors
    short = total - int(floors.sum())
    # stable sort: equal remainders go to the lower parameter index first
    order = np.argsort(-remainders, kind="stable")
    floors[order[:short]] += 1
    return BitAllocation.from_seq(floors)


@dataclass(frozen=True)
class ClosedFormResult:
    real_bits: np.ndarray
    alloc: BitAllocation


def closed_form_allocation(cfg: ScenarioConfig, total_bits: int, as_printed: bool = False) -> ClosedFormResult:
    if total_bits < 4:
        raise ValueError("total_bits must be >= 4")
    real = total_bits / 4 + closed_form_offsets(cfg, as_printed=as_printed)
    return ClosedFormResult(real, largest_remainder(real, total_bits))


def uniform_allocation(total_bits: int) -> BitAllocation:
    base, extra = divmod(total_bits, 4)
    return BitAllocation.from_seq([base + (k < extra) for k in range(4)])


def allocate(cfg: ScenarioConfig, total_bits: int, method: str = "closed") -> BitAllocation:
    if method == "closed":
        return closed_form_allocation(cfg, total_bits).alloc
    if method == "brute":
        return brute_force_allocation(cfg, total_bits).alloc
    if method == "equalize":
        return largest_remainder(equalization_allocation(cfg, total_bits), total_bits)
    if method == "uniform":
        return uniform_allocation(total_bits)
    raise ValueError(f"unknown allocation method {method!r}; expected one of {METHODS}")
