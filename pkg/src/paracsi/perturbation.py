"""First-order sensitivity of the channel to its geometric parameters.

Everything here works on the per-subcarrier column vector h[s], i.e. the
conjugate of row s of the channel matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .allocation import distortion_terms
from .channel import AOD, DELAY, GAIN, PHASE, ParametricCsi, ScenarioConfig, assemble_batch
from .quantizer import BitAllocation, build_codebooks, quantize_params

MODES = ("linearized", "exact")


@dataclass(frozen=True)
class JacobianSet:
    """Jacobians of h[s] for one subcarrier; each block is (N_t, L)."""

    s: int
    d_theta: np.ndarray
    d_tau: np.ndarray
    d_beta: np.ndarray
    d_phi: np.ndarray
    index_ramp: np.ndarray

    def blocks(self) -> tuple[np.ndarray, ...]:
        return (self.d_theta, self.d_tau, self.d_beta, self.d_phi)


def _as_matrix(csi) -> np.ndarray:
    return csi.matrix if isinstance(csi, ParametricCsi) else np.asarray(csi, dtype=np.float64)


def _pieces(cfg: ScenarioConfig, p: np.ndarray, s: int):
    if not 1 <= s <= cfg.n_subcarriers:
        raise IndexError(f"subcarrier index {s} outside 1..{cfg.n_subcarriers}")
    f_s = cfg.frequencies[s - 1]
    n = np.arange(cfg.n_tx, dtype=np.float64)
    theta, tau, beta, phi = p[:, AOD], p[:, DELAY], p[:, GAIN], p[:, PHASE]
    a_t = np.exp(-1j * cfg.phase_constant * np.outer(n, np.sin(theta)))  # (N_t, L)
    rot = np.exp(1j * (phi - 2 * math.pi * f_s * tau))  # (L,)
    return f_s, n, theta, beta, a_t, rot


def analytic_jacobians(cfg: ScenarioConfig, csi, s: int) -> JacobianSet:
    p = _as_matrix(csi)
    f_s, n, theta, beta, a_t, rot = _pieces(cfg, p, s)
    base = a_t * (beta * rot)[None, :]
    d_theta = -1j * cfg.phase_constant * np.cos(theta)[None, :] * n[:, None] * base
    d_tau = -2j * math.pi * f_s * base
    d_beta = a_t * rot[None, :]
    d_phi = 1j * base
    return JacobianSet(s, d_theta, d_tau, d_beta, d_phi, n)


def coefficient_matrices(cfg: ScenarioConfig, csi, deltas, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """R_theta, R_tau[s] and R_phi, each (N_t, L), with the distortions folded in."""
    p = _as_matrix(csi)
    dp = np.asarray(deltas, dtype=np.float64)
    f_s, n, theta, *_ = _pieces(cfg, p, s)
    ones = np.ones((cfg.n_tx, 1))
    r_theta = -1j * cfg.phase_constant * n[:, None] * (np.cos(theta) * dp[:, AOD])[None, :]
    r_tau = -2j * math.pi * f_s * ones * dp[None, :, DELAY]
    r_phi = 1j * ones * dp[None, :, PHASE]
    return r_theta, r_tau, r_phi


def first_order_delta_h(cfg: ScenarioConfig, csi, deltas, s: int) -> np.ndarray:
    """Linearized change of h[s] for parameter distortions ``deltas`` (L, 4).

    Built from the Hadamard form (R_x o A_t) diag(exp(j(phi - 2 pi f_s tau))) beta
    for the angle, delay and phase terms and A_t diag(...) d_beta for the gain.
    """
    p = _as_matrix(csi)
    dp = np.asarray(deltas, dtype=np.float64)
    _, _, _, beta, a_t, rot = _pieces(cfg, p, s)
    r_theta, r_tau, r_phi = coefficient_matrices(cfg, p, dp, s)
    weighted = rot * beta
    out = (r_theta * a_t) @ weighted + (r_tau * a_t) @ weighted + (r_phi * a_t) @ weighted
    return out + a_t @ (rot * dp[:, GAIN])


def jacobian_vector_product(jac: JacobianSet, deltas) -> np.ndarray:
    dp = np.asarray(deltas, dtype=np.float64)
    return sum(block @ dp[:, k] for k, block in enumerate(jac.blocks()))


def h_column(cfg: ScenarioConfig, csi, s: int) -> np.ndarray:
    return assemble_batch(cfg, _as_matrix(csi)[None])[0, s - 1].conj()


def fd_steps(cfg: ScenarioConfig) -> np.ndarray:
    """Central-difference steps per parameter.

    Angles use 1e-5 rad: the carrier phase 2*pi*f_s*tau reaches ~1e4 rad, so
    its rounding (~1e-12 rad) would swamp a 1e-7 rad step.
    """
    return np.array([1e-5, 1e-15, 1e-7 * cfg.beta_max, 1e-5])


def finite_difference_jacobians(cfg: ScenarioConfig, csi, s: int, steps=None) -> JacobianSet:
    p = _as_matrix(csi)
    steps = fd_steps(cfg) if steps is None else np.asarray(steps)
    L = p.shape[0]
    # all 8L perturbed copies go through one batched assembly
    batch = np.repeat(p[None], 8 * L, axis=0)
    i = 0
    for k in range(4):
        for l in range(L):
            batch[i, l, k] += steps[k]
            batch[i + 1, l, k] -= steps[k]
            i += 2
    h = assemble_batch(cfg, batch)[:, s - 1].conj()
    cols = (h[0::2] - h[1::2]).T  # (N_t, 4L)
    blocks = [cols[:, k * L : (k + 1) * L] / (2 * steps[k]) for k in range(4)]
    return JacobianSet(s, *blocks, np.arange(cfg.n_tx, dtype=np.float64))


def full_jacobian_delta(cfg: ScenarioConfig, csi, deltas) -> np.ndarray:
    """First-order change of the whole channel matrix, in the (N_f, N_t) row layout."""
    p = _as_matrix(csi)
    rows = [first_order_delta_h(cfg, p, deltas, s).conj() for s in range(1, cfg.n_subcarriers + 1)]
    return np.stack(rows)


def linearization_residual(cfg: ScenarioConfig, csi, deltas) -> float:
    """||H(p + dp) - H(p) - J dp||_F; second order in ``dp``."""
    p = _as_matrix(csi)
    dp = np.asarray(deltas, dtype=np.float64)
    h0, h1 = assemble_batch(cfg, np.stack([p, p + dp]))
    return float(np.linalg.norm(h1 - h0 - full_jacobian_delta(cfg, p, dp)))


def natural_scales(cfg: ScenarioConfig) -> np.ndarray:
    """Per-parameter perturbation unit giving ~1 rad of channel phase change.

    The delay unit is 1/(2 pi f_max), so a unit delay step rotates the
    highest subcarrier by one radian.
    """
    return np.array([1.0, 1.0 / (2 * math.pi * cfg.frequencies[-1]), cfg.beta_max, 1.0])


def convergence_ratios(cfg: ScenarioConfig, n_draws: int, rng: np.random.Generator, eps: float = 1e-3) -> np.ndarray:
    """residual(dp) / residual(dp / 2) for random parameters and directions."""
    out = np.empty(n_draws)
    for i in range(n_draws):
        p = sample_params(cfg, 1, rng)[0]
        dp = rng.uniform(-1, 1, p.shape) * natural_scales(cfg) * eps
        out[i] = linearization_residual(cfg, p, dp) / linearization_residual(cfg, p, dp / 2)
    return out


# --- Monte Carlo distortion ----------------------------------------------------


@dataclass(frozen=True)
class MonteCarloDistortion:
    """Empirical per-term means (same units as the closed-form terms) and standard errors."""

    mean: np.ndarray  # (theta, tau, beta, phi, total)
    stderr: np.ndarray
    n_samples: int
    mode: str

    @property
    def terms(self) -> np.ndarray:
        return self.mean[:4]

    @property
    def total(self) -> float:
        return float(self.mean[4])


def sample_params(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, L, 4) parameters drawn from the scenario's uniform priors."""
    u = rng.random((n, cfg.n_paths, 4))
    return u * cfg.param_max


def sample_distortions(cfg: ScenarioConfig, alloc: BitAllocation, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, L, 4) distortions uniform on +-half a codebook step."""
    half = build_codebooks(cfg, alloc).half_steps()
    return rng.uniform(-1.0, 1.0, (n, cfg.n_paths, 4)) * half


def _exact_sq(cfg, p, books):
    q = quantize_params(p, books)
    h = assemble_batch(cfg, p)
    out = np.empty((p.shape[0], 5))
    for k in range(4):
        pk = p.copy()
        pk[..., k] = q[..., k]
        diff = h - assemble_batch(cfg, pk)
        out[:, k] = np.sum(diff.real**2 + diff.imag**2, axis=(1, 2))
    diff = h - assemble_batch(cfg, q)
    out[:, 4] = np.sum(diff.real**2 + diff.imag**2, axis=(1, 2))
    return out


def monte_carlo_distortion(
    cfg: ScenarioConfig,
    alloc: BitAllocation,
    n_samples: int,
    rng: np.random.Generator,
    mode: str = "linearized",
    chunk: int = 20_000,
) -> MonteCarloDistortion:
    """Empirical E||dH||_F^2 per parameter type and jointly.

    ``linearized`` pushes uniform distortions through the Jacobians;
    ``exact`` quantizes sampled parameters with the real codebooks and
    measures the actual channel error. Per-parameter columns perturb that
    parameter alone.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    books = build_codebooks(cfg, alloc)
    parts = []
    for start in range(0, n_samples, chunk):
        m = min(chunk, n_samples - start)
        p = sample_params(cfg, m, rng)
        if mode == "linearized":
            dp = sample_distortions(cfg, alloc, m, rng)
            parts.append(kernels.linearized_sq(p, dp, cfg.frequencies, cfg.n_tx, cfg.phase_constant))
        else:
            parts.append(_exact_sq(cfg, p, books))
    # one contiguous row per term so the reductions run pairwise
    vals = np.ascontiguousarray(np.concatenate(parts).T)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(n_samples) if n_samples > 1 else np.full(5, np.inf)
    return MonteCarloDistortion(mean, se, n_samples, mode)


# --- reports --------------------------------------------------------------------


def jacobian_report(cfg: ScenarioConfig, n_instances: int, rng: np.random.Generator) -> dict:
    """Worst relative gap between analytic and finite-difference Jacobians."""
    worst = np.zeros(4)
    for _ in range(n_instances):
        p = sample_params(cfg, 1, rng)[0]
        s = int(rng.integers(1, cfg.n_subcarriers + 1))
        an = analytic_jacobians(cfg, p, s).blocks()
        fd = finite_difference_jacobians(cfg, p, s).blocks()
        for k in range(4):
            worst[k] = max(worst[k], np.linalg.norm(an[k] - fd[k]) / np.linalg.norm(an[k]))
    return {
        "instances": n_instances,
        "max_relative_error": dict(zip(("theta", "tau", "beta", "phi"), worst.tolist())),
    }


def log2_slope(bits, values) -> float:
    return float(np.polyfit(np.asarray(bits, float), np.log2(values), 1)[0])


def theorem_report(
    cfg: ScenarioConfig,
    n_samples: int,
    rng: np.random.Generator,
    bits=range(4, 11),
    mode: str = "linearized",
) -> dict:
    """Empirical vs closed-form terms for each parameter across bit counts.

    Each parameter is swept on its own (uniform allocations Q..Q); since the
    per-parameter columns are isolated, one run per Q serves all four.
    """
    bits = list(bits)
    emp = np.empty((len(bits), 4))
    se = np.empty((len(bits), 4))
    closed = np.empty((len(bits), 4))
    for i, q in enumerate(bits):
        alloc = BitAllocation.uniform(q)
        mc = monte_carlo_distortion(cfg, alloc, n_samples, rng, mode=mode)
        emp[i], se[i] = mc.mean[:4], mc.stderr[:4]
        closed[i] = distortion_terms(cfg, alloc).as_array()
    ratio = emp / closed
    names = ("theta", "tau", "beta", "phi")
    report = {"mode": mode, "samples": n_samples, "bits": bits, "terms": {}}
    for k, name in enumerate(names):
        report["terms"][name] = {
            "empirical": emp[:, k].tolist(),
            "stderr": se[:, k].tolist(),
            "closed_form": closed[:, k].tolist(),
            "ratio": ratio[:, k].tolist(),
            "ratio_mean": float(ratio[:, k].mean()),
            "ratio_spread": float(ratio[:, k].max() / ratio[:, k].min()),
            "z_score": ((emp[:, k] - closed[:, k]) / se[:, k]).tolist(),
            "slope_empirical": log2_slope(bits, emp[:, k]),
            "slope_closed_form": log2_slope(bits, closed[:, k]),
        }
    return report
