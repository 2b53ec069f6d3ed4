"""Vectorised numpy kernels. Reference path and fallback for the numba versions."""

import numpy as np

# rows of the (B, L, 4) parameter tensor
AOD, DELAY, GAIN, PHASE = 0, 1, 2, 3

_CHUNK = 2048


def assemble(params, freqs, n_tx, kd):
    """Batch of channel matrices, shape (B, N_f, N_t).

    ``kd`` is the array phase constant 2*pi*d/lambda.
    """
    params = np.asarray(params, dtype=np.float64)
    n = np.arange(n_tx, dtype=np.float64)
    theta, tau, beta, phi = (params[..., k] for k in range(4))
    # (B, N_f, L) and (B, N_t, L)
    a_f = np.exp(2j * np.pi * freqs[None, :, None] * tau[:, None, :])
    a_t_conj = np.exp(1j * kd * n[None, :, None] * np.sin(theta)[:, None, :])
    gain = beta * np.exp(-1j * phi)
    return np.einsum("bfl,bl,btl->bft", a_f, gain, a_t_conj, optimize=True)


def linearized_sq(params, deltas, freqs, n_tx, kd):
    """Squared norms of the first-order channel perturbations.

    Returns (B, 5): sum over subcarriers of ||J_x dx||^2 for x in
    (aod, delay, gain, phase), then the same for the joint perturbation.
    """
    params = np.asarray(params, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    out = np.empty((params.shape[0], 5))
    for start in range(0, params.shape[0], _CHUNK):
        sl = slice(start, start + _CHUNK)
        out[sl] = _linearized_chunk(params[sl], deltas[sl], freqs, n_tx, kd)
    return out


def _linearized_chunk(p, dp, freqs, n_tx, kd):
    n = np.arange(n_tx, dtype=np.float64)
    theta, tau, beta, phi = (p[..., k] for k in range(4))
    a_t = np.exp(-1j * kd * n[None, :, None] * np.sin(theta)[:, None, :])  # (B, N_t, L)
    rot = np.exp(1j * (phi[:, None, :] - 2 * np.pi * freqs[None, :, None] * tau[:, None, :]))  # (B, N_f, L)

    # per-path complex coefficient of a_t (B, N_f, L); the aod term also carries the index ramp
    c_aod = (-1j * kd * np.cos(theta) * dp[..., AOD] * beta)[:, None, :] * rot
    c_delay = -2j * np.pi * freqs[None, :, None] * (dp[..., DELAY] * beta)[:, None, :] * rot
    c_gain = dp[..., GAIN][:, None, :] * rot
    c_phase = (1j * dp[..., PHASE] * beta)[:, None, :] * rot

    ramp_a_t = n[None, :, None] * a_t
    v_aod = np.einsum("bfl,btl->bft", c_aod, ramp_a_t)
    v_rest = [np.einsum("bfl,btl->bft", c, a_t) for c in (c_delay, c_gain, c_phase)]
    terms = [v_aod, *v_rest]
    joint = terms[0] + terms[1] + terms[2] + terms[3]
    sq = lambda v: np.sum(v.real**2 + v.imag**2, axis=(1, 2))  # noqa: E731
    return np.stack([sq(v) for v in terms] + [sq(joint)], axis=1)
