"""Loop kernels compiled with numba; same contracts as ``_kernels_numpy``."""

import math

import numpy as np
from numba import njit


@njit(cache=True)
def assemble(params, freqs, n_tx, kd):
    n_batch, n_paths = params.shape[0], params.shape[1]
    n_f = freqs.shape[0]
    out = np.zeros((n_batch, n_f, n_tx), dtype=np.complex128)
    ramp = np.empty(n_tx, dtype=np.complex128)
    for b in range(n_batch):
        for l in range(n_paths):
            u = kd * math.sin(params[b, l, 0])
            for m in range(n_tx):
                ramp[m] = complex(math.cos(m * u), math.sin(m * u))
            tau = params[b, l, 1]
            beta = params[b, l, 2]
            phi = params[b, l, 3]
            for s in range(n_f):
                ang = 2.0 * math.pi * freqs[s] * tau - phi
                g = beta * complex(math.cos(ang), math.sin(ang))
                for m in range(n_tx):
                    out[b, s, m] += g * ramp[m]
    return out


@njit(cache=True)
def linearized_sq(params, deltas, freqs, n_tx, kd):
    n_batch, n_paths = params.shape[0], params.shape[1]
    n_f = freqs.shape[0]
    out = np.zeros((n_batch, 5))
    cf = np.empty((4, n_paths), dtype=np.complex128)
    at = np.empty((n_tx, n_paths), dtype=np.complex128)
    for b in range(n_batch):
        for l in range(n_paths):
            u = -kd * math.sin(params[b, l, 0])
            for m in range(n_tx):
                at[m, l] = complex(math.cos(m * u), math.sin(m * u))
        for s in range(n_f):
            w = 2.0 * math.pi * freqs[s]
            for l in range(n_paths):
                beta = params[b, l, 2]
                ang = params[b, l, 3] - w * params[b, l, 1]
                rot = complex(math.cos(ang), math.sin(ang))
                cf[0, l] = -1j * kd * math.cos(params[b, l, 0]) * deltas[b, l, 0] * beta * rot
                cf[1, l] = -1j * w * deltas[b, l, 1] * beta * rot
                cf[2, l] = deltas[b, l, 2] * rot
                cf[3, l] = 1j * deltas[b, l, 3] * beta * rot
            for m in range(n_tx):
                v0 = 0j
                v1 = 0j
                v2 = 0j
                v3 = 0j
                for l in range(n_paths):
                    a = at[m, l]
                    v0 += cf[0, l] * m * a
                    v1 += cf[1, l] * a
                    v2 += cf[2, l] * a
                    v3 += cf[3, l] * a
                vj = v0 + v1 + v2 + v3
                out[b, 0] += v0.real * v0.real + v0.imag * v0.imag
                out[b, 1] += v1.real * v1.real + v1.imag * v1.imag
                out[b, 2] += v2.real * v2.real + v2.imag * v2.imag
                out[b, 3] += v3.real * v3.real + v3.imag * v3.imag
                out[b, 4] += vj.real * vj.real + vj.imag * vj.imag
    return out
