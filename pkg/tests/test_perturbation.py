import math

import numpy as np
import pytest

from paracsi import kernels
from paracsi.allocation import distortion_terms
from paracsi.channel import ScenarioConfig, assemble_batch
from paracsi.perturbation import (
    analytic_jacobians,
    coefficient_matrices,
    convergence_ratios,
    finite_difference_jacobians,
    first_order_delta_h,
    full_jacobian_delta,
    h_column,
    jacobian_vector_product,
    log2_slope,
    monte_carlo_distortion,
    sample_params,
    theorem_report,
)
from paracsi.quantizer import BitAllocation


def test_jacobians_against_finite_differences(desk_cfg, rng):
    for _ in range(5):
        p = sample_params(desk_cfg, 1, rng)[0]
        s = int(rng.integers(1, desk_cfg.n_subcarriers + 1))
        an = analytic_jacobians(desk_cfg, p, s).blocks()
        fd = finite_difference_jacobians(desk_cfg, p, s).blocks()
        for a, f in zip(an, fd):
            assert np.linalg.norm(a - f) <= 1e-5 * np.linalg.norm(a)


def test_hadamard_form_equals_jacobian_product(desk_cfg, rng):
    p = sample_params(desk_cfg, 1, rng)[0]
    dp = rng.normal(size=p.shape) * [1e-3, 1e-14, 1e-3, 1e-3]
    for s in (1, 17, 32):
        jac = analytic_jacobians(desk_cfg, p, s)
        assert np.allclose(first_order_delta_h(desk_cfg, p, dp, s), jacobian_vector_product(jac, dp))


def test_coefficient_matrix_shapes_and_structure(desk_cfg, rng):
    p = sample_params(desk_cfg, 1, rng)[0]
    dp = rng.normal(size=p.shape)
    r_t, r_tau, r_p = coefficient_matrices(desk_cfg, p, dp, 3)
    for r in (r_t, r_tau, r_p):
        assert r.shape == (desk_cfg.n_tx, desk_cfg.n_paths)
    # first antenna row of R_theta is zero (index ramp starts at 0)
    assert np.all(r_t[0] == 0)
    assert np.allclose(r_tau, r_tau[0])


def test_column_convention(desk_cfg, rng):
    p = sample_params(desk_cfg, 1, rng)[0]
    h = assemble_batch(desk_cfg, p[None])[0]
    assert np.allclose(h_column(desk_cfg, p, 5), h[4].conj())


def test_full_delta_is_small_step_difference(desk_cfg, rng):
    p = sample_params(desk_cfg, 1, rng)[0]
    dp = rng.uniform(-1, 1, p.shape) * [1e-6, 1e-18, 1e-6, 1e-6]
    h0, h1 = assemble_batch(desk_cfg, np.stack([p, p + dp]))
    lin = full_jacobian_delta(desk_cfg, p, dp)
    assert np.linalg.norm(h1 - h0 - lin) < 1e-4 * np.linalg.norm(lin)


def test_convergence_ratio_near_four(desk_cfg):
    r = convergence_ratios(desk_cfg, 20, np.random.default_rng(0))
    assert 3.9 < r.mean() < 4.1


def test_backends_agree(desk_cfg, rng):
    if kernels.numba_backend is None:
        pytest.skip("numba disabled")
    p = sample_params(desk_cfg, 64, rng)
    dp = rng.normal(size=p.shape) * [1e-3, 1e-14, 1e-3, 1e-3]
    f, nt, kd = desk_cfg.frequencies, desk_cfg.n_tx, desk_cfg.phase_constant
    a = kernels.numpy_backend.assemble(p, f, nt, kd)
    b = kernels.numba_backend.assemble(p, f, nt, kd)
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)
    x = kernels.numpy_backend.linearized_sq(p, dp, f, nt, kd)
    y = kernels.numba_backend.linearized_sq(p, dp, f, nt, kd)
    assert np.allclose(x, y, rtol=1e-9)


def test_linearized_joint_close_to_sum_of_terms(desk_cfg):
    # cross terms vanish in expectation because the distortions are zero-mean and independent
    mc = monte_carlo_distortion(desk_cfg, BitAllocation(8, 20, 8, 8), 20000, np.random.default_rng(5))
    assert mc.total == pytest.approx(mc.terms.sum(), rel=0.05)


def test_gain_term_matches_closed_form(desk_cfg):
    alloc = BitAllocation(6, 6, 6, 6)
    mc = monte_carlo_distortion(desk_cfg, alloc, 20000, np.random.default_rng(7))
    closed = distortion_terms(desk_cfg, alloc).c_beta
    assert abs(mc.mean[2] - closed) < 4 * mc.stderr[2]


def test_exact_mode_tracks_linearized_for_gain(desk_cfg):
    alloc = BitAllocation(6, 6, 6, 6)
    lin = monte_carlo_distortion(desk_cfg, alloc, 4000, np.random.default_rng(1))
    ex = monte_carlo_distortion(desk_cfg, alloc, 4000, np.random.default_rng(1), mode="exact")
    assert ex.mean[2] == pytest.approx(lin.mean[2], rel=0.15)


def test_theorem_report_structure(desk_cfg):
    rep = theorem_report(desk_cfg, 2000, np.random.default_rng(0), bits=[4, 5, 6])
    assert set(rep["terms"]) == {"theta", "tau", "beta", "phi"}
    for t in rep["terms"].values():
        assert t["slope_closed_form"] == pytest.approx(-2.0)
        assert len(t["ratio"]) == 3


def test_log2_slope():
    assert log2_slope([1, 2, 3], [4.0**-1, 4.0**-2, 4.0**-3]) == pytest.approx(-2.0)


def test_mc_argument_checks(desk_cfg):
    with pytest.raises(ValueError):
        monte_carlo_distortion(desk_cfg, BitAllocation(1, 1, 1, 1), 0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        monte_carlo_distortion(desk_cfg, BitAllocation(1, 1, 1, 1), 5, np.random.default_rng(0), mode="nope")
    with pytest.raises(IndexError):
        analytic_jacobians(desk_cfg, np.zeros((3, 4)), 0)
