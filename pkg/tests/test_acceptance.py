"""Acceptance suite: one test per criterion sub-check, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion followed by its sub-checks.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record
from scipy import stats

from paracsi.allocation import (
    allocate,
    brute_force_allocation,
    closed_form_allocation,
    count_combinations,
    distortion_terms,
    enumerate_allocations,
    objective,
)
from paracsi.channel import ScenarioConfig, generate_dataset, kmh
from paracsi.estimator import model, nn, training
from paracsi.estimator.model import DecoderParams, EncoderParams, ModelDims
from paracsi.harness import (
    LinkSimConfig,
    PipelineSpec,
    ber_closed_form,
    isolated_quantization_nmse,
    run_scenario,
    simulate_ber,
)
from paracsi.metrics import nmse, to_db
from paracsi.perturbation import (
    convergence_ratios,
    jacobian_report,
    monte_carlo_distortion,
    sample_params,
    theorem_report,
)
from paracsi.quantizer import BitAllocation, build_codebooks, quantize_params, wrapped_error

REPORT_DIR = Path(__file__).resolve().parent.parent / "reports"
NAMES = ("theta", "tau", "beta", "phi")


def desk():
    return ScenarioConfig(
        n_tx=16, n_subcarriers=32, n_paths=3, carrier_freq_hz=28e9, bandwidth_hz=100e6, tau_max_s=100e-9, beta_max=1.0
    )


def _write_report(name, payload):
    REPORT_DIR.mkdir(exist_ok=True)
    (REPORT_DIR / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# --- 1: Jacobians vs finite differences -------------------------------------------


def test_c1_jacobians_match_finite_differences():
    t0 = time.perf_counter()
    rep = jacobian_report(desk(), 50, np.random.default_rng(1))
    elapsed = time.perf_counter() - t0
    worst = max(rep["max_relative_error"].values())
    ok = record("C1", "max relative error <= 1e-5 over 50 instances", worst <= 1e-5, f"{worst:.2e}")
    ok_t = record("C1", "runtime < 10 s", elapsed < 10, f"{elapsed:.2f} s")
    assert ok and ok_t


# --- 2: first-order convergence ------------------------------------------------------


def test_c2_linearization_residual_is_second_order():
    r = convergence_ratios(desk(), 100, np.random.default_rng(2))
    m = float(r.mean())
    assert record("C2", "mean residual ratio in [3.5, 4.5] over 100 draws", 3.5 <= m <= 4.5, f"{m:.4f}")


# --- 3: Monte Carlo C_beta -------------------------------------------------------------


def test_c3_gain_term_monte_carlo():
    cfg = desk()
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    oks = []
    for q in (4, 6, 8):
        alloc = BitAllocation(8, 8, q, 8)
        mc = monte_carlo_distortion(cfg, alloc, 100_000, rng)
        closed = distortion_terms(cfg, alloc).c_beta
        z = (mc.mean[2] - closed) / mc.stderr[2]
        oks.append(record("C3", f"Q_beta={q}: |z| <= 3", abs(z) <= 3, f"z={z:+.2f}, ratio={mc.mean[2] / closed:.4f}"))
    elapsed = time.perf_counter() - t0
    oks.append(record("C3", "runtime < 60 s", elapsed < 60, f"{elapsed:.1f} s"))
    assert all(oks)


# --- 4: scaling and constant ratios -----------------------------------------------------


@pytest.fixture(scope="module")
def theorem():
    rep = theorem_report(desk(), 100_000, np.random.default_rng(4), bits=range(4, 11))
    _write_report("theorem_scaling.json", rep)
    return rep


@pytest.mark.parametrize("name", NAMES)
def test_c4_log2_slopes(theorem, name):
    t = theorem["terms"][name]
    se, sc = t["slope_empirical"], t["slope_closed_form"]
    ok = abs(se + 2) <= 0.05 and abs(sc + 2) <= 0.05
    assert record("C4", f"{name}: slopes -2.0 +- 0.05", ok, f"empirical {se:.4f}, closed form {sc:.4f}")


@pytest.mark.parametrize("name", ("theta", "tau", "phi"))
def test_c4_ratio_constant_in_q(theorem, name):
    t = theorem["terms"][name]
    spread = t["ratio_spread"]
    detail = f"ratio {t['ratio_mean']:.4f}, max/min {spread:.4f}"
    assert record("C4", f"{name}: empirical/closed-form ratio max/min <= 1.05", spread <= 1.05, detail)


# --- 5: bit allocation -------------------------------------------------------------------


def test_c5_allocation():
    cfg = desk()
    t0 = time.perf_counter()
    oks = []
    for q in (16, 20, 24):
        bf = brute_force_allocation(cfg, q)
        oks.append(record("C5", f"Q={q}: candidates == count_combinations(Q)",
                          bf.n_candidates == count_combinations(q) == len(enumerate_allocations(q)),
                          f"{bf.n_candidates}"))  # fmt: skip
        cf = objective(cfg, closed_form_allocation(cfg, q).alloc)
        gap = cf / bf.objective - 1
        oks.append(record("C5", f"Q={q}: closed-form objective within 5% of brute force", gap <= 0.05, f"gap {gap:.2e}"))
    elapsed = time.perf_counter() - t0
    oks.append(record("C5", "runtime < 5 s", elapsed < 5, f"{elapsed:.2f} s"))
    assert all(oks)


def test_c5_paper_count_at_q20():
    n = brute_force_allocation(desk(), 20).n_candidates
    assert record("C5", "Q=20: candidates == 8855", n == 8855, f"enumeration visits {n}")


# --- 6: Table I ordering -------------------------------------------------------------------


@pytest.fixture(scope="module")
def table1():
    cfg = desk()
    params = sample_params(cfg, 2000, np.random.default_rng(6))
    rows = {q: {k: to_db(v) for k, v in isolated_quantization_nmse(cfg, params, q).items()} for q in (6, 7, 8)}
    _write_report("table1_isolated_nmse_db.json", {str(q): r for q, r in rows.items()})
    return rows


def _fmt(rows, a, b):
    return ", ".join(f"Q={q}: {rows[q][a]:.2f} vs {rows[q][b]:.2f}" for q in rows)


def test_c6_aod_at_least_delay(table1):
    ok = all(r["theta"] >= r["tau"] for r in table1.values())
    assert record("C6", "AoD >= delay", ok, _fmt(table1, "theta", "tau"))


def test_c6_delay_well_above_path_loss(table1):
    # read ">>" as at least 10 dB
    ok = all(r["tau"] >= r["beta"] + 10 for r in table1.values())
    assert record("C6", "delay >> path loss (>= 10 dB)", ok, _fmt(table1, "tau", "beta"))


def test_c6_path_loss_at_least_phase(table1):
    ok = all(r["beta"] >= r["phi"] for r in table1.values())
    assert record("C6", "path loss >= phase", ok, _fmt(table1, "beta", "phi"))


@pytest.mark.parametrize("name", NAMES)
def test_c6_six_db_per_bit(table1, name):
    steps = [table1[q][name] - table1[q + 1][name] for q in (6, 7)]
    ok = all(4.5 <= s <= 7.5 for s in steps)
    assert record("C6", f"{name}: 6 +- 1.5 dB per added bit", ok, ", ".join(f"{s:.2f} dB" for s in steps))


# --- 7: quantizer bounds ---------------------------------------------------------------------


@pytest.mark.parametrize("q", (4, 6, 8))
@pytest.mark.parametrize("k", range(4), ids=NAMES)
def test_c7_quantizer_bound_and_uniformity(q, k):
    cfg = ScenarioConfig()
    books = build_codebooks(cfg, BitAllocation.uniform(q))
    p = np.random.default_rng(700 + 10 * q + k).random((100_000, 4)) * cfg.param_max
    err = wrapped_error(p, quantize_params(p, books))[:, k]
    half = books.half_steps()[k]
    worst = float(np.max(np.abs(err)) / half)
    ok_b = record("C7", f"{NAMES[k]} Q={q}: |error| <= half step", worst <= 1 + 1e-12, f"max |err|/half = {worst:.4f}")
    ks = stats.kstest(err, stats.uniform(loc=-half, scale=2 * half).cdf)
    ok_u = record("C7", f"{NAMES[k]} Q={q}: KS uniform at alpha=0.01", ks.pvalue > 0.01, f"D={ks.statistic:.5f}, p={ks.pvalue:.3g}")
    assert ok_b and ok_u


# --- 8: attention / normalization invariants -------------------------------------------------


def test_c8_attention_row_stochastic():
    rng = np.random.default_rng(8)
    worst = 0.0
    neg = False
    for _ in range(300):
        t, h = int(rng.integers(1, 12)), int(rng.choice([1, 2, 4]))
        d = h * int(rng.integers(1, 5))
        scale = 10 ** rng.uniform(-2, 1.5)
        s = rng.normal(0, scale, (2, t, d))
        w = [rng.normal(0, scale, (h, d, d // h)) for _ in range(3)]
        _, a, _ = nn.attention_forward(s, *w)
        worst = max(worst, float(np.max(np.abs(a.sum(axis=-1) - 1))))
        neg |= bool(np.any(a < 0))
    assert record("C8", "attention rows non-negative and sum to 1 (1e-6)", worst <= 1e-6 and not neg, f"max dev {worst:.1e}")


def test_c8_layer_norm_shift_invariance():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(300):
        z = rng.normal(0, 10 ** rng.uniform(-1, 2), (4, 16))
        c = rng.normal(0, 100, (4, 1))
        g, b = rng.normal(size=16), rng.normal(size=16)
        diff = model.layer_norm(z + c, g, b, 1e-5) - model.layer_norm(z, g, b, 1e-5)
        worst = max(worst, float(np.max(np.abs(diff))))
    assert record("C8", "layer norm row-shift invariance (1e-9)", worst <= 1e-9, f"max dev {worst:.1e}")


def test_c8_leaky_relu_definition():
    x = np.concatenate([np.linspace(-1e3, 1e3, 20001), [-1.0, 0.0, 2.0, -0.0, 1e-300, -1e-300]])
    ref = np.array([v if v >= 0 else 0.1 * v for v in x])
    ok = np.array_equal(nn.leaky_relu(x), ref) and nn.leaky_relu(np.array(-1.0)) == -0.1
    assert record("C8", "leaky-ReLU f(x) = max(0.1x, x) pointwise", ok, f"{x.size} points")


# --- 9: training -----------------------------------------------------------------------------

TOY_SPEED_KMH = 60.0
TOY_SAMPLES = 64
TOY_BITS = 64
TOY_TRAIN = training.TrainConfig(
    batch_size=16, learning_rate=0.5, epochs=14000, decay_period=10500, decay_coef=0.1, seed=0,
    clip_norm=5.0, encoder_lr_scale=0.001,
)  # fmt: skip


def _grad_check(params, loss, eps=1e-7):
    _, grads = loss(params, True)
    worst = 0.0
    for name, g in grads.items():
        t = getattr(params, name)
        num = np.zeros_like(t)
        for i in np.ndindex(t.shape):
            old = t[i]
            h = eps * max(1.0, abs(old))
            t[i] = old + h
            lp = loss(params, False)[0]
            t[i] = old - h
            lm = loss(params, False)[0]
            t[i] = old
            num[i] = (lp - lm) / (2 * h)
        worst = max(worst, float(np.linalg.norm(num - g) / max(np.linalg.norm(num), 1e-300)))
    return worst


def test_c9_gradient_check_micro():
    cfg = ScenarioConfig(n_tx=4, n_subcarriers=8, n_paths=2, window_len=2)
    dims = ModelDims.for_scenario(cfg, d_model=8, n_heads=2, n_delay_keep=8)
    rng = np.random.default_rng(90)
    ds = generate_dataset(cfg, 4, seed=90)
    enc, dec = EncoderParams.init(dims, rng), DecoderParams.init(dims, rng)
    e = _grad_check(enc, lambda p, g: model.encoder_loss(cfg, p, ds.past, ds.target_channels, g))
    d = _grad_check(dec, lambda p, g: model.decoder_loss(p, ds.targets, ds.target_channels, g))
    assert record("C9", "micro-model gradients within 1e-4 relative", max(e, d) <= 1e-4, f"encoder {e:.1e}, decoder {d:.1e}")


@pytest.fixture(scope="module")
def toy_run():
    cfg = ScenarioConfig(ue_speed_mps=kmh(TOY_SPEED_KMH))
    ds = generate_dataset(cfg, TOY_SAMPLES, seed=7)
    dims = ModelDims.for_scenario(cfg)
    rng = np.random.default_rng(TOY_TRAIN.seed)
    enc, dec = EncoderParams.init(dims, rng), DecoderParams.init(dims, rng)
    alloc = allocate(cfg, TOY_BITS)
    t0 = time.perf_counter()
    enc, dec, hist = training.train(ds, enc, dec, TOY_TRAIN, cfg, alloc)
    elapsed = time.perf_counter() - t0
    est = training.predict(ds.past, enc, dec, cfg, alloc)
    e2e = to_db(nmse(ds.target_channels, est))
    pers = to_db(nmse(ds.target_channels, training.persistence_baseline(ds.past)))
    _write_report(
        "toy_training.json",
        {
            "train": TOY_TRAIN.__dict__,
            "bits": alloc.as_tuple(),
            "seconds": elapsed,
            "encoder_loss_first_last": [hist.encoder_loss[0], hist.encoder_loss[-1]],
            "decoder_loss_first_last": [hist.decoder_loss[0], hist.decoder_loss[-1]],
            "end_to_end_nmse_db": e2e,
            "persistence_nmse_db": pers,
        },
    )
    return hist, e2e, pers, elapsed


def test_c9_encoder_loss_decreases(toy_run):
    hist = toy_run[0]
    first, last = hist.encoder_loss[0], hist.encoder_loss[-1]
    assert record("C9", "final-epoch encoder loss < first-epoch loss", last < first, f"{first:.4f} -> {last:.4f}")


def test_c9_end_to_end_beats_persistence(toy_run):
    _, e2e, pers, _ = toy_run
    detail = f"end-to-end {e2e:.2f} dB vs persistence {pers:.2f} dB"
    assert record("C9", f"end-to-end NMSE < persistence at {TOY_SPEED_KMH:g} km/h", e2e < pers, detail)


def test_c9_runtime(toy_run):
    elapsed = toy_run[3]
    assert record("C9", "toy training runtime < 10 min", elapsed < 600, f"{elapsed:.0f} s")


# --- 10: link level ----------------------------------------------------------------------------


def test_c10_perfect_csi_qpsk_ber():
    rng = np.random.default_rng(10)
    h = rng.normal(size=(1, 8)) + 1j * rng.normal(size=(1, 8))
    h /= np.linalg.norm(h)  # unit effective gain keeps all three points informative
    lc = LinkSimConfig(symbols_per_subcarrier=1_000_000, snr_db=(0.0, 5.0, 10.0))
    measured = simulate_ber(h, h, lc, rng)
    expect = ber_closed_form(h, h, lc.snr_db)
    oks = []
    for snr, m, p in zip(lc.snr_db, measured, expect):
        sigma = math.sqrt(p * (1 - p) / (2 * lc.symbols_per_subcarrier))
        z = (m - p) / sigma
        oks.append(record("C10", f"SNR {snr:g} dB: within 3 sigma", abs(z) <= 3, f"measured {m:.5f}, closed form {p:.5f}, z={z:+.2f}"))
    assert all(oks)


# --- 11: end-to-end monotonicity -----------------------------------------------------------------


def test_c11_oracle_nmse_decreases_with_bits(tmp_path):
    spec = PipelineSpec(
        estimator="oracle", alloc_method="closed", total_bits=(32, 64, 96, 128), n_samples=64,
        link=LinkSimConfig(symbols_per_subcarrier=100, snr_db=(10.0,)),
    )  # fmt: skip
    rows = run_scenario(ScenarioConfig(), spec, [11], tmp_path / "c11.csv")
    vals = [float(r["nmse"]) for r in rows]
    ok = all(b < a for a, b in zip(vals, vals[1:]))
    detail = ", ".join(f"Q={r['total_bits']}: {r['nmse_db']} dB" for r in rows)
    assert record("C11", "NMSE strictly decreasing over Q in {32, 64, 96, 128}", ok, detail)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
