"""Link-level BER simulation and scenario runs writing CSV rows plus a JSON manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import allocate
from .channel import ParametricCsi, ScenarioConfig, assemble_batch, generate_dataset
from .metrics import cosine_similarity, format_db, nmse, qpsk_ber_awgn, to_db
from .quantizer import BitAllocation, build_codebooks, decode_payload, dequantize, encode_payload, quantize_csi, quantize_params

MODULATIONS = ("qpsk",)
BEAMFORMERS = ("mrt",)
ESTIMATORS = ("oracle", "persistence", "model")

_QPSK_SCALE = 1 / math.sqrt(2)


@dataclass(frozen=True)
class LinkSimConfig:
    """SNR is transmit symbol energy over noise variance per subcarrier, before beamforming gain."""

    modulation: str = "qpsk"
    symbols_per_subcarrier: int = 10_000
    snr_db: tuple = (0.0, 5.0, 10.0)
    beamformer: str = "mrt"

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        if not self.snr_db:
            raise ValueError("snr grid must be non-empty")
        if self.modulation not in MODULATIONS:
            raise ValueError(f"modulation must be one of {MODULATIONS}")
        if self.beamformer not in BEAMFORMERS:
            raise ValueError(f"beamformer must be one of {BEAMFORMERS}")
        if self.symbols_per_subcarrier < 1:
            raise ValueError("symbols_per_subcarrier must be >= 1")


def effective_gains(truth: np.ndarray, estimate: np.ndarray) -> np.ndarray:
    """g[s] = h[s]^H r[s] with r = h_hat/||h_hat||, flattened over all subcarriers."""
    t = np.asarray(truth).reshape(-1, np.shape(truth)[-1])
    e = np.asarray(estimate).reshape(t.shape)
    norm = np.linalg.norm(e, axis=1)
    if np.any(norm == 0):
        raise ValueError("zero estimated subcarrier vector: beamformer undefined")
    # row s of H is h[s]^H and h_hat[s] = conj(row s of H_hat)
    return np.sum(t * e.conj(), axis=1) / norm


def simulate_ber(truth, estimate, lc: LinkSimConfig, rng: np.random.Generator, chunk: int = 1 << 18) -> np.ndarray:
    """Monte Carlo QPSK bit error rate per SNR point.

    Each subcarrier carries ``symbols_per_subcarrier`` Gray-mapped QPSK
    symbols through y = g x + n. The receiver knows the true effective gain
    g and hard-detects y / g.
    """
    g = effective_gains(truth, estimate)
    n_sym = lc.symbols_per_subcarrier
    out = np.empty(len(lc.snr_db))
    for i, snr_db in enumerate(lc.snr_db):
        sigma = math.sqrt(10 ** (-snr_db / 10) / 2)
        errors = 0
        for gs in g:
            for start in range(0, n_sym, chunk):
                m = min(chunk, n_sym - start)
                bits = rng.integers(0, 2, (2, m))
                x = _QPSK_SCALE * ((1 - 2 * bits[0]) + 1j * (1 - 2 * bits[1]))
                noise = sigma * (rng.standard_normal(m) + 1j * rng.standard_normal(m))
                y = gs * x + noise
                if gs == 0:
                    # no signal: decisions are coin flips on the noise alone
                    z = noise
                else:
                    z = y / gs
                errors += int(np.count_nonzero((z.real < 0) != bits[0].astype(bool)))
                errors += int(np.count_nonzero((z.imag < 0) != bits[1].astype(bool)))
        out[i] = errors / (2 * n_sym * len(g))
    return out


def ber_closed_form(truth, estimate, snr_db) -> np.ndarray:
    """Average of Q(sqrt(|g|^2 SNR)) over subcarriers for each SNR point."""
    g2 = np.abs(effective_gains(truth, estimate)) ** 2
    snr = 10 ** (np.asarray(snr_db, dtype=np.float64) / 10)
    return qpsk_ber_awgn(np.outer(snr, g2)).mean(axis=1)


def isolated_quantization_nmse(cfg: ScenarioConfig, params: np.ndarray, bits: int) -> dict[str, float]:
    """NMSE when only one parameter type is quantized with ``bits`` bits.

    ``params`` is (n, L, 4) ground truth (oracle estimation); the other three
    parameter types stay exact.
    """
    books = build_codebooks(cfg, BitAllocation.uniform(bits))
    q = quantize_params(params, books)
    truth = assemble_batch(cfg, params)
    out = {}
    for k, name in enumerate(("theta", "tau", "beta", "phi")):
        p = params.copy()
        p[..., k] = q[..., k]
        out[name] = nmse(truth, assemble_batch(cfg, p))
    return out


# --- scenario runs ---------------------------------------------------------------


@dataclass(frozen=True)
class PipelineSpec:
    estimator: str = "oracle"
    alloc_method: str = "closed"
    total_bits: tuple = (32, 64, 96, 128)
    n_samples: int = 16
    link: LinkSimConfig = field(default_factory=LinkSimConfig)
    checkpoint: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "total_bits", tuple(int(q) for q in self.total_bits))
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.estimator == "model" and not self.checkpoint:
            raise ValueError("the model estimator needs a checkpoint")
        if self.n_samples < 1 or not self.total_bits:
            raise ValueError("need at least one sample and one bit budget")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["total_bits"] = list(self.total_bits)
        d["link"]["snr_db"] = list(self.link.snr_db)
        return d


CSV_FIELDS = [
    "seed", "estimator", "alloc_method", "total_bits", "bits_theta", "bits_tau", "bits_beta", "bits_phi",
    "payload_bits", "speed_kmh", "snr_db", "nmse", "nmse_db", "cosine_similarity", "ber",
]  # fmt: skip


def config_hash(cfg: ScenarioConfig, spec: PipelineSpec) -> str:
    blob = json.dumps({"scenario": cfg.to_dict(), "pipeline": spec.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _reconstruct(cfg, spec, ds, alloc, model_state):
    """Estimated channels after the full feedback chain, and the payload size."""
    books = build_codebooks(cfg, alloc)
    if spec.estimator == "persistence":
        return ds.past[:, -1].copy(), 0
    if spec.estimator == "oracle":
        estimates = ds.targets
    else:
        from .estimator import model as m

        estimates = m.encode_batch(ds.past, model_state[0])
    recovered = []
    n_bits = 0
    for p in estimates:
        payload, _ = quantize_csi(ParametricCsi.from_matrix(np.clip(p, 0, cfg.param_max)), books)
        wire = encode_payload(payload)
        back = decode_payload(wire, alloc, cfg.n_paths)
        recovered.append(dequantize(back, books).matrix)
        n_bits = payload.n_bits
    p_hat = np.stack(recovered)
    if spec.estimator == "oracle":
        return assemble_batch(cfg, p_hat), n_bits
    from .estimator import model as m

    return m.to_complex(m.decode_batch(p_hat, model_state[1])), n_bits


def run_scenario(cfg: ScenarioConfig, spec: PipelineSpec, seeds, out_csv, manifest_path=None) -> list[dict]:
    """Run the chain for each seed and bit budget; one CSV row per (seed, Q, SNR)."""
    model_state = None
    if spec.estimator == "model":
        from .estimator.training import load_checkpoint

        enc, dec, _ = load_checkpoint(spec.checkpoint)
        model_state = (enc, dec)
    rows = []
    for seed in seeds:
        ds = generate_dataset(cfg, spec.n_samples, seed=seed)
        truth = ds.target_channels
        for qi, q in enumerate(spec.total_bits):
            alloc = allocate(cfg, q, spec.alloc_method)
            est, n_bits = _reconstruct(cfg, spec, ds, alloc, model_state)
            err = nmse(truth, est)
            rng = np.random.default_rng([seed, qi])
            if np.any(np.linalg.norm(est, axis=-1) == 0):
                # e.g. zero bits for beta: the beam direction does not exist
                rho, bers = math.nan, np.full(len(spec.link.snr_db), math.nan)
            else:
                rho = cosine_similarity(truth, est)
                bers = simulate_ber(truth, est, spec.link, rng)
            for snr, ber in zip(spec.link.snr_db, bers):
                rows.append(
                    {
                        "seed": seed,
                        "estimator": spec.estimator,
                        "alloc_method": spec.alloc_method,
                        "total_bits": q,
                        "bits_theta": alloc.bits_theta,
                        "bits_tau": alloc.bits_tau,
                        "bits_beta": alloc.bits_beta,
                        "bits_phi": alloc.bits_phi,
                        "payload_bits": n_bits,
                        "speed_kmh": repr(cfg.ue_speed_mps * 3.6),
                        "snr_db": repr(snr),
                        "nmse": repr(err),
                        "nmse_db": format_db(to_db(err)),
                        "cosine_similarity": repr(rho),
                        "ber": repr(float(ber)),
                    }
                )
    buf = io.StringIO()
    wr = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    buf.write("# snr_db: transmit symbol energy over noise variance per subcarrier, before beamforming gain\n")
    wr.writeheader()
    wr.writerows(rows)
    Path(out_csv).write_text(buf.getvalue())
    if manifest_path is not None:
        manifest = {
            "version": f"v{__version__}",
            "config_hash": config_hash(cfg, spec),
            "seeds": list(seeds),
            "scenario": cfg.to_dict(),
            "pipeline": spec.to_dict(),
            "rows": len(rows),
            "csv": str(out_csv),
        }
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return rows
