"""Command-line entry point: ``paracsi <subcommand> ...``.

Every flag overrides the matching key of ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import METHODS, allocate, brute_force_allocation, count_combinations, distortion_terms, objective
from .channel import PARAM_NAMES, ScenarioConfig, read_dataset, write_dataset, generate_dataset
from .config import ConfigError, link_from, merge, read_config, scenario_from, train_from
from .quantizer import (
    BitAllocation,
    PayloadError,
    build_codebooks,
    decode_payload,
    dequantize,
    encode_payload,
    quantize_csi,
    wrapped_error,
)


def _emit(obj, out):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_scenario_flags(p):
    g = p.add_argument_group("scenario")
    g.add_argument("--config", help="key-value config file")
    g.add_argument("--n-tx", dest="n_tx", type=int)
    g.add_argument("--n-subcarriers", dest="n_subcarriers", type=int)
    g.add_argument("--n-paths", dest="n_paths", type=int)
    g.add_argument("--carrier-freq-hz", dest="carrier_freq_hz", type=float)
    g.add_argument("--bandwidth-hz", dest="bandwidth_hz", type=float)
    g.add_argument("--tau-max-s", dest="tau_max_s", type=float)
    g.add_argument("--beta-max", dest="beta_max", type=float)
    g.add_argument("--window-len", dest="window_len", type=int)
    g.add_argument("--slot-period-s", dest="slot_period_s", type=float)
    g.add_argument("--speed-kmh", dest="ue_speed_kmh", type=float)


_SCENARIO_KEYS = (
    "n_tx", "n_subcarriers", "n_paths", "carrier_freq_hz", "bandwidth_hz",
    "tau_max_s", "beta_max", "window_len", "slot_period_s", "ue_speed_kmh",
)  # fmt: skip


def _file_sections(args) -> dict:
    return read_config(args.config) if getattr(args, "config", None) else {}


def _scenario(args, sections) -> ScenarioConfig:
    values = sections.get("scenario", {})
    if "ue_speed_kmh" in {k for k in _SCENARIO_KEYS if getattr(args, k, None) is not None}:
        values = {k: v for k, v in values.items() if k != "ue_speed_mps"}
    return scenario_from(merge(values, {k: getattr(args, k, None) for k in _SCENARIO_KEYS}))


def _alloc_from_args(args, cfg) -> BitAllocation:
    explicit = [args.bits_theta, args.bits_tau, args.bits_beta, args.bits_phi]
    if any(b is not None for b in explicit):
        if any(b is None for b in explicit) or args.total_bits is not None:
            raise ConfigError("give all four --bits-* flags, or --total-bits alone")
        return BitAllocation.from_seq(explicit)
    if args.total_bits is None:
        raise ConfigError("need --total-bits or all four --bits-* flags")
    return allocate(cfg, args.total_bits, args.method)


def _add_alloc_flags(p, default_total=None):
    p.add_argument("--total-bits", type=int, default=default_total, help="bits per path")
    p.add_argument("--method", choices=METHODS, default="closed")
    for name in PARAM_NAMES:
        p.add_argument(f"--bits-{name}", type=int)


# --- subcommands -------------------------------------------------------------------


def cmd_generate(args):
    sections = _file_sections(args)
    cfg = _scenario(args, sections)
    ds = generate_dataset(cfg, args.n_samples, seed=args.seed)
    write_dataset(args.out, ds)
    _emit({"out": args.out, "samples": len(ds), "seed": args.seed, "scenario": cfg.to_dict()}, args.manifest)


def cmd_allocate(args):
    cfg = _scenario(args, _file_sections(args))
    alloc = allocate(cfg, args.total_bits, args.method)
    report = {
        "method": args.method,
        "total_bits": args.total_bits,
        "bits": dict(zip(PARAM_NAMES, alloc.as_tuple())),
        "objective": objective(cfg, alloc),
        "terms": dict(zip(PARAM_NAMES, distortion_terms(cfg, alloc).as_array().tolist())),
        "combinations": count_combinations(args.total_bits),
    }
    if args.compare_brute:
        bf = brute_force_allocation(cfg, args.total_bits)
        report["brute_force"] = {
            "bits": dict(zip(PARAM_NAMES, bf.alloc.as_tuple())),
            "objective": bf.objective,
            "candidates": bf.n_candidates,
            "gap": report["objective"] / bf.objective - 1,
        }
    _emit(report, args.out)


def cmd_quantize(args):
    cfg = _scenario(args, _file_sections(args))
    alloc = _alloc_from_args(args, cfg)
    books = build_codebooks(cfg, alloc)
    if args.decode:
        payload = decode_payload(Path(args.decode).read_bytes(), alloc, cfg.n_paths)
        csi = dequantize(payload, books)
        _emit({"bits": alloc.as_tuple(), "indices": payload.indices.tolist(), "params": csi.matrix.tolist()}, args.out)
        return
    if args.params:
        params = np.asarray(json.loads(Path(args.params).read_text()), dtype=np.float64)
    elif args.dataset:
        params = read_dataset(args.dataset).targets[args.index]
    else:
        raise ConfigError("need --params, --dataset or --decode")
    from .channel import ParametricCsi

    payload, deq = quantize_csi(ParametricCsi.from_matrix(params), books)
    wire = encode_payload(payload)
    if args.payload:
        Path(args.payload).write_bytes(wire)
    _emit(
        {
            "bits": dict(zip(PARAM_NAMES, alloc.as_tuple())),
            "payload_bits": payload.n_bits,
            "payload_hex": wire.hex(),
            "indices": payload.indices.tolist(),
            "dequantized": deq.matrix.tolist(),
            "error": wrapped_error(params, deq.matrix).tolist(),
        },
        args.out,
    )


def cmd_verify(args):
    from . import perturbation as pt

    cfg = _scenario(args, _file_sections(args))
    rng = np.random.default_rng(args.seed)
    report = {"version": f"v{__version__}", "scenario": cfg.to_dict(), "seed": args.seed}
    if "jacobian" in args.checks:
        report["jacobian"] = pt.jacobian_report(cfg, args.instances, rng)
    if "theorem" in args.checks:
        report["theorem"] = pt.theorem_report(cfg, args.samples, rng, mode=args.mode)
    if "allocation" in args.checks:
        rows = []
        for q in args.alloc_bits:
            bf = brute_force_allocation(cfg, q)
            cf = allocate(cfg, q, "closed")
            rows.append(
                {
                    "total_bits": q,
                    "candidates": bf.n_candidates,
                    "brute_force": bf.alloc.as_tuple(),
                    "closed_form": cf.as_tuple(),
                    "objective_ratio": objective(cfg, cf) / bf.objective,
                }
            )
        report["allocation"] = rows
    _emit(report, args.out)


def cmd_train(args):
    from .estimator import model, training

    sections = _file_sections(args)
    cfg = _scenario(args, sections)
    tc = train_from(
        merge(
            sections.get("train", {}),
            {
                "epochs": args.epochs,
                "seed": args.seed,
                "learning_rate": args.lr,
                "batch_size": args.batch_size,
                "decay_period": args.decay_period,
                "decay_coef": args.decay_coef,
                "clip_norm": args.clip_norm,
            },
        )
    )
    ds = read_dataset(args.dataset)
    _check_dims(cfg, ds)
    mvals = merge(sections.get("model", {}), {"d_model": args.d_model, "n_heads": args.n_heads})
    dims = model.ModelDims.for_scenario(cfg, **mvals)
    init_rng = np.random.default_rng(tc.seed)
    enc = model.EncoderParams.init(dims, init_rng)
    dec = model.DecoderParams.init(dims, init_rng)
    alloc = _alloc_from_args(args, cfg)

    def log(epoch, le, ld, lr):
        if args.verbose:
            print(f"epoch {epoch + 1}: encoder {le:.6g} decoder {ld:.6g} lr {lr:.3g}", file=sys.stderr)

    enc, dec, hist = training.train(ds, enc, dec, tc, cfg, alloc, log=log)
    extra = {"scenario": cfg.to_dict(), "alloc": alloc.as_tuple(), "train": tc.__dict__}
    training.save_checkpoint(args.checkpoint, enc, dec, extra)
    if args.history:
        with open(args.history, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epoch", "encoder_loss", "decoder_loss", "learning_rate"])
            for i, row in enumerate(zip(hist.encoder_loss, hist.decoder_loss, hist.learning_rate)):
                wr.writerow([i + 1, *(repr(float(v)) for v in row)])
    _emit({"checkpoint": args.checkpoint, "final_encoder_loss": hist.encoder_loss[-1] if hist.encoder_loss else None,
           "final_decoder_loss": hist.decoder_loss[-1] if hist.decoder_loss else None}, args.out)  # fmt: skip


def _check_dims(cfg, ds):
    _, w1, nf, nt = ds.channels.shape
    got = (nf, nt, w1 - 1, ds.targets.shape[1])
    want = (cfg.n_subcarriers, cfg.n_tx, cfg.window_len, cfg.n_paths)
    if got != want:
        raise ConfigError(f"dataset dims (N_f, N_t, w, L)={got} do not match the scenario {want}")


def cmd_eval(args):
    from .estimator import model, training
    from .metrics import cosine_similarity, format_db, nmse, to_db

    enc, dec, extra = training.load_checkpoint(args.checkpoint)
    sc = dict(extra.get("scenario", {}))
    cfg = ScenarioConfig(**sc) if sc else _scenario(args, _file_sections(args))
    alloc = BitAllocation.from_seq(extra["alloc"]) if "alloc" in extra else _alloc_from_args(args, cfg)
    ds = read_dataset(args.dataset)
    _check_dims(cfg, ds)
    truth = ds.target_channels
    est = training.predict(ds.past, enc, dec, cfg, alloc)
    pers = training.persistence_baseline(ds.past)
    p_tilde = model.encode_batch(ds.past, enc)
    report = {
        "samples": len(ds),
        "bits": dict(zip(PARAM_NAMES, alloc.as_tuple())),
        "nmse_db": format_db(to_db(nmse(truth, est))),
        "cosine_similarity": cosine_similarity(truth, est),
        "persistence_nmse_db": format_db(to_db(nmse(truth, pers))),
        "encoder_parametric_nmse": model.parametric_nmse(cfg, p_tilde, truth, with_grad=False)[0],
    }
    if args.attention_csv:
        training.export_attention_csv(args.attention_csv, model.attention_maps(ds.past[args.index], enc))
    _emit(report, args.out)


def cmd_simulate(args):
    from .harness import PipelineSpec, run_scenario

    sections = _file_sections(args)
    cfg = _scenario(args, sections)
    link = link_from(merge(sections.get("link", {}), {"snr_db": args.snr_db, "symbols_per_subcarrier": args.symbols}))
    pvals = merge(
        sections.get("pipeline", {}),
        {
            "estimator": args.estimator,
            "alloc_method": args.method,
            "total_bits": args.total_bits,
            "n_samples": args.n_samples,
            "checkpoint": args.checkpoint,
        },
    )
    seeds = args.seeds if args.seeds is not None else pvals.get("seeds", [0])
    pvals.pop("seeds", None)
    seeds = [int(s) for s in np.atleast_1d(seeds)]
    if "total_bits" in pvals:
        pvals["total_bits"] = tuple(np.atleast_1d(pvals["total_bits"]))
    try:
        spec = PipelineSpec(link=link, **pvals)
    except TypeError as exc:
        raise ConfigError(f"invalid [pipeline] settings: {exc}") from exc
    rows = run_scenario(cfg, spec, seeds, args.out, args.manifest)
    print(f"wrote {len(rows)} rows to {args.out}", file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paracsi", description=__doc__)
    ap.add_argument("--version", action="version", version=f"paracsi {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a CCSI1 dataset of channel sequences")
    _add_scenario_flags(p)
    p.add_argument("--n-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", help="JSON summary path (default stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("allocate", help="split per-path feedback bits across parameters")
    _add_scenario_flags(p)
    p.add_argument("--total-bits", type=int, required=True)
    p.add_argument("--method", choices=METHODS, default="closed")
    p.add_argument("--compare-brute", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("quantize", help="quantize parametric CSI into a payload, or decode one")
    _add_scenario_flags(p)
    _add_alloc_flags(p)
    p.add_argument("--params", help="JSON file with an L x 4 matrix")
    p.add_argument("--dataset")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--payload", help="write the packed payload here")
    p.add_argument("--decode", help="decode this payload file instead")
    p.add_argument("--out")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("verify", help="numerical verification reports (JSON)")
    _add_scenario_flags(p)
    p.add_argument("--checks", nargs="+", choices=("jacobian", "theorem", "allocation"),
                   default=["jacobian", "theorem", "allocation"])  # fmt: skip
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--mode", choices=("linearized", "exact"), default="linearized")
    p.add_argument("--alloc-bits", type=int, nargs="+", default=[16, 20, 24])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train the encoder/decoder on a dataset")
    _add_scenario_flags(p)
    _add_alloc_flags(p, default_total=None)
    p.add_argument("--dataset", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--decay-period", type=int)
    p.add_argument("--decay-coef", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--d-model", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", help="per-epoch loss CSV")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_scenario_flags(p)
    _add_alloc_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--attention-csv", help="export attention maps of one sample")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run a scenario and write CSV metrics plus a JSON manifest")
    _add_scenario_flags(p)
    p.add_argument("--estimator", choices=("oracle", "persistence", "model"))
    p.add_argument("--checkpoint")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--total-bits", type=int, nargs="+")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--snr-db", type=float, nargs="+")
    p.add_argument("--symbols", type=int, help="QPSK symbols per subcarrier")
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ConfigError, PayloadError, ValueError, OSError) as exc:
        print(f"paracsi {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
