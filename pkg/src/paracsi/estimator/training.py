"""SGD training of the encoder/decoder pair, checkpoints and non-neural baselines."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..channel import ParametricCsi, ScenarioConfig
from ..quantizer import BitAllocation, build_codebooks, quantize_params
from . import model
from .model import DecoderParams, EncoderParams, ModelDims


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.002
    epochs: int = 200
    decay_period: int = 50
    decay_coef: float = 0.1
    seed: int = 0
    # optional global-norm clip per coder; None is plain SGD
    clip_norm: float | None = None
    # encoder rate = learning_rate * encoder_lr_scale; 1.0 keeps a single rate
    encoder_lr_scale: float = 1.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # zero is accepted as a frozen-weights run
        if not (math.isfinite(self.learning_rate) and self.learning_rate >= 0):
            raise ValueError("learning_rate must be finite and >= 0")
        if self.epochs < 0 or self.decay_period < 1:
            raise ValueError("epochs must be >= 0 and decay_period >= 1")
        if not 0 < self.decay_coef <= 1:
            raise ValueError("decay_coef must lie in (0, 1]")
        if not self.encoder_lr_scale >= 0:
            raise ValueError("encoder_lr_scale must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 0-based epoch index."""
        return self.learning_rate * self.decay_coef ** (epoch // self.decay_period)


@dataclass
class TrainHistory:
    encoder_loss: list = field(default_factory=list)
    decoder_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _sgd(params, grads, lr, clip):
    if clip is not None:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > clip:
            lr = lr * clip / norm
    for name, g in grads.items():
        t = getattr(params, name)
        t -= lr * g


def _check_finite(what, epoch, step, loss, grads):
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))] if grads else []
    if math.isfinite(loss) and not bad:
        return
    raise TrainingDiverged(f"{what} diverged at epoch {epoch}, step {step}: loss={loss!r}, non-finite grads in {bad}")


def train(
    dataset,
    enc: EncoderParams,
    dec: DecoderParams,
    tc: TrainConfig,
    cfg: ScenarioConfig,
    alloc: BitAllocation,
    log=None,
) -> tuple[EncoderParams, DecoderParams, TrainHistory]:
    """Train both coders; the inputs are not modified.

    Each step runs encoder -> quantize -> de-quantize -> decoder. The
    encoder is updated from the NMSE of the channel assembled from its
    output, the decoder from the NMSE of its reconstruction. No gradient
    crosses the quantizer. Epoch losses are sample-weighted means over the
    minibatches seen during that epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    enc, dec = enc.copy(), dec.copy()
    books = build_codebooks(cfg, alloc)
    past, target = dataset.past, dataset.target_channels
    rng = np.random.default_rng(tc.seed)
    hist = TrainHistory()
    for epoch in range(tc.epochs):
        lr = tc.lr_at(epoch)
        order = rng.permutation(n)
        tot_e = tot_d = 0.0
        for step, start in enumerate(range(0, n, tc.batch_size)):
            idx = np.sort(order[start : start + tc.batch_size])
            x, h = past[idx], target[idx]
            p_tilde, _, cache = model._encode(x, enc)
            le, gp = model.parametric_nmse(cfg, p_tilde, h)
            ge = model.encoder_backward(gp, enc, cache)
            _check_finite("encoder", epoch, step, le, ge)
            p_hat = quantize_params(p_tilde, books)
            ld, gd = model.decoder_loss(dec, p_hat, h)
            _check_finite("decoder", epoch, step, ld, gd)
            if lr > 0:
                _sgd(enc, {k: ge[k] for k in enc.trainable()}, lr * tc.encoder_lr_scale, tc.clip_norm)
                _sgd(dec, gd, lr, tc.clip_norm)
            tot_e += le * len(idx)
            tot_d += ld * len(idx)
        hist.encoder_loss.append(tot_e / n)
        hist.decoder_loss.append(tot_d / n)
        hist.learning_rate.append(lr)
        if log is not None:
            log(epoch, hist.encoder_loss[-1], hist.decoder_loss[-1], lr)
    return enc, dec, hist


def predict(seqs, enc: EncoderParams, dec: DecoderParams, cfg: ScenarioConfig, alloc: BitAllocation) -> np.ndarray:
    """End-to-end complex channel estimates (B, N_f, N_t) for (B, w, N_f, N_t) inputs."""
    p_hat = quantize_params(model.encode_batch(seqs, enc), build_codebooks(cfg, alloc))
    return model.to_complex(model.decode_batch(p_hat, dec))


# --- baselines ----------------------------------------------------------------


def oracle_estimator(target_csi) -> ParametricCsi:
    """Ground-truth parameters, so only quantization error remains downstream."""
    if isinstance(target_csi, ParametricCsi):
        return target_csi
    return ParametricCsi.from_matrix(target_csi)


def persistence_baseline(seq: np.ndarray) -> np.ndarray:
    """The last observed channel; works on (w, N_f, N_t) or batched (B, w, N_f, N_t)."""
    return np.array(np.asarray(seq)[..., -1, :, :])


# --- checkpoints ----------------------------------------------------------------

CHECKPOINT_MAGIC = b"CCKP1"
_LEN = struct.Struct("<I")


def save_checkpoint(path, enc: EncoderParams, dec: DecoderParams, extra: dict | None = None) -> None:
    """Magic, u32 header length, JSON header, then little-endian float64 tensors.

    Tensors follow the header's layer list: encoder first, each coder in
    declaration order.
    """
    if enc.dims != dec.dims:
        raise ValueError("encoder and decoder dims differ")
    layers = [
        {"coder": coder, "name": name, "shape": list(t.shape)}
        for coder, p in (("encoder", enc), ("decoder", dec))
        for name, t in p.tensors().items()
    ]
    header = json.dumps(
        {"format": 1, "dims": enc.dims.to_dict(), "layers": layers, "extra": extra or {}},
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(_LEN.pack(len(header)))
        fh.write(header)
        for p in (enc, dec):
            for t in p.tensors().values():
                fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, DecoderParams, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = _LEN.unpack_from(raw, off)
    off += _LEN.size
    header = json.loads(raw[off : off + hlen])
    off += hlen
    dims = ModelDims(**header["dims"])
    tensors = {"encoder": {}, "decoder": {}}
    for layer in header["layers"]:
        count = int(np.prod(layer["shape"], dtype=np.int64))
        if off + 8 * count > len(raw):
            raise ValueError(f"{path}: truncated at tensor {layer['coder']}.{layer['name']}")
        t = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(layer["shape"])
        tensors[layer["coder"]][layer["name"]] = t.astype(np.float64)
        off += 8 * count
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} unexpected trailing bytes")
    enc = EncoderParams(dims, tensors["encoder"])
    dec = DecoderParams(dims, tensors["decoder"])
    for p in (enc, dec):
        if not all(np.all(np.isfinite(t)) for t in p.tensors().values()):
            raise ValueError(f"{path}: non-finite weights")
    return enc, dec, header.get("extra", {})


def export_attention_csv(path, maps: np.ndarray) -> None:
    """Rows of (head, query_slot, key_slot, weight) for an (N_h, w, w) stack."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["head", "query_slot", "key_slot", "weight"])
        for k, a in enumerate(maps):
            for i, row in enumerate(a):
                for j, v in enumerate(row):
                    wr.writerow([k, i, j, repr(float(v))])
