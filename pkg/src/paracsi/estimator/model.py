"""Attention encoder (channel history -> parametric CSI) and decoder
(quantized parametric CSI -> channel matrix)."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from ..channel import AOD, DELAY, GAIN, PHASE, ParametricCsi, ScenarioConfig
from . import nn


@dataclass(frozen=True)
class ModelDims:
    n_tx: int
    n_subcarriers: int
    n_paths: int
    window_len: int
    d_model: int = 64
    n_heads: int = 4
    n_delay_keep: int = 16
    hidden_mult: int = 4
    positional: bool = True
    eps: float = 1e-5
    param_max: tuple = (2 * math.pi, 100e-9, 1.0, 2 * math.pi)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.n_delay_keep > self.n_subcarriers:
            raise ValueError("cannot keep more delay rows than there are subcarriers")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        object.__setattr__(self, "param_max", tuple(float(v) for v in self.param_max))

    @classmethod
    def for_scenario(cls, cfg: ScenarioConfig, **kw) -> ModelDims:
        kw.setdefault("n_delay_keep", min(kw.get("n_delay_keep", 16), cfg.n_subcarriers))
        return cls(
            n_tx=cfg.n_tx,
            n_subcarriers=cfg.n_subcarriers,
            n_paths=cfg.n_paths,
            window_len=cfg.window_len,
            param_max=tuple(cfg.param_max),
            **kw,
        )

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def n_features(self) -> int:
        return 2 * self.n_delay_keep * self.n_tx

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["param_max"] = list(d["param_max"])
        return d


class _Params:
    """Named float64 tensors in a fixed declaration order."""

    names: tuple[str, ...] = ()

    def __init__(self, dims: ModelDims, tensors: dict):
        self.dims = dims
        missing = set(self.names) - set(tensors)
        if missing:
            raise ValueError(f"missing tensors: {sorted(missing)}")
        for n in self.names:
            setattr(self, n, np.array(tensors[n], dtype=np.float64))

    def tensors(self) -> dict:
        return {n: getattr(self, n) for n in self.names}

    def trainable(self) -> tuple[str, ...]:
        return self.names

    def copy(self):
        return type(self)(self.dims, {n: t.copy() for n, t in self.tensors().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors().values()])

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.dims == other.dims
            and all(np.array_equal(a, b) for a, b in zip(self.tensors().values(), other.tensors().values()))
        )

    __hash__ = None


def _glorot(rng, fan_in, shape):
    return rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape)


class EncoderParams(_Params):
    names = (
        "w_in1", "b_in1", "w_in2", "b_in2", "pos",
        "w_q", "w_k", "w_v",
        "ln_scale", "ln_shift",
        "w_out", "b_out",
    )  # fmt: skip

    @classmethod
    def init(cls, dims: ModelDims, rng: np.random.Generator) -> EncoderParams:
        d, h, dk, hid = dims.d_model, dims.n_heads, dims.head_dim, dims.hidden_mult * dims.d_model
        f, w, L = dims.n_features, dims.window_len, dims.n_paths
        return cls(
            dims,
            {
                "w_in1": _glorot(rng, f, (f, hid)),
                "b_in1": np.zeros(hid),
                "w_in2": _glorot(rng, hid, (hid, d)),
                "b_in2": np.zeros(d),
                "pos": rng.normal(0.0, 0.1, (w, d)) if dims.positional else np.zeros((w, d)),
                "w_q": _glorot(rng, d, (h, d, dk)),
                "w_k": _glorot(rng, d, (h, d, dk)),
                "w_v": _glorot(rng, d, (h, d, dk)),
                "ln_scale": np.ones(d),
                "ln_shift": np.zeros(d),
                "w_out": _glorot(rng, w * d, (w * d, 4 * L)),
                "b_out": np.zeros(4 * L),
            },
        )

    def trainable(self):
        return self.names if self.dims.positional else tuple(n for n in self.names if n != "pos")


class DecoderParams(_Params):
    names = (
        "w_tok", "b_tok",
        "w_q", "w_k", "w_v",
        "ln_scale", "ln_shift",
        "w_exp", "b_exp",
        "conv_w", "conv_b",
    )  # fmt: skip

    @classmethod
    def init(cls, dims: ModelDims, rng: np.random.Generator, kernel: int = 3) -> DecoderParams:
        if kernel % 2 == 0:
            raise ValueError("convolution kernel size must be odd")
        d, h, dk, L = dims.d_model, dims.n_heads, dims.head_dim, dims.n_paths
        n_out = 2 * dims.n_subcarriers * dims.n_tx
        conv = _glorot(rng, 2 * kernel * kernel, (2, 2, kernel, kernel)) * 0.5
        conv[0, 0, kernel // 2, kernel // 2] += 1.0
        conv[1, 1, kernel // 2, kernel // 2] += 1.0
        return cls(
            dims,
            {
                "w_tok": _glorot(rng, 4, (4, d)),
                "b_tok": rng.normal(0.0, 0.1, d),
                "w_q": _glorot(rng, d, (h, d, dk)),
                "w_k": _glorot(rng, d, (h, d, dk)),
                "w_v": _glorot(rng, d, (h, d, dk)),
                "ln_scale": np.ones(d),
                "ln_shift": np.zeros(d),
                "w_exp": _glorot(rng, L * d, (L * d, n_out)),
                "b_exp": np.zeros(n_out),
                "conv_w": conv,
                "conv_b": np.zeros(2),
            },
        )


# --- encoder ------------------------------------------------------------------


def angle_delay_features(seq: np.ndarray, n_keep: int) -> np.ndarray:
    """Stack real and imaginary parts of the truncated angle-delay map.

    seq: (..., w, N_f, N_t) complex. The 2D DFT runs over (subcarrier,
    antenna); only the first ``n_keep`` delay rows survive. Scaled by
    1/sqrt(N_f N_t) so a unit-gain path has O(1) features.
    """
    nf, nt = seq.shape[-2:]
    if n_keep > nf:
        raise ValueError(f"cannot keep {n_keep} delay rows out of {nf}")
    ad = np.fft.fft2(seq, norm="ortho")[..., :n_keep, :] / math.sqrt(nf * nt)
    flat = ad.reshape(*ad.shape[:-2], -1)
    return np.concatenate([flat.real, flat.imag], axis=-1)


def _batch(seq):
    seq = np.asarray(seq)
    return (seq[None], True) if seq.ndim == 3 else (seq, False)


def input_embedding(seq: np.ndarray, params: EncoderParams):
    """S_embed, shape (w, d_model) for one sequence or (B, w, d_model) for a batch."""
    x, single = _batch(seq)
    s, _ = _embed(x, params)
    return s[0] if single else s


def _embed(x, params):
    feats = angle_delay_features(x, params.dims.n_delay_keep)
    h1, c1 = nn.linear_forward(feats, params.w_in1, params.b_in1)
    a1 = nn.leaky_relu(h1)
    s, c2 = nn.linear_forward(a1, params.w_in2, params.b_in2)
    return s + params.pos, (c1, h1, c2)


def multi_head_self_attention(s: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
    """Z (…, T, d_model) and attention maps (…, N_h, T, T) for S of shape (T, d) or (B, T, d)."""
    single = s.ndim == 2
    z, a, _ = nn.attention_forward(s[None] if single else s, params.w_q, params.w_k, params.w_v)
    return (z[0], a[0]) if single else (z, a)


def layer_norm(z, scale, shift, eps):
    return nn.layer_norm_forward(z, scale, shift, eps)[0]


def _encode(x, params):
    dims = params.dims
    s, emb_cache = _embed(x, params)
    z, att, att_cache = nn.attention_forward(s, params.w_q, params.w_k, params.w_v)
    zt, ln_cache = nn.layer_norm_forward(z, params.ln_scale, params.ln_shift, dims.eps)
    flat = zt.reshape(zt.shape[0], -1)
    o, out_cache = nn.linear_forward(flat, params.w_out, params.b_out)
    sig = nn.sigmoid(o).reshape(-1, dims.n_paths, 4)
    p = sig * np.asarray(dims.param_max)
    cache = (emb_cache, att_cache, ln_cache, out_cache, sig, zt.shape)
    return p, att, cache


def encode_batch(seqs: np.ndarray, params: EncoderParams) -> np.ndarray:
    """(B, w, N_f, N_t) -> (B, L, 4) parametric estimates."""
    return _encode(np.asarray(seqs), params)[0]


def encoder_forward(seq: np.ndarray, params: EncoderParams) -> ParametricCsi:
    p = _encode(np.asarray(seq)[None], params)[0][0]
    # sigmoid saturation can round an angle up to exactly 2*pi
    p[:, [AOD, PHASE]] = np.mod(p[:, [AOD, PHASE]], 2 * math.pi)
    return ParametricCsi.from_matrix(p)


def attention_maps(seq: np.ndarray, params: EncoderParams) -> np.ndarray:
    """(N_h, w, w) attention maps of the encoder for one sequence."""
    return _encode(np.asarray(seq)[None], params)[1][0]


def encoder_backward(grad_p: np.ndarray, params: EncoderParams, cache) -> dict:
    dims = params.dims
    emb_cache, att_cache, ln_cache, out_cache, sig, zshape = cache
    c1, h1, c2 = emb_cache
    go = (grad_p * np.asarray(dims.param_max) * sig * (1 - sig)).reshape(grad_p.shape[0], -1)
    gflat, g_w_out, g_b_out = nn.linear_backward(go, out_cache, params.w_out)
    gz, g_scale, g_shift = nn.layer_norm_backward(gflat.reshape(zshape), ln_cache, params.ln_scale)
    gs, (g_q, g_k, g_v) = nn.attention_backward(gz, att_cache, params.w_q, params.w_k, params.w_v)
    g_pos = gs.sum(axis=0)
    ga1, g_w2, g_b2 = nn.linear_backward(gs, c2, params.w_in2)
    gh1 = nn.leaky_relu_backward(ga1, h1)
    _, g_w1, g_b1 = nn.linear_backward(gh1, c1, params.w_in1)
    grads = {
        "w_in1": g_w1, "b_in1": g_b1, "w_in2": g_w2, "b_in2": g_b2, "pos": g_pos,
        "w_q": g_q, "w_k": g_k, "w_v": g_v,
        "ln_scale": g_scale, "ln_shift": g_shift,
        "w_out": g_w_out, "b_out": g_b_out,
    }  # fmt: skip
    if not dims.positional:
        del grads["pos"]
    return grads


def parametric_nmse(cfg: ScenarioConfig, p: np.ndarray, h_true: np.ndarray, with_grad: bool = True):
    """Batch-mean NMSE of the channels assembled from ``p`` (B, L, 4) and its gradient in ``p``."""
    n = np.arange(cfg.n_tx, dtype=np.float64)
    f = cfg.frequencies
    kd = cfg.phase_constant
    theta, tau, beta, phi = p[..., AOD], p[..., DELAY], p[..., GAIN], p[..., PHASE]
    a_f = np.exp(2j * math.pi * f[None, :, None] * tau[:, None, :])
    ct = np.exp(1j * kd * n[None, :, None] * np.sin(theta)[:, None, :])
    g = beta * np.exp(-1j * phi)
    h = np.einsum("bfl,bl,btl->bft", a_f, g, ct)
    err = h - h_true
    energy = np.sum(np.abs(h_true) ** 2, axis=(1, 2))
    per = np.sum(err.real**2 + err.imag**2, axis=(1, 2)) / energy
    loss = float(per.mean())
    if not with_grad:
        return loss, None
    ec = err.conj()
    m = np.einsum("bft,bfl,btl->bl", ec, a_f, ct)
    m_tau = np.einsum("bft,bfl,btl->bl", ec, a_f * (2j * math.pi * f)[None, :, None], ct)
    m_theta = np.einsum("bft,bfl,btl->bl", ec, a_f, ct * n[None, :, None])
    scale = 2.0 / (energy[:, None] * p.shape[0])
    grad = np.empty_like(p)
    grad[..., GAIN] = np.real(m * np.exp(-1j * phi)) * scale
    grad[..., PHASE] = np.real(-1j * g * m) * scale
    grad[..., DELAY] = np.real(g * m_tau) * scale
    grad[..., AOD] = np.real(g * 1j * kd * np.cos(theta) * m_theta) * scale
    return loss, grad


def encoder_loss(cfg: ScenarioConfig, params: EncoderParams, seqs, h_true, with_grad=True):
    """L(delta): NMSE between the channel assembled from the estimate and the true one."""
    p, _, cache = _encode(np.asarray(seqs), params)
    loss, gp = parametric_nmse(cfg, p, h_true, with_grad)
    if not with_grad:
        return loss, None
    return loss, encoder_backward(gp, params, cache)


# --- decoder ------------------------------------------------------------------


def _decode(p_hat, params):
    dims = params.dims
    tokens = np.asarray(p_hat) / np.asarray(dims.param_max)
    e, tok_cache = nn.linear_forward(tokens, params.w_tok, params.b_tok)
    z, att, att_cache = nn.attention_forward(e, params.w_q, params.w_k, params.w_v)
    zt, ln_cache = nn.layer_norm_forward(z, params.ln_scale, params.ln_shift, dims.eps)
    flat = zt.reshape(zt.shape[0], -1)
    u, exp_cache = nn.linear_forward(flat, params.w_exp, params.b_exp)
    u = u.reshape(-1, 2, dims.n_subcarriers, dims.n_tx)
    a = nn.leaky_relu(u)
    out, conv_cache = nn.conv2d_forward(a, params.conv_w, params.conv_b)
    return out, (tok_cache, att_cache, ln_cache, exp_cache, u, conv_cache, zt.shape)


def decode_batch(p_hat: np.ndarray, params: DecoderParams) -> np.ndarray:
    """(B, L, 4) -> (B, 2, N_f, N_t) real/imaginary channel estimates."""
    return _decode(p_hat, params)[0]


def decoder_forward(p_hat, params: DecoderParams) -> np.ndarray:
    """One reconstruction as a (2, N_f, N_t) real tensor (real, imaginary)."""
    p = p_hat.matrix if isinstance(p_hat, ParametricCsi) else np.asarray(p_hat)
    return _decode(p[None], params)[0][0]


def to_complex(h_ri: np.ndarray) -> np.ndarray:
    return h_ri[..., 0, :, :] + 1j * h_ri[..., 1, :, :]


def to_real_imag(h: np.ndarray) -> np.ndarray:
    return np.stack([h.real, h.imag], axis=-3)


def decoder_backward(grad_out, params: DecoderParams, cache) -> dict:
    tok_cache, att_cache, ln_cache, exp_cache, u, conv_cache, zshape = cache
    ga, g_conv_w, g_conv_b = nn.conv2d_backward(grad_out, conv_cache, params.conv_w)
    gu = nn.leaky_relu_backward(ga, u).reshape(u.shape[0], -1)
    gflat, g_w_exp, g_b_exp = nn.linear_backward(gu, exp_cache, params.w_exp)
    gz, g_scale, g_shift = nn.layer_norm_backward(gflat.reshape(zshape), ln_cache, params.ln_scale)
    ge, (g_q, g_k, g_v) = nn.attention_backward(gz, att_cache, params.w_q, params.w_k, params.w_v)
    _, g_w_tok, g_b_tok = nn.linear_backward(ge, tok_cache, params.w_tok)
    return {
        "w_tok": g_w_tok, "b_tok": g_b_tok,
        "w_q": g_q, "w_k": g_k, "w_v": g_v,
        "ln_scale": g_scale, "ln_shift": g_shift,
        "w_exp": g_w_exp, "b_exp": g_b_exp,
        "conv_w": g_conv_w, "conv_b": g_conv_b,
    }  # fmt: skip


def decoder_loss(params: DecoderParams, p_hat, h_true, with_grad=True):
    """L(gamma): batch-mean NMSE of the decoder output against the true channels."""
    out, cache = _decode(p_hat, params)
    target = to_real_imag(h_true)
    err = out - target
    energy = np.sum(target**2, axis=(1, 2, 3))
    loss = float(np.mean(np.sum(err**2, axis=(1, 2, 3)) / energy))
    if not with_grad:
        return loss, None
    g = 2.0 * err / (energy[:, None, None, None] * out.shape[0])
    return loss, decoder_backward(g, params, cache)
