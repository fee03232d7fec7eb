"""Sign2(LID+Text) network.

Feature projection, a transformer encoder whose layer-n_int output feeds a
sign-language-ID CTC head while the final layer feeds a text CTC head, an
attention decoder, and the jointly weighted training objective

    total = lambda1 * lid_ctc + lambda2 * txt_ctc + lambda3 * attn_ce.

Parameters are a flat dict of named float64 arrays; gradients come from the
tape in autodiff.py with the CTC terms spliced in analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import ctc
from .data import BLANK_ID, PAD_ID
from .errors import ModelDivergenceError, UsageError
from .numerics import Rng, xavier_init

MASK_NEG = -1.0e9


@dataclass
class ModelConfig:
    feature_dim: int
    text_vocab_size: int
    lid_vocab_size: int = 0  # LID head width including its blank at index 0
    d_model: int = 256
    ff_dim: int = 2048
    enc_layers: int = 6
    dec_layers: int = 6
    n_heads: int = 8
    n_int: int = 1  # 1-based encoder layer whose output feeds the LID head
    dropout: float = 0.1
    label_smoothing: float = 0.1
    downsample_stride: int = 1
    lambda1: float = 1.0
    lambda2: float = 5.0
    lambda3: float = 3.0
    lid_head: bool = True
    xavier: str = "uniform"

    def validate(self):
        if self.feature_dim < 1:
            raise UsageError("feature_dim must be positive")
        if self.d_model % self.n_heads != 0:
            raise UsageError("d_model must be divisible by n_heads")
        if not 1 <= self.n_int < self.enc_layers:
            raise UsageError("need 1 <= n_int < enc_layers")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise UsageError("loss weights must be nonnegative")
        if self.downsample_stride < 1:
            raise UsageError("downsample_stride must be >= 1")
        if self.lid_head and self.lid_vocab_size < 2:
            raise UsageError("lid_vocab_size must cover blank plus >=1 tag")
        if self.text_vocab_size <= BLANK_ID:
            raise UsageError("text vocabulary too small for the reserved ids")
        return self


@dataclass
class EncoderOutput:
    """Single-sample encoder products; log posteriors row-normalize."""

    h_int: np.ndarray  # (frames', d_model) output of layer n_int
    lid_log_post: Optional[np.ndarray]  # (frames', lid_vocab) or None
    h_fin: np.ndarray  # (frames', d_model)
    txt_log_post: np.ndarray  # (frames', text_vocab)


@dataclass
class LossBreakdown:
    l_lid: float
    l_txt: float
    l_attn: float
    l_total: float


@dataclass
class LabeledSample:
    """One training item: features plus the three targets from make_labels."""

    features: np.ndarray  # (frames, feature_dim)
    attn_target: list  # [<bos>, (tag,) text..., <eos>] token ids
    txt_target: list  # attn_target without <bos>/<eos>
    lid_target: Optional[list]  # compact LID ids, or None when LID is off


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


def _attention_shapes(prefix, d):
    out = {}
    for part in ("wq", "wk", "wv", "wo"):
        out[f"{prefix}/{part}"] = (d, d)
    for part in ("bq", "bk", "bv", "bo"):
        out[f"{prefix}/{part}"] = (d,)
    return out


def param_shapes(cfg: ModelConfig):
    """Ordered name -> shape map; the single source of truth for ModelParams."""
    d, ff, v = cfg.d_model, cfg.ff_dim, cfg.text_vocab_size
    shapes = {"proj/w": (cfg.feature_dim, d), "proj/b": (d,)}
    for i in range(cfg.enc_layers):
        shapes[f"enc/{i}/ln1/g"] = (d,)
        shapes[f"enc/{i}/ln1/b"] = (d,)
        shapes.update(_attention_shapes(f"enc/{i}/att", d))
        shapes[f"enc/{i}/ln2/g"] = (d,)
        shapes[f"enc/{i}/ln2/b"] = (d,)
        shapes[f"enc/{i}/ff/w1"] = (d, ff)
        shapes[f"enc/{i}/ff/b1"] = (ff,)
        shapes[f"enc/{i}/ff/w2"] = (ff, d)
        shapes[f"enc/{i}/ff/b2"] = (d,)
    shapes["enc/ln_out/g"] = (d,)
    shapes["enc/ln_out/b"] = (d,)
    if cfg.lid_head:
        shapes["lid/ln/g"] = (d,)
        shapes["lid/ln/b"] = (d,)
        shapes["lid/w"] = (d, cfg.lid_vocab_size)
        shapes["lid/b"] = (cfg.lid_vocab_size,)
    shapes["txt/w"] = (d, v)
    shapes["txt/b"] = (v,)
    shapes["dec/emb"] = (v, d)
    for i in range(cfg.dec_layers):
        shapes[f"dec/{i}/ln1/g"] = (d,)
        shapes[f"dec/{i}/ln1/b"] = (d,)
        shapes.update(_attention_shapes(f"dec/{i}/self", d))
        shapes[f"dec/{i}/ln2/g"] = (d,)
        shapes[f"dec/{i}/ln2/b"] = (d,)
        shapes.update(_attention_shapes(f"dec/{i}/cross", d))
        shapes[f"dec/{i}/ln3/g"] = (d,)
        shapes[f"dec/{i}/ln3/b"] = (d,)
        shapes[f"dec/{i}/ff/w1"] = (d, ff)
        shapes[f"dec/{i}/ff/b1"] = (ff,)
        shapes[f"dec/{i}/ff/w2"] = (ff, d)
        shapes[f"dec/{i}/ff/b2"] = (d,)
    shapes["dec/ln_out/g"] = (d,)
    shapes["dec/ln_out/b"] = (d,)
    return shapes


def init_params(cfg: ModelConfig, rng: Rng):
    """Xavier weights, zero biases, unit layer-norm gains.

    Each tensor draws from its own named stream, so adding or removing other
    tensors (e.g. the LID head) never shifts anyone else's initialization.
    """
    cfg.validate()
    params = {}
    for name, shape in param_shapes(cfg).items():
        if len(shape) == 2:
            params[name] = xavier_init(shape, rng.derive("init", name), cfg.xavier)
        elif name.endswith("/g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


def count_params(cfg: ModelConfig) -> int:
    return sum(int(np.prod(s)) for s in param_shapes(cfg).values())


def sinusoid_table(length, d_model):
    """Fixed sinusoidal positional encodings, (length, d_model)."""
    pos = np.arange(length)[:, None]
    dim = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d_model)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float64)


# ---------------------------------------------------------------------------
# Forward graph
# ---------------------------------------------------------------------------


class _Dropout:
    """Sequential dropout masks from one derived stream; inactive without rng."""

    def __init__(self, rate, training, rng):
        self.rate = float(rate)
        self.active = training and rng is not None and self.rate > 0.0
        self.rng = rng

    def __call__(self, x):
        if not self.active:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.value.shape) < keep) / keep
        return ad.mul(x, mask)


def _vars(params):
    return {k: ad.leaf(v) for k, v in params.items()}


def _linear(x, pv, name):
    return ad.add(ad.matmul(x, pv[f"{name}/w"]), pv[f"{name}/b"])


def _mha(pv, prefix, q_in, kv_in, bias, n_heads, drop):
    """Multi-head attention; bias is an additive mask broadcast to (B,H,Tq,Tk)."""
    B, Tq, d = q_in.value.shape
    Tk = kv_in.value.shape[1]
    hd = d // n_heads

    def split(x, T):
        x = ad.reshape(x, (B, T, n_heads, hd))
        return ad.transpose(x, (0, 2, 1, 3))

    q = split(ad.add(ad.matmul(q_in, pv[f"{prefix}/wq"]), pv[f"{prefix}/bq"]), Tq)
    k = split(ad.add(ad.matmul(kv_in, pv[f"{prefix}/wk"]), pv[f"{prefix}/bk"]), Tk)
    v = split(ad.add(ad.matmul(kv_in, pv[f"{prefix}/wv"]), pv[f"{prefix}/bv"]), Tk)
    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
    if bias is not None:
        scores = ad.add(scores, bias)
    att = drop(ad.softmax(scores))
    out = ad.transpose(ad.matmul(att, v), (0, 2, 1, 3))
    out = ad.reshape(out, (B, Tq, d))
    return ad.add(ad.matmul(out, pv[f"{prefix}/wo"]), pv[f"{prefix}/bo"])


def _ffn(pv, prefix, x, drop):
    h = ad.relu(ad.add(ad.matmul(x, pv[f"{prefix}/w1"]), pv[f"{prefix}/b1"]))
    return ad.add(ad.matmul(h, pv[f"{prefix}/w2"]), pv[f"{prefix}/b2"])


def _ln(pv, prefix, x):
    return ad.layer_norm(x, pv[f"{prefix}/g"], pv[f"{prefix}/b"])


def downsampled_length(frames, stride):
    return -(-int(frames) // int(stride))  # ceil division


def _embed_batch(pv, cfg, feats, drop):
    """feats: (B, T', feature_dim) already strided; project + add positions."""
    B, T, _ = feats.shape
    h = ad.add(ad.matmul(ad.const(feats), pv["proj/w"]), pv["proj/b"])
    h = ad.add(h, sinusoid_table(T, cfg.d_model)[None, :, :])
    return drop(h)


def _encode_batch(pv, cfg, h, key_bias, drop):
    """Run the encoder stack; returns (h_int, h_fin, lid_lp, txt_lp) Vars."""
    h_int = None
    for i in range(cfg.enc_layers):
        a_in = _ln(pv, f"enc/{i}/ln1", h)
        a = _mha(pv, f"enc/{i}/att", a_in, a_in, key_bias, cfg.n_heads, drop)
        h = ad.add(h, drop(a))
        f = _ffn(pv, f"enc/{i}/ff", _ln(pv, f"enc/{i}/ln2", h), drop)
        h = ad.add(h, drop(f))
        if i + 1 == cfg.n_int:
            h_int = h
    h_fin = _ln(pv, "enc/ln_out", h)
    lid_lp = None
    if cfg.lid_head:
        lid_lp = ad.log_softmax(_linear(_ln(pv, "lid/ln", h_int), pv, "lid"))
    txt_lp = ad.log_softmax(_linear(h_fin, pv, "txt"))
    return h_int, h_fin, lid_lp, txt_lp


def _decode_batch(pv, cfg, h_fin, cross_bias, dec_in, drop):
    """Teacher-forced decoder; dec_in: (B, L) token ids. Returns (B, L, V) Var."""
    B, L = dec_in.shape
    emb = ad.scale(ad.embedding(pv["dec/emb"], dec_in), np.sqrt(cfg.d_model))
    h = ad.add(emb, sinusoid_table(L, cfg.d_model)[None, :, :])
    h = drop(h)
    causal = np.where(np.tril(np.ones((L, L), dtype=bool)), 0.0, MASK_NEG)[None, None, :, :]
    for i in range(cfg.dec_layers):
        a_in = _ln(pv, f"dec/{i}/ln1", h)
        a = _mha(pv, f"dec/{i}/self", a_in, a_in, causal, cfg.n_heads, drop)
        h = ad.add(h, drop(a))
        c = _mha(pv, f"dec/{i}/cross", _ln(pv, f"dec/{i}/ln2", h), h_fin, cross_bias, cfg.n_heads, drop)
        h = ad.add(h, drop(c))
        f = _ffn(pv, f"dec/{i}/ff", _ln(pv, f"dec/{i}/ln3", h), drop)
        h = ad.add(h, drop(f))
    h = _ln(pv, "dec/ln_out", h)
    logits = ad.matmul(h, ad.transpose(pv["dec/emb"], (1, 0)))
    return ad.log_softmax(logits)


def _key_bias(mask):
    """(B, Tk) boolean validity mask -> additive (B, 1, 1, Tk) bias."""
    return np.where(mask, 0.0, MASK_NEG)[:, None, None, :]


# ---------------------------------------------------------------------------
# Public single-sample operations
# ---------------------------------------------------------------------------


def embed_features(feats, cfg: ModelConfig, params):
    """Stride-downsample, project to d_model, add positional encoding."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != cfg.feature_dim:
        raise UsageError(
            f"features must be (frames, {cfg.feature_dim}), got {feats.shape}"
        )
    if feats.shape[0] < 1:
        raise UsageError("need at least one frame")
    feats = feats[:: cfg.downsample_stride]
    pv = _vars(params)
    drop = _Dropout(0.0, False, None)
    return _embed_batch(pv, cfg, feats[None], drop).value[0]


def encode(projected, cfg: ModelConfig, params, training=False, rng=None) -> EncoderOutput:
    """Encoder stack over an already projected (frames', d_model) matrix."""
    projected = np.asarray(projected, dtype=np.float64)
    if projected.ndim != 2 or projected.shape[1] != cfg.d_model:
        raise UsageError("encode expects a (frames', d_model) matrix")
    pv = _vars(params)
    drop = _Dropout(cfg.dropout, training, rng)
    h_int, h_fin, lid_lp, txt_lp = _encode_batch(pv, cfg, ad.const(projected[None]), None, drop)
    out = EncoderOutput(
        h_int=h_int.value[0],
        lid_log_post=None if lid_lp is None else lid_lp.value[0],
        h_fin=h_fin.value[0],
        txt_log_post=txt_lp.value[0],
    )
    if not np.isfinite(out.h_fin).all():
        raise ModelDivergenceError("encoder produced non-finite values")
    return out


def decoder_forward(h_fin, prefix, cfg: ModelConfig, params, training=False, rng=None):
    """Per-position next-token log probabilities for one prefix (with <bos>)."""
    prefix = [int(t) for t in prefix]
    if len(prefix) == 0:
        raise UsageError("decoder prefix must start with <bos>")
    h_fin = np.asarray(h_fin, dtype=np.float64)
    pv = _vars(params)
    drop = _Dropout(cfg.dropout, training, rng)
    lp = _decode_batch(
        pv, cfg, ad.const(h_fin[None]), None, np.asarray(prefix)[None], drop
    )
    return lp.value[0]


# ---------------------------------------------------------------------------
# Joint training loss
# ---------------------------------------------------------------------------


def _pad_batch(batch, cfg):
    B = len(batch)
    stride = cfg.downsample_stride
    enc_lens = [downsampled_length(s.features.shape[0], stride) for s in batch]
    Tmax = max(enc_lens)
    feats = np.zeros((B, Tmax, cfg.feature_dim))
    for i, s in enumerate(batch):
        x = np.asarray(s.features, dtype=np.float64)[::stride]
        if x.shape[1] != cfg.feature_dim:
            raise UsageError("feature width does not match the model config")
        feats[i, : x.shape[0]] = x
    enc_mask = np.arange(Tmax)[None, :] < np.asarray(enc_lens)[:, None]

    dec_lens = [len(s.attn_target) - 1 for s in batch]
    Lmax = max(dec_lens)
    dec_in = np.full((B, Lmax), PAD_ID, dtype=np.int64)
    dec_out = np.full((B, Lmax), PAD_ID, dtype=np.int64)
    for i, s in enumerate(batch):
        ids = np.asarray(s.attn_target, dtype=np.int64)
        dec_in[i, : dec_lens[i]] = ids[:-1]
        dec_out[i, : dec_lens[i]] = ids[1:]
    dec_mask = np.arange(Lmax)[None, :] < np.asarray(dec_lens)[:, None]
    return feats, np.asarray(enc_lens), enc_mask, dec_in, dec_out, dec_mask


def _ctc_term(lp_var, row, length, target, blank_id):
    """Per-sample CTC loss node over lp_var[row, :length]; analytic backward.

    Infeasible targets contribute a flat penalty with zero gradient so a
    degenerate sample cannot blow up a training batch.
    """
    window = lp_var.value[row, :length]
    try:
        loss, grad = ctc.ctc_loss(window, target, blank_id)
    except ctc.InfeasibleAlignmentError:
        return ad.const(np.float64(ctc.INFEASIBLE_PENALTY))
    loss = min(loss, ctc.INFEASIBLE_PENALTY)

    def bwd(g):
        ad.ensure_grad(lp_var)[row, :length] += g * grad

    return ad.custom_op(np.float64(loss), (lp_var,), bwd)


def _mean(nodes):
    total = nodes[0]
    for node in nodes[1:]:
        total = ad.add(total, node)
    return ad.scale(total, 1.0 / len(nodes))


def compute_total_loss(batch, cfg: ModelConfig, params, training=True, rng=None,
                       want_grads=True):
    """LossBreakdown (and gradients) for a batch of LabeledSamples.

    CTC losses are per-sample sums over frames averaged over the batch; the
    attention loss is label-smoothed cross entropy averaged over non-pad
    target tokens. Samples are reduced in index order for determinism.
    """
    cfg.validate()
    if not batch:
        raise UsageError("empty batch")
    feats, enc_lens, enc_mask, dec_in, dec_out, dec_mask = _pad_batch(batch, cfg)
    if dec_mask.sum() == 0:
        raise UsageError("batch has zero valid target tokens")

    pv = _vars(params) if want_grads else {k: ad.const(v) for k, v in params.items()}
    drop = _Dropout(cfg.dropout, training, rng.derive("drop") if rng else None)
    key_bias = _key_bias(enc_mask)
    h = _embed_batch(pv, cfg, feats, drop)
    h_int, h_fin, lid_lp, txt_lp = _encode_batch(pv, cfg, h, key_bias, drop)

    use_lid = cfg.lid_head and all(s.lid_target is not None for s in batch)
    if use_lid:
        lid_terms = [
            _ctc_term(lid_lp, i, enc_lens[i], batch[i].lid_target, 0)
            for i in range(len(batch))
        ]
        l_lid = _mean(lid_terms)
    else:
        l_lid = ad.const(np.float64(0.0))

    txt_terms = [
        _ctc_term(txt_lp, i, enc_lens[i], batch[i].txt_target, BLANK_ID)
        for i in range(len(batch))
    ]
    l_txt = _mean(txt_terms)

    dec_lp = _decode_batch(pv, cfg, h_fin, key_bias, dec_in, drop)
    l_attn = ad.smoothed_nll(dec_lp, dec_out, dec_mask, cfg.label_smoothing)

    root = ad.add(
        ad.add(ad.scale(l_lid, cfg.lambda1), ad.scale(l_txt, cfg.lambda2)),
        ad.scale(l_attn, cfg.lambda3),
    )
    breakdown = LossBreakdown(
        l_lid=float(l_lid.value),
        l_txt=float(l_txt.value),
        l_attn=float(l_attn.value),
        l_total=float(root.value),
    )
    if not np.isfinite(breakdown.l_total):
        raise ModelDivergenceError("non-finite training loss")
    if not want_grads:
        return breakdown, None
    ad.backward(root)
    grads = {
        k: (pv[k].grad if pv[k].grad is not None else np.zeros_like(params[k]))
        for k in params
    }
    return breakdown, grads
