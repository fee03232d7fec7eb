"""Joint CTC/attention decoding.

The attention decoder drives the label-synchronous beam; the final-layer text
CTC head contributes an incremental prefix score with weight ctc_weight, so a
hypothesis is ranked by

    ((1 - mu) * attn_logprob + mu * ctc_prefix_logprob) / |tokens|^alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import ctc, model
from .data import BLANK_ID, BOS_ID, EOS_ID, PAD_ID, UNK_ID, TaskSpec, Vocabulary
from .errors import UsageError

FORBIDDEN = (PAD_ID, UNK_ID, BOS_ID, BLANK_ID)


@dataclass
class DecodeConfig:
    beam: int = 5
    ctc_weight: float = 0.3
    max_len: Optional[int] = None  # default 2 * frames' + 5, capped
    max_len_cap: int = 200
    alpha: float = 1.0  # length-normalization exponent
    forced_prefix: tuple = ()

    def validate(self):
        if self.beam < 1:
            raise UsageError("beam must be >= 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise UsageError("ctc_weight must lie in [0, 1]")
        return self

    def resolved_max_len(self, frames):
        if self.max_len is not None:
            return self.max_len
        return min(2 * frames + 5, self.max_len_cap)


@dataclass
class Hypothesis:
    tokens: list  # starts with <bos>
    attn_score: float = 0.0
    ctc_score: float = 0.0
    ctc_state: Optional[ctc.CtcPrefixState] = None
    finished: bool = False
    truncated: bool = False

    def combined(self, mu):
        return (1.0 - mu) * self.attn_score + mu * self.ctc_score

    def normalized(self, mu, alpha):
        length = max(1, len(self.tokens) - 1)  # emitted tokens, <bos> excluded
        return self.combined(mu) / length**alpha


def _next_token_lp(params, cfg, h_fin, prefixes):
    """Next-token log distributions for equal-length prefixes, (n, V)."""
    pv = {k: ad.const(v) for k, v in params.items()}
    drop = model._Dropout(0.0, False, None)
    n = len(prefixes)
    h = np.broadcast_to(h_fin, (n,) + h_fin.shape)
    lp = model._decode_batch(pv, cfg, ad.const(h), None, np.asarray(prefixes), drop)
    return lp.value[:, -1, :]


def _masked(lp):
    lp = lp.copy()
    lp[list(FORBIDDEN)] = -np.inf
    return lp


def greedy_decode(params, cfg, feats, forced_prefix=(), max_len=None, max_len_cap=200):
    """Pure attention argmax decoding; returns (tokens incl <bos>, truncated)."""
    enc_in = model.embed_features(feats, cfg, params)
    out = model.encode(enc_in, cfg, params)
    limit = max_len if max_len is not None else min(2 * out.h_fin.shape[0] + 5, max_len_cap)
    tokens = [BOS_ID] + [int(t) for t in forced_prefix]
    while len(tokens) - 1 < limit:
        lp = _masked(_next_token_lp(params, cfg, out.h_fin, [tokens])[0])
        nxt = int(np.argmax(lp))
        tokens.append(nxt)
        if nxt == EOS_ID:
            return tokens, False
    return tokens, True


def beam_search(params, cfg, dcfg: DecodeConfig, feats, vocab: Vocabulary):
    """Ranked hypotheses for one feature sequence.

    Forced prefix tokens are emitted unconditionally (their attention/CTC
    scores still accumulate, identically for every hypothesis). A hypothesis
    emitting <eos> moves to the finished pool; search stops when no active
    hypothesis can still beat the kept finished ones, or at the length limit.
    """
    dcfg.validate()
    for tok in dcfg.forced_prefix:
        if not 0 <= int(tok) < len(vocab):
            raise UsageError(f"forced prefix token {tok} outside the vocabulary")
    mu = dcfg.ctc_weight
    enc_in = model.embed_features(feats, cfg, params)
    out = model.encode(enc_in, cfg, params)
    frames = out.h_fin.shape[0]
    max_len = dcfg.resolved_max_len(frames)

    use_ctc = mu > 0.0
    txt_lp = out.txt_log_post
    init_state = ctc.ctc_prefix_init(txt_lp, BLANK_ID) if use_ctc else None
    root = Hypothesis(tokens=[BOS_ID], ctc_state=init_state)

    # emit the forced prefix before free search
    for tok in dcfg.forced_prefix:
        tok = int(tok)
        lp = _masked(_next_token_lp(params, cfg, out.h_fin, [root.tokens])[0])
        root.attn_score += float(lp[tok])
        if use_ctc:
            delta, root.ctc_state = ctc.ctc_prefix_score(root.ctc_state, tok, txt_lp, BLANK_ID)
            root.ctc_score += delta
        root.tokens = root.tokens + [tok]

    candidates_ids = np.array(
        [i for i in range(len(vocab)) if i not in FORBIDDEN and i != EOS_ID]
    )
    active = [root]
    finished = []
    while active and len(active[0].tokens) - 1 < max_len:
        lp_all = _next_token_lp(params, cfg, out.h_fin, [h.tokens for h in active])
        pool = []
        ctc_cache = []
        for ih, h in enumerate(active):
            lp = _masked(lp_all[ih])
            if use_ctc:
                psi, r_new = ctc.ctc_prefix_score_batch(
                    h.ctc_state, candidates_ids, txt_lp, BLANK_ID
                )
                eos_total = ctc.ctc_prefix_finalize(h.ctc_state)
                ctc_cache.append((psi, r_new))
            for j, tok in enumerate(candidates_ids):
                attn = h.attn_score + float(lp[tok])
                ctc_sc = float(psi[j]) if use_ctc else 0.0
                score = (1.0 - mu) * attn + mu * ctc_sc
                pool.append((score, ih, int(tok), attn, ctc_sc, j))
            attn = h.attn_score + float(lp[EOS_ID])
            ctc_sc = eos_total if use_ctc else 0.0
            score = (1.0 - mu) * attn + mu * ctc_sc
            pool.append((score, ih, EOS_ID, attn, ctc_sc, None))

        pool.sort(key=lambda c: (-c[0], c[1], c[2]))
        new_active = []
        for score, ih, tok, attn, ctc_sc, j in pool[: dcfg.beam]:
            h = active[ih]
            if use_ctc and tok != EOS_ID:
                psi, r_new = ctc_cache[ih]
                state = ctc.CtcPrefixState(
                    prefix=h.ctc_state.prefix + (tok,), r=r_new[j], score=float(psi[j])
                )
            else:
                state = h.ctc_state
            new = Hypothesis(
                tokens=h.tokens + [tok],
                attn_score=attn,
                ctc_score=ctc_sc,
                ctc_state=state,
                finished=tok == EOS_ID,
            )
            (finished if new.finished else new_active).append(new)
        active = new_active

        if finished and active:
            kept = sorted(finished, key=lambda h: -h.normalized(mu, dcfg.alpha))
            if len(kept) >= dcfg.beam:
                bound = max(h.combined(mu) for h in active) / max_len**dcfg.alpha
                if bound <= kept[dcfg.beam - 1].normalized(mu, dcfg.alpha):
                    break

    if finished:
        ranked = sorted(finished, key=lambda h: -h.normalized(mu, dcfg.alpha))
        return ranked[: dcfg.beam]
    for h in active:
        h.truncated = True
    return sorted(active, key=lambda h: -h.normalized(mu, dcfg.alpha))[: dcfg.beam]


@dataclass
class TranslationResult:
    id: str
    sl: str
    lang: str
    text: str
    score: float
    truncated: bool


def strip_tokens(token_ids, vocab: Vocabulary):
    """Drop reserved ids and language tags; keep surface words in order."""
    tags = set(vocab.spoken_tags) | set(vocab.lid_tags)
    words = []
    for i in token_ids:
        tok = vocab.tokens[i]
        if i in FORBIDDEN or i == EOS_ID or tok in tags:
            continue
        words.append(tok)
    return words


def translate_corpus(params, cfg, dcfg: DecodeConfig, samples, vocab, task: TaskSpec):
    """Beam-decode every sample; returns TranslationResults aligned by input order."""
    seen = set()
    for s in samples:
        if s.id in seen:
            raise UsageError(f"duplicate sample id {s.id!r}")
        seen.add(s.id)
    results = []
    for s in samples:
        forced = tuple(dcfg.forced_prefix)
        if not forced and task.mode == "many_to_many":
            forced = (vocab.spoken_tag_id(s.lang),)
        hyps = beam_search(params, cfg, replace(dcfg, forced_prefix=forced), s.features, vocab)
        top = hyps[0]
        words = strip_tokens(top.tokens, vocab)
        results.append(
            TranslationResult(
                id=s.id, sl=s.sl, lang=s.lang, text=" ".join(words),
                score=top.normalized(dcfg.ctc_weight, dcfg.alpha),
                truncated=top.truncated,
            )
        )
    return results


HYP_TSV_HEADER = "id\tsl\tlang\thyp\tscore\ttruncated"


def write_hypotheses_tsv(path, results):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HYP_TSV_HEADER + "\n")
        for r in results:
            fh.write(
                f"{r.id}\t{r.sl}\t{r.lang}\t{r.text}\t{r.score!r}\t{int(r.truncated)}\n"
            )


def read_hypotheses_tsv(path):
    results = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != HYP_TSV_HEADER:
            raise UsageError(f"{path}: not a hypothesis TSV")
        for line in fh:
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise UsageError(f"{path}: malformed hypothesis row")
            results.append(
                TranslationResult(
                    id=parts[0], sl=parts[1], lang=parts[2], text=parts[3],
                    score=float(parts[4]), truncated=bool(int(parts[5])),
                )
            )
    return results


# ---------------------------------------------------------------------------
# Batched greedy decoding (used for cheap dev-set evaluation during training)
# ---------------------------------------------------------------------------


def greedy_translate_batch(params, cfg, samples, vocab, task: TaskSpec,
                           batch_size=32, max_len_cap=200):
    """Attention-greedy translations for a corpus, batched stepwise."""
    results = []
    pv = {k: ad.const(v) for k, v in params.items()}
    drop = model._Dropout(0.0, False, None)
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        B = len(chunk)
        stride = cfg.downsample_stride
        lens = [model.downsampled_length(s.features.shape[0], stride) for s in chunk]
        Tmax = max(lens)
        feats = np.zeros((B, Tmax, cfg.feature_dim))
        for i, s in enumerate(chunk):
            x = np.asarray(s.features, dtype=np.float64)[::stride]
            feats[i, : x.shape[0]] = x
        enc_mask = np.arange(Tmax)[None, :] < np.asarray(lens)[:, None]
        key_bias = model._key_bias(enc_mask)
        h = model._embed_batch(pv, cfg, feats, drop)
        _, h_fin, _, _ = model._encode_batch(pv, cfg, h, key_bias, drop)

        seqs = [[BOS_ID] for _ in chunk]
        if task.mode == "many_to_many":
            for i, s in enumerate(chunk):
                seqs[i].append(vocab.spoken_tag_id(s.lang))
        done = np.zeros(B, dtype=bool)
        limit = min(2 * Tmax + 5, max_len_cap)
        while not done.all() and len(seqs[0]) - 1 < limit:
            lp = model._decode_batch(pv, cfg, h_fin, key_bias, np.asarray(seqs), drop)
            last = lp.value[:, -1, :].copy()
            last[:, list(FORBIDDEN)] = -np.inf
            nxt = last.argmax(axis=1)
            for i in range(B):
                tok = PAD_ID if done[i] else int(nxt[i])
                seqs[i].append(tok)
                if tok == EOS_ID:
                    done[i] = True
        for i, s in enumerate(chunk):
            ids = seqs[i]
            if EOS_ID in ids:
                ids = ids[: ids.index(EOS_ID)]
                truncated = False
            else:
                truncated = True
            words = strip_tokens(ids, vocab)
            results.append(
                TranslationResult(id=s.id, sl=s.sl, lang=s.lang,
                                  text=" ".join(words), score=0.0, truncated=truncated)
            )
    return results
