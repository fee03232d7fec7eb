"""Corpora: vocabularies, training-label construction, synthetic multilingual
feature generation with a controllable language conflict, and JSONL feature
manifests for externally pre-extracted features.

The synthetic generator mirrors a parallel corpus: every sentence index is one
prototype-id sequence instantiated once per language pair. A fraction
`overlap` of each lexicon's prototype vectors is shared identically across
all pairs while mapping to different target words, which is exactly the
conflict a universal multilingual model has to untangle.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ManifestParseError, UsageError
from .numerics import Rng

PAD, UNK, BOS, EOS, BLANK = "<pad>", "<unk>", "<bos>", "<eos>", "<blank>"
RESERVED = (PAD, UNK, BOS, EOS, BLANK)
PAD_ID, UNK_ID, BOS_ID, EOS_ID, BLANK_ID = range(5)

TASK_MODES = ("one_to_one", "many_to_one", "many_to_many")


@dataclass
class Sample:
    """One corpus record; `text` is whitespace-tokenized on demand."""

    id: str
    sl: str
    lang: str
    features: np.ndarray  # (frames, feature_dim) float64
    text: str

    @property
    def tokens(self):
        return self.text.split()


@dataclass
class TaskSpec:
    mode: str
    lid_enabled: bool = True
    target_lang: Optional[str] = None

    def validate(self):
        if self.mode not in TASK_MODES:
            raise UsageError(f"unknown task mode {self.mode!r}")
        return self


def spoken_tag(lang):
    return f"<{lang}>"


def lid_tag(sl):
    return f"<{sl}>"


@dataclass
class Vocabulary:
    """Token <-> id map with fixed reserved ids and language tags.

    The LID CTC head uses a compact space of its own: index 0 is blank,
    index 1+i is lid_tags[i].
    """

    tokens: list
    spoken_tags: list
    lid_tags: list
    token_to_id: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise UsageError("vocabulary tokens must be unique")
        for i, tok in enumerate(RESERVED):
            if self.tokens[i] != tok:
                raise UsageError("reserved token ids are fixed to <pad>..<blank>")

    def __len__(self):
        return len(self.tokens)

    def encode(self, tokens):
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def spoken_tag_id(self, lang):
        tag = spoken_tag(lang)
        if tag not in self.token_to_id or tag not in self.spoken_tags:
            raise UsageError(f"unknown target language {lang!r}")
        return self.token_to_id[tag]

    def lid_index(self, sl):
        """Compact LID-head class of a sign language (blank is 0)."""
        tag = lid_tag(sl)
        if tag not in self.lid_tags:
            raise UsageError(f"unknown sign language {sl!r}")
        return 1 + self.lid_tags.index(tag)

    def lid_tag_of_index(self, idx):
        if not 1 <= idx <= len(self.lid_tags):
            raise UsageError(f"LID index {idx} out of range")
        return self.lid_tags[idx - 1]

    @property
    def lid_vocab_size(self):
        return 1 + len(self.lid_tags)

    def to_dict(self):
        return {
            "tokens": list(self.tokens),
            "spoken_tags": list(self.spoken_tags),
            "lid_tags": list(self.lid_tags),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            tokens=list(d["tokens"]),
            spoken_tags=list(d["spoken_tags"]),
            lid_tags=list(d["lid_tags"]),
        )


def build_vocab(train_samples, task: TaskSpec) -> Vocabulary:
    """Closed vocabulary from the training split plus tags for its languages."""
    task.validate()
    train_samples = list(train_samples)
    if not train_samples:
        raise UsageError("cannot build a vocabulary from an empty training split")
    spoken = sorted({spoken_tag(s.lang) for s in train_samples})
    lids = sorted({lid_tag(s.sl) for s in train_samples})
    words = sorted({t for s in train_samples for t in s.tokens})
    clash = (set(spoken) | set(lids)) & set(words)
    if clash:
        raise UsageError(f"text tokens collide with language tags: {sorted(clash)}")
    tokens = list(RESERVED) + spoken + [t for t in lids if t not in spoken] + words
    return Vocabulary(tokens=tokens, spoken_tags=spoken, lid_tags=lids)


def make_labels(sample: Sample, task: TaskSpec, vocab: Vocabulary):
    """Targets per task mode.

    Returns (attn_target, txt_ctc_target, lid_target) as id lists; the
    many_to_many attention and text-CTC targets carry the spoken-language tag,
    and the LID target repeats the sample's sign-language class once per
    text-CTC token. lid_target is None when the task disables LID.
    """
    task.validate()
    words = sample.tokens
    if not words:
        raise UsageError(f"sample {sample.id}: empty text")
    lid_class = vocab.lid_index(sample.sl)  # validates the sign language
    core = vocab.encode(words)
    if task.mode == "many_to_many":
        core = [vocab.spoken_tag_id(sample.lang)] + core
    elif task.mode == "many_to_one" and task.target_lang is not None:
        if sample.lang != task.target_lang:
            raise UsageError(
                f"sample {sample.id}: lang {sample.lang!r} != task target "
                f"{task.target_lang!r}"
            )
    attn_target = [BOS_ID] + core + [EOS_ID]
    txt_target = list(core)
    lid_target = [lid_class] * len(txt_target) if task.lid_enabled else None
    return attn_target, txt_target, lid_target


# ---------------------------------------------------------------------------
# Synthetic corpus
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    languages: list  # [(sign code, spoken code), ...]
    lexicon_size: int = 50
    overlap: float = 0.0  # fraction of prototypes shared across all pairs
    feature_dim: int = 16
    frames_per_sign: tuple = (3, 5)
    noise: float = 0.05
    jitter: int = 1
    sent_len: tuple = (3, 8)
    p_swap: float = 0.0
    # immediate prototype repeats hide the segment boundary (identical
    # adjacent feature blocks), which caps exact CTC segmentation; off by
    # default so the frame-to-word alignment stays recoverable
    allow_adjacent_repeats: bool = False
    n_train: int = 200
    n_dev: int = 40
    n_test: int = 40
    seed: int = 0

    def validate(self):
        if not self.languages:
            raise UsageError("need at least one (sl, lang) pair")
        sls = [sl for sl, _ in self.languages]
        if len(set(sls)) != len(sls):
            raise UsageError("sign-language codes must be unique across pairs")
        if not 0.0 <= self.overlap <= 1.0:
            raise UsageError("overlap must lie in [0, 1]")
        if self.sent_len[0] < 1 or self.sent_len[0] > self.sent_len[1]:
            raise UsageError("invalid sentence length range")
        if self.frames_per_sign[0] < 1 or self.frames_per_sign[0] > self.frames_per_sign[1]:
            raise UsageError("invalid frames_per_sign range")
        if self.lexicon_size < 1 or self.feature_dim < 1:
            raise UsageError("lexicon_size and feature_dim must be positive")
        if min(self.n_train, self.n_dev, self.n_test) < 0 or self.n_train < 1:
            raise UsageError("split sizes must be nonnegative with n_train >= 1")
        return self


def _lexicon_word(sl, proto):
    return f"{sl}{proto:02d}"


def gen_synthetic_corpus(cfg: SynthConfig):
    """Deterministic parallel corpus; returns {"train": [...], "dev": [...], "test": [...]}.

    Sentence content (prototype ids, per-sign frame counts) is drawn once per
    sentence index and instantiated for every language pair, so with
    overlap=1 and noise=0 the pairs' feature matrices coincide while their
    texts differ: the engineered language conflict.
    """
    cfg.validate()
    rng = Rng(cfg.seed)
    K, D = cfg.lexicon_size, cfg.feature_dim
    n_shared = int(np.floor(cfg.overlap * K))
    if n_shared > 0 and len(cfg.languages) < 2:
        warnings.warn("overlap > 0 with a single language pair: no conflict possible")

    shared = rng.derive("proto", "shared").normal((n_shared, D))
    lexicons = {}
    for sl, _ in cfg.languages:
        own = rng.derive("proto", sl).normal((K - n_shared, D))
        lexicons[sl] = np.concatenate([shared, own], axis=0) if n_shared else own

    total = cfg.n_train + cfg.n_dev + cfg.n_test
    seen = set()
    splits = {"train": [], "dev": [], "test": []}
    lo, hi = cfg.sent_len
    flo, fhi = cfg.frames_per_sign
    repeats_ok = cfg.allow_adjacent_repeats or K == 1
    for i in range(total):
        sent = rng.derive("sent", i)
        for _ in range(1000):
            length = int(sent.integers(lo, hi + 1))
            draw = []
            while len(draw) < length:
                p = int(sent.integers(0, K))
                if repeats_ok or not draw or p != draw[-1]:
                    draw.append(p)
            protos = tuple(draw)
            if protos not in seen:
                seen.add(protos)
                break
        else:
            raise UsageError(
                "could not draw a fresh sentence; lexicon too small for the "
                "requested corpus size"
            )
        repeats = sent.integers(flo, fhi + 1, size=length)
        if cfg.jitter > 0:
            repeats = repeats + sent.integers(0, cfg.jitter + 1, size=length)
        split = "train" if i < cfg.n_train else ("dev" if i < cfg.n_train + cfg.n_dev else "test")
        for sl, lang in cfg.languages:
            feats = np.repeat(lexicons[sl][list(protos)], repeats, axis=0)
            if cfg.noise > 0:
                feats = feats + cfg.noise * rng.derive("noise", i, sl).normal(feats.shape)
            feats = feats.astype(np.float32).astype(np.float64)
            words = [_lexicon_word(sl, p) for p in protos]
            if cfg.p_swap > 0:
                swap = rng.derive("swap", i, sl)
                for j in range(length - 1):
                    if swap.random() < cfg.p_swap:
                        words[j], words[j + 1] = words[j + 1], words[j]
            splits[split].append(
                Sample(id=f"{sl}-{i:06d}", sl=sl, lang=lang,
                       features=feats, text=" ".join(words))
            )
    return splits


# ---------------------------------------------------------------------------
# Feature manifests (JSON Lines)
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


def write_manifest(path, samples, feature_dim):
    """UTF-8 JSONL: a header line then one record per sample.

    Feature values are serialized at float32 precision with round-trip-safe
    decimal repr, so write -> read -> write is byte-stable.
    """
    samples = list(samples)
    with open(path, "w", encoding="utf-8") as fh:
        header = {"type": "header", "version": MANIFEST_VERSION, "feature_dim": int(feature_dim)}
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for s in samples:
            feat = np.asarray(s.features, dtype=np.float32)
            if feat.ndim != 2 or feat.shape[1] != feature_dim:
                raise UsageError(
                    f"sample {s.id}: feature width {feat.shape} != {feature_dim}"
                )
            rec = {
                "id": s.id,
                "sl": s.sl,
                "lang": s.lang,
                "text": s.text,
                "feat": [[float(x) for x in row] for row in feat],
            }
            fh.write(json.dumps(rec, separators=(",", ":"), ensure_ascii=False) + "\n")


def read_manifest(path):
    """Parse a manifest; returns (samples, feature_dim)."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise ManifestParseError(1, "missing header line")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise ManifestParseError(1, f"invalid JSON header: {e}") from e
        if not isinstance(header, dict) or header.get("type") != "header":
            raise ManifestParseError(1, 'first line must be {"type":"header",...}')
        if header.get("version") != MANIFEST_VERSION:
            raise ManifestParseError(1, f"unsupported version {header.get('version')!r}")
        feature_dim = header.get("feature_dim")
        if not isinstance(feature_dim, int) or feature_dim < 1:
            raise ManifestParseError(1, "header feature_dim must be a positive integer")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseError(line_no, f"invalid JSON: {e}") from e
            for key in ("id", "sl", "lang", "text", "feat"):
                if key not in rec:
                    raise ManifestParseError(line_no, f"missing field {key!r}")
            feat = rec["feat"]
            if not feat or any(len(row) != feature_dim for row in feat):
                raise ManifestParseError(
                    line_no, f"feature rows must all have width {feature_dim}"
                )
            if not str(rec["text"]).split():
                raise ManifestParseError(line_no, "empty text")
            samples.append(
                Sample(
                    id=str(rec["id"]), sl=str(rec["sl"]), lang=str(rec["lang"]),
                    features=np.asarray(feat, dtype=np.float64), text=str(rec["text"]),
                )
            )
    return samples, feature_dim


def read_split_dir(data_dir, splits=("train", "dev", "test")):
    """Read {split}.jsonl manifests from a directory; missing splits are skipped."""
    import os

    corpus = {}
    feature_dim = None
    for split in splits:
        path = os.path.join(data_dir, f"{split}.jsonl")
        if not os.path.exists(path):
            continue
        samples, dim = read_manifest(path)
        if feature_dim is not None and dim != feature_dim:
            raise UsageError(f"{path}: feature_dim {dim} != {feature_dim}")
        feature_dim = dim
        corpus[split] = samples
    if not corpus:
        raise FileNotFoundError(f"no split manifests found under {data_dir}")
    return corpus, feature_dim


def write_split_dir(data_dir, splits, feature_dim):
    import os

    os.makedirs(data_dir, exist_ok=True)
    for split, samples in splits.items():
        write_manifest(os.path.join(data_dir, f"{split}.jsonl"), samples, feature_dim)
