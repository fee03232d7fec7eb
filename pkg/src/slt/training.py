"""Deterministic training loop: Xavier init, Adam with global-norm clipping,
per-epoch reshuffling from derived streams, periodic greedy-decode dev BLEU,
best-checkpoint selection, and early stopping.

Given the same configs, corpus bytes, and seed, a single-threaded run is a
pure function: checkpoints and the canonical log reproduce byte-identically.
Wall-clock timings therefore live in a separate sidecar, never in the log.
"""

from __future__ import annotations

import json
import os
import shutil
import time
from dataclasses import dataclass
from typing import Optional

from . import checkpoint, config as config_mod, decoding, metrics, model
from .data import TaskSpec, build_vocab, make_labels
from .errors import ModelDivergenceError, UsageError
from .model import LabeledSample, LossBreakdown
from .numerics import AdamState, Rng, adam_step, clip_global_norm


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    max_epochs: int = 30
    patience: int = 5
    grad_clip: float = 5.0
    seed: int = 0
    eval_every: int = 1  # epochs between dev evaluations
    warmup_steps: int = 0  # 0 keeps the constant learning rate
    log_every: int = 1

    def validate(self):
        if self.lr <= 0:
            raise UsageError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.eval_every < 1:
            raise UsageError("batch_size, max_epochs, eval_every must be >= 1")
        if self.patience < 0:
            raise UsageError("patience must be >= 0")
        return self


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    losses: LossBreakdown
    dev_bleu: Optional[float]
    wall: float

    def to_json(self):
        """Deterministic log line; wall time goes to the timing sidecar."""
        rec = {
            "step": self.step,
            "epoch": self.epoch,
            "l_lid": self.losses.l_lid,
            "l_txt": self.losses.l_txt,
            "l_attn": self.losses.l_attn,
            "l_total": self.losses.l_total,
        }
        if self.dev_bleu is not None:
            rec["dev_bleu"] = self.dev_bleu
        return json.dumps(rec, sort_keys=True, separators=(",", ":"))


@dataclass
class TrainResult:
    best_ckpt: str
    log_path: str
    records: list
    vocab: object
    model_cfg: model.ModelConfig
    params: dict
    best_dev_bleu: float
    best_step: int


def _dev_bleu(params, cfg, dev_samples, vocab, task):
    """Greedy-decode corpus BLEU on the dev split (beam search is test-only)."""
    results = decoding.greedy_translate_batch(params, cfg, dev_samples, vocab, task)
    hyps = [r.text for r in results]
    refs = [s.text for s in dev_samples]
    return metrics.bleu(hyps, refs, tokenizer="whitespace", smoothing="none").score


def _label_batch(samples, task, vocab):
    out = []
    for s in samples:
        attn, txt, lid = make_labels(s, task, vocab)
        out.append(LabeledSample(features=s.features, attn_target=attn,
                                 txt_target=txt, lid_target=lid))
    return out


def ckpt_name(step):
    return f"ckpt_step{step}.s2lt"


def train(resolved, corpus, feature_dim, task: TaskSpec, out_dir) -> TrainResult:
    """Train on corpus["train"], select by dev BLEU, write checkpoints + logs.

    `resolved` is the fully resolved config section dict; its [model] and
    [train] sections drive the run and are echoed (with the vocabulary and
    the applied task) into every checkpoint.
    """
    tcfg = config_mod.train_config_from(resolved)
    task.validate()
    train_split = corpus.get("train") or []
    dev_split = corpus.get("dev") or []
    if not train_split or not dev_split:
        raise UsageError("training needs non-empty train and dev splits")

    os.makedirs(out_dir, exist_ok=True)
    vocab = build_vocab(train_split, task)
    cfg = config_mod.model_config_from(
        resolved, feature_dim, len(vocab), vocab.lid_vocab_size
    )
    labeled = _label_batch(train_split, task, vocab)

    echo = {
        "format": 1,
        "config": resolved,
        "feature_dim": int(feature_dim),
        "task": {"mode": task.mode, "lid_enabled": task.lid_enabled,
                 "target_lang": task.target_lang or ""},
        "vocab": vocab.to_dict(),
    }

    rng = Rng(tcfg.seed)
    params = model.init_params(cfg, rng)
    opt = AdamState.zeros_like(params)
    records = []
    t0 = time.perf_counter()
    step = 0
    best_bleu, best_step, stale = float("-inf"), -1, 0
    n = len(labeled)

    stop = False
    for epoch in range(1, tcfg.max_epochs + 1):
        perm = rng.derive("shuffle", epoch).permutation(n)
        for lo in range(0, n, tcfg.batch_size):
            batch = [labeled[i] for i in perm[lo : lo + tcfg.batch_size]]
            step += 1
            try:
                losses, grads = model.compute_total_loss(
                    batch, cfg, params, training=True, rng=rng.derive("step", step)
                )
            except ModelDivergenceError as e:
                raise ModelDivergenceError(f"step {step}: {e}") from e
            grads, _ = clip_global_norm(grads, tcfg.grad_clip)
            lr = tcfg.lr
            if tcfg.warmup_steps > 0:
                lr = tcfg.lr * min(1.0, step / tcfg.warmup_steps)
            params, opt = adam_step(params, grads, opt, lr)
            if step % tcfg.log_every == 0:
                records.append(TrainLogRecord(step, epoch, losses, None,
                                              time.perf_counter() - t0))

        if epoch % tcfg.eval_every == 0 or epoch == tcfg.max_epochs:
            bleu = _dev_bleu(params, cfg, dev_split, vocab, task)
            checkpoint.save_checkpoint(os.path.join(out_dir, ckpt_name(step)),
                                       echo, params, opt)
            last = records[-1].losses if records else LossBreakdown(0, 0, 0, 0)
            records.append(TrainLogRecord(step, epoch, last, bleu,
                                          time.perf_counter() - t0))
            if bleu > best_bleu:
                best_bleu, best_step, stale = bleu, step, 0
            else:
                stale += 1
                if stale >= tcfg.patience:
                    stop = True
        if stop:
            break

    log_path = os.path.join(out_dir, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    with open(os.path.join(out_dir, "timing.jsonl"), "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"step": rec.step, "wall": rec.wall}) + "\n")

    best_path = os.path.join(out_dir, "ckpt_best.s2lt")
    shutil.copyfile(os.path.join(out_dir, ckpt_name(best_step)), best_path)
    return TrainResult(
        best_ckpt=best_path, log_path=log_path, records=records, vocab=vocab,
        model_cfg=cfg, params=params, best_dev_bleu=best_bleu, best_step=best_step,
    )


def select_best_checkpoint(log, out_dir):
    """Checkpoint path with maximal dev BLEU; ties break to the earliest step.

    `log` may be a list of TrainLogRecords or a path to a train_log.jsonl.
    """
    if isinstance(log, (str, os.PathLike)):
        evals = []
        with open(log, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "dev_bleu" in rec:
                    evals.append((rec["step"], rec["dev_bleu"]))
    else:
        evals = [(r.step, r.dev_bleu) for r in log if r.dev_bleu is not None]
    if not evals:
        raise UsageError("no dev evaluations logged")
    best_step, _ = max(evals, key=lambda sb: (sb[1], -sb[0]))
    return os.path.join(out_dir, ckpt_name(best_step))
