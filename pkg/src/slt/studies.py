"""Comparative experiment pipelines on top of the training stack.

study-conflict trains one universal many-to-one model against per-language
individual models under identical budgets and seeds (both arms are the plain
baseline: no LID head) and tabulates the per-language BLEU deltas.

study-ablation trains with/without-LID twins over growing many-to-many pair
subsets and tabulates the two BLEU columns per pair count.
"""

from __future__ import annotations

import copy
import os

from . import checkpoint, config as config_mod, data, decoding, metrics, training
from .data import TaskSpec
from .errors import UsageError


def load_or_generate_corpus(resolved, out_dir=None):
    """Corpus from [data].dir manifests, else generated per [data]; returns
    (corpus dict, feature_dim)."""
    if resolved["data"]["dir"]:
        return data.read_split_dir(resolved["data"]["dir"])
    synth = config_mod.synth_config_from(resolved)
    corpus = data.gen_synthetic_corpus(synth)
    if out_dir:
        data.write_split_dir(os.path.join(out_dir, "data"), corpus, synth.feature_dim)
    return corpus, synth.feature_dim


def _subset(corpus, sls):
    keep = set(sls)
    return {split: [s for s in samples if s.sl in keep] for split, samples in corpus.items()}


def _pairs_of(corpus):
    pairs = []
    for s in corpus.get("train", []):
        if (s.sl, s.lang) not in pairs:
            pairs.append((s.sl, s.lang))
    return pairs


def _pair_key(sl, lang):
    return f"{sl}->{lang}"


def _train_and_test_bleu(resolved, corpus, feature_dim, task, run_dir):
    """One budgeted run: train, reload the best checkpoint, beam-decode the
    test split, return (corpus BLEU, per-pair BLEU dict)."""
    res = training.train(resolved, corpus, feature_dim, task, run_dir)
    _, params, _ = checkpoint.load_checkpoint(res.best_ckpt)
    dcfg = config_mod.decode_config_from(resolved)
    test = corpus.get("test") or []
    if not test:
        raise UsageError("study corpora need a test split")
    results = decoding.translate_corpus(params, res.model_cfg, dcfg, test, res.vocab, task)
    by_id = {r.id: r.text for r in results}
    hyps = [by_id[s.id] for s in test]
    refs = [s.text for s in test]
    overall = metrics.bleu(hyps, refs).score
    per_pair = {}
    for sl, lang in _pairs_of(corpus):
        hp = [by_id[s.id] for s in test if s.sl == sl]
        rp = [s.text for s in test if s.sl == sl]
        if hp:
            per_pair[_pair_key(sl, lang)] = metrics.bleu(hp, rp).score
    return overall, per_pair


def _baseline_overrides(resolved):
    """The paper's plain baseline: no LID head, no LID loss, no LID labels."""
    out = copy.deepcopy(resolved)
    out["model"]["lambda1"] = 0.0
    out["model"]["lid_head"] = False
    out["task"]["lid_enabled"] = False
    return out


def run_conflict_study(resolved, out_dir):
    """Individual-vs-universal many-to-one comparison; returns the delta rows.

    Writes individual.tsv, universal.tsv, and delta.tsv (universal minus
    individual, so the conflict shows up as negative deltas).
    """
    os.makedirs(out_dir, exist_ok=True)
    corpus, feature_dim = load_or_generate_corpus(resolved, out_dir)
    pairs = _pairs_of(corpus)
    if len(pairs) < 2:
        raise UsageError("conflict study needs at least 2 language pairs")
    langs = {lang for _, lang in pairs}
    if len(langs) != 1:
        raise UsageError("conflict study needs a many-to-one corpus (one target language)")
    target = pairs[0][1]
    base = _baseline_overrides(resolved)

    uni_task = TaskSpec(mode="many_to_one", lid_enabled=False, target_lang=target)
    _, universal = _train_and_test_bleu(
        base, corpus, feature_dim, uni_task, os.path.join(out_dir, "universal")
    )

    individual = {}
    for sl, lang in pairs:
        sub = _subset(corpus, [sl])
        ind_task = TaskSpec(mode="one_to_one", lid_enabled=False)
        _, per = _train_and_test_bleu(
            base, sub, feature_dim, ind_task, os.path.join(out_dir, f"individual_{sl}")
        )
        individual[_pair_key(sl, lang)] = per[_pair_key(sl, lang)]

    metrics.write_scores_tsv(os.path.join(out_dir, "individual.tsv"), individual)
    metrics.write_scores_tsv(os.path.join(out_dir, "universal.tsv"), universal)
    rows = metrics.compare_runs(individual, universal)
    metrics.write_delta_tsv(os.path.join(out_dir, "delta.tsv"), rows)
    return rows


def _rank_pairs(resolved, corpus, feature_dim, out_dir):
    """Default ablation ordering: descending one-to-one dev BLEU."""
    base = _baseline_overrides(resolved)
    ranked = []
    for sl, lang in _pairs_of(corpus):
        sub = _subset(corpus, [sl])
        res = training.train(
            base, sub, feature_dim, TaskSpec(mode="one_to_one", lid_enabled=False),
            os.path.join(out_dir, f"rank_{sl}"),
        )
        ranked.append((res.best_dev_bleu, sl))
    ranked.sort(key=lambda t: (-t[0], t[1]))
    return [sl for _, sl in ranked]


def run_ablation(resolved, out_dir, n_pairs=None):
    """With/without-LID twins over pair counts 2..N; returns table rows
    [(count, bleu_without, bleu_with)] and writes ablation.tsv."""
    os.makedirs(out_dir, exist_ok=True)
    corpus, feature_dim = load_or_generate_corpus(resolved, out_dir)
    pairs = _pairs_of(corpus)
    if len(pairs) < 2:
        raise UsageError("ablation needs at least 2 language pairs")
    n_pairs = n_pairs or len(pairs)
    if not 2 <= n_pairs <= len(pairs):
        raise UsageError(f"need 2 <= pairs <= {len(pairs)}, got {n_pairs}")

    order = [str(sl) for sl in resolved["task"]["pair_order"]]
    if order:
        known = {sl for sl, _ in pairs}
        unknown = [sl for sl in order if sl not in known]
        if unknown:
            raise UsageError(f"pair_order names unknown sign languages: {unknown}")
    else:
        order = _rank_pairs(resolved, corpus, feature_dim, out_dir)
    lang_of = dict(pairs)

    with_lid = copy.deepcopy(resolved)
    if with_lid["model"]["lambda1"] <= 0:
        with_lid["model"]["lambda1"] = 1.0
    with_lid["model"]["lid_head"] = True
    without_lid = copy.deepcopy(resolved)
    without_lid["model"]["lambda1"] = 0.0
    without_lid["model"]["lid_head"] = False

    rows = []
    for count in range(2, n_pairs + 1):
        sls = order[:count]
        sub = _subset(corpus, sls)
        b_wo, _ = _train_and_test_bleu(
            without_lid, sub, feature_dim,
            TaskSpec(mode="many_to_many", lid_enabled=False),
            os.path.join(out_dir, f"pairs{count}_without"),
        )
        b_w, _ = _train_and_test_bleu(
            with_lid, sub, feature_dim,
            TaskSpec(mode="many_to_many", lid_enabled=True),
            os.path.join(out_dir, f"pairs{count}_with"),
        )
        rows.append((count, b_wo, b_w))

    with open(os.path.join(out_dir, "ablation.tsv"), "w", encoding="utf-8") as fh:
        fh.write("pairs\twithout_lid_bleu\twith_lid_bleu\n")
        for count, b_wo, b_w in rows:
            fh.write(f"({count}->{count})\t{b_wo:.2f}\t{b_w:.2f}\n")
    return rows
