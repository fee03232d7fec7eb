"""The `slt` command line: reproducible experiment pipelines.

Subcommands: gen-data, train, translate, evaluate, report buckets, compare,
study-conflict, study-ablation. Exit codes: 0 success, 1 runtime/data error,
2 usage error. Diagnostics go to stderr; machine output to files or stdout.
Every run with an --out target writes a resolved-config snapshot next to it.
"""

import os
import sys

# Cap math-library thread pools before numpy loads; single-threaded BLAS is
# part of the byte-reproducibility contract.
_threads = os.environ.get("SLT_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import json

from . import checkpoint, config as config_mod, data, decoding, metrics, studies, training
from .data import TaskSpec, Vocabulary
from .errors import SltError, UsageError

TASK_FLAGS = {"one2one": "one_to_one", "many2one": "many_to_one", "many2many": "many_to_many"}


def _build_parser():
    p = argparse.ArgumentParser(prog="slt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train a model on a manifest directory")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--task", required=True, choices=sorted(TASK_FLAGS))
    t.add_argument("--out", required=True)

    tr = sub.add_parser("translate", help="beam-decode a split with a checkpoint")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--data", required=True)
    tr.add_argument("--beam", type=int, default=None)
    tr.add_argument("--ctc-weight", type=float, default=None)
    tr.add_argument("--split", default="test", choices=["train", "dev", "test"])
    tr.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="score hypotheses against references")
    e.add_argument("--hyp", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--tokenizer", default="whitespace", choices=metrics.TOKENIZERS)
    e.add_argument("--metric", default="bleu,rouge")

    r = sub.add_parser("report", help="analysis reports")
    r.add_argument("what", choices=["buckets"])
    r.add_argument("--hyp", required=True)
    r.add_argument("--ref", required=True)
    r.add_argument("--width", type=int, required=True)
    r.add_argument("--out", required=True)

    c = sub.add_parser("compare", help="delta table between two score TSVs")
    c.add_argument("--a", required=True)
    c.add_argument("--b", required=True)
    c.add_argument("--out", required=True)

    sc = sub.add_parser("study-conflict", help="individual vs universal many-to-one study")
    sc.add_argument("--config", required=True)
    sc.add_argument("--out", required=True)

    sa = sub.add_parser("study-ablation", help="with/without token-level LID study")
    sa.add_argument("--config", required=True)
    sa.add_argument("--pairs", type=int, default=None)
    sa.add_argument("--out", required=True)
    return p


def _snapshot(resolved, out_path):
    config_mod.write_resolved_config(config_mod.snapshot_path_for(out_path), resolved)


def _read_texts(path):
    """Sentences from a plain-text, hypothesis-TSV, or manifest file.

    Returns (ids or None, texts). TSV/manifest inputs carry sample ids and can
    be id-aligned; plain text aligns by line.
    """
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
    if first == decoding.HYP_TSV_HEADER:
        results = decoding.read_hypotheses_tsv(path)
        return [r.id for r in results], [r.text for r in results]
    if first.startswith('{"type":"header"') or first.startswith('{"type": "header"'):
        samples, _ = data.read_manifest(path)
        return [s.id for s in samples], [s.text for s in samples]
    with open(path, encoding="utf-8") as fh:
        return None, [line.rstrip("\n") for line in fh]


def _aligned_texts(hyp_path, ref_path):
    hyp_ids, hyps = _read_texts(hyp_path)
    ref_ids, refs = _read_texts(ref_path)
    if hyp_ids is not None and ref_ids is not None:
        if sorted(hyp_ids) != sorted(ref_ids):
            raise UsageError("hypothesis and reference ids do not match")
        order = {i: k for k, i in enumerate(hyp_ids)}
        refs = [r for _, r in sorted(zip(ref_ids, refs), key=lambda t: order[t[0]])]
    elif len(hyps) != len(refs):
        raise UsageError(f"line counts differ: {len(hyps)} hyp vs {len(refs)} ref")
    return hyps, refs


def _cmd_gen_data(args):
    resolved = config_mod.load_config(args.config)
    synth = config_mod.synth_config_from(resolved)
    corpus = data.gen_synthetic_corpus(synth)
    data.write_split_dir(args.out, corpus, synth.feature_dim)
    _snapshot(resolved, args.out)
    counts = {k: len(v) for k, v in corpus.items()}
    print(json.dumps({"out": args.out, "feature_dim": synth.feature_dim, **counts}))
    return 0


def _infer_target_lang(resolved, corpus, mode):
    configured = resolved["task"]["target_lang"]
    if configured:
        return configured
    if mode == "many_to_one":
        langs = sorted({s.lang for s in corpus.get("train", [])})
        if len(langs) != 1:
            raise UsageError(
                "many2one needs task.target_lang when the corpus mixes target languages"
            )
        return langs[0]
    return ""


def _cmd_train(args):
    mode = TASK_FLAGS[args.task]
    resolved = config_mod.load_config(args.config, overrides={"task": {"mode": mode}})
    corpus, feature_dim = data.read_split_dir(args.data)
    target = _infer_target_lang(resolved, corpus, mode)
    resolved["task"]["target_lang"] = target
    task = TaskSpec(mode=mode, lid_enabled=resolved["task"]["lid_enabled"],
                    target_lang=target or None)
    result = training.train(resolved, corpus, feature_dim, task, args.out)
    _snapshot(resolved, args.out)
    print(json.dumps({
        "best_ckpt": result.best_ckpt,
        "best_step": result.best_step,
        "best_dev_bleu": result.best_dev_bleu,
        "log": result.log_path,
    }))
    return 0


def _cmd_translate(args):
    echo, params, _ = checkpoint.load_checkpoint(args.ckpt)
    resolved = config_mod.resolve_config(echo["config"])
    overrides = {}
    if args.beam is not None:
        overrides["beam"] = args.beam
    if args.ctc_weight is not None:
        overrides["ctc_weight"] = args.ctc_weight
    resolved["decode"].update(overrides)
    vocab = Vocabulary.from_dict(echo["vocab"])
    cfg = config_mod.model_config_from(
        resolved, echo["feature_dim"], len(vocab), vocab.lid_vocab_size
    )
    task = TaskSpec(mode=echo["task"]["mode"], lid_enabled=echo["task"]["lid_enabled"],
                    target_lang=echo["task"]["target_lang"] or None)
    dcfg = config_mod.decode_config_from(resolved)
    corpus, feature_dim = data.read_split_dir(args.data, splits=(args.split,))
    if feature_dim != echo["feature_dim"]:
        raise UsageError(
            f"manifest feature_dim {feature_dim} != checkpoint {echo['feature_dim']}"
        )
    results = decoding.translate_corpus(params, cfg, dcfg, corpus[args.split], vocab, task)
    decoding.write_hypotheses_tsv(args.out, results)
    _snapshot(resolved, args.out)
    print(json.dumps({"out": args.out, "samples": len(results),
                      "truncated": sum(r.truncated for r in results)}))
    return 0


def _cmd_evaluate(args):
    hyps, refs = _aligned_texts(args.hyp, args.ref)
    wanted = [m.strip() for m in args.metric.split(",") if m.strip()]
    unknown = [m for m in wanted if m not in ("bleu", "rouge")]
    if unknown:
        raise UsageError(f"unknown metrics {unknown}; choose from bleu, rouge")
    for m in wanted:
        if m == "bleu":
            score = metrics.bleu(hyps, refs, tokenizer=args.tokenizer).score
        else:
            score = metrics.rouge_l(hyps, refs, tokenizer=args.tokenizer)
        print(f"{m}\t{score:.4f}")
    return 0


def _cmd_report(args):
    hyps, refs = _aligned_texts(args.hyp, args.ref)
    rows = metrics.length_bucket_report(hyps, refs, args.width)
    metrics.write_bucket_csv(args.out, rows)
    print(json.dumps({"out": args.out, "buckets": len(rows)}))
    return 0


def _cmd_compare(args):
    rows = metrics.compare_runs(metrics.read_scores_tsv(args.a),
                                metrics.read_scores_tsv(args.b))
    metrics.write_delta_tsv(args.out, rows)
    print(json.dumps({"out": args.out, "mean_delta": rows[-1].delta}))
    return 0


def _cmd_study_conflict(args):
    resolved = config_mod.load_config(args.config)
    rows = studies.run_conflict_study(resolved, args.out)
    _snapshot(resolved, args.out)
    print(json.dumps({"out": args.out, "mean_delta": rows[-1].delta}))
    return 0


def _cmd_study_ablation(args):
    resolved = config_mod.load_config(args.config)
    rows = studies.run_ablation(resolved, args.out, args.pairs)
    _snapshot(resolved, args.out)
    print(json.dumps({"out": args.out,
                      "rows": [[c, round(wo, 4), round(w, 4)] for c, wo, w in rows]}))
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "translate": _cmd_translate,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "compare": _cmd_compare,
    "study-conflict": _cmd_study_conflict,
    "study-ablation": _cmd_study_ablation,
}


def dispatch(argv):
    """Route argv to a subcommand; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _HANDLERS[args.command](args)
    except UsageError as e:
        print(f"slt {args.command}: {e}", file=sys.stderr)
        return 2
    except (SltError, OSError, ValueError) as e:
        print(f"slt {args.command}: {e}", file=sys.stderr)
        return 1


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
