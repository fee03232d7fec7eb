"""Gloss-free multilingual sign-language translation with dual CTC objectives.

Library layout:
    numerics   deterministic RNG, Adam, Xavier init, finite-difference oracle
    autodiff   minimal reverse-mode tape over float64 numpy arrays
    ctc        CTC loss/gradient, enumeration oracle, greedy + prefix scoring
    model      hierarchical encoder (LID + text CTC heads), attention decoder
    data       vocabularies, label construction, synthetic corpora, manifests
    training   deterministic training loop with dev-BLEU selection
    decoding   joint CTC/attention beam search
    metrics    BLEU, ROUGE-L, length buckets, run comparison tables
    config     flat-sectioned config files and resolved snapshots
    studies    conflict and LID-ablation experiment pipelines
    cli        the `slt` command

Kept import-light on purpose: the CLI pins BLAS thread pools before numpy
loads, so this module must not pull numpy transitively.
"""

__version__ = "0.1.0"
