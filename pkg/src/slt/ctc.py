"""Connectionist Temporal Classification in log space.

Forward-backward loss with an analytic gradient w.r.t. the log posteriors,
an exhaustive-enumeration oracle, greedy best-path decoding, and incremental
prefix scoring for label-synchronous joint beam search.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InfeasibleAlignmentError, UsageError

NEG_INF = float("-inf")

# Infeasible samples inside a batched training loss contribute this constant
# with zero gradient instead of raising, so one degenerate sample cannot
# poison a batch with non-finite values.
INFEASIBLE_PENALTY = 1.0e4


def _check_posteriors(log_probs):
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[0] < 1 or log_probs.shape[1] < 2:
        raise UsageError("CTC posteriors must be a (frames, vocab>=2) matrix")
    return log_probs


def min_frames(target):
    """Minimum alignment length: |target| plus one per adjacent equal pair."""
    target = list(target)
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def _extended(target, blank_id):
    ext = np.full(2 * len(target) + 1, blank_id, dtype=np.int64)
    ext[1::2] = target
    return ext


def ctc_loss(log_probs, target, blank_id):
    """Negative log marginal probability of `target` plus d loss / d log_probs.

    log_probs: (T, V) log emission scores (rows need not be normalized);
    returns (loss, grad) with grad shaped like log_probs.
    """
    log_probs = _check_posteriors(log_probs)
    T, V = log_probs.shape
    target = [int(t) for t in target]
    if any(t == blank_id for t in target):
        raise UsageError("CTC target must not contain the blank id")
    if any(not 0 <= t < V for t in target):
        raise UsageError("CTC target id outside the posterior vocabulary")
    if T < min_frames(target):
        raise InfeasibleAlignmentError(
            f"target needs >= {min_frames(target)} frames, got {T}"
        )

    ext = _extended(target, blank_id)
    S = ext.size
    lp = log_probs[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed only onto a label differing from ext[s-2]
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (ext[2:] != blank_id) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = lp[0, 0]
    if S > 1:
        alpha[0, 1] = lp[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate(([NEG_INF], prev))[:S]
        skip = np.concatenate(([NEG_INF, NEG_INF], prev))[:S]
        skip = np.where(skip_ok, skip, NEG_INF)
        alpha[t] = _logaddexp3(stay, step, skip) + lp[t]

    tail = alpha[T - 1, S - 1] if S == 1 else np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    log_p = float(tail)
    if log_p == NEG_INF:
        raise InfeasibleAlignmentError("no feasible alignment has nonzero probability")

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = lp[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = lp[T - 1, S - 2]
    skip_ok_fwd = np.concatenate((skip_ok[2:], [False, False]))[:S]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        stay = nxt
        step = np.concatenate((nxt[1:], [NEG_INF]))[:S]
        skip = np.concatenate((nxt[2:], [NEG_INF, NEG_INF]))[:S]
        skip = np.where(skip_ok_fwd, skip, NEG_INF)
        beta[t] = _logaddexp3(stay, step, skip) + lp[t]

    # occupancy of state s at frame t: alpha + beta double-counts the frame-t
    # emission, so subtract lp once before normalizing by log_p
    occ = alpha + beta - lp - log_p
    grad = np.zeros_like(log_probs)
    expocc = np.exp(occ)
    for s in range(S):
        grad[:, ext[s]] -= expocc[:, s]
    return -log_p, grad


def _logaddexp3(a, b, c):
    return np.logaddexp(np.logaddexp(a, b), c)


def _collapse(path, blank_id):
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank_id:
            out.append(p)
        prev = p
    return tuple(out)


@lru_cache(maxsize=32)
def _path_table(T, V, blank_id):
    """All V**T frame paths with their collapsed outputs, grouped by output."""
    paths = np.array(list(itertools.product(range(V), repeat=T)), dtype=np.int64)
    groups = {}
    for i, row in enumerate(paths):
        groups.setdefault(_collapse(row, blank_id), []).append(i)
    return paths, {k: np.array(v) for k, v in groups.items()}


def ctc_loss_bruteforce(log_probs, target, blank_id):
    """Enumeration oracle: sum path probabilities over all V**T paths.

    Returns +inf for targets no path collapses to. Sizes are capped so the
    enumeration stays tractable.
    """
    log_probs = _check_posteriors(log_probs)
    T, V = log_probs.shape
    target = tuple(int(t) for t in target)
    if V > 6 or T > 8 or len(target) > 4:
        raise UsageError("bruteforce oracle limited to V<=6, T<=8, L<=4")
    if any(t == blank_id for t in target):
        raise UsageError("CTC target must not contain the blank id")
    paths, groups = _path_table(T, V, blank_id)
    idx = groups.get(target)
    if idx is None:
        return float("inf")
    path_lp = log_probs[np.arange(T)[None, :], paths[idx]].sum(axis=1)
    m = path_lp.max()
    return float(-(m + np.log(np.exp(path_lp - m).sum())))


def ctc_greedy_decode(log_probs, blank_id):
    """Best-path decoding: per-frame argmax, collapse repeats, drop blanks."""
    log_probs = _check_posteriors(log_probs)
    return list(_collapse(log_probs.argmax(axis=1), blank_id))


# ---------------------------------------------------------------------------
# Prefix scoring for joint CTC/attention beam search
# ---------------------------------------------------------------------------


@dataclass
class CtcPrefixState:
    """Forward variables of one prefix over all frames.

    r[:, 0] is the log probability of emitting the prefix with the last
    frame producing its final non-blank symbol; r[:, 1] the same ending in
    blank. score is the cumulative prefix log probability psi(prefix).
    """

    prefix: tuple
    r: np.ndarray  # (T, 2)
    score: float


def ctc_prefix_init(log_probs, blank_id) -> CtcPrefixState:
    """State of the empty prefix: all mass on all-blank paths."""
    log_probs = _check_posteriors(log_probs)
    T = log_probs.shape[0]
    r = np.full((T, 2), NEG_INF)
    r[:, 1] = np.cumsum(log_probs[:, blank_id])
    return CtcPrefixState(prefix=(), r=r, score=0.0)


def ctc_prefix_score_batch(state, candidates, log_probs, blank_id):
    """Prefix scores for every candidate extension at once.

    Returns (psi, r_new) with psi shaped (C,) holding the cumulative prefix
    log probability of prefix+c, and r_new shaped (C, T, 2).
    """
    log_probs = _check_posteriors(log_probs)
    T = log_probs.shape[0]
    cs = np.asarray(candidates, dtype=np.int64)
    if np.any(cs == blank_id):
        raise UsageError("blank cannot extend a CTC prefix")
    n = len(state.prefix)
    if state.r.shape[0] != T:
        raise UsageError("prefix state does not match the posterior length")

    xs = log_probs[:, cs]  # (T, C)
    r_sum = np.logaddexp(state.r[:, 0], state.r[:, 1])  # (T,)
    log_phi = np.tile(r_sum[:, None], (1, cs.size))
    if n > 0:
        # a repeat of the prefix's last symbol may only follow a blank-ending path
        repeat = cs == state.prefix[-1]
        if repeat.any():
            log_phi[:, repeat] = state.r[:, 1][:, None]

    r_n = np.full((T, cs.size), NEG_INF)
    r_b = np.full((T, cs.size), NEG_INF)
    if n == 0:
        r_n[0] = xs[0]
    start = max(n, 1)
    psi = r_n[start - 1].copy()
    blank_lp = log_probs[:, blank_id]
    for t in range(start, T):
        r_n[t] = np.logaddexp(r_n[t - 1], log_phi[t - 1]) + xs[t]
        r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + blank_lp[t]
        psi = np.logaddexp(psi, log_phi[t - 1] + xs[t])

    r_new = np.stack([r_n, r_b], axis=2).transpose(1, 0, 2)  # (C, T, 2)
    return psi, r_new


def ctc_prefix_score(state, next_token, log_probs, blank_id):
    """Extend the prefix by one token: (score delta, new state)."""
    psi, r_new = ctc_prefix_score_batch(state, [int(next_token)], log_probs, blank_id)
    new_state = CtcPrefixState(
        prefix=state.prefix + (int(next_token),), r=r_new[0], score=float(psi[0])
    )
    return float(psi[0]) - state.score, new_state


def ctc_prefix_finalize(state) -> float:
    """Full-sequence log probability of the prefix (equals -ctc_loss of it)."""
    return float(np.logaddexp(state.r[-1, 0], state.r[-1, 1]))
