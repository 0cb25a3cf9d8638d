"""Linear-chain CRF over the 13 BIO tags.

Exact log-partition via the forward recursion, gradients via
forward-backward marginals, and Viterbi decoding with optional BIO
well-formedness constraints.  All arithmetic is in log space with
max-shifted logsumexp; documents in this domain run to ~900 tokens, so
naive probability products would underflow.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .corpus import BIO_TAGS, N_TAGS, TAG_INDEX


class CrfError(Exception):
    pass


class LengthMismatch(CrfError):
    pass


@dataclass
class CrfParams:
    transitions: np.ndarray  # [from, to]
    start: np.ndarray
    stop: np.ndarray

    @classmethod
    def zeros(cls, n_tags=N_TAGS, dtype=np.float64):
        return cls(
            np.zeros((n_tags, n_tags), dtype=dtype),
            np.zeros(n_tags, dtype=dtype),
            np.zeros(n_tags, dtype=dtype),
        )

    @classmethod
    def random(cls, rng, n_tags=N_TAGS, scale=1.0, dtype=np.float64):
        return cls(
            (rng.standard_normal((n_tags, n_tags)) * scale).astype(dtype),
            (rng.standard_normal(n_tags) * scale).astype(dtype),
            (rng.standard_normal(n_tags) * scale).astype(dtype),
        )


def bio_transition_mask(tags=BIO_TAGS):
    """(start_mask, trans_mask): 0 where allowed, -inf where a transition
    would create a stray I tag."""
    n = len(tags)
    start = np.zeros(n)
    trans = np.zeros((n, n))
    for j, tag in enumerate(tags):
        if tag.startswith("I-"):
            label = tag[2:]
            start[j] = -np.inf
            for i, prev in enumerate(tags):
                if prev == "O" or (prev != f"B-{label}" and prev != f"I-{label}"):
                    trans[i, j] = -np.inf
    return start, trans


_BIO_START_MASK, _BIO_TRANS_MASK = bio_transition_mask()


def tags_to_indices(tags):
    return [t if isinstance(t, int) else TAG_INDEX[t] for t in tags]


def path_score(emissions, params, tags):
    """Score of one tag path: start + emissions + transitions + stop,
    summed left to right."""
    s = emissions.shape[0]
    if len(tags) != s:
        raise LengthMismatch(f"{len(tags)} tags for {s} emissions")
    idx = tags_to_indices(tags)
    total = params.start[idx[0]] + emissions[0, idx[0]]
    for j in range(1, s):
        total = total + params.transitions[idx[j - 1], idx[j]] + emissions[j, idx[j]]
    return float(total + params.stop[idx[-1]])


def _forward(emissions, params):
    s = emissions.shape[0]
    alphas = np.empty_like(emissions)
    alphas[0] = params.start + emissions[0]
    for j in range(1, s):
        alphas[j] = (
            logsumexp(alphas[j - 1][:, None] + params.transitions, axis=0)
            + emissions[j]
        )
    return alphas


def _backward(emissions, params):
    s = emissions.shape[0]
    betas = np.empty_like(emissions)
    betas[-1] = params.stop
    for j in range(s - 2, -1, -1):
        betas[j] = logsumexp(
            params.transitions + (emissions[j + 1] + betas[j + 1])[None, :], axis=1
        )
    return betas


def log_partition(emissions, params):
    alphas = _forward(emissions, params)
    return float(logsumexp(alphas[-1] + params.stop))


def nll_and_grads(emissions, params, gold_tags):
    """Negative log-likelihood of the gold path and its exact gradients.

    Gradients are model expectations (forward-backward marginals) minus
    empirical counts.
    """
    s, n = emissions.shape
    if len(gold_tags) != s:
        raise LengthMismatch(f"{len(gold_tags)} tags for {s} emissions")
    idx = tags_to_indices(gold_tags)

    alphas = _forward(emissions, params)
    betas = _backward(emissions, params)
    log_z = logsumexp(alphas[-1] + params.stop)
    loss = log_z - path_score(emissions, params, idx)

    # Unary marginals.
    unary = np.exp(alphas + betas - log_z)

    d_e = unary.copy()
    d_e[np.arange(s), idx] -= 1.0

    d_start = unary[0].copy()
    d_start[idx[0]] -= 1.0
    d_stop = unary[-1].copy()
    d_stop[idx[-1]] -= 1.0

    d_trans = np.zeros_like(params.transitions)
    for j in range(s - 1):
        pair = np.exp(
            alphas[j][:, None]
            + params.transitions
            + (emissions[j + 1] + betas[j + 1])[None, :]
            - log_z
        )
        d_trans += pair
        d_trans[idx[j], idx[j + 1]] -= 1.0

    grads = CrfParams(d_trans, d_start, d_stop)
    return float(loss), d_e, grads


def viterbi(emissions, params, constrain_bio=False):
    """Maximum-score tag path, ties broken toward the lower tag index at
    every backpointer.  Returns (tag_names, score); the score is the
    left-to-right re-summation of the returned path."""
    s, n = emissions.shape
    start = params.start + (_BIO_START_MASK if constrain_bio else 0.0)
    trans = params.transitions + (_BIO_TRANS_MASK if constrain_bio else 0.0)

    delta = start + emissions[0]
    backptr = np.empty((s, n), dtype=np.int64)
    for j in range(1, s):
        cand = delta[:, None] + trans  # [prev, cur]
        backptr[j] = np.argmax(cand, axis=0)  # argmax picks the lowest index on ties
        delta = cand[backptr[j], np.arange(n)] + emissions[j]
    delta = delta + params.stop

    path = [int(np.argmax(delta))]
    for j in range(s - 1, 0, -1):
        path.append(int(backptr[j, path[-1]]))
    path.reverse()

    score = params.start[path[0]] + emissions[0, path[0]]
    if constrain_bio:
        score = score + _BIO_START_MASK[path[0]]
    for j in range(1, s):
        score = score + trans[path[j - 1], path[j]] + emissions[j, path[j]]
    score = float(score + params.stop[path[-1]])
    return [BIO_TAGS[t] for t in path], score
