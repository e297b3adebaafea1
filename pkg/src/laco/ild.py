"""Iterative latent deliberation: recursive forward passes in hidden space.

Instead of projecting the hidden state to vocabulary space and decoding a
token, each step maps the previous hidden state through a fixed alignment
projection back toward the input-embedding distribution and feeds it in as
the next input.  The cache grows by one ego-latent position per step and no
vocabulary projection ever happens.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, ConfigError
from .model import EGO_LATENT, AttentionTrace, KVCache, Model, forward_decode


@dataclass
class AlignmentProjection:
    """d x d map sending hidden states toward the input-embedding manifold."""

    w_a: np.ndarray
    tolerance: float


def compute_alignment(model: Model, tolerance: float = 1e-6) -> AlignmentProjection:
    """Build (once) the alignment W_a from the output head and input embedding.

    The hidden state is read out to a minimum-norm vocabulary weighting
    through the pseudo-inverse of the output head, then re-embedded through
    the input matrix, so every aligned vector is a mixture of real token
    embeddings.  The pseudo-inverse is SVD-based with singular values below
    ``tolerance * sigma_max`` truncated.  The result is memoized on the model
    and returned unchanged by later calls.
    """
    if model._alignment is not None:
        return model._alignment
    try:
        # pinv of the (vocab, d)-shaped head weight; (d, vocab) @ (vocab, d) -> (d, d)
        inv = np.linalg.pinv(model.w_out.T.astype(np.float64), rcond=tolerance)
    except np.linalg.LinAlgError as exc:
        raise AlignmentError(f"SVD failed while building alignment: {exc}") from exc
    w_a = (inv @ model.w_in.astype(np.float64)).astype(np.float32)
    model._alignment = AlignmentProjection(w_a=w_a, tolerance=tolerance)
    return model._alignment


@dataclass
class DeliberationResult:
    final_hidden: np.ndarray
    trace: AttentionTrace
    steps: int


def deliberate(
    model: Model,
    alignment: AlignmentProjection,
    h0: np.ndarray,
    cache: KVCache,
    m: int,
    fused_segments=(),
) -> DeliberationResult:
    """Run m latent steps, appending ego-latent positions to the cache.

    ``fused_segments`` lets received foreign context participate in the
    latent steps themselves; the default (empty) keeps deliberation fully
    ego-local and fuses only at the final decision decode.

    With m = 0 the cache and hidden state are returned untouched and the
    trace is empty.
    """
    if m < 0:
        raise ConfigError("step count m must be >= 0")
    cfg = model.config
    base = cache.length
    trace = AttentionTrace(m, cfg.num_layers, cfg.num_heads, base + m + _extra(fused_segments))
    h = np.asarray(h0, dtype=np.float32)
    logit_calls_before = model.stats.logit_projections
    for _ in range(m):
        e_hat = h @ alignment.w_a
        h, rows_per_layer = forward_decode(model, e_hat, cache, fused_segments, tag=EGO_LATENT)
        trace.record(_stack_rows(rows_per_layer), rows_per_layer[0].shape[1])
    assert model.stats.logit_projections == logit_calls_before, "deliberation must not decode"
    return DeliberationResult(final_hidden=h, trace=trace, steps=m)


def _extra(segments) -> int:
    return sum(seg.keys.shape[2] for seg in segments)


def _stack_rows(rows_per_layer) -> np.ndarray:
    """Stack per-layer rows into (L, H, n), zero-padding shallower layers.

    Layers attending over fused context have longer rows than ego-only
    layers; with no fused segments all lengths agree and no padding happens.
    """
    n = max(r.shape[1] for r in rows_per_layer)
    L = len(rows_per_layer)
    H = rows_per_layer[0].shape[0]
    out = np.zeros((L, H, n), dtype=np.float32)
    for l, r in enumerate(rows_per_layer):
        out[l, :, : r.shape[1]] = r
    return out
