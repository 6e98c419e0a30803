"""Anchor / positive / negative groups and frame-level contrastive scoring.

Positives keep the anchor's near-end samples exactly and swap in a new
far-end talker, music noise, room and echo path. Negatives are fresh
mixtures whose near-end and far-end sources both differ from the anchor.
"""

from dataclasses import dataclass

import numpy as np

from .datagen.corpus import (
    GenConfig, MixtureExample, _scale_to_ratio, _segment, active_power, far_end_and_echo,
    render_example, sample_row, source_index,
)
from .datagen.sources import load_source
from .dsp import DEFAULT_FRAME, stft
from .losses import contrastive_loss


@dataclass
class ContrastiveGroup:
    anchor: MixtureExample
    positives: list
    negatives: list

    @property
    def members(self):
        return self.positives + self.negatives

    def __len__(self):
        return 1 + len(self.positives) + len(self.negatives)


def _positive(anchor: MixtureExample, anchor_row, cfg, pool, seed, rng):
    row = sample_row(
        cfg, pool, seed, "train", 0, rng=rng,
        exclude={"far": (source_index(anchor_row["far_source"], pool, "far"),)},
    )
    secs = row["source_seconds"]
    x, d = far_end_and_echo(
        row, load_source(row["far_source"], seed, secs), load_source(row["music_source"], seed, secs)
    )
    v = _segment(load_source(row["noise_source"], seed, secs), row["noise_offset"], row["segment_len"])
    s = anchor.near_end
    if active_power(s) > 0:
        d = _scale_to_ratio(s, d, anchor_row["ser_db"], "SER")
        v = _scale_to_ratio(s, v, anchor_row["snr_db"], "SNR")
    else:
        # silent anchor near end: match the anchor's echo and noise levels instead
        d = d * np.sqrt(active_power(anchor.echo) / active_power(d)) if active_power(anchor.echo) > 0 else d * 0
        v = v * np.sqrt(active_power(anchor.noise) / active_power(v)) if active_power(anchor.noise) > 0 else v * 0
    d = d.astype(np.float32)
    v = v.astype(np.float32)
    return MixtureExample(
        near_end=s, far_end=x.astype(np.float32), echo=d, noise=v, mic=s + d + v,
        meta={"id": f"{anchor_row['id']}+pos", "scenario": "double_talk" if s.any() else "far_only"},
    )


def build_group(rows, anchor_id: str, P: int = 1, N: int = 4, seed: int = 0,
                cfg: GenConfig | None = None) -> ContrastiveGroup:
    """Deterministic contrastive group around ``anchor_id``."""
    cfg = cfg or GenConfig()
    by_id = {r["id"]: r for r in rows}
    if anchor_id not in by_id:
        raise KeyError(f"anchor {anchor_id!r} not in manifest")
    anchor_row = by_id[anchor_id]
    corpus_seed = anchor_row["seed"]
    pool = cfg.pool(corpus_seed)
    if pool.size("near") < N + 1:
        raise ValueError(f"need >= {N + 1} distinct near-end sources, pool has {pool.size('near')}")
    if pool.size("far") < P + 1:
        raise ValueError(f"need >= {P + 1} distinct far-end sources, pool has {pool.size('far')}")
    anchor = render_example(anchor_row)
    rng = np.random.default_rng([seed, anchor_row["index"], 0xC0])
    positives = [_positive(anchor, anchor_row, cfg, pool, corpus_seed, rng) for _ in range(P)]
    near_i = source_index(anchor_row["near_source"], pool, "near")
    far_i = source_index(anchor_row["far_source"], pool, "far")
    negatives = []
    for j in range(N):
        row = sample_row(cfg, pool, corpus_seed, "train", 0, rng=rng,
                         exclude={"near": (near_i,), "far": (far_i,)}, scenario="double_talk")
        row["id"] = f"{anchor_id}-neg{j}"
        negatives.append(render_example(row))
    return ContrastiveGroup(anchor, positives, negatives)


def group_spectra(group: ContrastiveGroup, cfg=DEFAULT_FRAME):
    """Mic and far-end spectra of the non-anchor members, stacked (positives first)."""
    mic = stft(np.stack([m.mic for m in group.members]).astype(np.float64), cfg)
    far = stft(np.stack([m.far_end for m in group.members]).astype(np.float64), cfg)
    return mic, far


def contrastive_forward(model, anchor_feats, member_mic, member_far, n_pos):
    """Scores and loss for one anchor. Returns ``(loss, scores, cache)``.

    ``anchor_feats`` is the anchor's FEN output ``(T, C)``; members are run
    through the same FEN weights.
    """
    head = model.layers["score"]
    member_feats, fen_cache = model.features(member_mic, member_far)
    a_ds, a_cache = head.downsample(anchor_feats[None])
    o_ds, o_cache = head.downsample(member_feats)
    scores, s_cache = head.scores(a_ds[0], o_ds)
    loss = contrastive_loss(scores[:n_pos], scores[n_pos:])
    return loss, scores, (fen_cache, a_cache, o_cache, s_cache, n_pos)


def contrastive_backward(model, cache, scale=1.0):
    """Accumulate parameter gradients; returns d(loss)/d(anchor features)."""
    fen_cache, a_cache, o_cache, s_cache, n_pos = cache
    head = model.layers["score"]
    a, o, aB = s_cache
    scores = np.einsum("td,mtd->mt", aB, o)
    _, d_pos, d_neg = contrastive_loss(scores[:n_pos], scores[n_pos:], with_grad=True)
    ds = (np.concatenate([d_pos, d_neg], axis=0) * scale).astype(a.dtype)
    da, do = head.scores_backward(ds, s_cache)
    d_anchor = head.downsample_backward(da[None], a_cache)[0]
    d_member_feats = head.downsample_backward(do, o_cache)
    model.fen_backward(d_member_feats, fen_cache)
    return d_anchor


def contrastive_step(group: ContrastiveGroup, model, cfg=DEFAULT_FRAME):
    """Forward every member with shared weights and score against the anchor.

    Returns ``(loss, scores)`` where ``scores`` is ``(P + N, ceil(T / stride))``.
    """
    Y = stft(group.anchor.mic.astype(np.float64), cfg)
    X = stft(group.anchor.far_end.astype(np.float64), cfg)
    anchor_feats, _ = model.features(Y, X)
    mic, far = group_spectra(group, cfg)
    loss, scores, _ = contrastive_forward(model, anchor_feats[0], mic, far, len(group.positives))
    return loss, scores
