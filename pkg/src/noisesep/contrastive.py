"""Patch-wise contrastive loss between predicted speech, ground truth and predicted noise.

Queries come from a predicted representation, positives from the ground
truth at the same frame, negatives from the opposing representation.  All
three pass through one shared projection head and land on the unit sphere.
With a patch size of one, a "patch" is a single N-dimensional frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.tensor import ShapeError
from .errors import ConfigError

DIRECTIONS = ("s_to_n", "n_to_s", "both")


@dataclass
class PCLConfig:
    M: int = 256
    P: int = 1
    Q: int = 256
    tau: float = 0.07
    direction: str = "s_to_n"
    lam: float = 2.0

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if self.P != 1:
            raise ConfigError("only patch size P=1 is supported")
        if self.Q < 1:
            raise ConfigError("Q must be >= 1")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")


@dataclass
class PatchSet:
    queries: Tensor  # (M, Q)
    positives: Tensor  # (M, Q)
    negatives: Tensor  # (M, Q)
    query_idx: np.ndarray
    negative_idx: np.ndarray

    @property
    def M(self) -> int:
        return self.queries.shape[0]


def project(model, frames: Tensor) -> Tensor:
    """Shared two-layer head (N -> Q -> Q, ReLU between), then unit-normalize rows."""
    z = ops.relu(ops.affine(frames, model["proj.w1"], model["proj.b1"]))
    z = ops.affine(z, model["proj.w2"], model["proj.b2"])
    return ops.l2_normalize(z, axis=1)


def _frames(h: Tensor, idx: np.ndarray) -> Tensor:
    return ops.transpose(ops.take(h, idx, axis=1))  # (M, N)


def sample_patches(model, h_pred: Tensor, h_truth: Tensor, h_neg: Tensor, cfg: PCLConfig,
                   rng: np.random.Generator) -> PatchSet:
    """Draw M query frames (with replacement), the matching truth frames, and
    M independent negative frames, and embed them.

    ``h_neg`` may be wider than the others (several maps laid side by side);
    negative indices are drawn uniformly over its full width.
    """
    if h_pred.shape != h_truth.shape or h_pred.shape[0] != h_neg.shape[0] or h_pred.ndim != 2:
        raise ShapeError("sample_patches",
                         f"pred {h_pred.shape}, truth {h_truth.shape}, negatives {h_neg.shape}")
    L = h_pred.shape[1]
    q_idx = rng.integers(0, L, size=cfg.M)
    n_idx = rng.integers(0, h_neg.shape[1], size=cfg.M)
    frames = ops.concat([_frames(h_pred, q_idx), _frames(h_truth, q_idx), _frames(h_neg, n_idx)], axis=0)
    emb = project(model, frames)
    M = cfg.M
    return PatchSet(emb[:M], emb[M:2 * M], emb[2 * M:], q_idx, n_idx)


def pcl_loss(ps: PatchSet, tau: float) -> Tensor:
    """Mean over comparisons of the (M+1)-way cross-entropy picking the positive."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    M = ps.M
    pos = ops.scale(ops.sum_(ops.mul(ps.queries, ps.positives), axis=1), 1.0 / tau)  # (M,)
    neg = ops.scale(ops.matmul(ps.queries, ops.transpose(ps.negatives)), 1.0 / tau)  # (M, M)
    logits = ops.concat([ops.reshape(pos, (M, 1)), neg], axis=1)
    return ops.mean(ops.sub(ops.logsumexp(logits, axis=1), pos))


def pcl_loss_from_similarities(pos_sim: np.ndarray, neg_sim: np.ndarray, tau: float) -> float:
    """Same loss evaluated straight from cosine similarities (M,) and (M, M_neg)."""
    pos = np.asarray(pos_sim, dtype=np.float64) / tau
    logits = np.concatenate([pos[:, None], np.asarray(neg_sim, dtype=np.float64) / tau], axis=1)
    m = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - m).sum(axis=1)) + m[:, 0]
    return float(np.mean(lse - pos))


@dataclass
class PCLResult:
    loss: Tensor
    permutation: tuple[int, ...]
    patch_sets: list[PatchSet] = field(default_factory=list)

    @property
    def num_comparisons(self) -> int:
        return sum(ps.M for ps in self.patch_sets)


def pcl_total(model, reprs: Sequence[Tensor], truth_reprs: Sequence[Tensor], cfg: PCLConfig,
              rng: np.random.Generator, permutation: Sequence[int],
              noise_truth_repr: Tensor | None = None) -> PCLResult:
    """Contrastive term for one utterance.

    ``reprs`` are the masked representations for every output (speakers in
    model order, noise last); ``truth_reprs`` are encoded ground-truth speaker
    stems, treated as constants.  ``permutation[t]`` is the predicted speaker
    aligned with truth speaker ``t``.
    """
    C = len(truth_reprs)
    permutation = tuple(int(p) for p in permutation)
    if sorted(permutation) != list(range(C)):
        raise ConfigError(f"permutation {permutation} is not a bijection on {C} speakers")
    if len(reprs) < C + 1:
        raise ConfigError(f"direction {cfg.direction!r} needs a predicted noise representation")
    truth = [Tensor(t.data) for t in truth_reprs]  # detached
    h_noise = reprs[C]
    sets: list[PatchSet] = []
    terms: list[Tensor] = []
    if cfg.direction in ("s_to_n", "both"):
        per_spk = []
        for t in range(C):
            ps = sample_patches(model, reprs[permutation[t]], truth[t], h_noise, cfg, rng)
            sets.append(ps)
            per_spk.append(pcl_loss(ps, cfg.tau))
        terms.append(ops.scale(ops.sum_(ops.stack(per_spk)), 1.0 / C))
    if cfg.direction in ("n_to_s", "both"):
        if noise_truth_repr is None:
            raise ConfigError("n_to_s needs the encoded ground-truth noise")
        all_speech = ops.concat(truth, axis=1)  # (N, C*L): uniform over speakers and frames
        ps = sample_patches(model, h_noise, Tensor(noise_truth_repr.data), all_speech, cfg, rng)
        sets.append(ps)
        terms.append(pcl_loss(ps, cfg.tau))
    loss = terms[0] if len(terms) == 1 else ops.add(terms[0], terms[1])
    return PCLResult(loss, permutation, sets)
