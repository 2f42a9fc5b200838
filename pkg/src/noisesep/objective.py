"""SI-SNR, utterance-level permutation search, and the combined objective."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, no_grad, ops
from .contrastive import PCLConfig, pcl_total
from .errors import ContractError, DegenerateInputError
from .signals import AudioSignal

CLAMP_DB = -30.0
METRIC_CAP_DB = 60.0
_LN10 = np.log(10.0)
_EPS = 1e-12


def _arr(x) -> np.ndarray:
    if isinstance(x, AudioSignal):
        return x.samples
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def si_snr(est, ref, cap_db: float = METRIC_CAP_DB) -> float:
    """Scale-invariant SNR in dB, clipped to [-cap_db, cap_db].

    A zero residual reports +cap_db; a zero estimate reports -cap_db.
    """
    e, r = _arr(est), _arr(ref)
    if e.shape != r.shape:
        raise ContractError(f"si_snr: length mismatch {e.shape} vs {r.shape}")
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise DegenerateInputError("si_snr: reference is all zeros")
    target = (float(np.dot(e, r)) / rr) * r
    num = float(np.dot(target, target))
    res = e - target
    den = float(np.dot(res, res))
    if num == 0.0:
        return -cap_db
    if den == 0.0:
        return cap_db
    return float(np.clip(10.0 * np.log10(num / den), -cap_db, cap_db))


def neg_si_snr(est: Tensor, ref: np.ndarray) -> Tensor:
    """Differentiable -SI-SNR(est, ref) in dB; ``ref`` is a constant."""
    r = _arr(ref)
    rr = float(np.dot(r, r))
    if rr == 0.0:
        raise DegenerateInputError("si_snr: reference is all zeros")
    if est.shape != r.shape:
        raise ContractError(f"si_snr: length mismatch {est.shape} vs {r.shape}")
    R = Tensor(r)
    alpha = ops.scale(ops.sum_(ops.mul(est, R)), 1.0 / rr)
    target = ops.mul(alpha, R)
    res = ops.sub(est, target)
    num = ops.scale(ops.mul(alpha, alpha), rr)
    den = ops.sum_(ops.mul(res, res))
    ratio = ops.sub(ops.log(ops.add(num, _EPS)), ops.log(ops.add(den, _EPS)))
    return ops.scale(ratio, -10.0 / _LN10)


def neg_si_snr_value(est: np.ndarray, ref: np.ndarray) -> float:
    """Float twin of :func:`neg_si_snr` (same eps), used for the permutation search."""
    rr = float(np.dot(ref, ref))
    alpha = float(np.dot(est, ref)) / rr
    res = est - alpha * ref
    num = alpha * alpha * rr
    den = float(np.dot(res, res))
    return -10.0 * (np.log(num + _EPS) - np.log(den + _EPS)) / _LN10


@dataclass
class UpitResult:
    loss: Tensor
    permutation: tuple[int, ...]  # permutation[t] = predicted index matched to truth t
    per_source_si_snr: list[float]


def upit_si_snr_loss(
    ests: Sequence[Tensor],
    refs: Sequence[np.ndarray],
    noise_est: Tensor | None = None,
    noise_ref: np.ndarray | None = None,
    clamp_db: float = CLAMP_DB,
) -> UpitResult:
    """Clamped negative SI-SNR under the best speaker assignment.

    Every C! assignment of predicted speakers to truth stems is scored by the
    mean of max(-SI-SNR, clamp_db); the noise output, when present, is always
    paired with the noise stem and joins the average of the chosen assignment.
    """
    C = len(refs)
    if len(ests) != C:
        raise ContractError(f"upit: {len(ests)} speaker estimates for {C} references")
    if (noise_est is None) != (noise_ref is None):
        raise ContractError("upit: noise estimate and noise reference must come together")
    refs = [_arr(r) for r in refs]
    pair = np.empty((C, C))
    for i in range(C):
        for j in range(C):
            pair[i, j] = max(neg_si_snr_value(ests[i].data, refs[j]), clamp_db)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(C)):
        cost = float(np.mean([pair[perm[t], t] for t in range(C)]))
        if cost < best_cost:
            best, best_cost = perm, cost
    terms = [ops.clamp_min(neg_si_snr(ests[best[t]], refs[t]), clamp_db) for t in range(C)]
    per_source = [-float(neg_si_snr_value(ests[best[t]].data, refs[t])) for t in range(C)]
    if noise_est is not None:
        terms.append(ops.clamp_min(neg_si_snr(noise_est, _arr(noise_ref)), clamp_db))
        per_source.append(-float(neg_si_snr_value(noise_est.data, _arr(noise_ref))))
    loss = ops.scale(ops.sum_(ops.stack(terms)), 1.0 / len(terms))
    return UpitResult(loss, tuple(best), per_source)


@dataclass
class LossReport:
    total: Tensor
    si_snr_term: Tensor
    pcl_term: Tensor
    permutation: tuple[int, ...]
    pcl_permutation: tuple[int, ...] | None
    per_source_si_snr: list[float]
    lam: float

    def floats(self) -> tuple[float, float, float]:
        return float(self.total.data), float(self.si_snr_term.data), float(self.pcl_term.data)


def encode_truth(model, signals: Sequence[AudioSignal | np.ndarray]) -> list[Tensor]:
    """Encode ground-truth stems as constants (no gradient path to the encoder)."""
    from .separator import encode

    with no_grad():
        return [Tensor(encode(model, s).data) for s in signals]


def total_loss(model, sep, speakers: Sequence, noise, pcl_cfg: PCLConfig,
               rng: np.random.Generator, clamp_db: float = CLAMP_DB,
               truth_reprs: Sequence[Tensor] | None = None,
               noise_truth_repr: Tensor | None = None) -> LossReport:
    """SI-SNR term plus lambda times the contrastive term, sharing one permutation.

    ``sep`` is a :class:`~noisesep.separator.Separation`; ``speakers`` and
    ``noise`` are the ground-truth stems.  Encoded truth representations are
    computed from the current encoder unless given.
    """
    ref_spk = [_arr(s) for s in speakers]
    ref_noise = _arr(noise) if (noise is not None and sep.noise is not None) else None
    upit = upit_si_snr_loss(sep.speakers, ref_spk, sep.noise, ref_noise, clamp_db)
    if pcl_cfg.lam == 0.0 or sep.noise is None:
        if pcl_cfg.lam != 0.0:
            raise ContractError("contrastive term needs the noise-speaker output")
        pcl = Tensor(0.0)
        total = upit.loss
        pcl_perm = None
    else:
        truth = truth_reprs if truth_reprs is not None else encode_truth(model, ref_spk)
        noise_truth = noise_truth_repr
        if noise_truth is None and pcl_cfg.direction != "s_to_n":
            noise_truth = encode_truth(model, [ref_noise])[0]
        res = pcl_total(model, sep.reprs, truth, pcl_cfg, rng, upit.permutation, noise_truth)
        pcl = res.loss
        pcl_perm = res.permutation
        total = ops.add(upit.loss, ops.scale(pcl, pcl_cfg.lam))
    return LossReport(total, upit.loss, pcl, upit.permutation, pcl_perm,
                      upit.per_source_si_snr, pcl_cfg.lam)
