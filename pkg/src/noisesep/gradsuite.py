"""The gradient-check battery: every differentiable primitive plus the model,
contrastive, SI-SNR and total losses on a tiny configuration."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Tensor, grad_check, ops
from .autodiff.gradcheck import GradCheckReport
from .contrastive import PCLConfig, pcl_total
from .objective import encode_truth, neg_si_snr, total_loss, upit_si_snr_loss
from .separator import SeparatorConfig, SeparatorModel, encode, masking_net, separate
from .signals import DatasetConfig, make_item

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4

TINY_MODEL = dict(N=8, K=4, blocks=1, Q=8, hidden=8)
TINY_PCL = dict(M=4, Q=8)
TINY_T = 160

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], list[Tensor]]]


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _away(rng, shape, margin=0.1):
    """Random values with |x| >= margin, keeping kinks out of difference stencils."""
    x = rng.standard_normal(shape)
    return np.where(x >= 0, x + margin, x - margin)


def _weighted(y: Tensor, seed: int) -> Tensor:
    # a fixed random linear read-out so every output coordinate matters differently
    w = Tensor(np.random.default_rng(seed).standard_normal(y.shape))
    return ops.sum_(ops.mul(y, w))


def _unary(op, sample=None) -> Case:
    def build(rng):
        rs = int(rng.integers(2**31))
        x = _t(sample(rng) if sample else rng.standard_normal((3, 4)))
        return (lambda: _weighted(op(x), rs)), [x]
    return build


def _binary(op, shape_b=(3, 4)) -> Case:
    def build(rng):
        rs = int(rng.integers(2**31))
        a, b = _t(rng.standard_normal((3, 4))), _t(rng.standard_normal(shape_b))
        return (lambda: _weighted(op(a, b), rs)), [a, b]
    return build


def _case_prelu(rng):
    rs = int(rng.integers(2**31))
    x, a = _t(_away(rng, (3, 5))), _t([0.25])
    return (lambda: _weighted(ops.prelu(x, a), rs)), [x, a]


def _case_matmul(rng):
    rs = int(rng.integers(2**31))
    a, b = _t(rng.standard_normal((3, 4))), _t(rng.standard_normal((4, 2)))
    return (lambda: _weighted(ops.matmul(a, b), rs)), [a, b]


def _case_affine(rng):
    rs = int(rng.integers(2**31))
    x, w, b = _t(rng.standard_normal((2, 5, 4))), _t(rng.standard_normal((3, 4))), _t(rng.standard_normal(3))
    return (lambda: _weighted(ops.affine(x, w, b), rs)), [x, w, b]


def _case_layer_norm(rng):
    rs = int(rng.integers(2**31))
    x, g, b = _t(rng.standard_normal((4, 6))), _t(1 + 0.1 * rng.standard_normal(6)), _t(rng.standard_normal(6))
    return (lambda: _weighted(ops.layer_norm(x, g, b), rs)), [x, g, b]


def _case_concat(rng):
    rs = int(rng.integers(2**31))
    a, b = _t(rng.standard_normal((2, 3))), _t(rng.standard_normal((2, 2)))
    return (lambda: _weighted(ops.concat([a, b], axis=1), rs)), [a, b]


def _case_stack(rng):
    rs = int(rng.integers(2**31))
    a, b = _t(rng.standard_normal(4)), _t(rng.standard_normal(4))
    return (lambda: _weighted(ops.stack([a, b], axis=0), rs)), [a, b]


def _case_take(rng):
    rs = int(rng.integers(2**31))
    x = _t(rng.standard_normal((3, 5)))
    idx = rng.integers(0, 5, size=7)  # repeats exercise gradient accumulation
    return (lambda: _weighted(ops.take(x, idx, axis=1), rs)), [x]


def _case_conv1d(rng):
    rs = int(rng.integers(2**31))
    x, w, b = _t(rng.standard_normal((2, 20))), _t(rng.standard_normal((3, 2, 4))), _t(rng.standard_normal(3))
    return (lambda: _weighted(ops.conv1d(x, w, b, stride=2), rs)), [x, w, b]


def _case_conv1d_transpose(rng):
    rs = int(rng.integers(2**31))
    x, w, b = _t(rng.standard_normal((3, 6))), _t(rng.standard_normal((3, 1, 4))), _t(rng.standard_normal(1))
    return (lambda: _weighted(ops.conv1d_transpose(x, w, b, stride=2), rs)), [x, w, b]


def _case_chunk(rng):
    rs = int(rng.integers(2**31))
    x = _t(rng.standard_normal((9, 3)))
    return (lambda: _weighted(ops.chunk_frames(x, 4), rs)), [x]


def _case_overlap_add(rng):
    rs = int(rng.integers(2**31))
    c = _t(rng.standard_normal((4, 4, 3)))  # S=4 chunks of K=4 (hop 2) cover L=9 after padding
    return (lambda: _weighted(ops.overlap_add_frames(c, 9), rs)), [c]


def _case_gru(reverse):
    def build(rng):
        rs = int(rng.integers(2**31))
        H = 3
        x = _t(0.5 * rng.standard_normal((2, 5, 3 * H)))
        w = _t(0.5 * rng.standard_normal((3 * H, H)))
        b = _t(0.5 * rng.standard_normal(3 * H))
        return (lambda: _weighted(ops.gru_scan(x, w, b, reverse=reverse), rs)), [x, w, b]
    return build


PRIMITIVES: dict[str, Case] = {
    "add": _binary(ops.add),
    "add_bias": _binary(ops.add, (4,)),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "mul_bias": _binary(ops.mul, (4,)),
    "scale": _unary(lambda x: ops.scale(x, -1.7)),
    "sum": _unary(lambda x: ops.sum_(x, axis=0)),
    "mean": _unary(lambda x: ops.mean(x, axis=1, keepdims=True)),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, lambda r: r.uniform(0.5, 2.0, (3, 4))),
    "sqrt": _unary(ops.sqrt, lambda r: r.uniform(0.5, 2.0, (3, 4))),
    "clamp_min": _unary(lambda x: ops.clamp_min(x, 0.0), lambda r: _away(r, (3, 4))),
    "relu": _unary(ops.relu, lambda r: _away(r, (3, 4))),
    "prelu": _case_prelu,
    "sigmoid": _unary(ops.sigmoid),
    "tanh": _unary(ops.tanh),
    "softmax": _unary(lambda x: ops.softmax(x, axis=1)),
    "logsumexp": _unary(lambda x: ops.logsumexp(x, axis=1)),
    "matmul": _case_matmul,
    "affine": _case_affine,
    "layer_norm": _case_layer_norm,
    "l2_normalize": _unary(lambda x: ops.l2_normalize(x, axis=1)),
    "concat": _case_concat,
    "stack": _case_stack,
    "slice": _unary(lambda x: ops.slice_(x, (slice(1, 3), slice(None, None, 2)))),
    "take": _case_take,
    "reshape": _unary(lambda x: ops.reshape(x, (2, 6))),
    "transpose": _unary(ops.transpose),
    "conv1d": _case_conv1d,
    "conv1d_transpose": _case_conv1d_transpose,
    "chunk_frames": _case_chunk,
    "overlap_add_frames": _case_overlap_add,
    "gru_scan": _case_gru(False),
    "gru_scan_reverse": _case_gru(True),
}


def check_primitive(name: str, seed: int = 0, step: float = DEFAULT_STEP,
                    tolerance: float = DEFAULT_TOL) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    f, params = PRIMITIVES[name](rng)
    return grad_check(f, params, step=step, tolerance=tolerance)


# -- model-level checks ----------------------------------------------------------

@dataclass
class TinySetup:
    model: SeparatorModel
    item: object
    pcl: PCLConfig
    truth: list[Tensor]
    noise_truth: Tensor


def tiny_setup(block_kind: str = "recurrent", direction: str = "both", seed: int = 1) -> TinySetup:
    cfg = SeparatorConfig(block_kind=block_kind, **TINY_MODEL)
    model = SeparatorModel.init(cfg, seed)
    item = make_item(DatasetConfig("unused", duration_s=TINY_T / 8000), 0)
    pcl = PCLConfig(direction=direction, **TINY_PCL)
    # truth encodings are constants; fix them so finite differences see the same ones
    truth = encode_truth(model, item.speakers)
    noise_truth = encode_truth(model, [item.noise])[0]
    return TinySetup(model, item, pcl, truth, noise_truth)


def _model_check(s: TinySetup, f, step, tolerance) -> GradCheckReport:
    m = s.model
    return grad_check(f, m.parameters(), step=step, tolerance=tolerance, names=list(m.params))


def check_masking_net(step=DEFAULT_STEP, tolerance=DEFAULT_TOL, block_kind="recurrent") -> GradCheckReport:
    s = tiny_setup(block_kind)
    m = s.model
    names = [k for k in m.params if k.startswith(("enc.", "mask.", "block"))]
    def f():
        masks = masking_net(m, encode(m, s.item.mixture))
        r = np.random.default_rng(3)
        return ops.sum_(ops.stack([ops.sum_(ops.mul(mk, Tensor(r.standard_normal(mk.shape)))) for mk in masks]))

    return grad_check(f, [m[k] for k in names], step=step, tolerance=tolerance, names=names)


def check_pcl(step=DEFAULT_STEP, tolerance=DEFAULT_TOL, direction="both") -> GradCheckReport:
    """The contrastive term as a function of its own inputs: the predicted
    representations (as leaves) and the projection head.  The path further
    back through the masking network is covered by the total-loss check."""
    s = tiny_setup(direction=direction)
    m = s.model
    reprs = [_t(h.data) for h in separate(m, s.item.mixture).reprs]
    names = [k for k in m.params if k.startswith("proj.")]
    params = [m[k] for k in names] + reprs
    names += [f"repr{g}" for g in range(len(reprs))]

    def f():
        return pcl_total(m, reprs, s.truth, s.pcl, np.random.default_rng(5), (0, 1), s.noise_truth).loss

    return grad_check(f, params, step=step, tolerance=tolerance, names=names)


def check_si_snr_loss(step=DEFAULT_STEP, tolerance=DEFAULT_TOL) -> GradCheckReport:
    s = tiny_setup()
    it = s.item

    def f():
        sep = separate(s.model, it.mixture)
        refs = [x.samples for x in it.speakers]
        return upit_si_snr_loss(sep.speakers, refs, sep.noise, it.noise.samples).loss

    return _model_check(s, f, step, tolerance)


def check_neg_si_snr(seed=0, step=DEFAULT_STEP, tolerance=DEFAULT_TOL) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(64)
    est = _t(ref + 0.5 * rng.standard_normal(64))
    return grad_check(lambda: neg_si_snr(est, ref), [est], step=step, tolerance=tolerance)


def check_total_loss(step=DEFAULT_STEP, tolerance=DEFAULT_TOL, block_kind="recurrent") -> GradCheckReport:
    s = tiny_setup(block_kind)

    def f():
        sep = separate(s.model, s.item.mixture)
        return total_loss(s.model, sep, s.item.speakers, s.item.noise, s.pcl, np.random.default_rng(5),
                          truth_reprs=s.truth, noise_truth_repr=s.noise_truth).total

    return _model_check(s, f, step, tolerance)


COMPOSITES: dict[str, Callable[..., GradCheckReport]] = {
    "neg_si_snr": check_neg_si_snr,
    "masking_net": check_masking_net,
    "masking_net_attention": lambda **kw: check_masking_net(block_kind="attention", **kw),
    "pcl_total": check_pcl,
    "upit_si_snr_loss": check_si_snr_loss,
    "total_loss": check_total_loss,
    "total_loss_attention": lambda **kw: check_total_loss(block_kind="attention", **kw),
}


@dataclass
class SuiteResult:
    reports: dict[str, GradCheckReport]
    seconds: float

    @property
    def max_rel_err(self) -> float:
        return max(r.max_rel_err for r in self.reports.values())

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports.values())


def run_suite(step: float = DEFAULT_STEP, tolerance: float = DEFAULT_TOL, seed: int = 0,
              echo: Callable[[str], None] | None = None) -> SuiteResult:
    t0 = time.perf_counter()
    reports = {}
    for name in PRIMITIVES:
        reports[name] = check_primitive(name, seed, step, tolerance)
        if echo:
            echo(f"{name:24s} {reports[name]}")
    for name, fn in COMPOSITES.items():
        reports[name] = fn(step=step, tolerance=tolerance)
        if echo:
            echo(f"{name:24s} {reports[name]}")
    return SuiteResult(reports, time.perf_counter() - t0)
