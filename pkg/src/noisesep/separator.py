"""Encoder, dual-path masking network and decoder with an optional noise output.

Feature maps are ``(N, L)`` tensors (filters x frames).  Inside the masking
network everything runs time-major, ``(L, H)`` or chunked ``(S, K, H)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.checkpoint import load_arrays, save_arrays
from .autodiff.tensor import ShapeError
from .config import from_mapping, to_mapping
from .errors import ConfigError
from .signals import AudioSignal


@dataclass
class SeparatorConfig:
    N: int = 64
    kernel: int = 16
    stride: int = 8
    C: int = 2
    noise_speaker: bool = True
    K: int = 50
    blocks: int = 2
    block_kind: str = "recurrent"
    hidden: int = 32
    Q: int = 256
    ln_eps: float = 1e-8

    def __post_init__(self):
        for name in ("N", "kernel", "stride", "K", "blocks", "hidden", "Q"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.stride > self.kernel:
            raise ConfigError("stride must not exceed kernel")
        if self.K < 2 or self.K % 2:
            raise ConfigError("chunk size K must be even and >= 2")
        if self.C not in (2, 3):
            raise ConfigError("C must be 2 or 3")
        if self.block_kind not in ("recurrent", "attention"):
            raise ConfigError(f"unknown block_kind {self.block_kind!r}")

    @property
    def G(self) -> int:
        return self.C + 1 if self.noise_speaker else self.C


@dataclass
class ChunkedRepr:
    """(N, K, S) view of 50%-overlapped chunks plus what is needed to undo it."""

    values: Tensor
    original_L: int
    pad_amount: int

    @property
    def K(self) -> int:
        return self.values.shape[1]

    @property
    def S(self) -> int:
        return self.values.shape[2]


def chunk(h: Tensor, K: int) -> ChunkedRepr:
    """Chunk an (N, L) map along time into (N, K, S)."""
    N, L = h.shape
    _, _, pad = ops.chunk_geometry(L, K)
    c = ops.chunk_frames(ops.transpose(h), K)  # (S, K, N)
    return ChunkedRepr(ops.transpose(c, (2, 1, 0)), L, pad)


def overlap_add(c: ChunkedRepr) -> Tensor:
    """Exact inverse of :func:`chunk`, returning (N, L)."""
    sk = ops.transpose(c.values, (2, 1, 0))
    return ops.transpose(ops.overlap_add_frames(sk, c.original_L))


# -- parameters --------------------------------------------------------------

def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class SeparatorModel:
    """Named parameter tensors plus the architecture config."""

    def __init__(self, config: SeparatorConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    @classmethod
    def init(cls, config: SeparatorConfig, seed: int = 0) -> "SeparatorModel":
        rng = np.random.default_rng(seed)
        c = config
        N, H, G = c.N, c.hidden, c.G
        shapes: dict[str, np.ndarray] = {}
        shapes["enc.w"] = _uniform(rng, (N, 1, c.kernel), c.kernel)
        shapes["enc.b"] = np.zeros(N)
        shapes["mask.norm.g"] = np.ones(N)
        shapes["mask.norm.b"] = np.zeros(N)
        shapes["mask.in.w"] = _uniform(rng, (H, N), N)
        shapes["mask.in.b"] = _uniform(rng, (H,), N)
        for i in range(c.blocks):
            for path in ("intra", "inter"):
                p = f"block{i}.{path}"
                if c.block_kind == "recurrent":
                    for d in ("fw", "bw"):
                        shapes[f"{p}.{d}.w_ih"] = _uniform(rng, (3 * H, H), H)
                        shapes[f"{p}.{d}.b_ih"] = _uniform(rng, (3 * H,), H)
                        shapes[f"{p}.{d}.w_hh"] = _uniform(rng, (3 * H, H), H)
                        shapes[f"{p}.{d}.b_hh"] = _uniform(rng, (3 * H,), H)
                    shapes[f"{p}.out.w"] = _uniform(rng, (H, 2 * H), 2 * H)
                else:
                    # no key bias: softmax over keys is invariant to it
                    for n in ("q", "k", "v"):
                        shapes[f"{p}.{n}.w"] = _uniform(rng, (H, H), H)
                        if n != "k":
                            shapes[f"{p}.{n}.b"] = _uniform(rng, (H,), H)
                    shapes[f"{p}.out.w"] = _uniform(rng, (H, H), H)
                shapes[f"{p}.out.b"] = np.zeros(H)
                shapes[f"{p}.norm.g"] = np.ones(H)
                shapes[f"{p}.norm.b"] = np.zeros(H)
        shapes["mask.prelu"] = np.full(1, 0.25)
        shapes["mask.head.w"] = _uniform(rng, (G * N, H), H)
        shapes["mask.head.b"] = _uniform(rng, (G * N,), H)
        shapes["mask.mlp1.w"] = _uniform(rng, (N, N), N)
        shapes["mask.mlp1.b"] = _uniform(rng, (N,), N)
        shapes["mask.mlp2.w"] = _uniform(rng, (N, N), N)
        shapes["mask.mlp2.b"] = _uniform(rng, (N,), N)
        shapes["dec.w"] = _uniform(rng, (N, 1, c.kernel), c.kernel)
        shapes["dec.b"] = np.zeros(1)
        shapes["proj.w1"] = _uniform(rng, (c.Q, N), N)
        shapes["proj.b1"] = _uniform(rng, (c.Q,), N)
        shapes["proj.w2"] = _uniform(rng, (c.Q, c.Q), c.Q)
        shapes["proj.b2"] = _uniform(rng, (c.Q,), c.Q)
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in shapes.items()}
        return cls(config, params)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise ConfigError(f"checkpoint lacks parameter {k}")
            if arrays[k].shape != p.shape:
                raise ConfigError(f"parameter {k}: checkpoint shape {arrays[k].shape} != model {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)

    def save(self, path, extra_header: dict[str, str] | None = None,
             extra_arrays: dict[str, np.ndarray] | None = None):
        header = {f"model.{k}": v for k, v in to_mapping(self.config).items()}
        header.update(extra_header or {})
        arrays = dict(self.state_arrays())
        arrays.update(extra_arrays or {})
        return save_arrays(path, arrays, header)

    @classmethod
    def load(cls, path) -> "SeparatorModel":
        model, _, _ = load_checkpoint(path)
        return model


def load_checkpoint(path) -> tuple[SeparatorModel, dict[str, str], dict[str, np.ndarray]]:
    """Return (model, full header, non-model arrays) from a checkpoint file."""
    header, arrays = load_arrays(path)
    cfg_vals = {k[len("model."):]: v for k, v in header.items() if k.startswith("model.")}
    config = from_mapping(SeparatorConfig, cfg_vals)
    model = SeparatorModel.init(config, seed=0)
    model.load_state_arrays(arrays)
    extra = {k: v for k, v in arrays.items() if k not in model.params}
    return model, header, extra


# -- forward pieces ----------------------------------------------------------

def _as_input(x) -> Tensor:
    if isinstance(x, AudioSignal):
        return Tensor(x.samples)
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64).reshape(-1))


def encode(model: SeparatorModel, x) -> Tensor:
    """ReLU(Conv1d(x)) -> (N, L) with L = floor((T - kernel) / stride) + 1."""
    xt = _as_input(x)
    if xt.ndim != 1:
        raise ShapeError("encode", f"expected a mono signal, got shape {xt.shape}")
    cfg = model.config
    if xt.shape[0] < cfg.kernel:
        raise ShapeError("encode", f"signal length {xt.shape[0]} shorter than kernel {cfg.kernel}")
    h = ops.conv1d(ops.reshape(xt, (1, -1)), model["enc.w"], model["enc.b"], cfg.stride)
    return ops.relu(h)


def decode(model: SeparatorModel, h: Tensor) -> Tensor:
    """Transposed conv back to a waveform of length (L - 1) * stride + kernel."""
    cfg = model.config
    if h.ndim != 2 or h.shape[0] != cfg.N:
        raise ShapeError("decode", f"expected ({cfg.N}, L), got {h.shape}")
    y = ops.conv1d_transpose(h, model["dec.w"], model["dec.b"], cfg.stride)
    return ops.reshape(y, (-1,))


def _gru(model, prefix: str, x: Tensor, reverse: bool) -> Tensor:
    xp = ops.affine(x, model[f"{prefix}.w_ih"], model[f"{prefix}.b_ih"])
    return ops.gru_scan(xp, model[f"{prefix}.w_hh"], model[f"{prefix}.b_hh"], reverse)


def _attention(model, prefix: str, x: Tensor) -> Tensor:
    q = ops.affine(x, model[f"{prefix}.q.w"], model[f"{prefix}.q.b"])
    k = ops.affine(x, model[f"{prefix}.k.w"])
    v = ops.affine(x, model[f"{prefix}.v.w"], model[f"{prefix}.v.b"])
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(q.shape[-1]))
    return ops.matmul(ops.softmax(scores, axis=-1), v)


def _sequence_path(model, prefix: str, x: Tensor) -> Tensor:
    """Sequence model along axis 1 of (B, T, H), then linear, layer norm, residual."""
    cfg = model.config
    if cfg.block_kind == "recurrent":
        y = ops.concat([_gru(model, f"{prefix}.fw", x, False),
                        _gru(model, f"{prefix}.bw", x, True)], axis=2)
    else:
        y = _attention(model, prefix, x)
    y = ops.affine(y, model[f"{prefix}.out.w"], model[f"{prefix}.out.b"])
    y = ops.layer_norm(y, model[f"{prefix}.norm.g"], model[f"{prefix}.norm.b"], cfg.ln_eps)
    return ops.add(x, y)


def dual_path_block(model, index: int, c: Tensor) -> Tensor:
    """Intra-chunk pass over K, then inter-chunk pass over S; c is (S, K, H)."""
    c = _sequence_path(model, f"block{index}.intra", c)
    t = ops.transpose(c, (1, 0, 2))
    t = _sequence_path(model, f"block{index}.inter", t)
    return ops.transpose(t, (1, 0, 2))


def masking_net(model: SeparatorModel, h_mix: Tensor) -> list[Tensor]:
    """Predict G nonnegative (N, L) masks from the encoded mixture."""
    cfg = model.config
    if h_mix.ndim != 2 or h_mix.shape[0] != cfg.N:
        raise ShapeError("masking_net", f"expected ({cfg.N}, L), got {h_mix.shape}")
    N, L = h_mix.shape
    G = cfg.G
    z = ops.layer_norm(ops.transpose(h_mix), model["mask.norm.g"], model["mask.norm.b"], cfg.ln_eps)
    z = ops.affine(z, model["mask.in.w"], model["mask.in.b"])
    c = ops.chunk_frames(z, cfg.K)
    for i in range(cfg.blocks):
        c = dual_path_block(model, i, c)
    c = ops.prelu(c, model["mask.prelu"])
    c = ops.affine(c, model["mask.head.w"], model["mask.head.b"])  # (S, K, G*N)
    o = ops.overlap_add_frames(c, L)  # (L, G*N)
    o = ops.transpose(ops.reshape(o, (L, G, N)), (1, 0, 2))  # (G, L, N)
    m = ops.relu(ops.affine(o, model["mask.mlp1.w"], model["mask.mlp1.b"]))
    m = ops.relu(ops.affine(m, model["mask.mlp2.w"], model["mask.mlp2.b"]))
    m = ops.transpose(m, (0, 2, 1))  # (G, N, L)
    return [m[k] for k in range(G)]


def apply_masks(h_mix: Tensor, masks: list[Tensor]) -> list[Tensor]:
    for m in masks:
        if m.shape != h_mix.shape:
            raise ShapeError("apply_masks", f"mask {m.shape} vs representation {h_mix.shape}")
    return [ops.mul(m, h_mix) for m in masks]


def fit_length(y: Tensor, T: int) -> Tensor:
    """Truncate or zero-pad the tail to exactly T samples."""
    n = y.shape[0]
    if n == T:
        return y
    if n > T:
        return y[:T]
    return ops.concat([y, Tensor(np.zeros(T - n))], axis=0)


@dataclass
class Separation:
    speakers: list[Tensor]
    noise: Tensor | None
    h_mix: Tensor
    reprs: list[Tensor]  # h_k for every source, noise last
    masks: list[Tensor] = field(default_factory=list)

    @property
    def outputs(self) -> list[Tensor]:
        return self.speakers + ([self.noise] if self.noise is not None else [])

    def signals(self, sample_rate: int) -> list[AudioSignal]:
        return [AudioSignal(t.data, sample_rate) for t in self.outputs]


def separate(model: SeparatorModel, x) -> Separation:
    xt = _as_input(x)
    T = xt.shape[0]
    cfg = model.config
    h = encode(model, xt)
    masks = masking_net(model, h)
    reprs = apply_masks(h, masks)
    outs = [fit_length(decode(model, hk), T) for hk in reprs]
    noise = outs[cfg.C] if cfg.noise_speaker else None
    return Separation(outs[: cfg.C], noise, h, reprs, masks)
