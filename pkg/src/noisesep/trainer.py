"""Seeded training loop: Adam, global-norm clipping, plateau LR halving, checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import NonFiniteError, backward, no_grad
from .autodiff.checkpoint import load_arrays
from .config import from_mapping, to_mapping
from .contrastive import PCLConfig
from .errors import ConfigError, ContractError
from .objective import CLAMP_DB, total_loss
from .separator import SeparatorModel, load_checkpoint, separate
from .signals import AudioSignal, MixtureItem

log = logging.getLogger(__name__)

LOG_HEADER = "step,epoch,lr,total,si_snr,pcl"


@dataclass
class TrainConfig:
    epochs: int = 60
    lr0: float = 1.5e-4
    halving_start_epoch: int = 20
    patience: int = 3
    clip_norm: float = 5.0
    segment_s: float = 4.0
    batch_size: int = 1
    seed: int = 0
    clamp_db: float = CLAMP_DB
    max_steps: int = 0  # 0 = no cap
    val_every: int = 1  # epochs between validations; patience counts validations
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    speed_perturb: bool = False
    checkpoint_dir: Path = Path("checkpoints")

    def __post_init__(self):
        if self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("epochs and max_steps must be >= 0")
        if not (self.lr0 > 0 and self.clip_norm > 0 and self.segment_s > 0):
            raise ConfigError("lr0, clip_norm and segment_s must be positive")
        if self.val_every < 1:
            raise ConfigError("val_every must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch_size != 1:
            raise ConfigError("only batch_size=1 is supported")
        if self.speed_perturb:
            raise ConfigError("speed perturbation is not implemented")
        self.checkpoint_dir = Path(self.checkpoint_dir)


class NonFiniteGradient(ArithmeticError):
    pass


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    lr: float = 1.5e-4
    best_val: float = math.inf
    best_epoch: int = -1
    bad_epochs: int = 0
    adam_t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: dict | None = None


# -- optimizer pieces ----------------------------------------------------------

def optimizer_step(state: TrainState, params: dict, grads: dict[str, np.ndarray], lr: float,
                   beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params[name].data``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name}")
    state.adam_t += 1
    t = state.adam_t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float = 5.0) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients together if their joint L2 norm exceeds ``max_norm``."""
    norm = global_norm(list(grads.values()))
    if norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


def lr_schedule_update(state: TrainState, validation_loss: float, cfg: TrainConfig) -> float:
    """Track the best validation loss; halve the LR after ``patience`` epochs
    without strict improvement once ``halving_start_epoch`` is reached."""
    if validation_loss < state.best_val:
        state.best_val = validation_loss
        state.best_epoch = state.epoch
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    if state.epoch >= cfg.halving_start_epoch and state.bad_epochs >= cfg.patience:
        state.lr = state.lr / 2.0
        state.bad_epochs = 0
        log.info("epoch %d: lr halved to %g", state.epoch, state.lr)
    return state.lr


# -- data ----------------------------------------------------------------------

def crop(item: MixtureItem, segment_len: int, rng: np.random.Generator) -> MixtureItem:
    """Random window of ``segment_len`` samples; the whole item if shorter."""
    n = len(item.mixture)
    if n <= segment_len:
        return item
    off = int(rng.integers(0, n - segment_len + 1))
    sl = slice(off, off + segment_len)
    sr = item.sample_rate

    def cut(s: AudioSignal) -> AudioSignal:
        return AudioSignal(s.samples[sl], sr)

    return MixtureItem(cut(item.mixture), [cut(s) for s in item.speakers], cut(item.noise), item.snr_db)


# -- loop ------------------------------------------------------------------------

class Trainer:
    """Owns the model during training; writes the CSV log and checkpoints."""

    def __init__(self, model: SeparatorModel, train_items: Sequence[MixtureItem], cfg: TrainConfig,
                 pcl_cfg: PCLConfig, val_items: Sequence[MixtureItem] | None = None,
                 log_path: Path | None = None, state: TrainState | None = None):
        if pcl_cfg.Q != model.config.Q:
            raise ConfigError(f"PCL width Q={pcl_cfg.Q} does not match model Q={model.config.Q}")
        if not train_items:
            raise ContractError("no training items")
        for it in list(train_items) + list(val_items or []):
            if it.num_speakers != model.config.C:
                raise ConfigError(f"item has {it.num_speakers} speakers, model expects {model.config.C}")
        self.model = model
        self.items = list(train_items)
        self.val_items = list(val_items) if val_items else None
        self.cfg = cfg
        self.pcl_cfg = pcl_cfg
        self.ckpt_dir = Path(cfg.checkpoint_dir)
        self.log_path = Path(log_path) if log_path else self.ckpt_dir / "train_log.csv"
        self.rows: list[str] = []
        self.permutation_checks: list[tuple[tuple[int, ...], tuple[int, ...] | None]] = []
        self.grad_norms: list[tuple[float, float]] = []
        if state is None:
            state = TrainState(lr=cfg.lr0)
            self.rng = np.random.default_rng(cfg.seed)
            self._fresh = True
        else:
            self.rng = np.random.default_rng()
            self.rng.bit_generator.state = state.rng_state
            self._fresh = False
        self.state = state

    # checkpoints -------------------------------------------------------------

    def _header(self) -> dict[str, str]:
        s = self.state
        # the output location is not training state; omitting it keeps reruns byte-identical
        h = {f"train.{k}": v for k, v in to_mapping(self.cfg).items() if k != "checkpoint_dir"}
        h.update({f"pcl.{k}": v for k, v in to_mapping(self.pcl_cfg).items()})
        h.update({
            "state.step": str(s.step),
            "state.epoch": str(s.epoch),
            "state.lr": repr(s.lr),
            "state.best_val": repr(s.best_val),
            "state.best_epoch": str(s.best_epoch),
            "state.bad_epochs": str(s.bad_epochs),
            "state.adam_t": str(s.adam_t),
            "state.rng": json.dumps(self.rng.bit_generator.state, sort_keys=True),
        })
        return h

    def save(self, name: str) -> Path:
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        extra = {}
        for k in self.model.params:
            if k in self.state.m:
                extra[f"adam.m.{k}"] = self.state.m[k]
                extra[f"adam.v.{k}"] = self.state.v[k]
        return self.model.save(self.ckpt_dir / name, self._header(), extra)

    @classmethod
    def resume(cls, path, train_items, val_items=None, log_path=None, **overrides) -> "Trainer":
        """Rebuild a trainer from a checkpoint written by :meth:`save`."""
        model, header, extra = load_checkpoint(path)
        tvals = {k[6:]: v for k, v in header.items() if k.startswith("train.")}
        tvals["checkpoint_dir"] = str(Path(path).parent)
        tvals.update({k: str(v) for k, v in overrides.items()})
        cfg = from_mapping(TrainConfig, tvals)
        pcl = from_mapping(PCLConfig, {k[4:]: v for k, v in header.items() if k.startswith("pcl.")})
        st = TrainState(
            step=int(header["state.step"]), epoch=int(header["state.epoch"]),
            lr=float(header["state.lr"]), best_val=float(header["state.best_val"]),
            best_epoch=int(header["state.best_epoch"]), bad_epochs=int(header["state.bad_epochs"]),
            adam_t=int(header["state.adam_t"]), rng_state=json.loads(header["state.rng"]),
        )
        for k in model.params:
            if f"adam.m.{k}" in extra:
                st.m[k] = extra[f"adam.m.{k}"]
                st.v[k] = extra[f"adam.v.{k}"]
        return cls(model, train_items, cfg, pcl, val_items, log_path, st)

    # one step ------------------------------------------------------------------

    def _loss(self, item: MixtureItem, rng: np.random.Generator):
        sep = separate(self.model, item.mixture)
        return total_loss(self.model, sep, item.speakers, item.noise, self.pcl_cfg, rng,
                          self.cfg.clamp_db)

    def train_step(self, item: MixtureItem) -> tuple[float, float, float]:
        rep = self._loss(item, self.rng)
        # the contrastive term must reuse the SI-SNR permutation
        self.permutation_checks.append((rep.permutation, rep.pcl_permutation))
        if rep.pcl_permutation is not None and rep.pcl_permutation != rep.permutation:
            raise AssertionError(f"step {self.state.step}: contrastive permutation "
                                 f"{rep.pcl_permutation} != SI-SNR permutation {rep.permutation}")
        total, si, pcl = rep.floats()
        if not math.isfinite(total):
            raise NonFiniteError(f"loss is {total}")
        self.model.zero_grad()
        backward(rep.total)
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.model.params.items()}
        grads, pre = clip_gradients(grads, self.cfg.clip_norm)
        self.grad_norms.append((pre, global_norm(list(grads.values()))))
        optimizer_step(self.state, self.model.params, grads, self.state.lr,
                       self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps)
        self.model.zero_grad()
        return total, si, pcl

    def validate(self) -> float:
        """Mean total loss over the validation items (training items if none)."""
        items = self.val_items or self.items
        rng = np.random.default_rng([self.cfg.seed, 1, self.state.epoch])
        vals = []
        with no_grad():
            for it in items:
                vals.append(float(self._loss(it, rng).total.data))
        return float(np.mean(vals))

    # loop ----------------------------------------------------------------------

    def _write_row(self, fh, row: str) -> None:
        self.rows.append(row)
        fh.write(row + "\n")
        fh.flush()

    def train(self) -> Path:
        """Run until ``epochs`` (or ``max_steps``); returns the last checkpoint path."""
        cfg, st = self.cfg, self.state
        self.ckpt_dir.mkdir(parents=True, exist_ok=True)
        if self._fresh:
            self.log_path.write_text(LOG_HEADER + "\n", encoding="utf-8")
            last = self.save("last.ckpt")
        else:
            last = self.ckpt_dir / "last.ckpt"
        seg_len = int(round(cfg.segment_s * self.items[0].sample_rate))
        done = cfg.max_steps and st.step >= cfg.max_steps
        with open(self.log_path, "a", encoding="utf-8") as fh:
            while st.epoch < cfg.epochs and not done:
                order = self.rng.permutation(len(self.items))
                for idx in order:
                    item = crop(self.items[int(idx)], seg_len, self.rng)
                    try:
                        total, si, pcl = self.train_step(item)
                    except (NonFiniteError, NonFiniteGradient) as exc:
                        raise TrainingAborted(
                            f"step {st.step}: {exc}; last good checkpoint kept at {last}") from exc
                    self._write_row(fh, f"{st.step},{st.epoch},{st.lr!r},{total!r},{si!r},{pcl!r}")
                    st.step += 1
                    if cfg.max_steps and st.step >= cfg.max_steps:
                        done = True
                        break
                improved = False
                if done or (st.epoch + 1) % cfg.val_every == 0:
                    val = self.validate()
                    lr_schedule_update(st, val, cfg)
                    improved = st.best_epoch == st.epoch
                    log.info("epoch %d step %d val %.4f lr %g", st.epoch, st.step, val, st.lr)
                st.epoch += 1
                st.rng_state = self.rng.bit_generator.state
                if improved:
                    self.save("best.ckpt")
                last = self.save("last.ckpt")
        return last
