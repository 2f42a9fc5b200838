"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    checked: int
    worst: tuple[str, tuple[int, ...]] | None = None
    failures: list[str] = field(default_factory=list)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        loc = f" at {self.worst[0]}{list(self.worst[1])}" if self.worst else ""
        return f"max_rel_err={self.max_rel_err:.3e}{loc} over {self.checked} coords: {status}"


def rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-3,
    tolerance: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    names: Sequence[str] | None = None,
) -> GradCheckReport:
    """Compare backprop gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the current ``params`` on each call.
    With ``max_coords`` set, at most that many coordinates per parameter are
    probed (chosen with a seeded RNG); otherwise every coordinate is.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    names = list(names) if names is not None else [p.name or f"param{i}" for i, p in enumerate(params)]
    for p in params:
        if not np.all(np.isfinite(p.data)):
            raise ValueError("grad_check: parameters must be finite")
        p.requires_grad = True
        p.grad = None

    loss = f()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    worst_err, worst_loc, checked = 0.0, None, 0
    failures: list[str] = []
    for p, name, ga in zip(params, names, analytic):
        coords = np.arange(p.size)
        if max_coords is not None and p.size > max_coords:
            coords = np.sort(rng.choice(p.size, size=max_coords, replace=False))
        base = p.data
        for flat in coords:
            idx = np.unravel_index(flat, p.shape)
            vals = []
            for sign in (1.0, -1.0):
                probe = base.copy()
                probe[idx] += sign * step
                p.data = probe
                try:
                    with no_grad():
                        v = float(f().data)
                except (NonFiniteError, FloatingPointError):
                    v = float("nan")
                vals.append(v)
            p.data = base
            checked += 1
            if not all(np.isfinite(vals)):
                failures.append(f"{name}{list(idx)}: non-finite f at perturbed point")
                worst_err, worst_loc = float("inf"), (name, tuple(int(i) for i in idx))
                continue
            numeric = (vals[0] - vals[1]) / (2.0 * step)
            err = rel_err(float(ga[idx]), numeric)
            if err > tolerance:
                failures.append(f"{name}{list(idx)}: analytic={ga[idx]:.6e} numeric={numeric:.6e}")
            if err > worst_err:
                worst_err, worst_loc = err, (name, tuple(int(i) for i in idx))
    for p in params:
        p.grad = None
    return GradCheckReport(worst_err, not failures, checked, worst_loc, failures)
