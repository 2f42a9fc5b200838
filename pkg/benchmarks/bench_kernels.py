"""Compare the compiled and numpy kernel backends.

Times the GRU scan (forward + backward) at the shapes the dual-path blocks
see, then one full training step of the default separator.

    python3 benchmarks/bench_kernels.py [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from noisesep import _kernels
from noisesep.contrastive import PCLConfig
from noisesep.objective import total_loss
from noisesep.autodiff import backward
from noisesep.separator import SeparatorConfig, SeparatorModel, separate
from noisesep.signals import DatasetConfig, make_item


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def gru_case(mod, B: int, T: int, H: int, repeats: int) -> float:
    rng = np.random.default_rng(0)
    x = 0.5 * rng.standard_normal((B, T, 3 * H))
    w = 0.3 * rng.standard_normal((3 * H, H))
    b = 0.1 * rng.standard_normal(3 * H)
    g = rng.standard_normal((B, T, H))

    def run():
        hs, cache = mod.gru_forward(x, w, b, False)
        mod.gru_backward(g, w, hs, cache, False)

    return best_of(run, repeats)


def train_step_case(repeats: int) -> float:
    model = SeparatorModel.init(SeparatorConfig(), seed=0)
    item = make_item(DatasetConfig("unused", duration_s=1.0), 0)
    pcl = PCLConfig()

    def run():
        sep = separate(model, item.mixture)
        rep = total_loss(model, sep, item.speakers, item.noise, pcl, np.random.default_rng(0))
        model.zero_grad()
        backward(rep.total)

    return best_of(run, repeats)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    table = _kernels.backends()
    if "cython" not in table:
        print("compiled backend not built; only numpy timings available")
    # intra path: many short chunks; inter path: few long sequences
    shapes = [("intra B=42 T=50 H=32", 42, 50, 32), ("inter B=100 T=21 H=32", 100, 21, 32),
              ("long B=4 T=400 H=64", 4, 400, 64)]
    print(f"{'case':28s}" + "".join(f"{n:>12s}" for n in table) + "     speedup")
    for label, B, T, H in shapes:
        ts = {n: gru_case(m, B, T, H, args.repeats) for n, m in table.items()}
        row = f"{label:28s}" + "".join(f"{1e3 * t:10.2f}ms" for t in ts.values())
        if "cython" in ts:
            row += f"  {ts['numpy'] / ts['cython']:8.2f}x"
        print(row)
    ts = {}
    for name in table:
        prev = _kernels.set_backend(name)
        try:
            ts[name] = train_step_case(max(1, args.repeats // 2))
        finally:
            _kernels.set_backend(prev)
    row = f"{'train step (1 s, default)':28s}" + "".join(f"{1e3 * t:10.1f}ms" for t in ts.values())
    if "cython" in ts:
        row += f"  {ts['numpy'] / ts['cython']:8.2f}x"
    print(row)


if __name__ == "__main__":
    main()
