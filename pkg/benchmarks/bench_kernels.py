"""Time each hot kernel compiled with numba against its numpy twin.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Also times one full training update (collect + losses) end to end in a
subprocess per backend, since the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from magpo_lab import _kernels as K


def cases(rng):
    T, E, n, A = 128, 8, 3, 10
    coord_targets = rng.integers(0, 10, size=512)
    coord_counts = np.zeros((512, 10, 10), dtype=np.int64)
    return {
        "gae (128x8)": (K._gae_jit, K.gae_numpy,
                        (rng.standard_normal((T, E)), rng.standard_normal((T, E)),
                         (rng.random((T, E)) < 0.05).astype(np.float64), rng.standard_normal(E), 0.99, 0.9)),
        "sample_categorical (1024x10)": (K._sample_categorical_jit, K.sample_categorical_numpy,
                                         (rng.dirichlet(np.ones(A), size=T * E * n // 3), rng.random(T * E * n // 3))),
        "coordsum_step (512 envs)": (K._coordsum_step_jit, K.coordsum_step_numpy,
                                     (coord_targets, rng.integers(0, 10, size=(512, 3)), coord_counts)),
        "gelu (1024x64)": (K._gelu_jit, K.gelu_numpy, (rng.standard_normal((1024, 64)),)),
        "pairwise_win_rate (2000x2000)": (K._pairwise_win_rate_jit, K.pairwise_win_rate_numpy,
                                          (rng.standard_normal(2000), rng.standard_normal(2000))),
    }


UPDATE_SNIPPET = """
import time
from magpo_lab.trainer import TrainConfig, run_training
cfg = TrainConfig(seed=0)
run_training("MAGPO", "CoordSum-3x10", cfg, 1024, 2)  # warm up / compile
t = time.perf_counter()
run_training("MAGPO", "CoordSum-3x10", cfg, 1024 * 5, 2)
print(time.perf_counter() - t)
"""


def time_training(no_numba):
    env = dict(os.environ)
    if no_numba:
        env["MAGPO_LAB_NO_NUMBA"] = "1"
    else:
        env.pop("MAGPO_LAB_NO_NUMBA", None)
    out = subprocess.run([sys.executable, "-c", UPDATE_SNIPPET], env=env, capture_output=True, text=True,
                         check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-training", action="store_true")
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        sys.exit("numba is unavailable or disabled (MAGPO_LAB_NO_NUMBA); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, (jit, ref, a) in cases(rng).items():
        copy = lambda: tuple(x.copy() if isinstance(x, np.ndarray) else x for x in a)  # noqa: E731
        jit(*copy())  # compile outside the timing
        t_jit = min(timeit.repeat(lambda: jit(*copy()), number=1, repeat=args.repeat)) * 1e3
        t_ref = min(timeit.repeat(lambda: ref(*copy()), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_jit:10.3f} {t_ref:10.3f} {t_ref / t_jit:7.1f}x")
    if not args.skip_training:
        a, b = time_training(False), time_training(True)
        print(f"{'5 MAGPO updates, CoordSum-3x10':32s} {a * 1e3:10.0f} {b * 1e3:10.0f} {b / a:7.1f}x")


if __name__ == "__main__":
    main()
