#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-NumPy fallback.

Times each kernel at the shapes the training loop actually uses (prompt-grid
encodes, per-batch softmax/entropy over the class axis) plus one end-to-end
training step under each backend. Run after building the extension:

    python benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def time_fn(fn, *args, repeats=2000):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - t0) / repeats


def bench_kernels():
    from biovlm._kernels import _core, numpy_backend  # noqa: F401

    rng = np.random.default_rng(0)
    cases = [
        ("softmax_rows 960x8",
         (np.ascontiguousarray(rng.normal(size=(960, 8)) * 30),),
         "softmax_rows"),
        ("entropy_rows 960x8",
         (np.ascontiguousarray(rng.dirichlet(np.ones(8), size=960)),),
         "entropy_rows"),
        ("l2norm_rows 80x64",
         (np.ascontiguousarray(rng.normal(size=(80, 64))),),
         "l2norm_rows"),
        ("sum_mid 32x10x8",
         (np.ascontiguousarray(rng.normal(size=(32, 10, 8))),),
         "sum_mid"),
    ]
    print(f"{'kernel':28s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    from biovlm._kernels import _core as comp
    from biovlm._kernels import numpy_backend as ref
    for name, args, fn_name in cases:
        t_np = time_fn(getattr(ref, fn_name), *args)
        t_c = time_fn(getattr(comp, fn_name), *args)
        print(f"{name:28s} {t_np * 1e6:9.2f}u {t_c * 1e6:9.2f}u "
              f"{t_np / t_c:7.2f}x")


TRAIN_SNIPPET = r"""
import time
import numpy as np
from biovlm.datahub import SyntheticTask, generate_task
from biovlm.encoders import EncoderConfig, EncoderRegime
from biovlm.promptbank import init_bank
from biovlm.trainer import TrainConfig, train
from biovlm import _kernels

task = SyntheticTask(seed=0, train_per_class=20, test_per_class=4)
ds = generate_task(task, EncoderConfig(seed=0))
cfg = TrainConfig(epochs=10, seed=0)


def one_run():
    bank = init_bank(task.num_classes, task.attributes_per_class,
                     EncoderRegime.SYNTHETIC, ds.attribute_embeddings, seed=0)
    t0 = time.perf_counter()
    train(bank, ds, cfg, text_encoder=ds.text_encoder)
    return time.perf_counter() - t0


one_run()  # warm caches and allocator
dt = min(one_run() for _ in range(3))
print(f"{_kernels.active_backend():>9s}: 10 epochs in {dt:.3f}s "
      f"({dt / 40 * 1e3:.1f} ms/step)")
"""


def bench_train_step():
    print("\nend-to-end training (10 epochs, default benchmark shape):")
    for env_flag in ("0", "1"):
        env = dict(os.environ)
        if env_flag == "1":
            env["BIOVLM_PURE_PYTHON"] = "1"
        else:
            env.pop("BIOVLM_PURE_PYTHON", None)
        subprocess.run([sys.executable, "-c", TRAIN_SNIPPET], env=env,
                       check=True)


if __name__ == "__main__":
    try:
        import biovlm._kernels._core  # noqa: F401
    except ImportError:
        print("compiled extension not built; nothing to compare")
        sys.exit(1)
    bench_kernels()
    bench_train_step()
