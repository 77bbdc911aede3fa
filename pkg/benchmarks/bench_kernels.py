"""Compare the compiled and pure-numpy kernels on the env batch step and GAE.

    python benchmarks/bench_kernels.py [--envs 32] [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from symmeq import _kernels_py
from symmeq.env import EnvConfig
from symmeq.metrics import initial_states

try:
    from symmeq import _kernels
except ImportError:  # extension not built
    _kernels = None


def bench(fn, repeat):
    times = timeit.repeat(fn, number=1, repeat=repeat)
    return min(times), float(np.median(times))


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--envs", type=int, default=32)
    ap.add_argument("--horizon", type=int, default=24)
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)

    cfg = EnvConfig()
    states = initial_states(cfg, args.envs, 0, 1.0)
    rng = np.random.default_rng(0)
    actions = rng.standard_normal((args.envs, cfg.n_joints))
    params = cfg.kernel_params()
    T, N = args.horizon, args.envs
    rewards, values = rng.standard_normal((T, N)), rng.standard_normal((T, N))
    dones = (rng.random((T, N)) < 0.05).astype(float)
    last = rng.standard_normal(N)

    backends = [("python", _kernels_py)] + ([("cython", _kernels)] if _kernels else [])
    results = {}
    for name, mod in backends:
        step = bench(lambda: mod.step_batch(states, actions, params, cfg.k, cfg.m), args.repeat)
        gae = bench(lambda: mod.gae(rewards, values, dones, last, 0.99, 0.95), args.repeat)
        results[name] = (step, gae)
        print(f"{name:>6}  step_batch({N} envs)  min {step[0] * 1e6:9.1f} us  median {step[1] * 1e6:9.1f} us")
        print(f"{name:>6}  gae({T}x{N})          min {gae[0] * 1e6:9.1f} us  median {gae[1] * 1e6:9.1f} us")
    if "cython" in results:
        for i, label in enumerate(("step_batch", "gae")):
            speedup = results["python"][i][1] / results["cython"][i][1]
            print(f"speedup {label}: {speedup:.1f}x")
        a = _kernels_py.step_batch(states, actions, params, cfg.k, cfg.m)
        b = _kernels.step_batch(states, actions, params, cfg.k, cfg.m)
        print(f"max |python - cython| state {np.abs(a[0] - b[0]).max():.2e}  terms {np.abs(a[1] - b[1]).max():.2e}")
    else:
        print("compiled extension not available; only the python backend was timed")


if __name__ == "__main__":
    main()
